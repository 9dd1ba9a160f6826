"""Checkpoint serialization: a human-readable manifest followed by a flat
little-endian float64 payload in one file.

Layout:

    semaffine-checkpoint v1
    step=<int>
    cfg.<key>=<value>           (model + training config snapshot)
    param <name> <d0,d1,..> <byte offset>
    payload <byte count>
    <raw little-endian float64 bytes>

Save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError
from .tensor import Tensor

MAGIC = b"semaffine-checkpoint v1"


def _format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def save_checkpoint(path, params: list[tuple[str, Tensor]], config: dict, step: int) -> None:
    lines = [MAGIC.decode(), f"step={step}"]
    for key in sorted(config):
        lines.append(f"cfg.{key}={_format_value(config[key])}")
    offset = 0
    blobs = []
    for name, t in params:
        shape = ",".join(str(d) for d in t.shape)
        lines.append(f"param {name} {shape} {offset}")
        blob = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        blobs.append(blob)
        offset += len(blob)
    lines.append(f"payload {offset}")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    Path(path).write_bytes(header + b"".join(blobs))


def load_checkpoint(path):
    """Returns (config dict[str, str], step, entries list[(name, shape, array)])."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ParseError(f"bad magic, expected {MAGIC.decode()!r}", line=1)
    marker = b"\npayload "
    pos = raw.find(marker)
    if pos < 0:
        raise ParseError("missing payload marker")
    header_end = raw.index(b"\n", pos + 1)
    header_lines = raw[:header_end].decode("utf-8").splitlines()
    payload = raw[header_end + 1:]

    step = None
    config: dict[str, str] = {}
    entries = []
    declared = None
    for i, line in enumerate(header_lines[1:], start=2):
        if line.startswith("step="):
            step = int(line[len("step="):])
        elif line.startswith("cfg."):
            key, _, value = line[len("cfg."):].partition("=")
            config[key] = value
        elif line.startswith("param "):
            try:
                _, name, shape_s, offset_s = line.split(" ")
                shape = tuple(int(d) for d in shape_s.split(",") if d)
                entries.append((name, shape, int(offset_s)))
            except ValueError as e:
                raise ParseError(f"malformed param line: {line!r}", line=i) from e
        elif line.startswith("payload "):
            declared = int(line[len("payload "):])
        else:
            raise ParseError(f"unrecognized manifest line: {line!r}", line=i)
    if step is None or declared is None:
        raise ParseError("manifest missing step or payload size")
    if declared != len(payload):
        raise ContractError(f"payload size mismatch: declared {declared}, found {len(payload)}")

    out = []
    for name, shape, offset in entries:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(payload):
            raise ContractError(f"parameter {name} overruns payload")
        arr = np.frombuffer(payload[offset:offset + nbytes], dtype="<f8").reshape(shape).copy()
        out.append((name, shape, arr))
    return config, step, out


def restore_parameters(params: list[tuple[str, Tensor]], entries) -> None:
    """Copy checkpoint arrays into live tensors; names and shapes must match."""
    by_name = {name: (shape, arr) for name, shape, arr in entries}
    for name, t in params:
        if name not in by_name:
            raise ContractError(f"checkpoint missing parameter {name}")
        shape, arr = by_name.pop(name)
        if shape != t.shape:
            raise ContractError(f"checkpoint shape {shape} for {name} does not match model {t.shape}")
        t.data[...] = arr
    if by_name:
        raise ContractError(f"checkpoint has {len(by_name)} unexpected parameters: {sorted(by_name)[:3]}...")
