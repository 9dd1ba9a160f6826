"""Central finite-difference verification of analytic gradients.

The relative error for one parameter entry is

    |analytic - numeric| / max(|analytic| + |numeric|, delta)

so a gradient corrupted by a factor of 2 reports ~1/3. The floor ``delta``
absorbs central-difference roundoff (about eps*|f|/h) on entries whose true
gradient is zero or tiny; a genuinely wrong gradient lands far above it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class ParamReport:
    name: str
    n_checked: int
    max_rel_err: float
    worst_entry: int
    ok: bool
    note: str = ""


@dataclass
class GradCheckReport:
    h: float
    tol: float
    params: list[ParamReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.ok for p in self.params)

    @property
    def max_rel_err(self) -> float:
        return max((p.max_rel_err for p in self.params), default=0.0)

    def lines(self) -> list[str]:
        out = []
        for p in self.params:
            status = "PASS" if p.ok else "FAIL"
            msg = f"{status}  {p.name}  max_rel_err={p.max_rel_err:.3e}  entries={p.n_checked}"
            if p.note:
                msg += f"  ({p.note})"
            out.append(msg)
        return out


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[tuple[str, Tensor]],
    h: float = 1e-6,
    tol: float = 1e-5,
    delta: float = 1e-3,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of the scalar ``f()`` against central differences.

    ``f`` must be deterministic and rebuild its graph from the live ``params``
    tensors on every call. When ``max_entries`` is set, a seeded subsample of
    entries per parameter is perturbed instead of every entry.
    """
    report = GradCheckReport(h=h, tol=tol)

    for _, p in params:
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params
    }

    rng = np.random.default_rng(seed)
    for name, p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            idx = rng.choice(n, size=max_entries, replace=False)
            idx.sort()
        else:
            idx = np.arange(n)
        a_flat = analytic[name].reshape(-1)
        max_rel, worst = 0.0, -1
        note = ""
        ok = True
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f().data)
            flat[i] = orig - h
            f_minus = float(f().data)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                note = f"non-finite forward while perturbing entry {i}"
                ok = False
                max_rel = np.inf
                worst = int(i)
                break
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = a_flat[i]
            rel = abs(a - numeric) / max(abs(a) + abs(numeric), delta)
            if rel > max_rel:
                max_rel, worst = rel, int(i)
        if ok:
            ok = max_rel <= tol
        report.params.append(
            ParamReport(name=name, n_checked=len(idx), max_rel_err=max_rel, worst_entry=worst, ok=ok, note=note)
        )
    return report
