"""Named gradient-check suite covering every differentiable operation and a
small end-to-end model; the CLI ``gradcheck`` subcommand runs it."""

from __future__ import annotations

import numpy as np

from . import blocks as B
from . import tensor as T
from .affine import mask_confidences, predict_affine_params, predict_masks, semantic_affine_transform
from .gradcheck import GradCheckReport, finite_diff_check
from .harness import bce_with_logits, cross_entropy_loss, total_loss
from .hierarchy import build_hierarchy, one_hot, pool_features, shadow_labels, unpool_features
from .model import ModelConfig, build_model, model_forward
from .tensor import Tensor


def _mix(out, seed=0):
    rng = np.random.default_rng(seed)
    return T.sum_all(T.mul(out, Tensor(rng.standard_normal(out.shape))))


def _tensor_checks(rng):
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    c = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    x = Tensor(rng.uniform(0.2, 1.5, (3, 5)) * rng.choice([-1.0, 1.0], (3, 5)), requires_grad=True)

    yield "tensor", "matmul", lambda: _mix(T.matmul(a, b)), [("a", a), ("b", b)], 1e-5
    yield "tensor", "add_sub_mul", lambda: _mix(T.mul(T.add(a, c), T.sub(a, c))), [("a", a), ("c", c)], 1e-5
    yield "tensor", "relu", lambda: _mix(T.relu(x)), [("x", x)], 1e-5
    yield "tensor", "softplus_exp", lambda: _mix(T.exp(T.softplus(x))), [("x", x)], 1e-5
    yield "tensor", "softmax", lambda: _mix(T.softmax(a, 1)), [("a", a)], 1e-5
    yield "tensor", "log_softmax", lambda: _mix(T.log_softmax(a, 1)), [("a", a)], 1e-5
    yield "tensor", "channel_normalize", lambda: _mix(T.channel_normalize(a, 1e-5)), [("a", a)], 1e-5
    yield "tensor", "scale_transpose", lambda: _mix(T.scale(T.transpose(a), 1.7)), [("a", a)], 1e-5


def _block_checks(rng):
    lin = B.init_linear(rng, 4, 3)
    x3 = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
    yield "blocks", "linear", lambda: _mix(B.linear_forward(lin, x3)), \
        B.named_parameters(lin, "lin.") + [("x", x3)], 1e-5

    mlp = B.init_mlp(rng, [3, 6, 4])
    yield "blocks", "mlp", lambda: _mix(B.mlp_forward(mlp, x3)), \
        B.named_parameters(mlp, "mlp.") + [("x", x3)], 1e-5

    attn = B.init_attention(rng, heads=2, model_dim=4)
    q_in = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
    kv = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    yield "blocks", "multi_head_attention", lambda: _mix(B.multi_head_attention(attn, q_in, kv)), \
        B.named_parameters(attn, "attn.") + [("q_in", q_in), ("kv", kv)], 1e-5

    enc = B.init_encoder_block(rng, heads=2, model_dim=4)
    xe = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    yield "blocks", "encoder_block", lambda: _mix(B.encoder_block(enc, xe)), \
        B.named_parameters(enc, "enc.") + [("x", xe)], 1e-5

    dec = B.init_decoder_block(rng, heads=2, model_dim=4, kv_dim=6)
    qd = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
    mem = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    yield "blocks", "decoder_block", lambda: _mix(B.decoder_block(dec, qd, mem)), \
        B.named_parameters(dec, "dec.") + [("q", qd), ("mem", mem)], 1e-5


def _hierarchy_checks(rng):
    coords = rng.uniform(-1, 1, (12, 3))
    hier = build_hierarchy(coords, 0.8, 3)
    f = Tensor(rng.standard_normal((12, 3)), requires_grad=True)
    skip = Tensor(rng.standard_normal((12, 3)), requires_grad=True)

    def loss():
        pooled = pool_features(hier, 0, f)
        return _mix(unpool_features(hier, 0, pooled, skip))

    yield "hierarchy", "pool_unpool", loss, [("f", f), ("skip", skip)], 1e-5


def _affine_checks(rng):
    n, n_classes, d, d_m, d_h = 4, 3, 4, 5, 6
    h_u = Tensor(rng.standard_normal((n_classes, d_h)), requires_grad=True)
    mask_head = B.init_mlp(rng, [d_h, d_m])
    scale_head = B.init_mlp(rng, [d_h, d])
    bias_head = B.init_mlp(rng, [d_h, d])
    proj = B.init_linear(rng, d_m, d)
    f = Tensor(rng.standard_normal((n, d)), requires_grad=True)

    def loss():
        masks = predict_masks(h_u, mask_head)
        conf = mask_confidences(masks, B.linear_forward(proj, f))
        affine = predict_affine_params(h_u, scale_head, bias_head)
        return _mix(semantic_affine_transform(f, conf, affine))

    named = (
        [("h_u", h_u), ("f", f)]
        + B.named_parameters(mask_head, "mask_head.")
        + B.named_parameters(scale_head, "scale_head.")
        + B.named_parameters(bias_head, "bias_head.")
        + B.named_parameters(proj, "proj.")
    )
    yield "affine", "composed_transform", loss, named, 1e-5


def _loss_checks(rng):
    logits = Tensor(rng.standard_normal((6, 4)), requires_grad=True)
    labels = rng.integers(0, 4, 6)
    yield "losses", "cross_entropy", lambda: cross_entropy_loss(logits, labels), \
        [("logits", logits)], 1e-5

    mid = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    targets = (rng.random((5, 4)) < 0.4).astype(float)
    yield "losses", "midlevel_bce", lambda: bce_with_logits(mid, targets), \
        [("logits", mid)], 1e-5


def _model_check(rng):
    cfg = ModelConfig(
        n_classes=3, levels=3, level_dims=(4, 6, 8), d_h=4, d_m=4,
        encoder_depth=1, decoder_depth=4, heads=2, level_offset=2, base_voxel=0.6,
    )
    params = build_model(cfg, seed=5)
    for _, t in params.named_parameters():
        t.data += rng.uniform(-0.05, 0.05, t.shape)
    coords = rng.uniform(-1.2, 1.2, (16, 3))
    labels = rng.integers(0, 3, 16)
    hier = build_hierarchy(coords, cfg.base_voxel, cfg.levels)
    shadows = shadow_labels(hier, one_hot(labels, 3))

    def loss():
        return total_loss(model_forward(params, coords, hier=hier), labels, shadows)

    yield "model", "end_to_end_16pt", loss, params.named_parameters(), 1e-4


def iter_checks(module: str | None = None):
    rng = np.random.default_rng(2024)
    for gen in (_tensor_checks, _block_checks, _hierarchy_checks, _affine_checks,
                _loss_checks, _model_check):
        for mod, name, loss, params, tol in gen(rng):
            if module is None or mod == module:
                yield mod, name, loss, params, tol


def run_suite(module: str | None = None, tol: float | None = None, h: float = 1e-6,
              emit=print) -> bool:
    """Run the named checks; returns True when everything passes."""
    all_ok = True
    found = False
    for mod, name, loss, params, default_tol in iter_checks(module):
        found = True
        use_tol = tol if tol is not None else default_tol
        max_entries = 6 if name == "end_to_end_16pt" else None
        report = finite_diff_check(loss, params, h=h, tol=use_tol, max_entries=max_entries, seed=0)
        status = "PASS" if report.passed else "FAIL"
        emit(f"{status}  {mod}.{name}  max_rel_err={report.max_rel_err:.3e}  tol={use_tol:g}  "
             f"groups={len(report.params)}")
        if not report.passed:
            for line in report.lines():
                if line.startswith("FAIL"):
                    emit("      " + line)
            all_ok = False
    if not found:
        emit(f"no checks found for module {module!r}")
        return False
    return all_ok
