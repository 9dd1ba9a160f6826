"""Semantic-affine feature transformation.

A bank of per-class (scale, bias) vectors is blended per point by its class
confidence distribution, and the blend rescales the point's normalized
feature row:

    S_j = sum_k A[j, k] * s_k      B_j = sum_k A[j, k] * b_k
    out_j = S_j * normalize(f_j) + B_j

Points with similar class distributions are pulled toward similar scales and
offsets; points with different distributions are pushed apart. Scales are
kept nonnegative by a softplus on the regression head, so S stays
nonnegative for any confidence simplex.

Confidence rows come from dot products between per-class mask vectors and
per-point features; a per-point softmax turns the raw scores into the
required distribution (raw logits are retained for the multi-hot
mid-level loss, which needs sigmoid semantics instead).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from . import tensor as T
from .blocks import LinearParams, mlp_forward
from .errors import ShapeError
from .tensor import Tensor


@dataclass
class ClassMasks:
    masks: Tensor  # (N, d_m)


@dataclass
class AffineParams:
    scales: Tensor  # (N, d_i), entrywise >= 0
    biases: Tensor  # (N, d_i)


@dataclass
class ConfidenceMatrix:
    logits: Tensor  # (n_i, N) raw per-class scores
    probs: Tensor  # (n_i, N) softmax rows, each summing to 1


def predict_masks(h_final: Tensor, head: Sequence[LinearParams]) -> ClassMasks:
    """One mask row per class from the final class-feature rows."""
    return ClassMasks(masks=mlp_forward(head, h_final))


def mask_confidences(m: ClassMasks, f: Tensor) -> ConfidenceMatrix:
    """logits[j, k] = m_k . f_j; probs = per-point softmax over classes."""
    if f.data.ndim != 2 or f.shape[1] != m.masks.shape[1]:
        raise ShapeError(f"mask_confidences: features {f.shape} do not match masks {m.masks.shape}")
    logits = T.matmul(f, T.transpose(m.masks))
    return ConfidenceMatrix(logits=logits, probs=T.softmax(logits, axis=1))


def confidences_from_logits(logits: Tensor) -> ConfidenceMatrix:
    """Wrap externally produced class scores (e.g. a fully connected head)."""
    return ConfidenceMatrix(logits=logits, probs=T.softmax(logits, axis=1))


def predict_affine_params(
    h_u: Tensor,
    scale_head: Sequence[LinearParams],
    bias_head: Sequence[LinearParams],
) -> AffineParams:
    """Regress per-class scale/bias rows from one decoder layer's class features.

    Each class row is mapped independently; the softplus keeps scales >= 0.
    """
    return AffineParams(
        scales=T.softplus(mlp_forward(scale_head, h_u)),
        biases=mlp_forward(bias_head, h_u),
    )


def combine_affine(conf: ConfidenceMatrix, p: AffineParams) -> tuple[Tensor, Tensor]:
    """Per-point affine parameters as confidence-weighted sums of class rows."""
    if conf.probs.shape[1] != p.scales.shape[0]:
        raise ShapeError(
            f"combine_affine: {conf.probs.shape[1]} confidence columns vs {p.scales.shape[0]} classes")
    return T.matmul(conf.probs, p.scales), T.matmul(conf.probs, p.biases)


def semantic_affine_transform(
    f: Tensor,
    conf: ConfidenceMatrix,
    p: AffineParams,
    eps: float = 1e-5,
) -> Tensor:
    """Replace each feature row with S_j * normalize(f_j) + B_j."""
    if f.shape[1] != p.scales.shape[1]:
        raise ShapeError(f"semantic_affine_transform: features {f.shape} vs affine dim {p.scales.shape[1]}")
    s, b = combine_affine(conf, p)
    return T.mul(s, T.channel_normalize(f, eps)) + b


def adain_transform(f: Tensor, scale: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Class-agnostic control: one shared (scale, bias) row for every point."""
    if scale.shape != (f.shape[1],) or bias.shape != (f.shape[1],):
        raise ShapeError(
            f"adain_transform: scale {scale.shape} / bias {bias.shape} do not match feature dim {f.shape[1]}")
    return T.mul(T.channel_normalize(f, eps), scale) + bias
