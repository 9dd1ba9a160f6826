"""Parameterized neural building blocks: linear/MLP layers, multi-head
attention, and post-norm Transformer encoder/decoder blocks.

Parameter records are plain dataclasses of leaf tensors; they stay immutable
during a forward/backward pass, so they are safe to share read-only across
concurrent evaluation workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor

LAYER_NORM_EPS = 1e-5


@dataclass
class LinearParams:
    weight: Tensor  # (out, in)
    bias: Tensor  # (out,)

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]


@dataclass
class LayerNormParams:
    gain: Tensor  # (d,)
    bias: Tensor  # (d,)


@dataclass
class AttentionParams:
    """Per-head q/k/v projections plus a shared output projection.

    Queries may live in a different dimension than the key/value source;
    heads * d_k must equal the query-side model dimension.
    """

    heads: int
    d_k: int
    q_proj: list[LinearParams]  # each (d_k, q_dim)
    k_proj: list[LinearParams]  # each (d_k, kv_dim)
    v_proj: list[LinearParams]  # each (d_k, kv_dim)
    out_proj: LinearParams  # (q_dim, heads * d_k)

    def __post_init__(self):
        if self.heads * self.d_k != self.out_proj.in_dim:
            raise ShapeError(
                f"attention: heads*d_k = {self.heads * self.d_k} does not match "
                f"output projection input {self.out_proj.in_dim}"
            )


@dataclass
class EncoderBlockParams:
    self_attn: AttentionParams
    ln1: LayerNormParams
    ff1: LinearParams
    ff2: LinearParams
    ln2: LayerNormParams


@dataclass
class DecoderBlockParams:
    self_attn: AttentionParams
    ln1: LayerNormParams
    cross_attn: AttentionParams
    ln2: LayerNormParams
    ff1: LinearParams
    ff2: LinearParams
    ln3: LayerNormParams


def linear_forward(p: LinearParams, x: Tensor) -> Tensor:
    """x (n, in) -> x @ weight.T + bias."""
    if x.data.ndim != 2 or x.shape[1] != p.in_dim:
        raise ShapeError(f"linear: input {x.shape} does not match weight {p.weight.shape}")
    return T.matmul(x, T.transpose(p.weight)) + p.bias


def mlp_forward(layers: Sequence[LinearParams], x: Tensor) -> Tensor:
    """Chain of linear layers with ReLU between them, none after the last."""
    if not layers:
        raise ContractError("mlp_forward: empty layer list")
    out = x
    for i, layer in enumerate(layers):
        out = linear_forward(layer, out)
        if i + 1 < len(layers):
            out = T.relu(out)
    return out


def layer_norm(p: LayerNormParams, x: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    return T.mul(T.channel_normalize(x, eps), p.gain) + p.bias


def multi_head_attention(
    p: AttentionParams,
    q_in: Tensor,
    kv_in: Tensor,
    return_weights: bool = False,
):
    """Scaled dot-product attention: per head softmax(Q K^T / sqrt(d_k)) V,
    heads concatenated and output-projected back to the query dimension."""
    if kv_in.shape[0] == 0:
        raise ContractError("multi_head_attention: empty key/value set")
    inv_sqrt_dk = 1.0 / math.sqrt(p.d_k)
    head_outs = []
    weights = []
    for h in range(p.heads):
        q = linear_forward(p.q_proj[h], q_in)
        k = linear_forward(p.k_proj[h], kv_in)
        v = linear_forward(p.v_proj[h], kv_in)
        scores = T.scale(T.matmul(q, T.transpose(k)), inv_sqrt_dk)
        attn = T.softmax(scores, axis=1)
        if return_weights:
            weights.append(attn.data.copy())
        head_outs.append(T.matmul(attn, v))
    out = linear_forward(p.out_proj, T.concat_cols(head_outs))
    if return_weights:
        return out, weights
    return out


def _feed_forward(ff1: LinearParams, ff2: LinearParams, x: Tensor) -> Tensor:
    return linear_forward(ff2, T.relu(linear_forward(ff1, x)))


def encoder_block(p: EncoderBlockParams, x: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Post-norm residual order: x' = LN(x + SelfAttn(x)); out = LN(x' + FF(x'))."""
    x = layer_norm(p.ln1, x + multi_head_attention(p.self_attn, x, x), eps)
    return layer_norm(p.ln2, x + _feed_forward(p.ff1, p.ff2, x), eps)


def decoder_block(
    p: DecoderBlockParams,
    queries: Tensor,
    memory: Tensor,
    eps: float = LAYER_NORM_EPS,
) -> Tensor:
    """Self-attention over the queries, cross-attention into the memory set,
    then feed-forward; each sub-layer wrapped in a post-norm residual."""
    if memory.shape[0] == 0:
        raise ContractError("decoder_block: empty memory")
    q = layer_norm(p.ln1, queries + multi_head_attention(p.self_attn, queries, queries), eps)
    q = layer_norm(p.ln2, q + multi_head_attention(p.cross_attn, q, memory), eps)
    return layer_norm(p.ln3, q + _feed_forward(p.ff1, p.ff2, q), eps)


# -- initialization ----------------------------------------------------------


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


def init_linear(rng: np.random.Generator, out_dim: int, in_dim: int) -> LinearParams:
    return LinearParams(
        weight=Tensor(uniform_fan_in(rng, (out_dim, in_dim), in_dim), requires_grad=True),
        bias=Tensor(uniform_fan_in(rng, (out_dim,), in_dim), requires_grad=True),
    )


def init_layer_norm(dim: int) -> LayerNormParams:
    return LayerNormParams(
        gain=Tensor(np.ones(dim), requires_grad=True),
        bias=Tensor(np.zeros(dim), requires_grad=True),
    )


def init_attention(rng: np.random.Generator, heads: int, model_dim: int, kv_dim: int | None = None) -> AttentionParams:
    if model_dim % heads != 0:
        raise ContractError(f"attention: model dim {model_dim} not divisible by {heads} heads")
    if kv_dim is None:
        kv_dim = model_dim
    d_k = model_dim // heads
    return AttentionParams(
        heads=heads,
        d_k=d_k,
        q_proj=[init_linear(rng, d_k, model_dim) for _ in range(heads)],
        k_proj=[init_linear(rng, d_k, kv_dim) for _ in range(heads)],
        v_proj=[init_linear(rng, d_k, kv_dim) for _ in range(heads)],
        out_proj=init_linear(rng, model_dim, heads * d_k),
    )


def init_encoder_block(rng: np.random.Generator, heads: int, model_dim: int) -> EncoderBlockParams:
    return EncoderBlockParams(
        self_attn=init_attention(rng, heads, model_dim),
        ln1=init_layer_norm(model_dim),
        ff1=init_linear(rng, 2 * model_dim, model_dim),
        ff2=init_linear(rng, model_dim, 2 * model_dim),
        ln2=init_layer_norm(model_dim),
    )


def init_decoder_block(rng: np.random.Generator, heads: int, model_dim: int, kv_dim: int) -> DecoderBlockParams:
    return DecoderBlockParams(
        self_attn=init_attention(rng, heads, model_dim),
        ln1=init_layer_norm(model_dim),
        cross_attn=init_attention(rng, heads, model_dim, kv_dim),
        ln2=init_layer_norm(model_dim),
        ff1=init_linear(rng, 2 * model_dim, model_dim),
        ff2=init_linear(rng, model_dim, 2 * model_dim),
        ln3=init_layer_norm(model_dim),
    )


def init_mlp(rng: np.random.Generator, dims: Sequence[int]) -> list[LinearParams]:
    """dims = [in, hidden..., out]; returns len(dims)-1 linear layers."""
    if len(dims) < 2:
        raise ContractError("init_mlp: need at least input and output dims")
    return [init_linear(rng, dims[i + 1], dims[i]) for i in range(len(dims) - 1)]


# -- parameter traversal ------------------------------------------------------


def named_parameters(obj, prefix: str = "") -> list[tuple[str, Tensor]]:
    """Flatten any nesting of dataclasses / lists / dicts of Tensors into
    (dotted-name, tensor) pairs, in declaration order."""
    out: list[tuple[str, Tensor]] = []
    if isinstance(obj, Tensor):
        out.append((prefix.rstrip("."), obj))
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            out.extend(named_parameters(item, f"{prefix}{i}."))
    elif isinstance(obj, dict):
        for key, item in obj.items():
            out.extend(named_parameters(item, f"{prefix}{key}."))
    elif hasattr(obj, "__dataclass_fields__"):
        for name in obj.__dataclass_fields__:
            value = getattr(obj, name)
            if isinstance(value, (Tensor, list, tuple, dict)) or hasattr(value, "__dataclass_fields__"):
                out.extend(named_parameters(value, f"{prefix}{name}."))
    return out
