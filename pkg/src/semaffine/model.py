"""Toy encoder-decoder segmentation model with semantic-affine decoding.

Pipeline: a voxel-hierarchy point encoder lifts coordinates to per-level
features; a self-attention stack enriches the coarsest tokens; a class-query
cross-attention decoder emits per-class mask vectors and, from its
intermediate layers, per-class affine banks. The feature decoder then walks
the hierarchy top-down: at each mid level it classifies every point against
the masks, re-scales the features with the confidence-blended affine bank,
and unpools to the next finer level with a skip connection. The finest level
is classified the same way to produce the output logits.

Decoder layer u supplies the affine bank for mid stage i via u = i + offset
(deeper query-decoder layers feed finer mid stages); the final layer feeds
the mask head.

Every parameter exists in every configuration; the ``classifier`` and
``affine`` switches only select which forward path consumes them, so
configurations share initial weights and differ only in the intended stage.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .affine import (
    AffineParams,
    ClassMasks,
    ConfidenceMatrix,
    confidences_from_logits,
    mask_confidences,
    predict_affine_params,
    predict_masks,
    semantic_affine_transform,
    adain_transform,
)
from .blocks import (
    DecoderBlockParams,
    EncoderBlockParams,
    LinearParams,
    decoder_block,
    encoder_block,
    init_decoder_block,
    init_encoder_block,
    init_linear,
    init_mlp,
    linear_forward,
    mlp_forward,
    named_parameters,
    uniform_fan_in,
)
from .errors import ConfigError, ContractError, SemaffineError
from .hierarchy import Hierarchy, build_hierarchy, unpool_features, pool_features
from .scenes import LabeledCloud
from .tensor import Tensor

CLASSIFIERS = ("mask", "fc")
AFFINE_MODES = ("sa", "adain", "bn")

# parameter-name prefixes whose learning rate is reduced by the attention factor
ATTENTION_PREFIXES = ("pos_mlp.", "token_encoder.", "query_decoder.")


@dataclass
class ModelConfig:
    n_classes: int = 4
    levels: int = 4
    level_dims: tuple = (32, 64, 96, 128)
    d_h: int = 64
    d_m: int = 64
    encoder_depth: int = 4  # self-attention blocks over top tokens
    decoder_depth: int = 5  # class-query decoder blocks
    heads: int = 4
    level_offset: int = 2  # mid stage i reads query-decoder layer i + offset
    base_voxel: float = 0.4
    norm_eps: float = 1e-5
    classifier: str = "mask"
    affine: str = "sa"

    @property
    def n_mid(self) -> int:
        return self.levels - 1

    @property
    def mid_levels(self) -> list[int]:
        """Hierarchy level of each mid stage, coarsest first."""
        return [self.levels - i for i in range(1, self.n_mid + 1)]

    def layer_for_stage(self, i: int) -> int:
        return i + self.level_offset

    def validate(self):
        if self.n_classes < 1:
            raise ConfigError(f"n_classes must be >= 1, got {self.n_classes}")
        if self.levels < 2:
            raise ConfigError(f"levels must be >= 2, got {self.levels}")
        if len(self.level_dims) != self.levels:
            raise ConfigError(f"level_dims {self.level_dims} must have one entry per level ({self.levels})")
        if any(d <= 0 for d in self.level_dims) or self.d_h <= 0 or self.d_m <= 0:
            raise ConfigError("all dimensions must be positive")
        if self.d_h % self.heads != 0 or self.level_dims[-1] % self.heads != 0:
            raise ConfigError(f"{self.heads} heads must divide d_h={self.d_h} and top dim={self.level_dims[-1]}")
        if self.decoder_depth < self.n_mid + self.level_offset:
            raise ConfigError(
                f"decoder_depth={self.decoder_depth} too shallow: {self.n_mid} mid stages with "
                f"offset {self.level_offset} need depth >= {self.n_mid + self.level_offset}")
        if self.encoder_depth < 0 or self.level_offset < 1:
            raise ConfigError("encoder_depth must be >= 0 and level_offset >= 1")
        if self.base_voxel <= 0:
            raise ConfigError(f"base_voxel must be positive, got {self.base_voxel}")
        if self.classifier not in CLASSIFIERS:
            raise ConfigError(f"classifier must be one of {CLASSIFIERS}, got {self.classifier!r}")
        if self.affine not in AFFINE_MODES:
            raise ConfigError(f"affine must be one of {AFFINE_MODES}, got {self.affine!r}")


@dataclass
class SiteParams:
    """Per supervised site: projection into mask space, an FC alternative,
    and the class-agnostic normalization pairs used by the bn/adain modes."""

    mask_proj: LinearParams
    fc: LinearParams
    norm_gain: Optional[Tensor] = None  # mid sites only
    norm_bias: Optional[Tensor] = None
    adain_pre_scale: Optional[Tensor] = None
    adain_bias: Optional[Tensor] = None


@dataclass
class ModelParams:
    cfg: ModelConfig
    enc_mlps: list  # per level, list[LinearParams]
    pos_mlp: list  # 3 linear layers, coords -> top dim
    token_encoder: list  # EncoderBlockParams
    queries: Tensor  # (N, d_h)
    query_decoder: list  # DecoderBlockParams
    mask_head: list  # 3 linear layers, d_h -> d_m
    scale_heads: dict  # mid stage -> 5 linear layers, d_h -> level dim
    bias_heads: dict
    down_proj: dict  # mid stage -> LinearParams level dim -> next finer dim
    sites: dict  # hierarchy level -> SiteParams

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for level, layers in enumerate(self.enc_mlps):
            out.extend(named_parameters(layers, f"backbone.enc{level}."))
        for i in sorted(self.down_proj):
            out.extend(named_parameters(self.down_proj[i], f"backbone.down{i}."))
        for level in sorted(self.sites, reverse=True):
            site = self.sites[level]
            out.extend(named_parameters(site.mask_proj, f"backbone.site{level}.mask_proj."))
            out.extend(named_parameters(site.fc, f"backbone.site{level}.fc."))
            if site.norm_gain is not None:
                out.append((f"backbone.site{level}.norm.gain", site.norm_gain))
                out.append((f"backbone.site{level}.norm.bias", site.norm_bias))
                out.append((f"backbone.site{level}.adain.pre_scale", site.adain_pre_scale))
                out.append((f"backbone.site{level}.adain.bias", site.adain_bias))
        out.extend(named_parameters(self.pos_mlp, "pos_mlp."))
        for b, block in enumerate(self.token_encoder):
            out.extend(named_parameters(block, f"token_encoder.block{b}."))
        out.append(("query_decoder.queries", self.queries))
        for b, block in enumerate(self.query_decoder):
            out.extend(named_parameters(block, f"query_decoder.block{b}."))
        out.extend(named_parameters(self.mask_head, "query_decoder.mask_head."))
        for i in sorted(self.scale_heads):
            out.extend(named_parameters(self.scale_heads[i], f"affine_heads.scale{i}."))
            out.extend(named_parameters(self.bias_heads[i], f"affine_heads.bias{i}."))
        return out

    def zero_grad(self):
        for _, t in self.named_parameters():
            t.zero_grad()


def _component_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def build_model(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Initialize every parameter group from (seed, component-name) streams,
    so two builds agree component-by-component regardless of configuration."""
    cfg.validate()
    dims = list(cfg.level_dims)
    top = dims[-1]

    enc_mlps = []
    for level in range(cfg.levels):
        in_dim = 3 if level == 0 else dims[level - 1]
        rng = _component_rng(seed, f"backbone.enc{level}")
        enc_mlps.append(init_mlp(rng, [in_dim, dims[level], dims[level]]))

    pos_mlp = init_mlp(_component_rng(seed, "pos_mlp"), [3, top, top, top])
    token_encoder = [
        init_encoder_block(_component_rng(seed, f"token_encoder.block{b}"), cfg.heads, top)
        for b in range(cfg.encoder_depth)
    ]
    queries = Tensor(
        uniform_fan_in(_component_rng(seed, "query_decoder.queries"), (cfg.n_classes, cfg.d_h), cfg.d_h),
        requires_grad=True,
    )
    query_decoder = [
        init_decoder_block(_component_rng(seed, f"query_decoder.block{b}"), cfg.heads, cfg.d_h, top)
        for b in range(cfg.decoder_depth)
    ]
    mask_head = init_mlp(_component_rng(seed, "query_decoder.mask_head"), [cfg.d_h, cfg.d_h, cfg.d_h, cfg.d_m])

    scale_heads, bias_heads, down_proj = {}, {}, {}
    for i, level in enumerate(cfg.mid_levels, start=1):
        d_level = dims[level]
        head_dims = [cfg.d_h] * 5 + [d_level]  # 5 linear layers, hidden width d_h
        scale_heads[i] = init_mlp(_component_rng(seed, f"affine_heads.scale{i}"), head_dims)
        bias_heads[i] = init_mlp(_component_rng(seed, f"affine_heads.bias{i}"), head_dims)
        # shift the scale head toward softplus^-1(1) for a near-identity start
        scale_heads[i][-1].bias.data += math.log(math.e - 1.0)
        down_proj[i] = init_linear(_component_rng(seed, f"backbone.down{i}"), dims[level - 1], d_level)

    sites = {}
    for level in cfg.mid_levels + [0]:
        d_level = dims[level]
        site = SiteParams(
            mask_proj=init_linear(_component_rng(seed, f"backbone.site{level}.mask_proj"), cfg.d_m, d_level),
            fc=init_linear(_component_rng(seed, f"backbone.site{level}.fc"), cfg.n_classes, d_level),
        )
        if level > 0:
            site.norm_gain = Tensor(np.ones(d_level), requires_grad=True)
            site.norm_bias = Tensor(np.zeros(d_level), requires_grad=True)
            site.adain_pre_scale = Tensor(np.full(d_level, math.log(math.e - 1.0)), requires_grad=True)
            site.adain_bias = Tensor(np.zeros(d_level), requires_grad=True)
        sites[level] = site

    return ModelParams(
        cfg=cfg,
        enc_mlps=enc_mlps,
        pos_mlp=pos_mlp,
        token_encoder=token_encoder,
        queries=queries,
        query_decoder=query_decoder,
        mask_head=mask_head,
        scale_heads=scale_heads,
        bias_heads=bias_heads,
        down_proj=down_proj,
        sites=sites,
    )


def attention_group_mask(names: list[str]) -> list[bool]:
    """True for parameters in the reduced-learning-rate attention group.

    The transformer machinery (positional MLP, token encoder, queries,
    query-decoder blocks, mask head) trains at the reduced factor; the small
    per-level affine regression heads train with the backbone at full rate,
    otherwise their class banks never leave the identity start at this scale.
    """
    return [any(n.startswith(p) for p in ATTENTION_PREFIXES) for n in names]


def set_identity_affine_heads(params: ModelParams):
    """Force the affine heads to emit exactly s=1, b=0 until trained (zeroed
    final layers); useful for comparing against class-agnostic baselines."""
    for i in params.scale_heads:
        params.scale_heads[i][-1].weight.data[...] = 0.0
        params.scale_heads[i][-1].bias.data[...] = math.log(math.e - 1.0)
        params.bias_heads[i][-1].weight.data[...] = 0.0
        params.bias_heads[i][-1].bias.data[...] = 0.0


@dataclass
class MidLevelOutput:
    level: int  # hierarchy level of this stage
    conf: ConfidenceMatrix
    affine: Optional[AffineParams]


@dataclass
class ForwardOutput:
    final_logits: Tensor  # (n_0, N)
    mids: list  # MidLevelOutput, coarsest stage first
    masks: ClassMasks
    hierarchy: Hierarchy
    trace: Optional[dict] = None


def backbone_encode(params: ModelParams, coords: np.ndarray, hier: Hierarchy | None = None):
    """Per-point MLP at the finest level, then pool + per-level MLP upward."""
    cfg = params.cfg
    if hier is None:
        hier = build_hierarchy(coords, cfg.base_voxel, cfg.levels)
    feats = [mlp_forward(params.enc_mlps[0], Tensor(hier.coords[0]))]
    for level in range(1, cfg.levels):
        pooled = pool_features(hier, level - 1, feats[level - 1])
        feats.append(mlp_forward(params.enc_mlps[level], pooled))
    return feats, hier


def encode_tokens(params: ModelParams, top_feats: Tensor, top_coords: np.ndarray) -> Tensor:
    """Self-attention stack over the coarsest tokens, with coordinate
    positional embeddings added once at the input."""
    pos = mlp_forward(params.pos_mlp, Tensor(top_coords))
    x = top_feats + pos
    for block in params.token_encoder:
        x = encoder_block(block, x, params.cfg.norm_eps)
    return x


def decode_queries(params: ModelParams, memory: Tensor):
    """Run the class queries through the cross-attention decoder; returns
    every layer's output (for the affine heads) and the final layer."""
    if memory.shape[0] == 0:
        raise ContractError("decode_queries: empty memory")
    h = params.queries
    h_layers = []
    for block in params.query_decoder:
        h = decoder_block(block, h, memory, params.cfg.norm_eps)
        h_layers.append(h)
    return h_layers, h_layers[-1]


def _site_logits(params: ModelParams, level: int, feats: Tensor, masks: ClassMasks) -> ConfidenceMatrix:
    site = params.sites[level]
    if params.cfg.classifier == "mask":
        return mask_confidences(masks, linear_forward(site.mask_proj, feats))
    return confidences_from_logits(linear_forward(site.fc, feats))


def model_forward(
    params: ModelParams,
    cloud,
    hier: Hierarchy | None = None,
    record: bool = False,
) -> ForwardOutput:
    """Full forward pass over one scene (a LabeledCloud or an (n, 3) array)."""
    cfg = params.cfg
    coords = cloud.coords if isinstance(cloud, LabeledCloud) else np.asarray(cloud, dtype=np.float64)
    trace: dict | None = {} if record else None

    enc, hier = backbone_encode(params, coords, hier)
    tokens = encode_tokens(params, enc[-1], hier.coords[-1])
    h_layers, h_final = decode_queries(params, tokens)
    masks = predict_masks(h_final, params.mask_head)
    if record:
        for level, f in enumerate(enc):
            trace[f"enc{level}"] = f.data.copy()
        trace["tokens"] = tokens.data.copy()
        for u, h in enumerate(h_layers, start=1):
            trace[f"h{u}"] = h.data.copy()
        trace["masks"] = masks.masks.data.copy()

    feats = tokens
    mids = []
    for i, level in enumerate(cfg.mid_levels, start=1):
        try:
            conf = _site_logits(params, level, feats, masks)
            affine = None
            if cfg.affine == "sa":
                h_u = h_layers[cfg.layer_for_stage(i) - 1]
                affine = predict_affine_params(h_u, params.scale_heads[i], params.bias_heads[i])
                transformed = semantic_affine_transform(feats, conf, affine, cfg.norm_eps)
            elif cfg.affine == "adain":
                site = params.sites[level]
                transformed = adain_transform(
                    feats, T.softplus(site.adain_pre_scale), site.adain_bias, cfg.norm_eps)
            else:  # bn: plain normalization with a learned class-agnostic pair
                site = params.sites[level]
                transformed = T.mul(T.channel_normalize(feats, cfg.norm_eps), site.norm_gain) + site.norm_bias
            mids.append(MidLevelOutput(level=level, conf=conf, affine=affine))
            if record:
                trace[f"mid{level}.logits"] = conf.logits.data.copy()
                trace[f"mid{level}.transformed"] = transformed.data.copy()
            down = linear_forward(params.down_proj[i], transformed)
            feats = unpool_features(hier, level - 1, down, enc[level - 1])
        except SemaffineError as e:
            raise type(e)(f"decoder stage {i} (hierarchy level {level}): {e}") from e

    final = _site_logits(params, 0, feats, masks)
    if record:
        trace["final_logits"] = final.logits.data.copy()
    return ForwardOutput(final_logits=final.logits, mids=mids, masks=masks, hierarchy=hier, trace=trace)
