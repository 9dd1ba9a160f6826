"""Multi-level voxel coarsening of a point cloud, feature pooling/unpooling
across levels, and multi-hot label propagation that shadows the coarsening.

Level i+1 points are centroids of level-i points sharing an axis-aligned
voxel whose edge doubles per level. Voxel membership is floor(coord / edge),
with cells ordered lexicographically, so construction is deterministic.
Ground-truth labels follow the same parent maps: a coarse point's label row
is the union (min(1, sum)) of its children's rows, so a patch that straddles
a boundary keeps every class it covers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor


@dataclass
class Hierarchy:
    coords: list[np.ndarray]  # per level, (n_i, 3) meters
    parents: list[np.ndarray]  # per level < L-1, (n_i,) indices into level i+1
    base_voxel: float

    @property
    def levels(self) -> int:
        return len(self.coords)

    @property
    def sizes(self) -> list[int]:
        return [c.shape[0] for c in self.coords]

    def _check_level(self, level: int):
        if not 0 <= level < self.levels - 1:
            raise ContractError(f"level {level} out of range for {self.levels}-level hierarchy")


def build_hierarchy(coords, base_voxel: float, levels: int) -> Hierarchy:
    coords = np.asarray(coords.data if isinstance(coords, Tensor) else coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise ShapeError(f"build_hierarchy: expected (n, 3) coords, got {coords.shape}")
    if coords.shape[0] == 0:
        raise ContractError("build_hierarchy: empty point cloud")
    if base_voxel <= 0:
        raise ContractError(f"build_hierarchy: base_voxel must be positive, got {base_voxel}")
    if levels < 2:
        raise ContractError(f"build_hierarchy: need at least 2 levels, got {levels}")

    level_coords = [coords]
    parent_maps = []
    for i in range(levels - 1):
        edge = base_voxel * (2.0 ** i)
        keys = np.floor(level_coords[i] / edge).astype(np.int64)
        # unique rows come back lexicographically sorted; inverse is the parent map
        _, parent, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        parent = parent.reshape(-1)
        n_parents = counts.shape[0]
        centroids = np.zeros((n_parents, 3))
        np.add.at(centroids, parent, level_coords[i])
        centroids /= counts[:, None]
        parent_maps.append(parent)
        level_coords.append(centroids)
    return Hierarchy(coords=level_coords, parents=parent_maps, base_voxel=base_voxel)


def pool_features(h: Hierarchy, level: int, f: Tensor) -> Tensor:
    """Mean of child features per parent: (n_i, d) -> (n_{i+1}, d)."""
    h._check_level(level)
    if f.shape[0] != h.sizes[level]:
        raise ShapeError(f"pool_features: {f.shape} does not match level {level} size {h.sizes[level]}")
    return T.pool_rows_mean(f, h.parents[level], h.sizes[level + 1])


def unpool_features(h: Hierarchy, level: int, f_parent: Tensor, skip: Tensor) -> Tensor:
    """Copy each parent's feature to its children and add the skip feature."""
    h._check_level(level)
    if f_parent.shape[0] != h.sizes[level + 1]:
        raise ShapeError(
            f"unpool_features: parent features {f_parent.shape} do not match level {level + 1} "
            f"size {h.sizes[level + 1]}")
    if skip.shape != (h.sizes[level], f_parent.shape[1]):
        raise ShapeError(f"unpool_features: skip {skip.shape} does not match ({h.sizes[level]}, {f_parent.shape[1]})")
    return T.gather_rows(f_parent, h.parents[level]) + skip


@dataclass
class MultiHotLabels:
    """Per level, a binary (n_i, N) class-presence matrix; level 0 is one-hot."""

    levels: list[np.ndarray] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return self.levels[0].shape[1]


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ContractError(f"one_hot: label out of range [0, {n_classes})")
    out = np.zeros((labels.shape[0], n_classes), dtype=np.uint8)
    out[np.arange(labels.shape[0]), labels] = 1
    return out


def shadow_labels(h: Hierarchy, level0: np.ndarray) -> MultiHotLabels:
    """Propagate one-hot level-0 rows upward: parent row = min(1, sum of children)."""
    level0 = np.asarray(level0, dtype=np.uint8)
    if level0.ndim != 2 or level0.shape[0] != h.sizes[0]:
        raise ShapeError(f"shadow_labels: labels {level0.shape} do not match level 0 size {h.sizes[0]}")
    if not ((level0.sum(axis=1) == 1).all() and ((level0 == 0) | (level0 == 1)).all()):
        raise ContractError("shadow_labels: level-0 rows must be one-hot")
    out = [level0]
    for level in range(h.levels - 1):
        acc = np.zeros((h.sizes[level + 1], level0.shape[1]), dtype=np.int64)
        np.add.at(acc, h.parents[level], out[level])
        out.append(np.minimum(acc, 1).astype(np.uint8))
    return MultiHotLabels(levels=out)
