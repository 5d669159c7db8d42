"""Signed distance field over the (C11, C12, C33) property cloud.

Nodes are the centers of a Cartesian partition of the property box; the SDF
at a node is its Euclidean distance to the nearest cloud point minus a
covered-radius r0, so the negative region is the achievable set. Expanding
the negative region by a few node layers yields slightly-out-of-distribution
sampling targets for the generator; the same field acts as the feasibility
constraint of the macro-scale design problem. The coverage ratio counts
occupied partition boxes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi
from scipy.spatial import cKDTree

from .errors import DimensionError, InputError
from .fea import ElasticTensor3

DEFAULT_RANGES = ((0.0, 3.5), (-0.5, 1.5), (0.0, 1.5))
DEFAULT_RESOLUTION = (350, 200, 150)


@dataclass(frozen=True)
class GridSpec:
    ranges: tuple = DEFAULT_RANGES
    resolution: tuple = DEFAULT_RESOLUTION

    def __post_init__(self):
        if len(self.ranges) != 3 or len(self.resolution) != 3:
            raise DimensionError("grid spec needs 3 ranges and 3 resolutions")
        for (lo, hi), nbins in zip(self.ranges, self.resolution):
            if hi <= lo or int(nbins) < 1:
                raise InputError(f"bad grid axis: range ({lo}, {hi}), bins {nbins}")

    @property
    def steps(self) -> np.ndarray:
        return np.array(
            [(hi - lo) / nb for (lo, hi), nb in zip(self.ranges, self.resolution)]
        )

    def axes(self) -> list[np.ndarray]:
        """Node center coordinates along each axis."""
        out = []
        for (lo, hi), nb in zip(self.ranges, self.resolution):
            step = (hi - lo) / nb
            out.append(lo + (np.arange(nb) + 0.5) * step)
        return out

    def to_json(self) -> dict:
        return {"ranges": [list(r) for r in self.ranges],
                "resolution": [int(n) for n in self.resolution]}

    @classmethod
    def from_json(cls, obj) -> "GridSpec":
        return cls(
            ranges=tuple(tuple(r) for r in obj["ranges"]),
            resolution=tuple(int(n) for n in obj["resolution"]),
        )


def _as_points(cloud) -> np.ndarray:
    pts = np.asarray(
        [t.as_array() if isinstance(t, ElasticTensor3) else t for t in cloud],
        dtype=float,
    )
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DimensionError("cloud must be a sequence of 3-component tensors")
    return pts


@dataclass
class PropertyGrid:
    spec: GridSpec
    values: np.ndarray  # SDF per node, shape = resolution
    r0: float

    def __post_init__(self):
        if self.values.shape != tuple(self.spec.resolution):
            raise DimensionError("SDF array does not match the grid resolution")
        self._neg_tree = None

    def negative_mask(self) -> np.ndarray:
        return self.values < 0.0

    def negative_count(self) -> int:
        return int(self.negative_mask().sum())

    def node_coords(self, flat_index) -> np.ndarray:
        idx = np.unravel_index(np.asarray(flat_index), self.values.shape)
        axes = self.spec.axes()
        return np.stack([axes[d][idx[d]] for d in range(3)], axis=-1)

    def value_at(self, point) -> float:
        """Trilinear interpolation of node values, clamped at the box edge."""
        p = np.asarray(point.as_array() if isinstance(point, ElasticTensor3) else point, float)
        steps = self.spec.steps
        res = self.values.shape
        frac = np.empty(3)
        base = np.empty(3, dtype=int)
        for d in range(3):
            lo = self.spec.ranges[d][0]
            t = (p[d] - lo) / steps[d] - 0.5  # node-center coordinates
            t = min(max(t, 0.0), res[d] - 1.0)
            base[d] = min(int(np.floor(t)), res[d] - 2) if res[d] > 1 else 0
            frac[d] = t - base[d]
        v = 0.0
        for di in (0, 1):
            for dj in (0, 1):
                for dk in (0, 1):
                    w = ((frac[0] if di else 1 - frac[0])
                         * (frac[1] if dj else 1 - frac[1])
                         * (frac[2] if dk else 1 - frac[2]))
                    if w:
                        i = min(base[0] + di, res[0] - 1)
                        j = min(base[1] + dj, res[1] - 1)
                        k = min(base[2] + dk, res[2] - 1)
                        v += w * self.values[i, j, k]
        return float(v)

    def gradient_at(self, point) -> np.ndarray:
        """Central differences of the interpolated field, h = one node step."""
        p = np.asarray(point.as_array() if isinstance(point, ElasticTensor3) else point, float)
        steps = self.spec.steps
        grad = np.empty(3)
        for d in range(3):
            e = np.zeros(3)
            e[d] = steps[d]
            grad[d] = (self.value_at(p + e) - self.value_at(p - e)) / (2 * steps[d])
        return grad

    def nearest_negative_node(self, point) -> np.ndarray:
        if self._neg_tree is None:
            flat = np.flatnonzero(self.negative_mask().ravel())
            if flat.size == 0:
                raise InputError("SDF has no negative region")
            self._neg_coords = self.node_coords(flat)
            self._neg_tree = cKDTree(self._neg_coords)
        p = np.asarray(point.as_array() if isinstance(point, ElasticTensor3) else point, float)
        _, idx = self._neg_tree.query(p)
        return self._neg_coords[idx]


def build_sdf(cloud, spec: GridSpec | None = None, r0: float | None = None) -> PropertyGrid:
    """SDF(node) = distance to nearest cloud point minus r0 at every node."""
    pts = _as_points(cloud)
    if pts.shape[0] == 0:
        raise InputError("property cloud is empty")
    spec = spec if spec is not None else GridSpec()
    if r0 is None:
        r0 = 2.0 * float(spec.steps.max())
    tree = cKDTree(pts)
    axes = spec.axes()
    A, B, C = np.meshgrid(axes[0], axes[1], axes[2], indexing="ij")
    nodes = np.stack([A.ravel(), B.ravel(), C.ravel()], axis=1)
    dist, _ = tree.query(nodes, workers=-1)
    values = dist.reshape(spec.resolution) - r0
    return PropertyGrid(spec=spec, values=values, r0=float(r0))


def expand_sdf(grid: PropertyGrid, rings: int) -> PropertyGrid:
    """Dilate the negative region by `rings` node layers (26-neighborhood).

    Newly covered nodes get the value -step/2: inside, but only just.
    """
    if rings < 1:
        raise InputError("rings must be >= 1")
    neg = grid.negative_mask()
    struct = np.ones((3, 3, 3), dtype=bool)
    grown = ndi.binary_dilation(neg, structure=struct, iterations=rings)
    shell = grown & ~neg
    values = grid.values.copy()
    values[shell] = -0.5 * float(grid.spec.steps.min())
    return PropertyGrid(spec=grid.spec, values=values, r0=grid.r0)


def sample_targets(grid: PropertyGrid, count: int, rng) -> list[ElasticTensor3]:
    """Uniform draw of node centers from the negative region.

    Physically infeasible nodes (c11 < |c12| or c33 <= 0) are rejected and
    redrawn, so the distribution is uniform over the feasible negative nodes.
    """
    flat = np.flatnonzero(grid.negative_mask().ravel())
    if flat.size == 0:
        raise InputError("SDF has no negative region to sample")
    coords = grid.node_coords(flat)
    feasible = (coords[:, 0] >= np.abs(coords[:, 1])) & (coords[:, 2] > 0)
    flat = flat[feasible]
    coords = coords[feasible]
    if flat.size == 0:
        raise InputError("no physically feasible negative nodes")
    picks = rng.integers(0, flat.size, size=count)
    return [ElasticTensor3(*coords[i]) for i in picks]


def coverage_ratio(cloud, spec: GridSpec | None = None) -> float:
    """Fraction of partition boxes holding at least one cloud point.

    Boxes are half-open along each axis with the top edge closed; points
    outside the ranges occupy nothing.
    """
    spec = spec if spec is not None else GridSpec()
    pts = _as_points(cloud) if len(cloud) else np.zeros((0, 3))
    total = int(np.prod(spec.resolution))
    if pts.shape[0] == 0:
        return 0.0
    idx = np.empty_like(pts, dtype=np.int64)
    inside = np.ones(pts.shape[0], dtype=bool)
    for d in range(3):
        lo, hi = spec.ranges[d]
        nb = spec.resolution[d]
        step = (hi - lo) / nb
        i = np.floor((pts[:, d] - lo) / step).astype(np.int64)
        i[pts[:, d] == hi] = nb - 1  # top edge closed
        inside &= (pts[:, d] >= lo) & (pts[:, d] <= hi)
        idx[:, d] = np.clip(i, 0, nb - 1)
    if not inside.any():
        return 0.0
    lin = np.ravel_multi_index(
        (idx[inside, 0], idx[inside, 1], idx[inside, 2]), spec.resolution
    )
    return float(np.unique(lin).size) / total
