"""Microstructure tiles: representation, D4 symmetry, similarity metrics.

A cell is a binary tile (0 = void, 1 = solid). Cubic-symmetric cells are
invariant under the eight dihedral transforms of the square, which lets the
rest of the pipeline work on the top-left quarter alone and guarantees that
all four tile edges carry the same (palindromic) bit pattern.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.ndimage as ndi

from .errors import DimensionError, InputError, InvariantError, SymmetryError

# 4-connectivity structuring element for the solid phase
_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def d4_transforms(a: np.ndarray):
    """The eight dihedral transforms of a square array."""
    return (
        a,
        a[::-1, :],
        a[:, ::-1],
        a[::-1, ::-1],
        a.T,
        a.T[::-1, :],
        a.T[:, ::-1],
        a.T[::-1, ::-1],
    )


def d4_average(a: np.ndarray) -> np.ndarray:
    """Orthogonal projection of a square array onto the D4-invariant subspace."""
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"D4 average needs a square array, got {a.shape}")
    acc = np.zeros(a.shape, dtype=float)
    for t in d4_transforms(a):
        acc += t
    return acc / 8.0


def is_d4_symmetric(a: np.ndarray) -> bool:
    """Exact invariance under all eight transforms."""
    return a.shape[0] == a.shape[1] and all(
        np.array_equal(a, t) for t in d4_transforms(a)
    )


@dataclass(frozen=True)
class CellGrid:
    """Binary microstructure tile.

    Normally square with even side n; supercell composition may produce
    rectangular tiles, for which symmetry operations are unavailable.
    """

    data: np.ndarray
    cubic_symmetric: bool = False

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise DimensionError(f"cell data must be 2-D, got shape {data.shape}")
        if not np.isin(data, (0, 1)).all():
            raise InvariantError("cell entries must be exactly 0 or 1")
        data = data.astype(np.uint8)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        if self.cubic_symmetric and not is_d4_symmetric(data):
            raise SymmetryError("cell flagged cubic-symmetric is not D4-invariant")

    @property
    def n(self) -> int:
        h, w = self.data.shape
        if h != w:
            raise DimensionError(f"rectangular tile {self.data.shape} has no single n")
        return h

    @property
    def volume_fraction(self) -> float:
        return float(self.data.mean())

    def __eq__(self, other) -> bool:
        return isinstance(other, CellGrid) and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash(self.data.tobytes())


@dataclass(frozen=True)
class BoundaryVector:
    """First-row bit pattern of a tile; the identity of a boundary class."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 1:
            raise DimensionError("boundary bits must be 1-D")
        if not np.isin(bits, (0, 1)).all():
            raise InvariantError("boundary entries must be 0 or 1")
        bits = bits.astype(np.uint8)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    def is_palindromic(self) -> bool:
        return bool(np.array_equal(self.bits, self.bits[::-1]))

    def digest(self) -> str:
        return hashlib.sha256(self.bits.tobytes()).hexdigest()

    def __eq__(self, other) -> bool:
        return isinstance(other, BoundaryVector) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.bits.tobytes())

    def __len__(self):
        return len(self.bits)


@dataclass(frozen=True)
class QuarterGrid:
    """Top-left quarter proxy of a cubic-symmetric cell, values in [-1, 1].

    Threshold convention: value >= 0 is solid.
    """

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[0] != data.shape[1]:
            raise DimensionError(f"quarter must be square, got {data.shape}")
        if np.abs(data).max(initial=0.0) > 1.0 + 1e-12:
            raise InvariantError("quarter values must lie in [-1, 1]")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def m(self) -> int:
        return self.data.shape[0]

    def is_diagonal_symmetric(self, tol: float = 1e-9) -> bool:
        return bool(np.abs(self.data - self.data.T).max(initial=0.0) <= tol)


def symmetrize(cell: CellGrid) -> CellGrid:
    """Project a tile onto exact D4 symmetry: average the 8 transforms, then
    threshold at 0.5 with ties rounding to solid."""
    avg = d4_average(cell.data.astype(float))
    out = (avg >= 0.5).astype(np.uint8)
    return CellGrid(out, cubic_symmetric=True)


def quarter_of(cell: CellGrid) -> QuarterGrid:
    """Top-left quarter of a cubic-symmetric cell, mapped to {-1, +1}."""
    if not is_d4_symmetric(cell.data):
        raise SymmetryError("quarter_of requires a cubic-symmetric cell")
    n = cell.n
    if n % 2 != 0:
        raise DimensionError("cell side must be even to take a quarter")
    m = n // 2
    q = cell.data[:m, :m].astype(float) * 2.0 - 1.0
    return QuarterGrid(q)


def expand_quarter(q: QuarterGrid, tol: float = 1e-9) -> CellGrid:
    """Mirror a diagonal-symmetric quarter into a full D4-symmetric cell.

    Values >= 0 become solid.
    """
    if not q.is_diagonal_symmetric(tol):
        raise SymmetryError("quarter is not diagonal-symmetric within tolerance")
    bits = (q.data >= 0.0).astype(np.uint8)
    top = np.concatenate([bits, bits[:, ::-1]], axis=1)
    full = np.concatenate([top, top[::-1, :]], axis=0)
    return CellGrid(full, cubic_symmetric=True)


def boundary_of(cell: CellGrid) -> BoundaryVector:
    """Bits of the first row of the tile."""
    return BoundaryVector(cell.data[0, :])


def iou(a: CellGrid, b: CellGrid) -> float:
    """Intersection over union of solid phases; two all-void tiles give 1."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"IoU shapes differ: {a.data.shape} vs {b.data.shape}")
    inter = int(np.logical_and(a.data, b.data).sum())
    union = int(np.logical_or(a.data, b.data).sum())
    if union == 0:
        return 1.0
    return inter / union


def structure_similarity(
    s: CellGrid,
    pool,
    c_s,
    radius: float = 0.5,
    exclude_index: int | None = None,
) -> float:
    """Max IoU against pool members whose elastic tensor lies within `radius`
    (Euclidean over (c11, c12, c33)) of the query's tensor.

    `pool` is a sequence of (CellGrid, tensor-like) pairs. 0 when no member
    qualifies. Pass `exclude_index` to skip the query's own pool entry.
    """
    if len(pool) == 0:
        raise InputError("structure similarity needs a nonempty pool")
    cs = np.asarray([c_s.c11, c_s.c12, c_s.c33] if hasattr(c_s, "c11") else c_s, dtype=float)
    best = 0.0
    for idx, (cell, tensor) in enumerate(pool):
        if exclude_index is not None and idx == exclude_index:
            continue
        ct = np.asarray(
            [tensor.c11, tensor.c12, tensor.c33] if hasattr(tensor, "c11") else tensor,
            dtype=float,
        )
        if np.linalg.norm(cs - ct) < radius:
            best = max(best, iou(s, cell))
    return best


def structure_diversity(s, pool, c_s, radius: float = 0.5, exclude_index=None) -> float:
    return 1.0 - structure_similarity(s, pool, c_s, radius, exclude_index)


def boundary_similarity(b: BoundaryVector, b2: BoundaryVector) -> float:
    """Euclidean distance between boundary bit vectors."""
    if len(b) != len(b2):
        raise DimensionError(f"boundary lengths differ: {len(b)} vs {len(b2)}")
    return float(np.linalg.norm(b.bits.astype(float) - b2.bits.astype(float)))


def is_connected(cell: CellGrid, periodic: bool = False) -> bool:
    """True iff the solid phase is one 4-connected component and nonempty.

    `periodic=True` additionally merges components touching across opposite
    tile edges (off by default).
    """
    solid = cell.data.astype(bool)
    if not solid.any():
        return False
    labels, count = ndi.label(solid, structure=_CROSS)
    if not periodic or count == 1:
        return count == 1
    # union components linked through the periodic wrap
    parent = list(range(count + 1))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj

    h, w = labels.shape
    for r in range(h):
        if solid[r, 0] and solid[r, w - 1]:
            union(labels[r, 0], labels[r, w - 1])
    for c in range(w):
        if solid[0, c] and solid[h - 1, c]:
            union(labels[0, c], labels[h - 1, c])
    roots = {find(i) for i in range(1, count + 1)}
    return len(roots) == 1


# --- persistence: binary PGM (P5) + JSON sidecar ---------------------------


def save_pgm(cell: CellGrid, path, cell_id: str | None = None) -> None:
    """Write a P5 PGM (solid=255, void=0) and a JSON sidecar next to it."""
    path = Path(path)
    h, w = cell.data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write((cell.data * np.uint8(255)).tobytes())
    sidecar = {
        "id": cell_id if cell_id is not None else path.stem,
        "n": int(w) if h == w else [int(h), int(w)],
        "cubic_symmetric": bool(is_d4_symmetric(cell.data)),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1))


def load_pgm(path) -> CellGrid:
    """Read a P5 PGM written by save_pgm (any maxval; >=50% of maxval is solid)."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"missing cell file: {path}")
    with open(path, "rb") as f:
        blob = f.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        # skip whitespace / comment lines of the header
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    if fields[0] != b"P5":
        raise InputError(f"{path}: not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    pos += 1  # single whitespace after maxval
    raster = np.frombuffer(blob, dtype=np.uint8, count=h * w, offset=pos)
    if raster.size != h * w:
        raise InputError(f"{path}: truncated raster")
    data = (raster.reshape(h, w) >= (maxval + 1) // 2).astype(np.uint8)
    sidecar = path.with_suffix(".json")
    symmetric = False
    if sidecar.exists():
        symmetric = bool(json.loads(sidecar.read_text()).get("cubic_symmetric", False))
    return CellGrid(data, cubic_symmetric=symmetric and is_d4_symmetric(data))
