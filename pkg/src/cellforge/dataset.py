"""Dataset lifecycle: perturbation, filtering, dedup, boundary clustering,
and manifest persistence.

A manifest is a schema-versioned JSON file listing cells (stored as PGM
tiles next to it), their homogenized tensors and provenance. Datasets tied
to one seed boundary record that boundary, and every entry must match it
bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .cells import (
    BoundaryVector,
    CellGrid,
    boundary_of,
    boundary_similarity,
    iou,
    is_connected,
    load_pgm,
    save_pgm,
    symmetrize,
)
from .errors import InputError, InvariantError
from .fea import ElasticTensor3

SCHEMA_VERSION = 1
SS_THRESHOLD = 0.9
TENSOR_NEIGHBOR_RADIUS = 0.5
DISTORT_MAX = 0.3


# --- radial distortion perturbation ----------------------------------------


def perturb(cell: CellGrid, k_distort: float) -> CellGrid:
    """Radial-distortion resampling: source = center + d*(1 + k*r^2).

    d is the offset from the tile center, r the radius normalized by n/2;
    nearest-neighbor sampling with edge clamping, then re-symmetrization.
    """
    if abs(k_distort) > 0.5:
        raise InputError(f"distortion coefficient {k_distort} outside [-0.5, 0.5]")
    n = cell.n
    if k_distort == 0.0:
        return symmetrize(cell)
    c = (n - 1) / 2.0
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    dy = ii - c
    dx = jj - c
    r2 = (dx * dx + dy * dy) / (n / 2.0) ** 2
    src_i = np.clip(np.rint(c + dy * (1.0 + k_distort * r2)).astype(int), 0, n - 1)
    src_j = np.clip(np.rint(c + dx * (1.0 + k_distort * r2)).astype(int), 0, n - 1)
    return symmetrize(CellGrid(cell.data[src_i, src_j]))


@dataclass
class SweepStats:
    generated: int
    survivors: int

    @property
    def survivor_fraction(self) -> float:
        return self.survivors / self.generated if self.generated else 0.0


def perturb_sweep(
    cells,
    variants_per_cell: int = 10,
    k_max: float = DISTORT_MAX,
    rng=None,
    homogenize_fn=None,
):
    """Distorted variants of each cell, keeping only connected survivors.

    Returns (list of (cell, properties), SweepStats); properties are None
    unless a homogenize callable is supplied.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    out = []
    generated = 0
    for cell in cells:
        for _ in range(variants_per_cell):
            k = float(rng.uniform(-k_max, k_max))
            variant = perturb(cell, k)
            generated += 1
            if not is_connected(variant):
                continue
            props = homogenize_fn(variant) if homogenize_fn is not None else None
            out.append((variant, props))
    return out, SweepStats(generated=generated, survivors=len(out))


# --- similarity elimination -------------------------------------------------


def _pairwise_ss_tables(pool):
    cells = [c for c, _ in pool]
    tensors = np.asarray(
        [t.as_array() if isinstance(t, ElasticTensor3) else t for _, t in pool]
    )
    n = len(pool)
    dist = np.linalg.norm(tensors[:, None, :] - tensors[None, :, :], axis=2)
    near = dist < TENSOR_NEIGHBOR_RADIUS
    np.fill_diagonal(near, False)
    flat = np.stack([c.data.astype(bool).ravel() for c in cells])
    inter = (flat.astype(np.float32) @ flat.astype(np.float32).T).astype(np.int64)
    sizes = flat.sum(axis=1)
    union = sizes[:, None] + sizes[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou_mat = np.where(union > 0, inter / np.maximum(union, 1), 1.0)
    return near, iou_mat


def eliminate_similarity(pool, ss_threshold: float = SS_THRESHOLD):
    """Greedy removal of the most-similar cell until max SS <= threshold.

    `pool` is a sequence of (CellGrid, tensor) pairs. Ties in SS break toward
    the lower index, making removal deterministic. Returns the kept indices
    in their original order.
    """
    n = len(pool)
    if n == 0:
        return []
    near, iou_mat = _pairwise_ss_tables(pool)
    alive = np.ones(n, dtype=bool)
    masked = np.where(near, iou_mat, 0.0)
    while True:
        act = np.flatnonzero(alive)
        if act.size <= 1:
            break
        sub = masked[np.ix_(act, act)]
        ss = sub.max(axis=1)
        worst = ss.max()
        if worst <= ss_threshold:
            break
        alive[act[int(np.argmax(ss))]] = False  # argmax takes the lowest index on ties
    return list(np.flatnonzero(alive))


def stratified_sample(pool, bins: int = 8, cap: int = 4, rng=None):
    """Uniform tensor-space coverage: keep at most `cap` entries per box of a
    bins^3 partition of the cloud's bounding box. Returns kept indices."""
    if cap < 1:
        raise InputError("cap must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    tensors = np.asarray(
        [t.as_array() if isinstance(t, ElasticTensor3) else t for _, t in pool]
    )
    if tensors.shape[0] == 0:
        return []
    lo = tensors.min(axis=0)
    hi = tensors.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    idx = np.minimum((tensors - lo) / span * bins, bins - 1).astype(int)
    lin = idx[:, 0] * bins * bins + idx[:, 1] * bins + idx[:, 2]
    kept = []
    for box in np.unique(lin):
        members = np.flatnonzero(lin == box)
        if members.size > cap:
            members = np.sort(rng.choice(members, size=cap, replace=False))
        kept.extend(members.tolist())
    return sorted(kept)


# --- boundary clustering ----------------------------------------------------


@dataclass
class SeedBoundarySet:
    boundaries: list
    separation_floor: float = 0.0

    def min_pairwise_bs(self) -> float:
        k = len(self.boundaries)
        if k < 2:
            return float("inf")
        return min(
            boundary_similarity(self.boundaries[i], self.boundaries[j])
            for i in range(k)
            for j in range(i + 1, k)
        )


def _kmeans(X: np.ndarray, k: int, rng) -> tuple[np.ndarray, np.ndarray, list]:
    """Seeded k-means++ plus Lloyd iterations; returns (labels, centers,
    inertia history). Empty clusters grab the farthest point."""
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = X[rng.integers(n)]
        else:
            centers[j] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
    inertia_hist = []
    labels = np.zeros(n, dtype=int)
    for _ in range(300):
        dist = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = dist.argmin(axis=1)
        inertia_hist.append(float(dist[np.arange(n), labels].sum()))
        new_centers = centers.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new_centers[j] = X[members].mean(axis=0)
            else:
                far = int(dist.min(axis=1).argmax())
                new_centers[j] = X[far]
        if np.allclose(new_centers, centers):
            break
        centers = new_centers
    return labels, centers, inertia_hist


def cluster_boundaries(boundaries, k: int, seed: int = 0):
    """k-means over boundary bit vectors under Euclidean (BS) distance.

    Centroids are binarized at 0.5 (ties solid) and palindromized; they need
    not coincide with any corpus member. Returns (SeedBoundarySet, labels,
    inertia history).
    """
    if k < 1:
        raise InputError("k must be >= 1")
    X = np.asarray([b.bits for b in boundaries], dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InputError("no boundaries to cluster")
    distinct = np.unique(X, axis=0).shape[0]
    if k > distinct:
        raise InputError(f"k={k} exceeds the {distinct} distinct boundaries")
    labels, centers, inertia = _kmeans(X, k, np.random.default_rng(seed))
    seeds = []
    for c in centers:
        sym = 0.5 * (c + c[::-1])
        seeds.append(BoundaryVector((sym >= 0.5).astype(np.uint8)))
    return SeedBoundarySet(seeds), labels, inertia


def default_separation_floor(n: int) -> float:
    """BS floor 3.0 at the 256-bit reference length, rescaled by sqrt(n/256)."""
    return 3.0 * np.sqrt(n / 256.0)


def select_seed_boundaries(
    boundaries, k_start: int = 40, floor: float | None = None, seed: int = 0
) -> SeedBoundarySet:
    """Reduce the cluster count from k_start until no two seed boundaries are
    closer than the separation floor."""
    X = np.asarray([b.bits for b in boundaries], dtype=float)
    if X.shape[0] == 0:
        raise InputError("no boundaries to cluster")
    n = X.shape[1]
    floor = floor if floor is not None else default_separation_floor(n)
    distinct = np.unique(X, axis=0).shape[0]
    k = min(k_start, distinct)
    while k >= 1:
        seed_set, _, _ = cluster_boundaries(boundaries, k, seed)
        seed_set.separation_floor = floor
        if seed_set.min_pairwise_bs() >= floor:
            return seed_set
        k -= 1
    raise InputError("could not find a separated seed boundary set")


# --- manifest persistence ---------------------------------------------------


@dataclass
class ManifestEntry:
    id: str
    file: str
    c11: float
    c12: float
    c33: float
    volume_fraction: float
    boundary_digest: str
    provenance: str
    iteration: int = 0

    def tensor(self) -> ElasticTensor3:
        return ElasticTensor3(self.c11, self.c12, self.c33)


@dataclass
class DatasetManifest:
    root: Path
    entries: list = field(default_factory=list)
    boundary_class: BoundaryVector | None = None
    boundary_class_id: str | None = None

    def __post_init__(self):
        self.root = Path(self.root)

    def ids(self) -> set:
        return {e.id for e in self.entries}

    def cell_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.file

    def load_cell(self, entry: ManifestEntry) -> CellGrid:
        return load_pgm(self.cell_path(entry))

    def tensors(self) -> np.ndarray:
        return np.asarray([[e.c11, e.c12, e.c33] for e in self.entries])

    def add_cell(
        self,
        cell: CellGrid,
        props,
        provenance: str,
        iteration: int = 0,
        cell_id: str | None = None,
    ) -> ManifestEntry:
        """Persist a cell tile under the manifest root and append its entry."""
        if cell_id is None:
            cell_id = f"cell{len(self.entries):06d}"
        if cell_id in self.ids():
            raise InvariantError(f"duplicate cell id {cell_id}")
        b = boundary_of(cell)
        if self.boundary_class is not None and b != self.boundary_class:
            raise InvariantError(f"cell {cell_id} breaks the dataset boundary class")
        cells_dir = self.root / "cells"
        cells_dir.mkdir(parents=True, exist_ok=True)
        rel = f"cells/{cell_id}.pgm"
        save_pgm(cell, self.root / rel, cell_id)
        tensor = props.tensor if hasattr(props, "tensor") else props
        entry = ManifestEntry(
            id=cell_id,
            file=rel,
            c11=float(tensor.c11),
            c12=float(tensor.c12),
            c33=float(tensor.c33),
            volume_fraction=float(
                props.volume_fraction if hasattr(props, "volume_fraction") else cell.volume_fraction
            ),
            boundary_digest=b.digest(),
            provenance=provenance,
            iteration=iteration,
        )
        self.entries.append(entry)
        return entry


def save_manifest(manifest: DatasetManifest, path=None) -> Path:
    path = Path(path) if path is not None else manifest.root / "manifest.json"
    doc = {
        "schema_version": SCHEMA_VERSION,
        "boundary_class": (
            None
            if manifest.boundary_class is None
            else {
                "id": manifest.boundary_class_id,
                "bits": manifest.boundary_class.bits.tolist(),
            }
        ),
        "entries": [asdict(e) for e in manifest.entries],
    }
    path.write_text(json.dumps(doc, indent=1))
    return path


def load_manifest(path, check: bool = True) -> DatasetManifest:
    """Load a manifest; with check=True verify files, digests and uniqueness."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"missing manifest: {path}")
    doc = json.loads(path.read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise InputError(
            f"manifest schema {doc.get('schema_version')} != supported {SCHEMA_VERSION}"
        )
    bc = doc.get("boundary_class")
    manifest = DatasetManifest(
        root=path.parent,
        entries=[ManifestEntry(**e) for e in doc.get("entries", [])],
        boundary_class=BoundaryVector(np.asarray(bc["bits"])) if bc else None,
        boundary_class_id=bc["id"] if bc else None,
    )
    if check:
        verify_manifest(manifest)
    return manifest


def verify_manifest(manifest: DatasetManifest, recheck_tensors: int = 0) -> None:
    """Check structural invariants; optionally re-homogenize a sample of cells."""
    ids = [e.id for e in manifest.entries]
    if len(ids) != len(set(ids)):
        raise InvariantError("duplicate entry ids in manifest")
    class_digest = (
        manifest.boundary_class.digest() if manifest.boundary_class is not None else None
    )
    for e in manifest.entries:
        cell = manifest.load_cell(e)  # raises InputError if the file is gone
        digest = boundary_of(cell).digest()
        if digest != e.boundary_digest:
            raise InvariantError(f"entry {e.id}: boundary digest mismatch")
        if class_digest is not None and digest != class_digest:
            raise InvariantError(f"entry {e.id}: boundary differs from the dataset class")
    if recheck_tensors:
        from .homogenization import homogenize  # solver pulled in only on demand

        step = max(1, len(manifest.entries) // recheck_tensors)
        for e in manifest.entries[::step]:
            got = homogenize(manifest.load_cell(e)).tensor
            if np.max(np.abs(got.as_array() - e.tensor().as_array())) > 1e-6:
                raise InvariantError(f"entry {e.id}: stored tensor differs from re-homogenization")
