"""SIMP inverse homogenization: the seed microstructure generator.

Maximizes the planar bulk or shear modulus (or a weighted mix) at a target
volume fraction with optimality-criteria updates. Designs are kept
D4-symmetric by projecting the filtered densities onto the symmetry average
every iteration; the emitted cell is the 0.5-threshold binarization,
re-symmetrized exactly and screened for 4-connectivity.

Thresholding a gray design shifts its volume fraction, so an outer loop
retargets the continuous volume until the binary cell lands within
tolerance of the requested fraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage as ndi

from . import fea, homogenization as hom
from .cells import CellGrid, d4_average, is_connected, symmetrize
from .errors import InputError
from .fea import ElasticTensor3, base_material

FILTER_RADIUS = 1.5
MOVE_LIMIT = 0.2
RHO_MIN = 1e-3
VF_TOL_BINARY = 0.02
VF_TOL_CONTINUOUS = 1e-4


@dataclass
class DensityField:
    """Continuous design densities with their current volume target."""

    values: np.ndarray
    vf: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass
class OptimizeResult:
    cell: CellGrid
    properties: hom.HomogenizationResult
    objective_history: list
    accepted: bool
    reason: str = ""
    continuous: DensityField | None = None


def _cone_kernel(radius: float = FILTER_RADIUS) -> np.ndarray:
    m = int(np.floor(radius))
    off = np.arange(-m, m + 1)
    dx, dy = np.meshgrid(off, off)
    w = np.maximum(0.0, radius - np.hypot(dx, dy))
    return w / w.sum()

_KERNEL = _cone_kernel()


def density_filter(x: np.ndarray) -> np.ndarray:
    """Linear cone filter, periodic wrap (the tile is a periodic cell)."""
    return ndi.convolve(x, _KERNEL, mode="wrap")


def physical_density(x: np.ndarray) -> np.ndarray:
    """Design -> physical densities: cone filter then D4 projection."""
    return np.clip(d4_average(density_filter(x)), RHO_MIN, 1.0)


def _objective_weights(objective) -> tuple[float, float]:
    if isinstance(objective, str):
        try:
            return {"bulk": (1.0, 0.0), "shear": (0.0, 1.0)}[objective]
        except KeyError:
            raise InputError(f"unknown objective {objective!r}") from None
    wb, ws = objective
    return float(wb), float(ws)


def _objective_value(CH: np.ndarray, weights) -> float:
    wb, ws = weights
    return wb * 0.5 * (CH[0, 0] + CH[0, 1]) + ws * CH[2, 2]


def sensitivity(
    objective,
    density_field,
    base: ElasticTensor3 | None = None,
    penalty: float = fea.SIMP_PENALTY,
    e_min: float = fea.SIMP_EMIN,
):
    """d(objective)/d(rho_e) from the stored test-strain fields.

    Self-adjoint: the derivative of C^H_ij is the SIMP-slope-weighted base
    mutual energy of the already-computed fields, so no extra solves.
    Returns (gradient field, objective value, HomogenizationResult).
    """
    dens = density_field.values if isinstance(density_field, DensityField) else np.asarray(density_field, float)
    base = base if base is not None else base_material()
    weights = _objective_weights(objective)
    result, fields = hom.homogenize(dens, base, penalty, e_min, return_fields=True)
    Q = fields.base_energy
    qe = weights[0] * 0.5 * (Q[:, 0, 0] + Q[:, 0, 1]) + weights[1] * Q[:, 2, 2]
    ny, nx = dens.shape
    slope = penalty * dens.ravel() ** (penalty - 1.0) * (1.0 - e_min)
    grad = (slope * qe / (nx * ny)).reshape(ny, nx)
    return grad, _objective_value(result.full_matrix, weights), result


def oc_update(
    density: np.ndarray,
    sens: np.ndarray,
    vf: float,
    move: float = MOVE_LIMIT,
    damping: float = 0.5,
) -> np.ndarray:
    """Optimality-criteria step for a maximization objective.

    Bisects the volume multiplier until the mean density matches vf to 1e-4;
    per-element change is capped by `move` and values stay in [RHO_MIN, 1].
    """
    x = np.asarray(density, dtype=float)
    B = np.maximum(np.asarray(sens, dtype=float), 1e-14)
    lo, hi = 1e-12, 1e12
    xn = x
    for _ in range(200):
        lam = np.sqrt(lo * hi)
        xn = np.clip(np.clip(x * (B / lam) ** damping, x - move, x + move), RHO_MIN, 1.0)
        mean = xn.mean()
        if abs(mean - vf) <= VF_TOL_CONTINUOUS / 10:
            break
        if mean > vf:
            lo = lam
        else:
            hi = lam
        if hi / lo < 1 + 1e-14:
            break
    return xn


def initial_density(vf: float, n: int, kind: str = "hole", rng=None) -> np.ndarray:
    """Symmetric starting guesses: a sized center hole or random blobs."""
    if kind == "hole":
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        c = (n - 1) / 2.0
        r = n * np.sqrt(max(1.0 - vf, 0.05) / np.pi)
        x = np.full((n, n), 1.0)
        x[(ii - c) ** 2 + (jj - c) ** 2 < r * r] = 0.05
    elif kind == "blob":
        rng = rng if rng is not None else np.random.default_rng(0)
        z = ndi.gaussian_filter(rng.standard_normal((n, n)), n / 10.0, mode="wrap")
        z = d4_average(z)
        ranks = np.argsort(np.argsort(z.ravel())).reshape(n, n) / (n * n - 1.0)
        x = 0.3 + 0.65 * ranks
    else:
        raise InputError(f"unknown initialization {kind!r}")
    x *= vf / x.mean()
    return np.clip(d4_average(x), RHO_MIN, 1.0)


def _oc_phase(x, vf, weights, iters, base, history, move0=MOVE_LIMIT):
    """Monotone OC loop at a fixed volume target.

    A step that lowers the objective is rolled back with a halved move limit;
    once the limit bottoms out the phase stops, so the recorded history of
    accepted steps never decreases.
    """
    move = move0
    prev_f = -np.inf
    prev_x = x.copy()
    it = 0
    while it < iters:
        it += 1
        xp = physical_density(x)
        grad, f, _ = sensitivity(weights, xp, base)
        if f < prev_f - 1e-12:
            if move <= 0.02:
                x = prev_x
                break
            move *= 0.5
            x = prev_x.copy()
            continue
        history.append(f)
        sens_design = density_filter(d4_average(grad))
        prev_f, prev_x = f, x.copy()
        x = oc_update(x, sens_design, vf, move)
    return x


def optimize_cell(
    objective,
    vf: float,
    n: int = 64,
    iters: int = 80,
    init: str = "hole",
    rng=None,
    base: ElasticTensor3 | None = None,
    seed: DensityField | None = None,
) -> OptimizeResult:
    """Design one cell. vf must lie in the sweep range [0.2, 0.9] (vf = 1.0
    is admitted as the all-solid limiting case)."""
    base = base if base is not None else base_material()
    if vf == 1.0:
        cell = CellGrid(np.ones((n, n), dtype=np.uint8), cubic_symmetric=True)
        props = hom.homogenize(cell, base)
        return OptimizeResult(cell, props, [hom.bulk_modulus(props)], accepted=True)
    if not 0.2 <= vf <= 0.9:
        raise InputError(f"volume fraction {vf} outside the sweep range [0.2, 0.9]")
    weights = _objective_weights(objective)
    if seed is not None:
        x = np.clip(d4_average(np.asarray(seed.values, dtype=float)), RHO_MIN, 1.0)
    else:
        x = initial_density(vf, n, init, rng)

    history: list = []
    vf_cont = vf
    x = _oc_phase(x, vf_cont, weights, iters, base, history)
    # retarget the continuous volume until the thresholded cell hits vf
    for _ in range(6):
        err = (physical_density(x) >= 0.5).mean() - vf
        if abs(err) <= VF_TOL_BINARY * 0.75:
            break
        vf_cont = float(np.clip(vf_cont - err, 0.05, 0.98))
        history = []
        x = _oc_phase(x, vf_cont, weights, max(iters // 3, 20), base, history)

    xp = physical_density(x)
    cell = symmetrize(CellGrid((xp >= 0.5).astype(np.uint8)))
    props = hom.homogenize(cell, base)
    accepted, reason = True, ""
    if not is_connected(cell):
        accepted, reason = False, "disconnected"
    elif abs(cell.volume_fraction - vf) > VF_TOL_BINARY:
        accepted, reason = False, f"volume fraction {cell.volume_fraction:.3f} off target {vf}"
    return OptimizeResult(
        cell, props, history, accepted, reason, DensityField(x, vf_cont)
    )


def seed_sweep(
    count_per_vf: int,
    vf_grid,
    objectives=((1.0, 0.0), (0.0, 1.0)),
    n: int = 64,
    iters: int = 60,
    rng=None,
) -> list[OptimizeResult]:
    """Multi-start sweep over volume fractions and objective mixes.

    Alternates hole/blob initializations and the given objective weights;
    only accepted (symmetric, connected, on-volume) cells are returned.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    out = []
    for vf in vf_grid:
        for j in range(count_per_vf):
            objective = objectives[j % len(objectives)]
            init = "hole" if j % 2 == 0 else "blob"
            res = optimize_cell(
                objective, float(vf), n=n, iters=iters, init=init,
                rng=np.random.default_rng(rng.integers(2**63)),
            )
            if res.accepted:
                out.append(res)
    return out
