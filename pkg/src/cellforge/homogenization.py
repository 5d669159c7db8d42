"""Energy-based periodic homogenization of unit cells.

Three affine test strains (1,0,0), (0,1,0), (0,0,1) are imposed through
periodic master-slave constraints with affine offsets; the effective tensor
is the volume-averaged mutual strain energy of the resulting fields. Also
hosts the Hashin-Shtrikman bulk bound, supercell composition and the
normalized-compliance scale-separation experiment.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import fea
from .cells import CellGrid, is_d4_symmetric
from .errors import DimensionError, InputError, InvariantError
from .fea import ElasticTensor3, FeMesh, LoadCase, base_material


@dataclass(frozen=True)
class HomogenizationResult:
    tensor: ElasticTensor3
    full_matrix: np.ndarray
    volume_fraction: float


@dataclass(frozen=True)
class HomogenizationFields:
    """Per-element data needed by sensitivity analysis.

    base_energy[e, i, j] = u_e(i)' k0 u_e(j) with k0 the unscaled base
    element stiffness; scale[e] is the SIMP stiffness factor.
    """

    base_energy: np.ndarray
    scale: np.ndarray
    densities: np.ndarray


@lru_cache(maxsize=8)
def _periodic_setup(nx: int, ny: int):
    """Slave/master node pairing and relative coordinates for a unit cell."""
    nnx, nny = nx + 1, ny + 1

    def node(ix, iy):
        return iy * nnx + ix

    IX, IY = np.meshgrid(np.arange(nnx), np.arange(nny))
    ix, iy = IX.ravel(), IY.ravel()
    mx = np.where(ix == nx, 0, ix)
    my = np.where(iy == ny, 0, iy)
    masters = node(mx, my)
    nodes = np.arange(nnx * nny)
    slaves = nodes[masters != nodes]
    dx = (ix - mx).astype(float)[slaves]
    dy = (iy - my).astype(float)[slaves]
    return slaves, masters[slaves], dx, dy


def periodic_pairs(nx: int, ny: int, strain) -> list:
    """(slave_dof, master_dof, offset) triples for one macroscopic strain.

    Offsets realize u(x) = u(x_master) + strain . (x - x_master) with
    engineering shear in the third strain slot.
    """
    e11, e22, g12 = strain
    slaves, masters, dx, dy = _periodic_setup(nx, ny)
    pairs = []
    offx = e11 * dx + 0.5 * g12 * dy
    offy = e22 * dy + 0.5 * g12 * dx
    for s, m, ox, oy in zip(slaves, masters, offx, offy):
        pairs.append((2 * s, 2 * m, ox))
        pairs.append((2 * s + 1, 2 * m + 1, oy))
    return pairs


_TEST_STRAINS = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


def _as_density(cell) -> np.ndarray:
    if isinstance(cell, CellGrid):
        return cell.data.astype(float)
    dens = np.asarray(cell, dtype=float)
    if dens.ndim != 2:
        raise DimensionError("density field must be 2-D")
    return dens


def homogenize(
    cell,
    base: ElasticTensor3 | None = None,
    penalty: float = fea.SIMP_PENALTY,
    e_min: float = fea.SIMP_EMIN,
    return_fields: bool = False,
):
    """Effective elastic tensor of a periodic cell (binary tile or densities)."""
    dens = _as_density(cell)
    base = base if base is not None else base_material()
    ny, nx = dens.shape
    mesh = FeMesh.from_densities(dens, base, penalty, e_min)
    K = mesh.assemble()
    pin = {0: 0.0, 1: 0.0}  # corner node kills the two rigid translations
    U = np.zeros((mesh.n_dofs, 3))
    for i, strain in enumerate(_TEST_STRAINS):
        red = fea.build_reduction(
            mesh.n_dofs, LoadCase(mesh.n_dofs, prescribed=pin, periodic=periodic_pairs(nx, ny, strain))
        )
        U[:, i] = fea.solve_reduced(K, red, np.zeros(mesh.n_dofs))
    k0 = fea.element_stiffness(base)
    Ue = U[mesh.edof]  # (ne, 8, 3)
    Q = Ue.transpose(0, 2, 1) @ k0 @ Ue  # (ne, 3, 3) base mutual energies
    scale = e_min + dens.ravel() ** penalty * (1.0 - e_min)
    CH = (scale[:, None, None] * Q).sum(axis=0) / (nx * ny)
    CH = 0.5 * (CH + CH.T)
    result = HomogenizationResult(
        tensor=ElasticTensor3(CH[0, 0], CH[0, 1], CH[2, 2]),
        full_matrix=CH,
        volume_fraction=float(dens.mean()),
    )
    if return_fields:
        return result, HomogenizationFields(base_energy=Q, scale=scale, densities=dens)
    return result


def bulk_modulus(h) -> float:
    """Planar bulk modulus (c11 + c12) / 2 of a cubic-symmetric result."""
    t = h.tensor if isinstance(h, HomogenizationResult) else h
    return 0.5 * (t.c11 + t.c12)


def hs_upper_bound(rho: float, E: float = fea.E_BASE, nu: float = fea.NU_BASE) -> float:
    """2D Hashin-Shtrikman upper bound on bulk modulus for a porous material."""
    if not 0.0 <= rho <= 1.0:
        raise InvariantError(f"volume fraction {rho} outside [0, 1]")
    Ks = E / (2.0 * (1.0 - nu))
    mus = E / (2.0 * (1.0 + nu))
    return rho * Ks * mus / ((1.0 - rho) * Ks + mus)


def compose_supercell(cells) -> CellGrid:
    """Tiled concatenation of a 2-D grid (nested list) of equal-size cells."""
    rows = [list(r) for r in cells]
    if not rows or not rows[0]:
        raise InputError("supercell grid is empty")
    n = rows[0][0].n
    for r in rows:
        for c in r:
            if c.data.shape != (n, n):
                raise DimensionError("supercell constituents must share one n")
    block = np.block([[c.data for c in r] for r in rows])
    return CellGrid(block, cubic_symmetric=is_d4_symmetric(block))


def _solid_edge_load(solid: np.ndarray, total: float = -1.0):
    """Distribute a vertical force over right-edge nodes adjacent to solid pixels."""
    ny, nx = solid.shape
    nnx = nx + 1
    rows = np.flatnonzero(solid[:, nx - 1])
    if rows.size == 0:
        raise InputError("right edge is entirely void; nowhere to apply load")
    nodes = set()
    for r in rows:
        nodes.add(r * nnx + nx)  # top node of pixel row r on the right edge
        nodes.add((r + 1) * nnx + nx)
    nodes = sorted(nodes)
    F = np.zeros(2 * nnx * (ny + 1))
    for nd in nodes:
        F[2 * nd + 1] = total / len(nodes)
    return F


def _cantilever_compliance(dens: np.ndarray, mesh: FeMesh, forces: np.ndarray) -> float:
    ny, nx = dens.shape
    nnx = nx + 1
    prescribed = {}
    for iy in range(ny + 1):
        nd = iy * nnx
        prescribed[2 * nd] = 0.0
        prescribed[2 * nd + 1] = 0.0
    u = fea.assemble_and_solve(
        mesh, LoadCase(mesh.n_dofs, forces=forces, prescribed=prescribed)
    )
    return float(forces @ u)


def normalized_compliance(fill_a: CellGrid, fill_b: CellGrid, m: int) -> float:
    """Homogenized over full-scale compliance for the two-region cantilever.

    The beam is two side-by-side square regions, each tiled with m x m copies
    of its cell; clamped on the left, loaded downward on solid parts of the
    right edge. The homogenized model uses the same fine mesh with each
    region's effective tensor, so the ratio isolates the scale-separation
    plus boundary-connection error.
    """
    if m < 1:
        raise InputError("repetition count m must be >= 1")
    n = fill_a.n
    if fill_b.n != n:
        raise DimensionError("both fills must share the cell resolution")
    tile_a = np.tile(fill_a.data, (m, m))
    tile_b = np.tile(fill_b.data, (m, m))
    solid = np.concatenate([tile_a, tile_b], axis=1).astype(float)
    forces = _solid_edge_load(solid)

    mesh_full = FeMesh.from_densities(solid)
    c_full = _cantilever_compliance(solid, mesh_full, forces)

    ca = homogenize(fill_a).tensor
    cb = homogenize(fill_b).tensor
    ny, nx = solid.shape
    half = nx // 2
    c11 = np.where(np.arange(nx)[None, :] < half, ca.c11, cb.c11)
    c12 = np.where(np.arange(nx)[None, :] < half, ca.c12, cb.c12)
    c33 = np.where(np.arange(nx)[None, :] < half, ca.c33, cb.c33)
    mesh_h = FeMesh(
        nx,
        ny,
        np.broadcast_to(c11, (ny, nx)).ravel(),
        np.broadcast_to(c12, (ny, nx)).ravel(),
        np.broadcast_to(c33, (ny, nx)).ravel(),
    )
    c_homog = _cantilever_compliance(solid, mesh_h, forces)
    return c_homog / c_full
