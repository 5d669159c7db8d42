"""Plane-stress bilinear-quad finite element kernel.

Unit square elements, 2x2 Gauss quadrature, node (ix, iy) at coordinates
(ix, iy) with node index iy*(nx+1)+ix and DOFs (2*node, 2*node+1) for
(ux, uy). Element e = ey*nx + ex matches row-major raveling of an (ny, nx)
density/material array. Constraints (prescribed values and periodic
master-slave pairs with affine offsets) are eliminated by substitution
u = T u_f + g, leaving an SPD reduced system.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConstraintError, DimensionError, MaterialError, SolverError

E_BASE = 3.0
NU_BASE = 0.3
SIMP_PENALTY = 3.0
SIMP_EMIN = 1e-9

# Systems larger than this fall back from sparse LU to preconditioned CG.
_DIRECT_DOF_LIMIT = 700_000
_CG_TOL = 1e-8


@dataclass(frozen=True)
class ElasticTensor3:
    """(c11, c12, c33) of a cubic-symmetric material, plane-stress Voigt form.

    Reconstructs as [[c11, c12, 0], [c12, c11, 0], [0, 0, c33]].
    """

    c11: float
    c12: float
    c33: float

    def full_matrix(self) -> np.ndarray:
        return np.array(
            [[self.c11, self.c12, 0.0], [self.c12, self.c11, 0.0], [0.0, 0.0, self.c33]]
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.c11, self.c12, self.c33])

    def is_positive_definite(self) -> bool:
        return self.c11 > abs(self.c12) and self.c33 > 0.0

    def is_physical(self) -> bool:
        return self.c11 >= abs(self.c12) >= 0.0 and self.c33 > 0.0

    def scaled(self, factor: float) -> "ElasticTensor3":
        return ElasticTensor3(self.c11 * factor, self.c12 * factor, self.c33 * factor)


def base_material(E: float = E_BASE, nu: float = NU_BASE) -> ElasticTensor3:
    """Plane-stress isotropic tensor for Young's modulus E and Poisson nu."""
    f = E / (1.0 - nu * nu)
    return ElasticTensor3(f, nu * f, E / (2.0 * (1.0 + nu)))


def _ke_from_matrix(C: np.ndarray) -> np.ndarray:
    """8x8 stiffness of a unit square element for constitutive matrix C."""
    ke = np.zeros((8, 8))
    xs = np.array([-1.0, 1.0, 1.0, -1.0])
    ys = np.array([-1.0, -1.0, 1.0, 1.0])
    gp = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    for xi in gp:
        for eta in gp:
            dN_dx = 0.5 * xs * (1 + eta * ys)  # chain rule, J = diag(1/2, 1/2)
            dN_dy = 0.5 * ys * (1 + xi * xs)
            B = np.zeros((3, 8))
            B[0, 0::2] = dN_dx
            B[1, 1::2] = dN_dy
            B[2, 0::2] = dN_dy
            B[2, 1::2] = dN_dx
            ke += B.T @ C @ B * 0.25  # detJ = 1/4, unit Gauss weights
    return ke


@lru_cache(maxsize=1)
def element_basis() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Element stiffness contributions of unit c11, c12 and c33.

    k_e(C) = c11*K11 + c12*K12 + c33*K33; K12 alone is indefinite, which is
    fine -- these are partial derivatives, not materials.
    """
    k11 = _ke_from_matrix(np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 0]]))
    k12 = _ke_from_matrix(np.array([[0, 1.0, 0], [1.0, 0, 0], [0, 0, 0]]))
    k33 = _ke_from_matrix(np.diag([0.0, 0.0, 1.0]))
    for k in (k11, k12, k33):
        k.setflags(write=False)
    return k11, k12, k33


def element_stiffness(c: ElasticTensor3) -> np.ndarray:
    """8x8 symmetric PSD element stiffness for a positive definite tensor."""
    if not c.is_positive_definite():
        raise MaterialError(f"tensor not positive definite: {c}")
    k11, k12, k33 = element_basis()
    return c.c11 * k11 + c.c12 * k12 + c.c33 * k33


@lru_cache(maxsize=8)
def edof_matrix(nx: int, ny: int) -> np.ndarray:
    """(ne x 8) element DOF table, CCW node order starting at (ex, ey)."""
    ex, ey = np.meshgrid(np.arange(nx), np.arange(ny))
    ex, ey = ex.ravel(), ey.ravel()
    nnx = nx + 1

    def node(ix, iy):
        return iy * nnx + ix

    n0, n1 = node(ex, ey), node(ex + 1, ey)
    n2, n3 = node(ex + 1, ey + 1), node(ex, ey + 1)
    edof = np.stack(
        [2 * n0, 2 * n0 + 1, 2 * n1, 2 * n1 + 1, 2 * n2, 2 * n2 + 1, 2 * n3, 2 * n3 + 1],
        axis=1,
    )
    edof.setflags(write=False)
    return edof


@dataclass
class FeMesh:
    """Structured mesh of nx x ny unit elements with per-element tensors."""

    nx: int
    ny: int
    c11: np.ndarray
    c12: np.ndarray
    c33: np.ndarray

    def __post_init__(self):
        ne = self.nx * self.ny
        for name in ("c11", "c12", "c33"):
            arr = np.asarray(getattr(self, name), dtype=float).ravel()
            if arr.size == 1:
                arr = np.full(ne, arr[0])
            if arr.size != ne:
                raise DimensionError(f"{name} has {arr.size} entries for {ne} elements")
            setattr(self, name, arr)

    @classmethod
    def uniform(cls, nx: int, ny: int, tensor: ElasticTensor3) -> "FeMesh":
        return cls(nx, ny, tensor.c11, tensor.c12, tensor.c33)

    @classmethod
    def from_tensors(cls, nx: int, ny: int, tensors) -> "FeMesh":
        arr = np.asarray(
            [[t.c11, t.c12, t.c33] if isinstance(t, ElasticTensor3) else t for t in tensors]
        )
        return cls(nx, ny, arr[:, 0], arr[:, 1], arr[:, 2])

    @classmethod
    def from_densities(
        cls,
        densities: np.ndarray,
        base: ElasticTensor3 | None = None,
        penalty: float = SIMP_PENALTY,
        e_min: float = SIMP_EMIN,
    ) -> "FeMesh":
        """SIMP interpolation C_e = (e_min + rho^p (1 - e_min)) * C_base."""
        dens = np.asarray(densities, dtype=float)
        if dens.ndim != 2:
            raise DimensionError("density field must be 2-D")
        base = base if base is not None else base_material()
        scale = e_min + dens.ravel() ** penalty * (1.0 - e_min)
        return cls(dens.shape[1], dens.shape[0], base.c11 * scale, base.c12 * scale, base.c33 * scale)

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def edof(self) -> np.ndarray:
        return edof_matrix(self.nx, self.ny)

    def node(self, ix: int, iy: int) -> int:
        return iy * (self.nx + 1) + ix

    def node_coords(self) -> np.ndarray:
        X, Y = np.meshgrid(np.arange(self.nx + 1), np.arange(self.ny + 1))
        return np.stack([X.ravel(), Y.ravel()], axis=1).astype(float)

    def element_matrices(self) -> np.ndarray:
        """(ne x 8 x 8) stack of element stiffness matrices."""
        k11, k12, k33 = element_basis()
        return (
            self.c11[:, None, None] * k11
            + self.c12[:, None, None] * k12
            + self.c33[:, None, None] * k33
        )

    def assemble(self) -> sp.csc_matrix:
        edof = self.edof
        iK = np.repeat(edof, 8, axis=1).ravel()
        jK = np.tile(edof, (1, 8)).ravel()
        sK = self.element_matrices().ravel()
        return sp.coo_matrix((sK, (iK, jK)), shape=(self.n_dofs, self.n_dofs)).tocsc()


@dataclass
class LoadCase:
    """Nodal forces plus displacement constraints.

    `prescribed` maps DOF -> value; `periodic` lists (slave_dof, master_dof,
    offset) triples meaning u[slave] = u[master] + offset. A DOF may not be
    both prescribed and a periodic slave.
    """

    n_dofs: int
    forces: np.ndarray = None
    prescribed: dict = field(default_factory=dict)
    periodic: list = field(default_factory=list)

    def __post_init__(self):
        if self.forces is None:
            self.forces = np.zeros(self.n_dofs)
        self.forces = np.asarray(self.forces, dtype=float)
        if self.forces.size != self.n_dofs:
            raise DimensionError("force vector length mismatch")
        slaves = {s for s, _, _ in self.periodic}
        if slaves & set(self.prescribed):
            raise ConstraintError("a DOF is both prescribed and a periodic slave")


@dataclass
class Reduction:
    """Affine change of variables u = T u_f + g onto unconstrained DOFs."""

    T: sp.csc_matrix
    g: np.ndarray
    free: np.ndarray  # original DOF index per reduced unknown

    @property
    def n_reduced(self) -> int:
        return self.T.shape[1]


def build_reduction(n_dofs: int, load: LoadCase) -> Reduction:
    """Resolve prescribed and periodic constraints into (T, g)."""
    master_of = {}
    offset_of = {}
    for s, m, off in load.periodic:
        if s == m:
            raise ConstraintError(f"DOF {s} is its own master")
        if s in master_of and (master_of[s] != m or offset_of[s] != off):
            raise ConstraintError(f"slave DOF {s} mapped twice inconsistently")
        master_of[s] = m
        offset_of[s] = float(off)
    for s, m in master_of.items():
        if m in master_of:
            raise ConstraintError(f"master DOF {m} is itself a slave (chains unsupported)")

    g = np.zeros(n_dofs)
    is_red = np.ones(n_dofs, dtype=bool)
    for d, v in load.prescribed.items():
        g[d] = float(v)
        is_red[d] = False
    for s in master_of:
        is_red[s] = False
    free = np.flatnonzero(is_red)
    red_index = -np.ones(n_dofs, dtype=np.int64)
    red_index[free] = np.arange(free.size)

    rows = list(free)
    cols = list(range(free.size))
    for s, m in master_of.items():
        if m in load.prescribed:
            g[s] = load.prescribed[m] + offset_of[s]
        else:
            rows.append(s)
            cols.append(red_index[m])
            g[s] = offset_of[s]
    T = sp.coo_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(n_dofs, free.size)
    ).tocsc()
    return Reduction(T=T, g=g, free=free)


def apply_periodic(mesh: FeMesh, master_slave_map, prescribed=None) -> Reduction:
    """Reduction for a periodic master-slave DOF map (plus optional pins)."""
    load = LoadCase(
        mesh.n_dofs, prescribed=dict(prescribed or {}), periodic=list(master_slave_map)
    )
    return build_reduction(mesh.n_dofs, load)


def solve_reduced(K: sp.csc_matrix, red: Reduction, forces: np.ndarray) -> np.ndarray:
    """Solve K u = F under the reduction; returns the full displacement vector."""
    Kff = (red.T.T @ K @ red.T).tocsc()
    rhs = red.T.T @ (forces - K @ red.g)
    n = Kff.shape[0]
    if n == 0:
        return red.g.copy()
    try:
        if n <= _DIRECT_DOF_LIMIT:
            lu = spla.splu(Kff)
            uf = lu.solve(rhs)
        else:
            uf = _cg_solve(Kff, rhs)
    except RuntimeError as exc:  # SuperLU singular-matrix failure
        raise ConstraintError(f"singular reduced system: {exc}") from exc
    if not np.isfinite(uf).all():
        raise ConstraintError("singular reduced system: non-finite solution")
    resid = np.linalg.norm(Kff @ uf - rhs)
    ref = np.linalg.norm(rhs)
    if resid > 1e-8 * max(ref, 1e-30) and resid > 1e-12:
        raise SolverError(f"solver residual {resid:.3e} exceeds tolerance (|rhs|={ref:.3e})")
    return red.T @ uf + red.g


def _cg_solve(Kff: sp.csc_matrix, rhs: np.ndarray) -> np.ndarray:
    diag = Kff.diagonal()
    diag[diag <= 0] = 1.0
    M = sp.diags(1.0 / diag)
    uf, info = spla.cg(Kff, rhs, rtol=_CG_TOL, maxiter=50_000, M=M)
    if info != 0:
        resid = np.linalg.norm(Kff @ uf - rhs) / max(np.linalg.norm(rhs), 1e-30)
        raise SolverError(f"CG did not converge (info={info}, rel. residual {resid:.3e})")
    return uf


def assemble_and_solve(mesh: FeMesh, load: LoadCase) -> np.ndarray:
    """Assemble the global system and solve under the load case constraints."""
    if load.n_dofs != mesh.n_dofs:
        raise DimensionError("load case sized for a different mesh")
    K = mesh.assemble()
    red = build_reduction(mesh.n_dofs, load)
    return solve_reduced(K, red, load.forces)


def compliance(mesh: FeMesh, u: np.ndarray) -> float:
    """Strain energy form u' K u (equals F'u for force loading)."""
    edof = mesh.edof
    ue = u[edof]
    ke = mesh.element_matrices()
    return float(np.einsum("ei,eij,ej->", ue, ke, ue))


def displacement_csv(mesh: FeMesh, u: np.ndarray, path) -> None:
    """Export nodal displacements as (node_x, node_y, ux, uy) rows."""
    coords = mesh.node_coords()
    with open(path, "w") as f:
        f.write("node_x,node_y,ux,uy\n")
        for i in range(mesh.n_nodes):
            f.write(
                f"{coords[i, 0]:.1f},{coords[i, 1]:.1f},{u[2 * i]:.17g},{u[2 * i + 1]:.17g}\n"
            )
