"""Dirac branch: gamma-matrix algebra, boundary projectors and the 1D two-spinor operator.

The boundary condition (n.alpha + theta beta) psi = sqrt(1 + theta^2) psi says
psi_b lies in the range of the projector P+ onto that eigenspace. The 1D
operator is

    H = Pi (-i c hbar alpha D + m c^2 beta + V) Pi

with D the summation-by-parts first difference (centred inside, one-sided
at the two end nodes) and Pi the block projector that is the identity on interior
nodes and P+(n_b, theta) on boundary nodes. Against trapezoidal weights,
W D + (W D)^T = diag(-1, 0, ..., 0, 1), hence

    Im <psi, H psi>_w = -(c hbar / 2) sum_b (P+ psi_b)^H (n_b alpha) (P+ psi_b) <= 0

for every psi, and states starting in the range of Pi stay there.
"""

import logging
from dataclasses import dataclass
from time import time
from typing import Tuple

import numpy as np
from scipy import sparse

from src.domain.grid import Grid
from src.operators.operator_matrix import OperatorMatrix, Units
from src.operators.potentials import PotentialField

logger = logging.getLogger(__name__)

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True)
class DiracAlgebra:
    """alpha_k and beta in the Dirac representation (or the reduced 1D pair)."""
    alphas: Tuple[np.ndarray, ...]
    beta: np.ndarray
    spin_dim: int

    def anticommutation_residual(self):
        """Largest deviation from {a_i, a_j} = 2 delta_ij, {a_i, beta} = 0, beta^2 = I."""
        eye = np.eye(self.spin_dim)
        worst = np.max(np.abs(self.beta @ self.beta - eye))
        for i, ai in enumerate(self.alphas):
            worst = max(worst, np.max(np.abs(ai @ self.beta + self.beta @ ai)))
            for j, aj in enumerate(self.alphas):
                target = 2 * eye if i == j else 0 * eye
                worst = max(worst, np.max(np.abs(ai @ aj + aj @ ai - target)))
        return float(worst)


def dirac_matrices(spin_dim: int) -> DiracAlgebra:
    """Dirac matrices for spin_dim 4 (3+1D) or the 2x2 pair (alpha = sigma_x, beta = sigma_z) for 1D."""
    if spin_dim == 4:
        zero = np.zeros((2, 2), dtype=complex)
        alphas = tuple(np.block([[zero, s], [s, zero]]) for s in (SIGMA_X, SIGMA_Y, SIGMA_Z))
        beta = np.diag([1, 1, -1, -1]).astype(complex)
        return DiracAlgebra(alphas, beta, 4)
    if spin_dim == 2:
        return DiracAlgebra((SIGMA_X.copy(),), SIGMA_Z.copy(), 2)
    raise ValueError(f"Unsupported spinor dimension {spin_dim}, expected 2 or 4")


@dataclass(frozen=True)
class BoundaryProjector:
    normal: np.ndarray
    theta: float
    matrix: np.ndarray

    @property
    def eigenvalue(self):
        return float(np.sqrt(1.0 + self.theta ** 2))

    @property
    def rank(self):
        return int(round(np.trace(self.matrix).real))


def boundary_operator(alg: DiracAlgebra, u, theta):
    """u.alpha + theta beta, whose square is (1 + theta^2) I."""
    return sum(uk * ak for uk, ak in zip(u, alg.alphas)) + theta * alg.beta


def boundary_projector(alg: DiracAlgebra, u, theta: float) -> BoundaryProjector:
    """Projector onto the +sqrt(1 + theta^2) eigenspace of u.alpha + theta beta."""
    u = np.asarray(u, dtype=float).ravel()
    if u.size != len(alg.alphas):
        raise ValueError(f"Normal needs {len(alg.alphas)} components for spin_dim {alg.spin_dim}, got {u.size}")
    if abs(np.linalg.norm(u) - 1.0) > 1e-12:
        raise ValueError(f"Boundary normal must be a unit vector, |u| = {np.linalg.norm(u)}")
    theta = float(theta)
    A = boundary_operator(alg, u, theta)
    P = 0.5 * (np.eye(alg.spin_dim) + A / np.sqrt(1.0 + theta ** 2))
    return BoundaryProjector(u, theta, P)


def dirac_current(alg: DiracAlgebra, psi, node: int, units: Units = Units()) -> np.ndarray:
    """Probability current j_k = c psi^H alpha_k psi at one node."""
    v = psi.spinors()[node]
    return np.array([units.c * np.vdot(v, a @ v).real for a in alg.alphas])


def domain_projector(grid: Grid, alg: DiracAlgebra, theta: float) -> sparse.csr_matrix:
    """Block projector: identity on interior nodes, P+(n_b, theta) on boundary nodes."""
    s = alg.spin_dim
    blocks = [np.eye(s, dtype=complex) for _ in range(grid.node_count)]
    for entry in grid.boundary:
        blocks[entry.node] = boundary_projector(alg, entry.normal, theta).matrix
    return sparse.block_diag(blocks, format="csr")


def _sbp_first_difference(n, h):
    below = np.full(n - 1, -0.5 / h)
    above = np.full(n - 1, 0.5 / h)
    main = np.zeros(n)
    main[0], above[0] = -1.0 / h, 1.0 / h
    main[-1], below[-1] = 1.0 / h, -1.0 / h
    return sparse.diags([below, main, above], [-1, 0, 1], format="csr")


def assemble_dirac_1d(grid: Grid, mass: float, V: PotentialField, theta: float, units: Units = Units()) -> OperatorMatrix:
    """Two-spinor Dirac operator on an interval with the projector boundary condition.

    Args:
        grid (Grid): single-particle 1D grid.
        mass (float): rest mass m in m c^2 beta.
        V (PotentialField): scalar or Hermitian 2x2 per node.
        theta (float): boundary parameter.
        units (Units): hbar and c.

    Returns:
        OperatorMatrix: 2-component operator with flux blocks c w_b P+ (n alpha) P+.
    """
    start_time = time()
    if grid.dimension != 1:
        raise ValueError("assemble_dirac_1d needs a one-particle 1D grid")
    alg = dirac_matrices(2)
    n, h = grid.node_count, grid.spacing[0]
    values = np.asarray(V.values)
    if V.is_matrix:
        if values.shape != (n, 2, 2):
            raise ValueError(f"Matrix potential must have shape ({n}, 2, 2), got {values.shape}")
        potential = sparse.block_diag(list(values), format="csr")
    else:
        if values.size != n:
            raise ValueError(f"Potential has {values.size} values, grid has {n} nodes")
        potential = sparse.kron(sparse.diags(values), sparse.identity(2), format="csr")

    D = _sbp_first_difference(n, h)
    A = (-1j * units.c * units.hbar) * sparse.kron(D, alg.alphas[0]) \
        + (mass * units.c ** 2) * sparse.kron(sparse.identity(n), alg.beta) + potential
    Pi = domain_projector(grid, alg, theta)
    H = sparse.csr_matrix(Pi @ A @ Pi)

    blocks = []
    for entry in grid.boundary:
        P = boundary_projector(alg, entry.normal, theta).matrix
        blocks.append(units.c * entry.weight * (P @ (entry.normal[0] * alg.alphas[0]) @ P))
    op = OperatorMatrix(H, grid, units, np.array(blocks), 2, "dirac", Pi,
                        {"theta": float(theta), "mass": float(mass)})
    logger.info(f"Dirac operator ({op.dimension} unknowns, theta={theta}, m={mass}) "
                f"initialized in {time() - start_time:.3f}s")
    return op
