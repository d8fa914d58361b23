"""Discrete Schroedinger Hamiltonian with the absorbing boundary condition.

H = -(hbar^2 / 2m) Laplacian + V with d(psi)/dn = (nu + i kappa) psi folded into
the boundary rows by ghost-node elimination. On each axis the ghost value is
fixed by the centred relation (psi_ghost - psi_inner) / 2h = (nu + i kappa) psi_b,
so the boundary row reads

    -(hbar^2 / 2m) * [2 psi_inner / h^2 - (2 / h^2 - 2 (nu + i kappa) / h) psi_b].

Against trapezoidal weights (h/2 at the boundary) this makes W H symmetric up to
the diagonal term -i (hbar^2 / 2m) kappa w_b, so

    Im <psi, H psi>_w = -(hbar^2 kappa / 2m) sum_b w_b |psi_b|^2

holds exactly, with w_b the trapezoidal surface weight of the face.
"""

import logging
from time import time

import numpy as np
from scipy import sparse

from src.domain.grid import Grid
from src.operators.operator_matrix import BoundaryParams, OperatorMatrix, Units
from src.operators.potentials import PotentialField

logger = logging.getLogger(__name__)


def _axis_operator(n, h, coeff, lower, upper):
    """1D kinetic operator with Robin rows; `lower`/`upper` are (kappa, nu) pairs."""
    a = coeff / h ** 2
    main = np.full(n, 2.0 * a, dtype=complex)
    above = np.full(n - 1, -a, dtype=complex)
    below = np.full(n - 1, -a, dtype=complex)
    for row, inner_diag, (kappa, nu) in ((0, above, lower), (n - 1, below, upper)):
        main[row] = 2.0 * a - 2.0 * coeff * (nu + 1j * kappa) / h
        inner_diag[0 if row == 0 else -1] = -2.0 * a
    return sparse.diags([below, main, above], [-1, 0, 1], format="csr")


def assemble_schrodinger(grid: Grid, V: PotentialField, bp: BoundaryParams, units: Units = Units()) -> OperatorMatrix:
    """Assemble the non-Hermitian Hamiltonian on a (possibly product) grid.

    Args:
        grid (Grid): vertex-centred grid.
        V (PotentialField): real potential sampled on the grid.
        bp (BoundaryParams): kappa, nu and per-face overrides.
        units (Units): hbar, mass.

    Returns:
        OperatorMatrix: H with flux blocks c_b = (hbar kappa_face / m) w_b.
    """
    start_time = time()
    values = np.asarray(V.values)
    if V.is_matrix:
        raise ValueError("Schroedinger assembly takes a scalar potential")
    if values.size != grid.node_count:
        raise ValueError(f"Potential has {values.size} values, grid has {grid.node_count} nodes")
    if min(bp.for_face(axis, side)[0] for axis in range(grid.dim) for side in ("lower", "upper")) < 0 \
            and not bp.allow_emitting:
        raise ValueError("kappa < 0 rejected: emitting boundary without allow_emitting")

    coeff = units.hbar ** 2 / (2.0 * units.mass)
    H = sparse.diags(values.astype(complex), format="csr")
    for a, (n, h) in enumerate(zip(grid.shape, grid.spacing)):
        axis = a % grid.dim
        L = _axis_operator(n, h, coeff, bp.for_face(axis, "lower"), bp.for_face(axis, "upper"))
        before = int(np.prod(grid.shape[:a]))
        after = int(np.prod(grid.shape[a + 1:]))
        H = H + sparse.kron(sparse.kron(sparse.identity(before), L), sparse.identity(after), format="csr")

    kappas = np.array([bp.for_face(e.face.axis, e.face.side)[0] for e in grid.boundary])
    flux = (units.hbar * kappas / units.mass * grid.boundary_weights).reshape(-1, 1, 1)
    op = OperatorMatrix(sparse.csr_matrix(H), grid, units, flux, 1, "schrodinger", None,
                        {"kappa": bp.kappa, "nu": bp.nu, "emitting": bool(np.min(kappas, initial=0.0) < 0)})
    logger.info(f"Schroedinger operator ({op.dimension} unknowns, kappa={bp.kappa}, nu={bp.nu}) "
                f"initialized in {time() - start_time:.3f}s")
    return op
