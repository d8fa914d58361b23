"""Sparse non-Hermitian operators and their weighted-metric diagnostics.

An OperatorMatrix carries the sparse matrix, the grid whose quadrature weights
define the metric, and the boundary flux functional: per boundary registry
entry b a Hermitian PSD block M_b such that the instantaneous outflow at b is
psi_b^H M_b psi_b. Every operator assembled here satisfies

    Im <psi, H psi>_w = -(hbar / 2) * sum_b psi_b^H M_b psi_b

for all psi, which is what dissipativity_defect measures.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse

from src.domain.grid import Grid, SIDES
from src.utils.errors import FeasibilityError

logger = logging.getLogger(__name__)

DEFAULT_DENSE_LIMIT = 2000


@dataclass(frozen=True)
class Units:
    """Natural units by default; every value must be positive."""
    hbar: float = 1.0
    mass: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        for name in ("hbar", "mass", "c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"Unit '{name}' must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class BoundaryParams:
    """Robin parameters of d(psi)/dn = (nu + i kappa) psi.

    `faces` maps (axis, side) to {"kappa": .., "nu": ..} overrides; detectors
    sit on the one-particle boundary, so an override applies to every particle.
    Negative kappa (emitting boundary) needs allow_emitting.
    """
    kappa: float
    nu: float = 0.0
    faces: dict = field(default_factory=dict)
    allow_emitting: bool = False

    def __post_init__(self):
        for key in self.faces:
            if len(key) != 2 or key[1] not in SIDES:
                raise ValueError(f"Face override key must be (axis, side), got {key}")
        kappas = [self.kappa] + [float(v.get("kappa", self.kappa)) for v in self.faces.values()]
        if min(kappas) < 0 and not self.allow_emitting:
            raise ValueError("kappa < 0 is an emitting boundary; well-posedness of that evolution is open, "
                             "pass allow_emitting to use it")

    def for_face(self, axis, side):
        override = self.faces.get((axis, side), {})
        return float(override.get("kappa", self.kappa)), float(override.get("nu", self.nu))

    def flipped(self):
        """Parameters with every kappa negated (domain of the adjoint)."""
        faces = {k: {"kappa": -self.for_face(*k)[0], "nu": self.for_face(*k)[1]} for k in self.faces}
        return BoundaryParams(-self.kappa, self.nu, faces, allow_emitting=True)


@dataclass(frozen=True)
class OperatorMatrix:
    matrix: sparse.csr_matrix
    grid: Grid
    units: Units
    flux_blocks: np.ndarray
    components: int = 1
    kind: str = "schrodinger"
    domain_projector: Optional[sparse.csr_matrix] = None
    parameters: dict = field(default_factory=dict)

    @property
    def dimension(self):
        return self.matrix.shape[0]

    @property
    def metric(self):
        return self.grid.metric(self.components)

    @property
    def emitting(self):
        return bool(self.parameters.get("emitting", False))

    def inner(self, phi, psi):
        return np.sum(self.metric * np.conj(phi) * psi)

    def norm_sq(self, psi):
        return float(np.sum(self.metric * np.abs(psi) ** 2))

    def boundary_values(self, psi):
        """Spinor values at each boundary registry entry, shape (entries, components)."""
        return np.asarray(psi).reshape(self.grid.node_count, self.components)[self.grid.boundary_nodes]

    def outflow(self, psi):
        """Instantaneous outflow psi_b^H M_b psi_b per boundary registry entry (all >= 0)."""
        v = self.boundary_values(psi)
        return np.einsum("bi,bij,bj->b", np.conj(v), self.flux_blocks, v).real

    def with_matrix(self, matrix, flux_blocks, **parameters):
        return OperatorMatrix(sparse.csr_matrix(matrix), self.grid, self.units, flux_blocks,
                              self.components, self.kind, self.domain_projector,
                              {**self.parameters, **parameters})


def check_dense(dimension, limit=DEFAULT_DENSE_LIMIT, what="dense computation"):
    if dimension > limit:
        raise FeasibilityError(f"{what} needs a dense {dimension}x{dimension} matrix, limit is {limit}")


def _metric_diag(H):
    return sparse.diags(H.metric)


def weighted_adjoint(H: OperatorMatrix) -> OperatorMatrix:
    """Adjoint in the weighted metric: H_dag = W^-1 H^H W, so <phi, H psi>_w = <H_dag phi, psi>_w.

    The outflow blocks change sign: what H absorbs, its adjoint emits.
    """
    w = H.metric
    adjoint = sparse.diags(1.0 / w) @ H.matrix.conj().T @ sparse.diags(w)
    params = {"emitting": bool(np.any(np.trace(H.flux_blocks, axis1=1, axis2=2).real > 0))}
    if "kappa" in H.parameters:
        params["kappa"] = -H.parameters["kappa"]
    return H.with_matrix(adjoint, -H.flux_blocks, **params)


def dissipation_matrix(H: OperatorMatrix) -> sparse.csr_matrix:
    """Hermitian K = (WH - (WH)^H) / 2i with Im <psi, H psi>_w = psi^H K psi."""
    WH = _metric_diag(H) @ H.matrix
    return sparse.csr_matrix((WH - WH.conj().T) / 2j)


def dissipativity_defect(H: OperatorMatrix, probes) -> float:
    """Residual of the discrete flux identity over probe vectors.

    Returns max over probes of |Im <psi, H psi>_w + (hbar/2) sum_b outflow_b| / ||psi||_w^2.
    """
    probes = list(probes)
    if not probes:
        raise ValueError("dissipativity_defect needs at least one probe vector")
    K = dissipation_matrix(H)
    worst = 0.0
    for psi in probes:
        psi = np.asarray(psi, dtype=complex)
        norm_sq = H.norm_sq(psi)
        if norm_sq == 0.0:
            raise ValueError("Probe vectors must be nonzero")
        im_part = float(np.vdot(psi, K @ psi).real)
        residual = abs(im_part + 0.5 * H.units.hbar * float(np.sum(H.outflow(psi)))) / norm_sq
        worst = max(worst, residual)
    return worst


def symmetrized_dense(H: OperatorMatrix, dense_limit=DEFAULT_DENSE_LIMIT) -> np.ndarray:
    """Dense W^(1/2) H W^(-1/2): the operator written in a Euclidean-orthonormal basis."""
    check_dense(H.dimension, dense_limit, "symmetrized operator")
    s = np.sqrt(H.metric)
    return (s[:, None] * H.matrix.toarray()) / s[None, :]


def normality_defect(H: OperatorMatrix, dense_limit=DEFAULT_DENSE_LIMIT) -> float:
    """||H H_dag - H_dag H||_F / ||H||_F^2 in the weighted metric."""
    S = symmetrized_dense(H, dense_limit)
    Sh = S.conj().T
    scale = np.linalg.norm(S, "fro") ** 2
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(S @ Sh - Sh @ S, "fro") / scale)


def richardson_order(coarse_error, fine_error, refinement=2.0):
    """Observed convergence order from errors at spacing h and h / refinement."""
    return float(np.log(coarse_error / fine_error) / np.log(refinement))
