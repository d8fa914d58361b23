"""Discrete POVM of the absorbing boundary rule.

J maps an initial state to the amplitudes (J psi0)_{n,b,k} = sqrt(tau) (M_b^(1/2) psi_mid,n)_k
of every step n and registry entry b, so |(J psi0)_{n,b}|^2 is the detected mass of
that cell. Summing the per-step balance gives

    J^H J + W_T^H W W_T = W

with W the metric and W_T the horizon propagator. In the weighted metric
J_dag = W^-1 J^H, hence J_dag J + W_T_dag W_T = I and E_inf = I - J_dag J is PSD.
All matrices below are reported in the orthonormal basis W^(1/2), where these
identities read as ordinary Hermitian-matrix statements.
"""

import logging
from dataclasses import dataclass
from time import time

import numpy as np

from src.evolution.propagator import CNPropagator, WaveFunction
from src.measurements.detection import steps_for_horizon
from src.operators.operator_matrix import DEFAULT_DENSE_LIMIT, check_dense
from src.utils.errors import FeasibilityError

logger = logging.getLogger(__name__)

MAX_J_ENTRIES = 50_000_000


def block_sqrt(blocks):
    """Principal square root of each Hermitian PSD block, negative roundoff clipped."""
    lam, vecs = np.linalg.eigh(blocks)
    root = np.sqrt(np.clip(lam, 0.0, None))
    return np.einsum("bij,bj,bkj->bik", vecs, root, np.conj(vecs))


@dataclass(frozen=True)
class DiscretePOVM:
    """J, the horizon propagator W_T and the metric they are taken in."""
    J: np.ndarray
    W_T: np.ndarray
    metric: np.ndarray
    n_steps: int
    entries: int
    components: int
    tau: float

    @property
    def _root(self):
        return np.sqrt(self.metric)

    def cells(self):
        """J reshaped to (n_steps, entries, components, dimension)."""
        return self.J.reshape(self.n_steps, self.entries, self.components, -1)

    def masses(self, psi0):
        """Detected mass per (step, entry) of psi0 from J alone."""
        amplitudes = (self.J @ np.asarray(psi0, dtype=complex)).reshape(self.n_steps, self.entries, self.components)
        return np.sum(np.abs(amplitudes) ** 2, axis=2)

    def effect(self, step, entry):
        """E({(step, entry)}) = J_cell^H J_cell in the orthonormal basis."""
        block = self.cells()[step, entry] / self._root[None, :]
        return block.conj().T @ block

    def jdag_j(self):
        scaled = self.J / self._root[None, :]
        return scaled.conj().T @ scaled

    def survivor_operator(self):
        """W_T_dag W_T in the orthonormal basis."""
        scaled = self._root[:, None] * self.W_T / self._root[None, :]
        return scaled.conj().T @ scaled

    @property
    def E_inf(self):
        return np.eye(self.J.shape[1]) - self.jdag_j()

    def completeness_residual(self):
        return float(np.linalg.norm(self.jdag_j() + self.survivor_operator() - np.eye(self.J.shape[1]), 2))

    def min_eig_E_inf(self):
        E = self.E_inf
        return float(np.min(np.linalg.eigvalsh(0.5 * (E + E.conj().T))))

    def survivor_residual(self):
        return float(np.linalg.norm(self.E_inf - self.survivor_operator(), 2))

    def report(self, tol=1e-10):
        residual = self.survivor_residual()
        return {
            "completeness_residual": self.completeness_residual(),
            "min_eig_E_inf": self.min_eig_E_inf(),
            "E_inf_matches_survivor": bool(residual <= tol),
            "E_inf_survivor_residual": residual,
            "n_steps": self.n_steps,
            "dimension": int(self.J.shape[1]),
            "outcome_cells": int(self.n_steps * self.entries),
        }


def assemble_J(prop: CNPropagator, grid=None, t_max: float = None, n_steps: int = None,
               dense_limit=DEFAULT_DENSE_LIMIT) -> DiscretePOVM:
    """Build J by evolving every basis vector at once (one block solve per step).

    Args:
        prop (CNPropagator): stepper for the problem.
        grid (Grid): defaults to the propagator's grid.
        t_max (float): horizon; alternatively n_steps.
        dense_limit (int): largest state dimension allowed.

    Returns:
        DiscretePOVM
    """
    start_time = time()
    grid = grid or prop.grid
    if grid is not prop.grid:
        raise ValueError("assemble_J: grid does not match the propagator's grid")
    dim = prop.H.dimension
    check_dense(dim, dense_limit, "assemble_J")
    if n_steps is None:
        n_steps = steps_for_horizon(t_max, prop.tau)
    entries, s = len(grid.boundary), prop.components
    if n_steps * entries * s * dim > MAX_J_ENTRIES:
        raise FeasibilityError(f"assemble_J: J would have {n_steps * entries * s} x {dim} entries, "
                               f"limit is {MAX_J_ENTRIES}")

    roots = np.sqrt(prop.tau) * block_sqrt(prop.H.flux_blocks)
    J = np.zeros((n_steps, entries, s, dim), dtype=complex)
    columns = np.eye(dim, dtype=complex)
    try:
        for step in range(n_steps):
            mid = prop.midpoint(columns)
            columns = 2.0 * mid - columns
            boundary = mid.reshape(grid.node_count, s, dim)[grid.boundary_nodes]
            J[step] = np.einsum("bij,bjd->bid", roots, boundary)
    except Exception as e:
        logger.error(f"assemble_J failed: {str(e)}")
        raise
    povm = DiscretePOVM(J.reshape(n_steps * entries * s, dim), columns, prop.H.metric, n_steps, entries, s, prop.tau)
    logger.info(f"POVM with {n_steps * entries} outcome cells over {dim} unknowns "
                f"initialized in {time() - start_time:.3f}s")
    return povm


def cell_probability(povm: DiscretePOVM, psi0: WaveFunction, step: int, entry: int):
    """<psi0, J_dag P(cell) J psi0>_w for a single (step, entry) cell."""
    amplitudes = povm.cells()[step, entry] @ psi0.values
    return float(np.sum(np.abs(amplitudes) ** 2))
