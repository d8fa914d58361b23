"""Crank-Nicolson time evolution and the dense matrix-exponential oracle.

With A = I + i tau H / 2 hbar the Cayley step is psi_next = A^-1 (2I - A) psi,
computed as psi_mid = A^-1 psi and psi_next = 2 psi_mid - psi. psi_mid is the
average (psi + psi_next) / 2, and the step satisfies

    ||psi_next||_w^2 - ||psi||_w^2 = (2 tau / hbar) Im <psi_mid, H psi_mid>_w
                                   = -tau * sum_b outflow_b(psi_mid),

so charging tau * outflow_b(psi_mid) to boundary entry b balances the norm loss
exactly. The factorisation of A is computed once and reused for every step.
"""

import logging
from dataclasses import dataclass
from time import time
from typing import Iterator, Optional, Protocol, Tuple

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import splu

from src.domain.grid import Grid
from src.operators.operator_matrix import DEFAULT_DENSE_LIMIT, OperatorMatrix, check_dense

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WaveFunction:
    """Complex amplitudes, node-major with `components` spinor entries per node."""
    values: np.ndarray
    grid: Grid
    components: int = 1

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if values.shape != (self.grid.node_count * self.components,):
            raise ValueError(f"Wave function needs {self.grid.node_count * self.components} amplitudes, "
                             f"got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("Wave function contains non-finite amplitudes")
        object.__setattr__(self, "values", values)

    def norm_sq(self):
        return self.grid.norm_sq(self.values, self.components)

    def normalized(self):
        norm_sq = self.norm_sq()
        if norm_sq == 0.0:
            raise ValueError("Cannot normalize the zero wave function")
        return WaveFunction(self.values / np.sqrt(norm_sq), self.grid, self.components)

    def spinors(self):
        return self.values.reshape(self.grid.node_count, self.components)


@dataclass(frozen=True)
class StepFluxRecord:
    """Probability detected at each boundary registry entry during one step."""
    masses: np.ndarray
    step: int = 0

    @property
    def total(self):
        return float(np.sum(self.masses))


class FluxRecorder(Protocol):
    def record(self, record: StepFluxRecord, psi_next: WaveFunction) -> None:
        ...


class MemoryRecorder:
    """Keeps every step's masses and the survival norm after each step."""

    def __init__(self):
        self.masses = []
        self.survival = []

    def record(self, record, psi_next):
        self.masses.append(record.masses)
        self.survival.append(psi_next.norm_sq())

    def mass_table(self, entries):
        if not self.masses:
            return np.zeros((0, entries))
        return np.vstack(self.masses)


class CNPropagator:
    """Crank-Nicolson stepper for a fixed operator and time step.

    Args:
        H (OperatorMatrix): generator, dissipative for a contraction.
        tau (float): time step.
    """

    def __init__(self, H: OperatorMatrix, tau: float):
        if not tau > 0:
            raise ValueError(f"Time step must be positive, got {tau}")
        start_time = time()
        self.H = H
        self.tau = float(tau)
        self.grid = H.grid
        self.components = H.components
        shift = 1j * self.tau / (2.0 * H.units.hbar)
        A = sparse.identity(H.dimension, dtype=complex, format="csc") + shift * H.matrix.tocsc()
        try:
            self._lu = splu(sparse.csc_matrix(A))
        except RuntimeError as e:
            logger.error(f"Factorisation of I + i tau H / 2 hbar failed: {str(e)}")
            raise RuntimeError(f"Internal error: Crank-Nicolson matrix is singular ({str(e)})")
        self.setup_time = time() - start_time
        logger.info(f"CNPropagator (tau={self.tau}, {H.dimension} unknowns) initialized in {self.setup_time:.3f}s")

    def midpoint(self, values):
        """Solve (I + i tau H / 2 hbar) psi_mid = psi; accepts one vector or a block of columns."""
        return self._lu.solve(np.asarray(values, dtype=complex))

    def step_values(self, values):
        mid = self.midpoint(values)
        return mid, 2.0 * mid - values

    def step_masses(self, mid):
        return self.tau * self.H.outflow(mid)

    def wave(self, values):
        return WaveFunction(values, self.grid, self.components)


def cn_step(prop: CNPropagator, psi: WaveFunction) -> Tuple[WaveFunction, StepFluxRecord]:
    """One Crank-Nicolson step with its boundary flux record."""
    if psi.values.size != prop.H.dimension:
        raise ValueError("Wave function does not live on the propagator's grid")
    mid, nxt = prop.step_values(psi.values)
    return prop.wave(nxt), StepFluxRecord(prop.step_masses(mid))


def iter_steps(prop: CNPropagator, psi0: WaveFunction, n_steps: int) -> Iterator[Tuple[np.ndarray, WaveFunction, StepFluxRecord]]:
    """Yield (psi_mid values, psi_next, record) for each step; lets callers stop early."""
    values = psi0.values
    for step in range(n_steps):
        mid, values = prop.step_values(values)
        yield mid, prop.wave(values), StepFluxRecord(prop.step_masses(mid), step)


def evolve(prop: CNPropagator, psi0: WaveFunction, n_steps: int, sink: Optional[FluxRecorder] = None) -> WaveFunction:
    """Apply n_steps Crank-Nicolson steps, streaming each StepFluxRecord to `sink`."""
    if n_steps < 0:
        raise ValueError(f"n_steps must be >= 0, got {n_steps}")
    psi = psi0
    for _, psi, record in iter_steps(prop, psi0, n_steps):
        if sink is not None:
            sink.record(record, psi)
    return psi


def expm_oracle(H: OperatorMatrix, t: float, psi0: WaveFunction, dense_limit=DEFAULT_DENSE_LIMIT) -> WaveFunction:
    """psi_t = exp(-i H t / hbar) psi0 by dense scaling and squaring (eigendecomposition fallback)."""
    check_dense(H.dimension, dense_limit, "expm_oracle")
    generator = (-1j * t / H.units.hbar) * H.matrix.toarray()
    propagator = scipy.linalg.expm(generator)
    if not np.all(np.isfinite(propagator)):
        logger.warning("expm returned non-finite entries; falling back to eigendecomposition")
        lam, vecs = scipy.linalg.eig(generator)
        propagator = vecs @ np.diag(np.exp(lam)) @ np.linalg.inv(vecs)
    return WaveFunction(propagator @ psi0.values, psi0.grid, psi0.components)
