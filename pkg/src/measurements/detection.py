"""Detection-time and detection-place distributions from boundary flux.

The probability of a detection in step n at boundary registry entry b is
tau * outflow_b(psi_mid) for that step, which is exactly the norm the
Crank-Nicolson step loses there. What is never absorbed before the horizon is
the survivor mass.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from src.domain.grid import FaceId, Grid
from src.evolution.propagator import CNPropagator, MemoryRecorder, WaveFunction, evolve, iter_steps
from src.utils.errors import InvariantViolation

logger = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-10
BALANCE_TOL = 1e-8


def steps_for_horizon(t_max, tau):
    """Whole number of steps covering [0, t_max]."""
    if not t_max > 0:
        raise ValueError(f"Horizon t_max must be positive, got {t_max}")
    n_steps = int(round(t_max / tau))
    if n_steps < 1:
        raise ValueError(f"Horizon {t_max} is shorter than one step of {tau}")
    if abs(n_steps * tau - t_max) > 1e-9 * t_max:
        logger.warning(f"Horizon {t_max} is not a multiple of tau={tau}; using {n_steps} steps "
                       f"(t_max={n_steps * tau})")
    return n_steps


def entry_cells(grid: Grid):
    """(attributed particle, base node) of every registry entry."""
    return [(int(p), int(grid.particle_base_node(e.node, p))) for e, p in zip(grid.boundary, grid.entry_particles)]


def check_normalized(psi: WaveFunction, tol=NORMALIZATION_TOL):
    norm_sq = psi.norm_sq()
    if abs(norm_sq - 1.0) > tol:
        raise ValueError(f"Initial state must be normalized in the weighted metric, ||psi0||^2 = {norm_sq!r}")
    return norm_sq


@dataclass(frozen=True)
class DetectionDistribution:
    """Mass per (step, boundary registry entry) plus the survivor mass.

    Args:
        masses (np.ndarray): shape (n_steps, entries), all >= 0.
        survivor_mass (float): ||psi||_w^2 at the horizon.
        tau (float): step.
        grid (Grid): grid whose boundary registry labels the columns.
        initial_norm (float): ||psi0||_w^2.
        survival (np.ndarray): ||psi_n||_w^2 after every step, when recorded.
    """
    masses: np.ndarray
    survivor_mass: float
    tau: float
    grid: Grid
    initial_norm: float = 1.0
    survival: Optional[np.ndarray] = None

    @property
    def n_steps(self):
        return self.masses.shape[0]

    @property
    def t_max(self):
        return self.n_steps * self.tau

    @property
    def step_times(self):
        """Step midpoints, the reported detection times."""
        return (np.arange(self.n_steps) + 0.5) * self.tau

    @property
    def total_detected(self):
        return float(np.sum(self.masses))

    @property
    def balance_residual(self):
        return abs(self.total_detected + self.survivor_mass - self.initial_norm)

    def time_marginal(self):
        return np.sum(self.masses, axis=1)

    def time_density(self):
        """Detection-time density: mass per step divided by tau."""
        return self.time_marginal() / self.tau

    def per_face(self):
        totals = {}
        column_totals = np.sum(self.masses, axis=0)
        for entry, total in zip(self.grid.boundary, column_totals):
            totals[entry.face.label] = totals.get(entry.face.label, 0.0) + float(total)
        return totals

    def per_particle(self):
        column_totals = np.sum(self.masses, axis=0)
        return np.bincount(self.grid.entry_particles, weights=column_totals,
                           minlength=self.grid.particle_count)

    def cell_masses(self):
        """Masses per (step, particle, base node): the first-event cells of a product grid.

        Corner entries count for the lower particle index, as in `Grid.entry_particles`.

        Returns:
            tuple: (cells, table) where cells is a list of (particle, base_node)
            and table has shape (n_steps, len(cells)).
        """
        keys = entry_cells(self.grid)
        cells = sorted(set(keys))
        column = {cell: i for i, cell in enumerate(cells)}
        table = np.zeros((self.n_steps, len(cells)))
        for b, key in enumerate(keys):
            table[:, column[key]] += self.masses[:, b]
        return cells, table

    def coarsen(self, time_factor: int):
        """Merge every `time_factor` consecutive steps into one bin."""
        if time_factor < 1 or self.n_steps % time_factor:
            raise ValueError(f"time_factor must divide the {self.n_steps} steps, got {time_factor}")
        merged = self.masses.reshape(self.n_steps // time_factor, time_factor, -1).sum(axis=1)
        survival = None if self.survival is None else self.survival[time_factor - 1::time_factor]
        return DetectionDistribution(merged, self.survivor_mass, self.tau * time_factor, self.grid,
                                     self.initial_norm, survival)

    def to_frame(self):
        """One row per (step, registry entry): step, time, face, particle, node, x0..x{d-1}, mass."""
        entries = len(self.grid.boundary)
        steps = np.repeat(np.arange(self.n_steps), entries)
        nodes = np.tile(self.grid.boundary_nodes, self.n_steps)
        frame = pd.DataFrame({
            "step": steps,
            "time": (steps + 0.5) * self.tau,
            "face": np.tile([e.face.label for e in self.grid.boundary], self.n_steps),
            "particle": np.tile(self.grid.entry_particles, self.n_steps),
            "node": nodes,
        })
        coords = self.grid.node_coords[nodes]
        for axis in range(self.grid.dimension):
            frame[f"x{axis}"] = coords[:, axis]
        frame["mass"] = self.masses.ravel()
        return frame

    def survival_frame(self):
        if self.survival is None:
            raise ValueError("Survival curve was not recorded")
        steps = np.arange(self.n_steps + 1)
        return pd.DataFrame({"step": steps, "t": steps * self.tau,
                             "norm_sq": np.concatenate([[self.initial_norm], self.survival])})

    def summary(self):
        return {
            "total_detected": self.total_detected,
            "survivor": float(self.survivor_mass),
            "per_face": self.per_face(),
            "balance_residual": self.balance_residual,
            "n_steps": self.n_steps,
            "tau": self.tau,
            "t_max": self.t_max,
        }


def record_distribution(prop: CNPropagator, psi0: WaveFunction, t_max: float = None, n_steps: int = None,
                        check_norm=True) -> DetectionDistribution:
    """Evolve psi0 to the horizon and collect the detected mass of every step and entry.

    Args:
        prop (CNPropagator): factorised stepper.
        psi0 (WaveFunction): initial state, normalized unless check_norm is False.
        t_max (float): horizon; alternatively give n_steps.
        n_steps (int): number of steps.

    Returns:
        DetectionDistribution: masses, survivor and survival curve.
    """
    initial_norm = check_normalized(psi0) if check_norm else psi0.norm_sq()
    if n_steps is None:
        n_steps = steps_for_horizon(t_max, prop.tau)
    recorder = MemoryRecorder()
    psi_t = evolve(prop, psi0, n_steps, recorder)
    masses = recorder.mass_table(len(prop.grid.boundary))
    dist = DetectionDistribution(masses, psi_t.norm_sq(), prop.tau, prop.grid, initial_norm,
                                 np.array(recorder.survival))
    if np.min(masses, initial=0.0) < 0.0 and not prop.H.emitting:
        raise InvariantViolation(f"Negative detection mass {np.min(masses)!r}")
    if dist.balance_residual > BALANCE_TOL:
        raise InvariantViolation(f"Probability balance violated: residual {dist.balance_residual:.3e}")
    logger.info(f"Recorded {n_steps} steps: detected={dist.total_detected:.6f}, survivor={dist.survivor_mass:.6f}")
    return dist


@dataclass(frozen=True)
class DetectionEvent:
    """Detection at a step midpoint time on one registry entry."""
    time: float
    step: int
    entry: int
    node: int
    face: FaceId
    position: Tuple[float, ...]
    base_node: int
    particle: int

    def to_dict(self):
        return {"time": self.time, "step": self.step, "face": self.face.label, "particle": self.particle,
                "node": self.node, "base_node": self.base_node, "position": list(self.position)}


@dataclass(frozen=True)
class NoDetection:
    """No detection within the horizon."""
    t_max: float

    def to_dict(self):
        return {"time": None, "t_max": self.t_max}


def make_event(grid: Grid, step: int, entry: int, time: float) -> DetectionEvent:
    record = grid.boundary[entry]
    particle = int(grid.entry_particles[entry])
    base_node = int(grid.particle_base_node(record.node, particle))
    position = tuple(float(x) for x in grid.base_grid().node_coords[base_node])
    return DetectionEvent(float(time), int(step), int(entry), record.node, record.face, position, base_node,
                          particle)


def first_event(prop: CNPropagator, psi0: WaveFunction, n_steps: int, u: float):
    """Inverse-CDF search over the streamed masses; stops at the first step whose cumulative mass reaches u.

    Returns:
        tuple: (hit, psi_last) where hit is (step, entry, psi_mid values), or None
        when u exceeds the detected mass; psi_last is then the state at the horizon.
    """
    cumulative = 0.0
    last = psi0
    for mid, last, record in iter_steps(prop, psi0, n_steps):
        total = record.total
        if cumulative + total > u:
            within = np.cumsum(record.masses)
            entry = int(np.searchsorted(within, u - cumulative, side="right"))
            return (record.step, min(entry, len(within) - 1), mid), last
        cumulative += total
    return None, last


def sample_detection(prop: CNPropagator, psi0: WaveFunction, t_max: float,
                     rng_seed: Union[int, np.random.Generator, np.random.SeedSequence, None] = None):
    """Draw one outcome of the discrete detection law; reproducible per seed.

    Returns:
        DetectionEvent | NoDetection
    """
    check_normalized(psi0)
    n_steps = steps_for_horizon(t_max, prop.tau)
    rng = np.random.default_rng(rng_seed)
    hit, _ = first_event(prop, psi0, n_steps, rng.random())
    if hit is None:
        return NoDetection(n_steps * prop.tau)
    step, entry, _ = hit
    return make_event(prop.grid, step, entry, (step + 0.5) * prop.tau)


def reflection_coefficient(k, kappa):
    """|r(k)|^2 for a plane wave hitting d(psi)/dn = i kappa psi; r = (k - kappa) / (k + kappa)."""
    k = np.abs(np.asarray(k, dtype=float))
    return ((k - kappa) / (k + kappa)) ** 2


def absorption_oracle(k0, width, kappa, points=4001):
    """Absorbed fraction of a Gaussian packet exp(-(x-x0)^2 / 4 width^2 + i k0 x) hitting the absorbing wall.

    1 - int |r(k)|^2 |phi(k)|^2 dk with |phi(k)|^2 proportional to exp(-2 width^2 (k - k0)^2).
    """
    if kappa == 0:
        return 0.0
    spread = 1.0 / (2.0 * width)
    k = np.linspace(k0 - 10 * spread, k0 + 10 * spread, points)
    density = np.exp(-2.0 * width ** 2 * (k - k0) ** 2)
    reflected = trapezoid(reflection_coefficient(k, kappa) * density, k) / trapezoid(density, k)
    return float(1.0 - reflected)
