"""Multi-particle detect, collapse and continue.

When particle i is detected at base node X in step n, the midpoint state of
that step is sliced at x_i = X and normalized in the (N-1)-particle metric.
The next stage starts at the event time on a fresh (N-1)-particle propagator.
A cell (n, i, X) collects every registry entry attributed to particle i at X,
corner entries of higher particle indices included, so its first-event mass is

    tau * sum_y w(y) c(y) |slice(y)|^2,

with c(y) = sum over faces of particle i at X of (hbar kappa_f / m) w_f(X) away
from corners. The stored normalization N = 1 / ||slice||_w lets the joint
density be rebuilt from the slice.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from src.domain.grid import Grid, build_product_grid
from src.evolution.propagator import CNPropagator, WaveFunction, iter_steps
from src.measurements.detection import (DetectionEvent, check_normalized, entry_cells, first_event,
                                        make_event, record_distribution, steps_for_horizon)
from src.measurements.povm import assemble_J
from src.operators.operator_matrix import DEFAULT_DENSE_LIMIT, BoundaryParams, Units, check_dense
from src.operators.potentials import build_potential
from src.operators.schrodinger import assemble_schrodinger
from src.utils.errors import CollapseError, InvariantViolation

logger = logging.getLogger(__name__)

MAX_PARTICLES = 3
TOTAL_MASS_TOL = 1e-8


def _base_node_index(base: Grid, position):
    if isinstance(position, (int, np.integer)):
        node = int(position)
        if not 0 <= node < base.node_count:
            raise ValueError(f"Base node {node} outside the grid")
        return node
    matches = np.flatnonzero(np.all(np.isclose(base.node_coords, np.asarray(position, dtype=float)), axis=1))
    if matches.size != 1:
        raise ValueError(f"Position {tuple(position)} is not a grid node")
    return int(matches[0])


def collapse_with_norm(psi: WaveFunction, particle: int, position):
    """Normalized slice at x_particle = position together with the slice's squared weighted norm."""
    grid = psi.grid
    N = grid.particle_count
    if N < 2:
        raise ValueError("collapse needs a state of at least two particles")
    if not 0 <= particle < N:
        raise ValueError(f"Particle index {particle} outside 0..{N - 1}")
    base = grid.base_grid()
    node = _base_node_index(base, position)
    if node not in base.boundary_node_set:
        raise ValueError(f"Collapse position (base node {node}) is not on the boundary")
    tensor = psi.values.reshape((base.node_count,) * N + (psi.components,))
    reduced = build_product_grid(base, N - 1)
    sliced = np.take(tensor, node, axis=particle).reshape(-1)
    norm_sq = reduced.norm_sq(sliced, psi.components)
    if not norm_sq > np.finfo(float).tiny:
        raise CollapseError("collapse onto null slice")
    return WaveFunction(sliced / np.sqrt(norm_sq), reduced, psi.components), norm_sq


def collapse(psi: WaveFunction, particle: int, position) -> WaveFunction:
    """Conditional wave function of the remaining particles after detecting `particle` at `position`."""
    return collapse_with_norm(psi, particle, position)[0]


def cell_detection_weights(H, particle: int, base_node: int):
    """Detection weight c(y) over the remaining particles' nodes for the first-event cell (particle, base_node).

    Returns:
        np.ndarray: c on the (N-1)-particle grid; the cell's step mass is
        tau * sum_y w(y) c(y) |psi_mid(x_particle = X, y)|^2.
    """
    grid = H.grid
    N = grid.particle_count
    if N < 2:
        raise ValueError("cell_detection_weights needs a grid of at least two particles")
    base = grid.base_grid()
    reduced = build_product_grid(base, N - 1)
    weights = np.zeros(reduced.node_count)
    for b, ((owner, node), e) in enumerate(zip(entry_cells(grid), grid.boundary)):
        if owner != particle or node != base_node:
            continue
        rest = [int(grid.particle_base_node(e.node, p)) for p in range(N) if p != particle]
        y = int(np.ravel_multi_index(rest, (base.node_count,) * (N - 1)))
        weights[y] += H.flux_blocks[b, 0, 0].real / reduced.weights[y]
    return weights


class StageFactory:
    """Propagators of the k-particle stages, built once and cached.

    Args:
        base (Grid): single-particle grid.
        bp (BoundaryParams): boundary parameters shared by every stage.
        units (Units): physical constants.
        tau (float): time step.
        potentials (Sequence[dict]): potential table per stage, first entry for the
            full N-particle stage; the last entry is reused for later stages.
    """

    def __init__(self, base: Grid, bp: BoundaryParams, units: Units, tau: float, potentials: Sequence[dict] = None):
        if base.particle_count != 1:
            raise ValueError("StageFactory expects a single-particle base grid")
        self.base = base
        self.bp = bp
        self.units = units
        self.tau = float(tau)
        self.potentials = list(potentials) if potentials else [{"kind": "zero"}]
        self._stages = {}
        self._top = None

    def potential_spec(self, k):
        top = self._top or k
        index = min(top - k, len(self.potentials) - 1)
        return self.potentials[index]

    def prepare(self, N):
        """Build every stage from N particles down to one."""
        if not 1 <= N <= MAX_PARTICLES:
            raise ValueError(f"Cascades support 1 to {MAX_PARTICLES} particles, got {N}")
        if self._top != N:
            self._top = N
            self._stages = {}
        for k in range(N, 0, -1):
            self.propagator(k)
        return self

    def propagator(self, k) -> CNPropagator:
        if k not in self._stages:
            grid = build_product_grid(self.base, k)
            V = build_potential(grid, self.potential_spec(k), self.units.mass)
            H = assemble_schrodinger(grid, V, self.bp, self.units)
            self._stages[k] = CNPropagator(H, self.tau)
        return self._stages[k]


@dataclass(frozen=True)
class CascadeEvent:
    """Detection within a cascade; `particle` is the original particle label."""
    event: DetectionEvent
    particle: int
    stage: int

    def to_dict(self):
        record = self.event.to_dict()
        record.update({"particle": self.particle, "stage_particle": self.event.particle, "stage": self.stage})
        return record


@dataclass
class CascadeResult:
    events: List[CascadeEvent] = field(default_factory=list)
    normalizations: List[float] = field(default_factory=list)
    survivor_mass: float = 0.0
    truncated: bool = False
    run: Optional[int] = None

    def to_dict(self):
        return {
            "run": self.run,
            "events": [e.to_dict() for e in self.events],
            "normalizations": list(self.normalizations),
            "survivor_mass": self.survivor_mass,
            "truncated": self.truncated,
        }


def cascade_run(factory: StageFactory, psi0: WaveFunction, t_max: float, rng_seed=None, run=None) -> CascadeResult:
    """Evolve, sample the first detection, collapse and continue until no particle or no time is left.

    One uniform draw per stage; with N = 1 the result matches sample_detection for the same seed.
    """
    check_normalized(psi0)
    N = psi0.grid.particle_count
    factory.prepare(N)
    rng = np.random.default_rng(rng_seed)
    steps_left = steps_for_horizon(t_max, factory.tau)
    labels = list(range(N))
    result = CascadeResult(run=run)
    psi, t0, k = psi0, 0.0, N
    while k >= 1:
        prop = factory.propagator(k)
        hit, last = first_event(prop, psi, steps_left, rng.random())
        if hit is None:
            result.survivor_mass = last.norm_sq()
            result.truncated = True
            break
        step, entry, mid = hit
        event = make_event(prop.grid, step, entry, t0 + (step + 0.5) * prop.tau)
        result.events.append(CascadeEvent(event, labels.pop(event.particle), N - k))
        steps_left -= step + 1
        t0 = event.time
        if k == 1:
            break
        psi, norm_sq = collapse_with_norm(prop.wave(mid), event.particle, event.base_node)
        result.normalizations.append(float(1.0 / np.sqrt(norm_sq)))
        k -= 1
    return result


def run_cascades(factory: StageFactory, psi0: WaveFunction, t_max: float, runs: int, seed: int, jobs: int = 1):
    """Independent cascades from spawned child seeds; results come back in run order."""
    factory.prepare(psi0.grid.particle_count)
    children = np.random.SeedSequence(seed).spawn(runs)
    logger.info(f"Running {runs} cascades with {jobs} worker(s)")
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(lambda item: cascade_run(factory, psi0, t_max, item[1], run=item[0]),
                             enumerate(children)))


@dataclass(frozen=True)
class JointTable:
    """Exhaustive two-particle outcome law.

    `table` rows: kind ("joint" | "truncated" | "survivor"), first_step, first_time,
    first_particle, first_node, second_step, second_time, second_node, mass.
    """
    table: pd.DataFrame
    first_law: pd.DataFrame
    povm_residual: Optional[float]
    marginal_residual: float

    @property
    def total_mass(self):
        return float(self.table["mass"].sum())

    def to_frame(self):
        total = pd.DataFrame([{"kind": "total", "mass": self.total_mass}])
        return pd.concat([self.table, total], ignore_index=True)


def joint_distribution_2particle(factory: StageFactory, psi0: WaveFunction, t_max: float, check_povm=True,
                                 dense_limit=DEFAULT_DENSE_LIMIT) -> JointTable:
    """Enumerate every first-event cell, collapse on it and record the one-particle law that follows.

    Args:
        factory (StageFactory): stage propagators.
        psi0 (WaveFunction): normalized two-particle state.
        t_max (float): horizon.
        check_povm (bool): recompute every joint mass from the one-particle J.

    Returns:
        JointTable
    """
    check_normalized(psi0)
    if psi0.grid.particle_count != 2:
        raise ValueError("joint_distribution_2particle needs a two-particle state")
    check_dense(psi0.grid.node_count, dense_limit, "joint_distribution_2particle")
    factory.prepare(2)
    prop2, prop1 = factory.propagator(2), factory.propagator(1)
    tau = prop2.tau
    n_total = steps_for_horizon(t_max, tau)
    base = prop1.grid
    J1 = assemble_J(prop1, n_steps=n_total - 1, dense_limit=dense_limit).cells() if check_povm and n_total > 1 else None

    cell_of_entry = entry_cells(prop2.grid)
    cells = sorted(set(cell_of_entry))
    weights = {cell: cell_detection_weights(prop2.H, *cell) for cell in cells}

    rows, first_rows = [], []
    povm_residual = 0.0 if J1 is not None else None
    marginal_residual = 0.0
    psi_t = psi0
    for mid, psi_t, record in iter_steps(prop2, psi0, n_total):
        n = record.step
        first_time = (n + 0.5) * tau
        cell_mass = dict.fromkeys(cells, 0.0)
        for b, cell in enumerate(cell_of_entry):
            cell_mass[cell] += float(record.masses[b])
        for (particle, node), mass1 in cell_mass.items():
            first_rows.append({"step": n, "time": first_time, "particle": particle, "node": node, "mass": mass1})
            if mass1 <= 0.0:
                continue
            head = {"first_step": n, "first_time": first_time, "first_particle": particle, "first_node": node}
            psi1, norm_sq = collapse_with_norm(prop2.wave(mid), particle, node)
            remaining = n_total - n - 1
            if remaining == 0:
                rows.append({"kind": "truncated", **head, "mass": mass1})
                continue
            second = record_distribution(prop1, psi1, n_steps=remaining)
            for m in range(remaining):
                for b in range(len(base.boundary)):
                    rows.append({"kind": "joint", **head, "second_step": m,
                                 "second_time": first_time + (m + 0.5) * tau,
                                 "second_node": int(base.boundary_nodes[b]),
                                 "mass": mass1 * float(second.masses[m, b])})
            rows.append({"kind": "truncated", **head, "mass": mass1 * second.survivor_mass})
            marginal_residual = max(marginal_residual,
                                    abs(mass1 * (second.total_detected + second.survivor_mass) - mass1))
            if J1 is not None:
                slice_values = psi1.values * np.sqrt(norm_sq)
                first_mass = tau * float(np.sum(base.weights * weights[(particle, node)] * np.abs(slice_values) ** 2))
                amplitudes = np.einsum("mbkd,d->mbk", J1[:remaining], psi1.values)
                povm_form = first_mass * np.sum(np.abs(amplitudes) ** 2, axis=2)
                povm_residual = max(povm_residual, float(np.max(np.abs(povm_form - mass1 * second.masses))))
    rows.append({"kind": "survivor", "mass": psi_t.norm_sq()})

    table = pd.DataFrame(rows, columns=["kind", "first_step", "first_time", "first_particle", "first_node",
                                        "second_step", "second_time", "second_node", "mass"])
    joint = JointTable(table, pd.DataFrame(first_rows), povm_residual, marginal_residual)
    if abs(joint.total_mass - 1.0) > TOTAL_MASS_TOL:
        raise InvariantViolation(f"Joint table total mass {joint.total_mass!r} differs from 1")
    logger.info(f"Joint table: {len(rows)} rows, total mass {joint.total_mass:.12f}, "
                f"POVM-form residual {povm_residual}")
    return joint


def _detection_weights(base: Grid, bp: BoundaryParams, units: Units):
    """(hbar kappa_f / m) w_f summed per base boundary node."""
    weights = np.zeros(base.node_count)
    for e in base.boundary:
        weights[e.node] += units.hbar * bp.for_face(e.face.axis, e.face.side)[0] / units.mass * e.weight
    return weights


def collapse_kraus_operators(base: Grid, bp: BoundaryParams, units: Units = Units(), N: int = 2, particle: int = 0):
    """K_X = sqrt(c_X) <x_particle = X| mapping N-particle nodal vectors to (N-1)-particle ones."""
    if N < 2 or not 0 <= particle < N:
        raise ValueError(f"Need N >= 2 and 0 <= particle < N, got N={N}, particle={particle}")
    n = base.node_count
    weights = _detection_weights(base, bp, units)
    before, after = np.eye(n ** particle), np.eye(n ** (N - 1 - particle))
    kraus = []
    for X in base.boundary_node_set:
        bra = np.zeros((1, n))
        bra[0, X] = 1.0
        kraus.append(np.sqrt(weights[X]) * np.kron(np.kron(before, bra), after))
    return kraus


def vec(matrix):
    """Column stacking."""
    return np.asarray(matrix).reshape(-1, order="F")


def collapse_superoperator_choi(base: Grid, N: int = 2, particle: int = 0, bp: BoundaryParams = None,
                                units: Units = Units(), dense_limit=DEFAULT_DENSE_LIMIT) -> np.ndarray:
    """Choi matrix sum_X |K_X>><<K_X| of the collapse map in the nodal representation."""
    bp = bp or BoundaryParams(kappa=1.0)
    n = base.node_count
    check_dense(n ** N * n ** (N - 1), dense_limit, "collapse_superoperator_choi")
    kraus = collapse_kraus_operators(base, bp, units, N, particle)
    choi = sum(np.outer(vec(K), np.conj(vec(K))) for K in kraus)
    return np.asarray(choi, dtype=complex)


def apply_collapse_superoperator(rho, base: Grid, particle: int = 0, bp: BoundaryParams = None,
                                 units: Units = Units(), N: int = 2):
    """C(rho) = sum_X c_X <x_particle = X| rho |x_particle = X> for a nodal N-particle density matrix."""
    bp = bp or BoundaryParams(kappa=1.0)
    n = base.node_count
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (n ** N, n ** N):
        raise ValueError(f"Density matrix must be {n ** N}x{n ** N}, got {rho.shape}")
    weights = _detection_weights(base, bp, units)
    tensor = rho.reshape((n,) * (2 * N))
    ket = np.moveaxis(tensor, (particle, N + particle), (0, 1))
    diag = np.einsum("xx...->x...", ket)
    out = np.einsum("x,x...->...", weights, diag)
    return out.reshape(n ** (N - 1), n ** (N - 1))


def particle_marginal(rho, n: int, particle: int = 0, N: int = 2):
    """Reduced density matrix of one particle (partial trace over the others)."""
    tensor = np.asarray(rho).reshape((n,) * (2 * N))
    letters = "abcdefgh"
    rows = [letters[a] for a in range(N)]
    cols = [letters[N + a] if a == particle else letters[a] for a in range(N)]
    return np.einsum("".join(rows + cols) + "->" + letters[particle] + letters[N + particle], tensor)
