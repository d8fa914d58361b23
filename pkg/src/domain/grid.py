"""Computational domains for the absorbing-boundary solver.

Defines intervals, axis-aligned boxes and their N-particle products on a
vertex-centred grid: boundary nodes lie on the boundary itself. Trapezoidal
quadrature weights define the weighted inner product <phi, psi>_w in which
every norm, flux and adjoint of the package is taken.
"""

import logging
from dataclasses import dataclass
from functools import reduce
from typing import Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

DOMAIN_KINDS = ("interval", "box", "product")
SIDES = ("lower", "upper")


@dataclass(frozen=True)
class DomainSpec:
    """Domain description as it appears in a run config.

    Args:
        kind (str): "interval", "box" or "product".
        extents: (lower, upper) per axis of ONE particle.
        particle_count (int): number of particles, 1 unless kind is "product".
        dim (int): per-particle dimension, defaults to len(extents).
    """
    kind: str
    extents: Tuple[Tuple[float, float], ...]
    particle_count: int = 1
    dim: Optional[int] = None

    def __post_init__(self):
        extents = tuple((float(lo), float(hi)) for lo, hi in self.extents)
        object.__setattr__(self, "extents", extents)
        if self.dim is None:
            object.__setattr__(self, "dim", len(extents))
        if self.kind not in DOMAIN_KINDS:
            raise ValueError(f"Unknown domain kind '{self.kind}', expected one of {DOMAIN_KINDS}")
        if not extents or self.dim != len(extents):
            raise ValueError(f"Domain needs one extent per axis, got {len(extents)} for dim {self.dim}")
        for axis, (lo, hi) in enumerate(extents):
            if not lo < hi:
                raise ValueError(f"Axis {axis}: lower {lo} must be below upper {hi}")
        if self.particle_count < 1:
            raise ValueError(f"particle_count must be positive, got {self.particle_count}")
        if self.kind == "interval" and self.dim != 1:
            raise ValueError("An interval domain has exactly one axis")
        if self.kind in ("interval", "box") and self.particle_count != 1:
            raise ValueError(f"A {self.kind} domain holds one particle; use kind 'product'")
        if self.kind == "product" and self.particle_count < 2:
            raise ValueError("Product domains need particle_count >= 2")

    @property
    def total_dimension(self):
        return self.dim * self.particle_count

    @property
    def volume(self):
        return float(np.prod([hi - lo for lo, hi in self.extents])) ** self.particle_count


@dataclass(frozen=True)
class FaceId:
    """Face of the (possibly N-particle) domain: particle i's coordinate `axis` sits on `side`."""
    particle: int
    axis: int
    side: str

    @property
    def key(self):
        return (self.axis, self.side)

    @property
    def label(self):
        return f"p{self.particle}:x{self.axis}:{self.side}"


@dataclass(frozen=True)
class BoundaryEntry:
    node: int
    face: FaceId
    normal: Tuple[float, ...]
    weight: float


def _trapezoid_weights(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


class Grid:
    """Tensor grid with boundary registry.

    Node ordering is C-order over the axes, particle-major for products, so a
    state reshaped to `(base_nodes,) * N` is indexed by per-particle base nodes.
    Corner nodes appear once per incident face, each time with that face's
    surface weight. `entry_particles` holds the particle each entry's flux is
    attributed to: the lowest particle index whose coordinate is on the
    boundary at that node, so product-grid corner cells go to the lower index.
    """

    def __init__(self, spec: DomainSpec, nodes_per_axis: Tuple[int, ...]):
        self.spec = spec
        self.nodes_per_axis = tuple(int(n) for n in nodes_per_axis)
        self.particle_count = spec.particle_count
        self.dim = spec.dim
        self.shape = self.nodes_per_axis * self.particle_count
        extents = spec.extents * self.particle_count
        self.axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(extents, self.shape)]
        self.spacing = tuple((hi - lo) / (n - 1) for (lo, hi), n in zip(extents, self.shape))
        self.axis_weights = [_trapezoid_weights(n, h) for n, h in zip(self.shape, self.spacing)]
        self.weights = reduce(np.multiply.outer, self.axis_weights).ravel()
        self.node_coords = np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1).reshape(-1, self.dimension)
        self._indices = np.indices(self.shape).reshape(self.dimension, -1)
        self.boundary = self._register_boundary()
        self.boundary_nodes = np.array([e.node for e in self.boundary], dtype=int)
        self.boundary_weights = np.array([e.weight for e in self.boundary])
        self.entry_particles = self._attribute_entries()
        for arr in (self.weights, self.node_coords, self.boundary_nodes, self.boundary_weights):
            arr.setflags(write=False)
        self._base = None

    def _register_boundary(self):
        entries = []
        for a in range(self.dimension):
            particle, local_axis = divmod(a, self.dim)
            surface = np.ones(self.node_count)
            for b in range(self.dimension):
                if b != a:
                    surface = surface * self.axis_weights[b][self._indices[b]]
            for side, idx, sign in (("lower", 0, -1.0), ("upper", self.shape[a] - 1, 1.0)):
                normal = [0.0] * self.dimension
                normal[a] = sign
                face = FaceId(particle, local_axis, side)
                for node in np.flatnonzero(self._indices[a] == idx):
                    entries.append(BoundaryEntry(int(node), face, tuple(normal), float(surface[node])))
        return entries

    def _attribute_entries(self):
        on_boundary = np.zeros((self.particle_count, self.node_count), dtype=bool)
        for a in range(self.dimension):
            particle = a // self.dim
            on_boundary[particle] |= (self._indices[a] == 0) | (self._indices[a] == self.shape[a] - 1)
        owners = np.argmax(on_boundary, axis=0)
        return np.array([int(owners[e.node]) for e in self.boundary], dtype=int)

    @property
    def dimension(self):
        return len(self.shape)

    @property
    def node_count(self):
        return int(np.prod(self.shape))

    @property
    def boundary_node_set(self):
        return np.unique(self.boundary_nodes)

    @property
    def faces(self):
        seen = []
        for entry in self.boundary:
            if entry.face not in seen:
                seen.append(entry.face)
        return seen

    def metric(self, components=1):
        """Quadrature weight per state entry (node-major, component-minor)."""
        return np.repeat(self.weights, components)

    def inner(self, phi, psi, components=1):
        return np.sum(self.metric(components) * np.conj(phi) * psi)

    def norm_sq(self, psi, components=1):
        return float(np.sum(self.metric(components) * np.abs(psi) ** 2))

    def particle_base_node(self, nodes, particle):
        """Flat base-grid index of particle `particle`'s position at the given nodes."""
        start = particle * self.dim
        idx = self._indices[start:start + self.dim, np.asarray(nodes)]
        return np.ravel_multi_index(tuple(idx), self.nodes_per_axis)

    def base_grid(self):
        """Single-particle grid this grid is built from (itself when N = 1)."""
        if self.particle_count == 1:
            return self
        if self._base is None:
            kind = "interval" if self.dim == 1 else "box"
            self._base = Grid(DomainSpec(kind, self.spec.extents, 1, self.dim), self.nodes_per_axis)
        return self._base

    def __repr__(self):
        return (f"Grid(kind={self.spec.kind}, shape={self.shape}, particles={self.particle_count}, "
                f"boundary_entries={len(self.boundary)})")


def build_grid(spec: DomainSpec, nodes_per_axis) -> Grid:
    """Build the vertex-centred grid for a domain.

    Args:
        spec (DomainSpec): domain description.
        nodes_per_axis (int | Sequence[int]): nodes per particle axis, at least 3.

    Returns:
        Grid: grid with trapezoidal weights and boundary registry.
    """
    if isinstance(nodes_per_axis, (int, np.integer)):
        nodes = (int(nodes_per_axis),) * spec.dim
    else:
        nodes = tuple(int(n) for n in nodes_per_axis)
    if len(nodes) != spec.dim:
        raise ValueError(f"Expected {spec.dim} node counts, got {len(nodes)}")
    if min(nodes) < 3:
        raise ValueError(f"nodes_per_axis must be >= 3 on every axis (no interior node), got {nodes}")
    grid = Grid(spec, nodes)
    logger.info(f"Built {grid}")
    return grid


def build_product_grid(base: Grid, N: int) -> Grid:
    """Tensor grid over the N-fold product of a single-particle domain."""
    if base.particle_count != 1:
        raise ValueError("build_product_grid expects a single-particle base grid")
    if N < 1:
        raise ValueError(f"Particle count must be positive, got {N}")
    if N == 1:
        return base
    spec = DomainSpec("product", base.spec.extents, N, base.dim)
    return build_grid(spec, base.nodes_per_axis)
