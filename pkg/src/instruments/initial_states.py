"""Initial wave functions from the run config's `initial_state` table.

Kinds: gaussian packets (one per particle), Neumann cosine eigenmodes, node
values from CSV and seeded random states. Two or more particles can be
symmetrised or antisymmetrised. Spinor states are the scalar profile times a
constant spinor, projected onto the boundary-condition subspace.
"""

import itertools
import logging

import numpy as np
import pandas as pd

from src.evolution.propagator import WaveFunction

logger = logging.getLogger(__name__)


def gaussian_packet(base, center, width, k0):
    """exp(-|x - center|^2 / 4 width^2 + i k0 . x) on a single-particle grid."""
    x = base.node_coords
    center = np.broadcast_to(np.asarray(center, dtype=float), (base.dim,))
    k0 = np.broadcast_to(np.asarray(k0, dtype=float), (base.dim,))
    return np.exp(-np.sum((x - center) ** 2, axis=1) / (4.0 * width ** 2) + 1j * (x @ k0))


def neumann_mode(base, index):
    """prod_a cos(pi j_a (x_a - lo_a) / L_a): eigenmodes of the reflecting (kappa = 0) box."""
    index = np.broadcast_to(np.asarray(index, dtype=int), (base.dim,))
    values = np.ones(base.node_count, dtype=complex)
    for axis, ((lo, hi), j) in enumerate(zip(base.spec.extents, index)):
        values *= np.cos(np.pi * j * (base.node_coords[:, axis] - lo) / (hi - lo))
    return values


def _parity(perm):
    sign, seen = 1, list(perm)
    for i in range(len(seen)):
        while seen[i] != i:
            j = seen[i]
            seen[i], seen[j] = seen[j], seen[i]
            sign = -sign
    return sign


def symmetrize(tensor, symmetry):
    """Sum over particle permutations, signed for antisymmetric states."""
    if symmetry == "none" or tensor.ndim < 2:
        return tensor
    out = np.zeros_like(tensor)
    for perm in itertools.permutations(range(tensor.ndim)):
        sign = _parity(perm) if symmetry == "antisymmetric" else 1
        out = out + sign * np.transpose(tensor, perm)
    return out


def product_state(factors):
    """Tensor product of per-particle node vectors, flattened particle-major."""
    values = factors[0]
    for factor in factors[1:]:
        values = np.multiply.outer(values, factor)
    return values


def build_initial_state(grid, spec, seed=0, components=1, spinor=None, projector=None) -> WaveFunction:
    """Normalized initial state on `grid` from an initial_state table.

    Args:
        grid (Grid): target grid (product grids take one factor per particle).
        spec (dict): e.g. {"kind": "gaussian", "packets": [{"center": 20, "width": 2, "k0": 1}]}.
        seed (int): seed for the random kind.
        components (int): spinor components per node.
        spinor (Sequence[complex]): constant spinor for component states.
        projector (scipy.sparse matrix): applied before normalisation (Dirac domain projector).

    Returns:
        WaveFunction
    """
    kind = spec.get("kind", "gaussian")
    base = grid.base_grid()
    N = grid.particle_count
    if kind == "gaussian":
        packets = spec.get("packets") or [{"center": np.mean(base.spec.extents, axis=1), "width": 1.0, "k0": 0.0}]
        factors = [gaussian_packet(base, p["center"], float(p["width"]), p.get("k0", 0.0))
                   for p in (packets[i % len(packets)] for i in range(N))]
        scalar = symmetrize(product_state(factors), spec.get("symmetry", "none")).ravel()
    elif kind == "eigenmode":
        indices = spec.get("indices") or [spec.get("index", 0)] * N
        scalar = symmetrize(product_state([neumann_mode(base, indices[i % len(indices)]) for i in range(N)]),
                            spec.get("symmetry", "none")).ravel()
    elif kind == "csv":
        frame = pd.read_csv(spec["path"])
        scalar = frame["re"].to_numpy(dtype=float) + 1j * (frame["im"].to_numpy(dtype=float)
                                                           if "im" in frame.columns else 0.0)
        if scalar.size != grid.node_count * components:
            raise ValueError(f"Initial-state CSV '{spec['path']}' has {scalar.size} values, "
                             f"expected {grid.node_count * components}")
    elif kind == "random":
        rng = np.random.default_rng(seed)
        size = grid.node_count * components
        scalar = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    else:
        raise ValueError(f"Unknown initial state kind '{kind}'")

    if components > 1 and scalar.size == grid.node_count:
        spinor = np.asarray(spinor if spinor is not None else spec.get("spinor", [1.0] + [0.0] * (components - 1)),
                            dtype=complex)
        if spinor.size != components:
            raise ValueError(f"Spinor needs {components} components, got {spinor.size}")
        scalar = np.kron(scalar, spinor)
    if projector is not None:
        scalar = projector @ scalar
    psi = WaveFunction(scalar, grid, components)
    if psi.norm_sq() == 0.0:
        raise ValueError(f"Initial state '{kind}' vanishes on the grid (e.g. antisymmetrised identical packets)")
    logger.info(f"Initial state '{kind}' on {grid.node_count} nodes, {components} component(s)")
    return psi.normalized()
