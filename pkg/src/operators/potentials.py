"""Potential fields sampled on grid nodes.

Potentials come from an expression-free table in the run config: named
built-ins (zero, constant, harmonic, step, barrier) or node values from CSV.
Built-ins describe ONE particle; on an N-particle grid the field is the sum
over particles. Only bounded, pointwise-sampled potentials are supported.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

POTENTIAL_KINDS = ("zero", "constant", "harmonic", "step", "barrier", "csv")


@dataclass(frozen=True)
class PotentialField:
    """Real value per node, or a Hermitian matrix per node (spinor case)."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if not np.all(np.isfinite(values)):
            raise ValueError("Potential contains non-finite values")
        if values.ndim == 1:
            if np.iscomplexobj(values):
                if np.max(np.abs(values.imag), initial=0.0) > 0.0:
                    raise ValueError("Scalar potential must be real")
                values = values.real
            values = values.astype(float)
        elif values.ndim == 3:
            if values.shape[1] != values.shape[2]:
                raise ValueError(f"Matrix potential needs square blocks, got {values.shape[1:]}")
            scale = max(1.0, float(np.max(np.abs(values), initial=0.0)))
            if np.max(np.abs(values - np.conj(np.transpose(values, (0, 2, 1)))), initial=0.0) > 1e-12 * scale:
                raise ValueError("Matrix-valued potential must be Hermitian at every node")
            values = values.astype(complex)
        else:
            raise ValueError(f"Potential must be (nodes,) or (nodes, s, s), got shape {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def is_matrix(self):
        return self.values.ndim == 3

    @classmethod
    def zero(cls, grid):
        return cls(np.zeros(grid.node_count))


def _single_particle_values(base, spec, mass):
    kind = spec.get("kind", "zero")
    x = base.node_coords
    if kind == "zero":
        return np.zeros(base.node_count)
    if kind == "constant":
        return np.full(base.node_count, float(spec["value"]))
    if kind == "harmonic":
        omega = float(spec["omega"])
        center = np.asarray(spec.get("center", [0.0] * base.dim), dtype=float)
        return 0.5 * mass * omega ** 2 * np.sum((x - center) ** 2, axis=1)
    if kind == "step":
        axis = int(spec.get("axis", 0))
        return np.where(x[:, axis] >= float(spec["position"]), float(spec["height"]), 0.0)
    if kind == "barrier":
        axis = int(spec.get("axis", 0))
        inside = (x[:, axis] >= float(spec["left"])) & (x[:, axis] <= float(spec["right"]))
        return np.where(inside, float(spec["height"]), 0.0)
    if kind == "csv":
        frame = pd.read_csv(spec["path"])
        column = spec.get("column", "value" if "value" in frame.columns else frame.columns[0])
        values = frame[column].to_numpy(dtype=float)
        if values.size != base.node_count:
            raise ValueError(f"Potential CSV '{spec['path']}' has {values.size} values, grid has {base.node_count} nodes")
        return values
    raise ValueError(f"Unknown potential kind '{kind}', expected one of {POTENTIAL_KINDS}")


def build_potential(grid, spec=None, mass=1.0) -> PotentialField:
    """Sample a config potential on `grid`, summing over particles for product grids.

    Args:
        grid (Grid): target grid.
        spec (dict): potential table, e.g. {"kind": "barrier", "height": 2.0, "left": 4.0, "right": 5.0}.
        mass (float): particle mass, used by the harmonic built-in.

    Returns:
        PotentialField: sampled field.
    """
    spec = spec or {"kind": "zero"}
    base = grid.base_grid()
    try:
        single = _single_particle_values(base, spec, mass)
    except KeyError as e:
        raise ValueError(f"Potential '{spec.get('kind')}' is missing parameter {str(e)}")
    nodes = np.arange(grid.node_count)
    total = np.zeros(grid.node_count)
    for particle in range(grid.particle_count):
        total += single[grid.particle_base_node(nodes, particle)]
    logger.info(f"Potential '{spec.get('kind', 'zero')}' sampled: min={total.min():.4g}, max={total.max():.4g}")
    return PotentialField(total)
