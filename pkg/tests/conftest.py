import numpy as np
import pytest

from src.domain.grid import DomainSpec, build_grid, build_product_grid
from src.evolution.propagator import CNPropagator, WaveFunction
from src.instruments.initial_states import gaussian_packet
from src.operators.operator_matrix import BoundaryParams, Units
from src.operators.potentials import PotentialField
from src.operators.schrodinger import assemble_schrodinger


def interval(lo, hi, nodes):
    return build_grid(DomainSpec("interval", ((lo, hi),)), nodes)


def packet(grid, center, width, k0=0.0):
    return WaveFunction(gaussian_packet(grid, center, width, k0), grid).normalized()


def random_state(grid, seed, components=1):
    rng = np.random.default_rng(seed)
    size = grid.node_count * components
    return WaveFunction(rng.standard_normal(size) + 1j * rng.standard_normal(size), grid, components).normalized()


def schrodinger(grid, kappa=1.0, nu=0.0, faces=None, V=None, units=Units()):
    V = V if V is not None else PotentialField.zero(grid)
    return assemble_schrodinger(grid, V, BoundaryParams(kappa, nu, faces or {}), units)


def propagator(grid, tau, **kwargs):
    return CNPropagator(schrodinger(grid, **kwargs), tau)


@pytest.fixture
def units():
    return Units()


@pytest.fixture
def small_interval():
    return interval(0.0, 4.0, 16)


@pytest.fixture
def pair_grid():
    return build_product_grid(interval(0.0, 3.0, 7), 2)
