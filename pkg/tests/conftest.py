import numpy as np
import pytest

from onenas.evo_ops import OperatorConfig, mutate
from onenas.genome import Innovations, seed_genome, validate


def grow_genome(rng, n_inputs=2, max_nodes=10, steps=12, cfg=None):
    """A random valid genome built by mutating a seed, kept at or below ``max_nodes``."""
    cfg = cfg or OperatorConfig(time_skip_range=(1, 10))
    names = [f"x{i}" for i in range(n_inputs)]
    g = seed_genome(names, ["y"], rng)
    inn = Innovations()
    inn.observe(g)
    for _ in range(steps):
        child = mutate(g, cfg, rng, inn)
        if len(child.nodes) <= max_nodes:
            g = child
    assert validate(g) == []
    return g


def central_difference(f, theta, h=1e-5):
    out = np.empty_like(theta)
    for i in range(len(theta)):
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (f(up) - f(dn)) / (2 * h)
    return out


def relative_error(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
