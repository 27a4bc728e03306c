import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onenas.genome import (
    EdgeGene,
    NodeGene,
    dumps,
    loads,
    seed_genome,
    structural_hash,
    validate,
)
from onenas.errors import ContractError

from conftest import grow_genome


def test_seed_genome_shape():
    g = seed_genome(["a", "b", "c"], ["y"], np.random.default_rng(0))
    assert [n.id for n in g.input_nodes] == [0, 1, 2]
    assert [n.id for n in g.output_nodes] == [3]
    assert sorted(e.key for e in g.edges.values()) == [(0, 3, 0), (1, 3, 0), (2, 3, 0)]
    assert all(-0.5 <= e.weight <= 0.5 for e in g.edges.values())
    assert validate(g) == []
    assert g.size() == (4, 3)


def test_seed_needs_names():
    with pytest.raises(ContractError):
        seed_genome([], ["y"])


def _two_node(depth_a=0.0, depth_b=1.0, skip=0):
    g = seed_genome(["a"], ["y"], np.random.default_rng(0))
    g.edges[0].time_skip = skip
    g.nodes[0].depth, g.nodes[1].depth = depth_a, depth_b
    return g


def test_backward_feedforward_edge_is_a_cycle():
    g = seed_genome(["a"], ["y"], np.random.default_rng(0))
    g.nodes[2] = NodeGene(2, "hidden", "gru", 0.5, np.zeros(9))
    g.next_node_id = 3
    g.edges[1] = EdgeGene(1, 1, 2, 0.1)
    g.next_edge_id = 2
    assert any("acyclicity" in p for p in validate(g))
    g.edges[1].time_skip = 3
    assert validate(g) == []


def test_validate_flags_edge_into_input():
    g = seed_genome(["a", "b"], ["y"], np.random.default_rng(0))
    g.edges[5] = EdgeGene(5, 2, 0, 0.1, time_skip=1)
    g.next_edge_id = 6
    assert any("targets input" in p for p in validate(g))


def test_validate_flags_bad_skip_and_nan():
    g = _two_node()
    g.edges[0].time_skip = 11
    g.nodes[1].params[0] = np.nan
    problems = validate(g)
    assert any("time skip" in p for p in problems)
    assert any("non-finite" in p for p in problems)


def test_duplicate_enabled_edge():
    g = _two_node()
    g.edges[1] = EdgeGene(1, 0, 1, 0.3)
    g.next_edge_id = 2
    assert any("duplicate" in p for p in validate(g))
    g.edges[1].enabled = False
    assert validate(g) == []


def test_dormant_hidden_node_is_inactive():
    g = seed_genome(["a"], ["y"], np.random.default_rng(0))
    g.nodes[2] = NodeGene(2, "hidden", "mgu", 0.5, np.zeros(6))
    g.next_node_id = 3
    g.edges[1] = EdgeGene(1, 0, 2, 0.2)
    g.next_edge_id = 2
    assert g.active_nodes() == {0, 1}
    g.edges[2] = EdgeGene(2, 2, 1, 0.2)
    g.next_edge_id = 3
    assert g.active_nodes() == {0, 1, 2}


def test_copy_is_independent():
    g = grow_genome(np.random.default_rng(3))
    c = g.copy()
    next(iter(c.nodes.values())).params[0] += 1.0
    next(iter(c.edges.values())).weight += 1.0
    assert dumps(c) != dumps(g)


def test_structural_hash_ignores_weights():
    g = grow_genome(np.random.default_rng(5))
    c = g.copy()
    for e in c.edges.values():
        e.weight *= 2
    assert structural_hash(c) == structural_hash(g)
    next(iter(c.edges.values())).enabled ^= True
    assert structural_hash(c) != structural_hash(g)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_serialization_round_trip(seed):
    g = grow_genome(np.random.default_rng(seed), steps=15, max_nodes=12)
    g.fitness = 0.123456789
    text = dumps(g)
    back = loads(text)
    assert dumps(back) == text
    assert back.weight_items() == g.weight_items()
    assert validate(back) == []


def test_loads_rejects_garbage():
    with pytest.raises(ContractError):
        loads("hello\n")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_grown_genomes_are_valid(seed):
    g = grow_genome(np.random.default_rng(seed), steps=25, max_nodes=20)
    assert validate(g) == []
    ids = [n.id for n in g.nodes.values()]
    assert len(set(ids)) == len(ids)
