import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onenas.errors import ContractError
from onenas.evo_ops import (
    MUTATION_OPS,
    Inapplicable,
    OperatorConfig,
    crossover,
    inherit_weights,
    inheritance_counts,
    mutate,
)
from onenas.genome import Innovations, seed_genome, validate

from conftest import grow_genome


def shared_values_preserved(child, parents):
    """Every scalar the child shares with a parent equals that parent's value, the mean, or a blend."""
    items = [p.weight_items() for p in parents]
    for key, value in child.weight_items().items():
        options = [it[key] for it in items if key in it]
        if not options:
            continue
        candidates = options + ([0.5 * (options[0] + options[1])] if len(options) == 2 else [])
        if not any(value == c for c in candidates):
            return False
    return True


def test_operator_list_excludes_split_edge():
    assert "split_edge" not in MUTATION_OPS
    assert len(MUTATION_OPS) == 10


def test_config_validation():
    with pytest.raises(ContractError):
        OperatorConfig(0.5, 0.5, 0.5)
    with pytest.raises(ContractError):
        OperatorConfig(time_skip_range=(0, 10))
    assert OperatorConfig.single_population().inter_crossover_rate == 0.0


@pytest.mark.parametrize("op", MUTATION_OPS)
def test_each_operation_keeps_genome_valid(op):
    done = 0
    for seed in range(40):
        rng = np.random.default_rng(seed)
        parent = grow_genome(rng, steps=20, max_nodes=14)
        inn = Innovations()
        inn.observe(parent)
        try:
            child = mutate(parent, OperatorConfig(), rng, inn, op=op)
        except Inapplicable:
            continue
        done += 1
        assert validate(child) == []
        assert child.origin == f"mutation:{op}"
        assert child.fitness is None
        assert shared_values_preserved(child, [parent])
    assert done > 0


def test_add_node_only_adds_new_structure():
    rng = np.random.default_rng(0)
    parent = seed_genome(["a", "b"], ["y"], rng)
    child = mutate(parent, OperatorConfig(), rng, op="add_node")
    new = set(child.nodes) - set(parent.nodes)
    assert len(new) == 1
    node = child.nodes[new.pop()]
    assert 0 < node.depth < 1 and node.kind == "hidden"
    inherited, fresh = inheritance_counts(child, [parent])
    assert inherited == len(parent.weight_items())
    assert fresh > 0


def test_split_and_merge_disable_originals():
    rng = np.random.default_rng(4)
    parent = grow_genome(rng, steps=30, max_nodes=14)
    for op, removed in (("split_node", 1), ("merge_node", 2)):
        try:
            child = mutate(parent, OperatorConfig(), np.random.default_rng(1), op=op)
        except Inapplicable:
            continue
        was = {n for n, g in parent.nodes.items() if g.enabled}
        now = {n for n, g in child.nodes.items() if g.enabled}
        assert len(was - now) == removed


def test_recurrent_edge_skip_in_range():
    cfg = OperatorConfig(time_skip_range=(3, 4))
    for seed in range(20):
        rng = np.random.default_rng(seed)
        child = mutate(seed_genome(["a"], ["y"], rng), cfg, rng, op="add_recurrent_edge")
        skips = [e.time_skip for e in child.edges.values() if e.recurrent]
        assert skips and all(3 <= s <= 4 for s in skips)


def test_crossover_keeps_better_parent_structure():
    rng = np.random.default_rng(9)
    inn = Innovations()
    base = seed_genome(["a", "b"], ["y"], rng)
    inn.observe(base)
    a = base
    b = base
    for _ in range(10):
        a = mutate(a, OperatorConfig(), rng, inn)
        b = mutate(b, OperatorConfig(), rng, inn)
    child = crossover(a, b, rng, innovations=inn)
    assert validate(child) == []
    assert set(a.nodes) <= set(child.nodes)
    assert {e.key for e in a.edges.values()} <= {e.key for e in child.edges.values()}
    assert shared_values_preserved(child, [a, b])
    assert child.parent_ids == (a.genome_id, b.genome_id)


def test_crossover_arity_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(ContractError):
        crossover(seed_genome(["a"], ["y"], rng), seed_genome(["a", "b"], ["y"], rng), rng)


def test_inherit_weights_copies_matches_and_draws_the_rest():
    rng = np.random.default_rng(2)
    parent = grow_genome(rng)
    child = mutate(parent, OperatorConfig(), rng, op="add_node")
    scrambled = child.copy()
    for e in scrambled.edges.values():
        e.weight = 99.0
    restored = inherit_weights(scrambled, [parent], rng)
    pw = parent.weight_items()
    for key, v in restored.weight_items().items():
        if key in pw:
            assert v == pw[key]
        else:
            assert -0.5 <= v <= 1.5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_random_operator_sequences_stay_valid(seed):
    rng = np.random.default_rng(seed)
    inn = Innovations()
    pool = [seed_genome(["a", "b", "c"], ["y"], rng)]
    inn.observe(pool[0])
    for _ in range(30):
        if len(pool) > 1 and rng.random() < 0.4:
            i, j = rng.choice(len(pool), 2, replace=False)
            child = crossover(pool[i], pool[j], rng, innovations=inn)
            parents = [pool[i], pool[j]]
        else:
            parent = pool[int(rng.integers(len(pool)))]
            child = mutate(parent, OperatorConfig(), rng, inn)
            parents = [parent]
        assert validate(child) == []
        assert shared_values_preserved(child, parents)
        pool.append(child)
