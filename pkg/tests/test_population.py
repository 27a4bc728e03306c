import numpy as np
import pytest

from onenas.errors import ContractError
from onenas.evo_ops import OperatorConfig
from onenas.genome import seed_genome, validate
from onenas.population import (
    PopulationState,
    extinction_due,
    generate_offspring,
    rank_islands,
    reproduction_rates,
    repopulate,
    select_elite,
    update_global_best,
)


def _state(n_islands=3, elite=4, generated=6):
    seed = seed_genome(["a", "b"], ["y"], np.random.default_rng(0))
    return PopulationState.create(seed, n_islands, elite, generated, extinct_freq=5)


def _score(state, rng):
    for g in state.all_genomes():
        g.fitness = float(rng.uniform(0, 1))


def test_create_gives_each_island_its_own_seed_copy():
    state = _state()
    ids = [isl.elite[0].genome_id for isl in state.islands]
    assert ids == [0, 1, 2]
    assert state.global_best is state.islands[0].elite[0]
    assert [isl.elite[0].island_id for isl in state.islands] == [0, 1, 2]


def test_select_elite_example_and_ties():
    state = _state(1)
    rng = np.random.default_rng(0)
    gs = [state.register(seed_genome(["a", "b"], ["y"], rng), g, 0) for g in (3, 1, 2, 1)]
    for g, f in zip(gs, [0.5, 0.2, 0.2, 0.9]):
        g.fitness = f
    chosen = select_elite(gs[:2], gs[2:], 2)
    # equal fitness 0.2: the older genome (born generation 1) wins
    assert [g.genome_id for g in chosen] == [gs[1].genome_id, gs[2].genome_id]


def test_select_elite_rejects_unscored():
    state = _state(1)
    with pytest.raises(ContractError):
        select_elite(state.islands[0].elite, [], 3)
    with pytest.raises(ContractError):
        select_elite([], [], 3)


def test_single_island_folds_inter_rate():
    assert reproduction_rates(OperatorConfig(), 1) == pytest.approx((0.3, 0.7, 0.0))
    assert reproduction_rates(OperatorConfig(), 4) == (0.3, 0.3, 0.4)


def test_offspring_count_validity_and_ids():
    state = _state()
    rng = np.random.default_rng(1)
    _score(state, rng)
    island = state.islands[1]
    kids = generate_offspring(island, OperatorConfig(), rng, state, generation=1)
    assert len(kids) == island.generated_capacity
    assert all(validate(k) == [] for k in kids)
    assert all(k.island_id == 1 and k.generation_born == 1 and k.fitness is None for k in kids)
    ids = [k.genome_id for k in kids]
    assert len(set(ids)) == len(ids) and min(ids) >= 3
    elite_ids = {g.genome_id for g in island.elite}
    for k in kids:
        if k.origin.startswith("mutation") or k.origin.endswith("intra"):
            assert set(k.parent_ids) <= elite_ids


def test_offspring_are_reproducible():
    outs = []
    for _ in range(2):
        state = _state()
        _score(state, np.random.default_rng(5))
        kids = generate_offspring(state.islands[0], OperatorConfig(), np.random.default_rng(3),
                                  state, 1)
        outs.append([(k.origin, sorted(k.weight_items().items())) for k in kids])
    assert outs[0] == outs[1]


def test_rank_islands_and_extinction_schedule():
    state = _state()
    for isl, f in zip(state.islands, [0.4, 0.1, 0.7]):
        isl.elite[0].fitness = f
    assert rank_islands(state) == [1, 0, 2]
    assert update_global_best(state).island_id == 1
    assert [t for t in range(0, 21) if extinction_due(t, 5)] == [5, 10, 15, 20]
    assert not any(extinction_due(t, 0) for t in range(50))


def test_rank_islands_needs_scores():
    with pytest.raises(ContractError):
        rank_islands(_state())


def test_repopulate_worst_island_from_global_best():
    state = _state()
    for isl, f in zip(state.islands, [0.4, 0.1, 0.7]):
        isl.elite[0].fitness = f
    update_global_best(state)
    worst = state.island(rank_islands(state)[-1])
    repopulate(worst, state.global_best, OperatorConfig(), np.random.default_rng(0), state, 10)
    assert len(worst.elite) == worst.elite_capacity
    assert worst.generated == []
    assert all(g.origin.startswith("repopulation:") and g.fitness is None for g in worst.elite)
    assert all(g.parent_ids == (state.global_best.genome_id,) for g in worst.elite)
    assert state.repopulations == [(10, 2)]
    assert all(validate(g) == [] for g in worst.elite)
