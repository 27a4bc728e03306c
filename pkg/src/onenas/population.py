"""Islands of elite and generated genomes, selection, and extinction/repopulation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from onenas.errors import ContractError
from onenas.evo_ops import OperatorConfig, crossover, mutate
from onenas.genome import Genome, Innovations

log = logging.getLogger(__name__)

ROUTES = ("mutation", "intra", "inter")


def _rank_key(g: Genome):
    return (g.fitness, g.generation_born, g.genome_id)


@dataclass
class Island:
    id: int
    elite_capacity: int
    generated_capacity: int
    elite: list[Genome] = field(default_factory=list)
    generated: list[Genome] = field(default_factory=list)
    stagnation: int = 0
    best_id: int | None = None

    @property
    def evaluated(self) -> bool:
        return bool(self.elite) and all(g.fitness is not None for g in self.elite)

    @property
    def best(self) -> Genome | None:
        scored = [g for g in self.elite if g.fitness is not None]
        return min(scored, key=_rank_key) if scored else None

    @property
    def best_fitness(self) -> float | None:
        best = self.best
        return None if best is None else best.fitness

    def erase(self) -> None:
        self.elite = []
        self.generated = []
        self.stagnation = 0
        self.best_id = None


@dataclass
class PopulationState:
    islands: list[Island]
    global_best: Genome
    generation: int = 0
    extinct_freq: int = 0
    innovations: Innovations = field(default_factory=Innovations)
    next_genome_id: int = 0
    repopulations: list[tuple[int, int]] = field(default_factory=list)

    @classmethod
    def create(cls, seed: Genome, n_islands: int, elite_capacity: int, generated_capacity: int,
               extinct_freq: int = 0) -> "PopulationState":
        """Every island starts with its own copy of the seed genome as its only elite."""
        if n_islands < 1 or elite_capacity < 1 or generated_capacity < 0:
            raise ContractError("need >= 1 island, elite capacity >= 1, generated capacity >= 0")
        innovations = Innovations()
        innovations.observe(seed)
        state = cls([], seed, 0, extinct_freq, innovations)
        for i in range(n_islands):
            island = Island(i, elite_capacity, generated_capacity)
            island.elite.append(state.register(seed.copy(), 0, i, origin="seed"))
            state.islands.append(island)
        state.global_best = state.islands[0].elite[0]
        return state

    def register(self, genome: Genome, generation: int, island_id: int,
                 origin: str | None = None) -> Genome:
        genome.genome_id = self.next_genome_id
        self.next_genome_id += 1
        genome.generation_born = generation
        genome.island_id = island_id
        if origin is not None:
            genome.origin = origin
        self.innovations.observe(genome)
        return genome

    def island(self, island_id: int) -> Island:
        for isl in self.islands:
            if isl.id == island_id:
                return isl
        raise ContractError(f"no island {island_id}")

    def all_genomes(self) -> list[Genome]:
        return [g for isl in self.islands for g in isl.elite + isl.generated]


def select_elite(elite: list[Genome], generated: list[Genome], capacity: int) -> list[Genome]:
    """The ``capacity`` lowest-fitness genomes of both sets, sorted ascending.

    Ties go to the older genome, then the lower id. Nothing is retrained here.
    """
    candidates = list(elite) + list(generated)
    if not candidates:
        raise ContractError("no candidates to select an elite from")
    if any(g.fitness is None for g in candidates):
        raise ContractError("every candidate needs a fitness on the same validation data")
    return sorted(candidates, key=_rank_key)[:capacity]


def reproduction_rates(cfg: OperatorConfig, n_islands: int) -> tuple[float, float, float]:
    """Route probabilities; with a single island the inter-island share moves to intra."""
    mut, intra, inter = cfg.mutation_rate, cfg.intra_crossover_rate, cfg.inter_crossover_rate
    if n_islands < 2 and inter > 0:
        log.info("single island: folding inter-island crossover rate %.3f into intra", inter)
        intra, inter = intra + inter, 0.0
    return mut, intra, inter


def generate_offspring(island: Island, cfg: OperatorConfig, rng: np.random.Generator,
                       state: PopulationState, generation: int) -> list[Genome]:
    """Exactly ``island.generated_capacity`` children bred from elite parents only.

    Each child uses its own stream spawned from ``rng`` (so children can be built
    in any order) and records its route in ``origin``.
    """
    if not island.elite:
        raise ContractError(f"island {island.id} has no elite to breed from")
    rates = np.array(reproduction_rates(cfg, len(state.islands)))
    others = [isl for isl in state.islands if isl.id != island.id and isl.best is not None]
    children = []
    for child_rng in rng.spawn(island.generated_capacity):
        route = ROUTES[int(child_rng.choice(3, p=rates / rates.sum()))]
        elite = island.elite
        if route == "intra" and len(elite) < 2:
            route = "mutation"
        if route == "inter" and not others:
            route = "mutation" if len(elite) < 2 else "intra"
        if route == "mutation":
            parent = elite[int(child_rng.integers(len(elite)))]
            child = mutate(parent, cfg, child_rng, state.innovations)
        else:
            if route == "intra":
                i, j = child_rng.choice(len(elite), 2, replace=False)
                a, b = elite[int(i)], elite[int(j)]
            else:
                a = elite[int(child_rng.integers(len(elite)))]
                b = others[int(child_rng.integers(len(others)))].best
            if _rank_key_safe(b) < _rank_key_safe(a):
                a, b = b, a
            child = crossover(a, b, child_rng, cfg, state.innovations, origin=f"crossover:{route}")
        children.append(state.register(child, generation, island.id))
    return children


def _rank_key_safe(g: Genome):
    return (float("inf") if g.fitness is None else g.fitness, g.generation_born, g.genome_id)


def rank_islands(state: PopulationState) -> list[int]:
    """Island ids from best to worst by their best elite fitness; ties by island id."""
    for isl in state.islands:
        if isl.best is None:
            raise ContractError(f"island {isl.id} has no evaluated genome")
    return [isl.id for isl in sorted(state.islands, key=lambda isl: (isl.best_fitness, isl.id))]


def extinction_due(t: int, extinct_freq: int) -> bool:
    return extinct_freq > 0 and t > 0 and t % extinct_freq == 0


def repopulate(island: Island, global_best: Genome, cfg: OperatorConfig,
               rng: np.random.Generator, state: PopulationState, generation: int) -> Island:
    """Erase the island and refill its elite with mutants of the global best.

    The generated set stays empty; the mutants are scored at the next
    evaluation and breed from the following generation on.
    """
    island.erase()
    for child_rng in rng.spawn(island.elite_capacity):
        mutant = mutate(global_best, cfg, child_rng, state.innovations)
        mutant.fitness = None
        island.elite.append(state.register(mutant, generation, island.id,
                                           origin=f"repopulation:{mutant.origin}"))
    state.repopulations.append((generation, island.id))
    return island


def update_global_best(state: PopulationState) -> Genome:
    """The lowest-fitness evaluated elite across all islands (unscored genomes are skipped)."""
    scored = [g for isl in state.islands for g in isl.elite if g.fitness is not None]
    if not scored:
        raise ContractError("no evaluated genome to choose a global best from")
    state.global_best = min(scored, key=_rank_key)
    return state.global_best


def note_selection(island: Island) -> None:
    """Track how many generations the island's best genome has gone unchanged."""
    best = island.best
    best_id = None if best is None else best.genome_id
    island.stagnation = island.stagnation + 1 if best_id == island.best_id else 0
    island.best_id = best_id
