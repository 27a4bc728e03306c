"""Mutation, crossover and Lamarckian weight inheritance.

Every operator works on a private copy of its parent(s). Components that a child
shares with a parent keep that parent's trained values; only structure that is
genuinely new is drawn from U(-0.5, 0.5).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from onenas.cells import CELL_NAMES
from onenas.errors import ContractError
from onenas.genome import (
    INIT_HIGH,
    INIT_LOW,
    MAX_TIME_SKIP,
    EdgeGene,
    Genome,
    Innovations,
    NodeGene,
    _new_node,
)

log = logging.getLogger(__name__)

MUTATION_OPS = (
    "add_edge",
    "add_recurrent_edge",
    "enable_edge",
    "disable_edge",
    "add_node",
    "split_node",
    "merge_node",
    "enable_node",
    "disable_node",
    "clone",
)


def _uniform_ops() -> dict[str, float]:
    return {op: 1.0 / len(MUTATION_OPS) for op in MUTATION_OPS}


@dataclass
class OperatorConfig:
    mutation_rate: float = 0.3
    intra_crossover_rate: float = 0.3
    inter_crossover_rate: float = 0.4
    op_weights: dict[str, float] = field(default_factory=_uniform_ops)
    time_skip_range: tuple[int, int] = (1, MAX_TIME_SKIP)
    inclusion_probability: float = 0.5
    better_weight_probability: float = 0.5
    max_retries: int = 10

    def __post_init__(self):
        rates = (self.mutation_rate, self.intra_crossover_rate, self.inter_crossover_rate)
        if min(rates) < 0 or abs(sum(rates) - 1.0) > 1e-9:
            raise ContractError(f"reproduction rates must be non-negative and sum to 1, got {rates}")
        unknown = set(self.op_weights) - set(MUTATION_OPS)
        if unknown:
            raise ContractError(f"unknown mutation operations {sorted(unknown)}")
        weights = [w for w in self.op_weights.values() if w > 0]
        if not weights or abs(sum(weights) - 1.0) > 1e-9:
            raise ContractError("mutation operation weights must sum to 1")
        lo, hi = self.time_skip_range
        if not 1 <= lo <= hi <= MAX_TIME_SKIP:
            raise ContractError(f"time skip range {self.time_skip_range} outside [1, {MAX_TIME_SKIP}]")

    @classmethod
    def single_population(cls) -> "OperatorConfig":
        return cls(mutation_rate=0.4, intra_crossover_rate=0.6, inter_crossover_rate=0.0)


class Inapplicable(Exception):
    """The drawn operation has nothing to act on for this genome."""


def _fresh_weight(rng) -> float:
    return float(rng.uniform(INIT_LOW, INIT_HIGH))


def _live(genome: Genome) -> list[NodeGene]:
    return sorted((n for n in genome.nodes.values() if n.enabled), key=lambda n: n.id)


def _outputs_connected(genome: Genome) -> bool:
    """True when every output can be reached from some input over enabled structure."""
    live = {n.id for n in genome.nodes.values() if n.enabled}
    adj: dict[int, list[int]] = {}
    for e in genome.edges.values():
        if e.enabled and e.source in live and e.target in live:
            adj.setdefault(e.source, []).append(e.target)
    seen = {n.id for n in genome.input_nodes}
    stack = list(seen)
    while stack:
        for nxt in adj.get(stack.pop(), ()):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return all(n.id in seen for n in genome.output_nodes)


def _add_edge(child, key, weight, innovations) -> EdgeGene:
    edge = EdgeGene(innovations.edge_id(child), key[0], key[1], weight, key[2])
    child.edges[edge.id] = edge
    return edge


def _existing_keys(genome: Genome) -> set[tuple[int, int, int]]:
    return {e.key for e in genome.edges.values()}


def _pick(rng, items):
    return items[int(rng.integers(len(items)))]


# ------------------------------------------------------------- mutation ops


def op_add_edge(child, cfg, rng, innovations):
    live = _live(child)
    keys = _existing_keys(child)
    pairs = [(a.id, b.id, 0) for a in live for b in live
             if a.depth < b.depth and b.kind != "input" and (a.id, b.id, 0) not in keys]
    if not pairs:
        raise Inapplicable("no free feed-forward pair")
    _add_edge(child, _pick(rng, pairs), _fresh_weight(rng), innovations)


def op_add_recurrent_edge(child, cfg, rng, innovations):
    live = _live(child)
    keys = _existing_keys(child)
    lo, hi = cfg.time_skip_range
    skip = int(rng.integers(lo, hi + 1))
    pairs = [(a.id, b.id, skip) for a in live for b in live
             if b.kind != "input" and (a.id, b.id, skip) not in keys]
    if not pairs:
        raise Inapplicable("no free recurrent pair")
    _add_edge(child, _pick(rng, pairs), _fresh_weight(rng), innovations)


def op_enable_edge(child, cfg, rng, innovations):
    enabled_keys = {e.key for e in child.edges.values() if e.enabled}
    candidates = sorted((e.id for e in child.edges.values()
                         if not e.enabled and e.key not in enabled_keys))
    if not candidates:
        raise Inapplicable("no disabled edge")
    child.edges[_pick(rng, candidates)].enabled = True


def op_disable_edge(child, cfg, rng, innovations):
    candidates = sorted(e.id for e in child.edges.values() if e.enabled)
    rng.shuffle(candidates)
    for eid in candidates:
        child.edges[eid].enabled = False
        if _outputs_connected(child):
            return
        child.edges[eid].enabled = True
    raise Inapplicable("every enabled edge is needed to keep the outputs connected")


def _random_cell(rng) -> str:
    return CELL_NAMES[int(rng.integers(len(CELL_NAMES)))]


def _hidden_depth(rng) -> float:
    while True:
        d = float(rng.uniform(0.0, 1.0))
        if 0.0 < d < 1.0:
            return d


def op_add_node(child, cfg, rng, innovations):
    depth = _hidden_depth(rng)
    live = _live(child)
    below = [n.id for n in live if n.depth < depth]
    above = [n.id for n in live if n.depth > depth and n.kind != "input"]
    node = _new_node(innovations.node_id(child), "hidden", _random_cell(rng), depth, rng)
    child.nodes[node.id] = node
    sources = [s for s in below if rng.random() < 0.5] or [_pick(rng, below)]
    targets = [t for t in above if rng.random() < 0.5] or [_pick(rng, above)]
    for s in sources:
        _add_edge(child, (s, node.id, 0), _fresh_weight(rng), innovations)
    for t in targets:
        _add_edge(child, (node.id, t, 0), _fresh_weight(rng), innovations)


def _copy_edges_to(child, edges, new_id, side, innovations):
    for e in edges:
        key = (new_id, e.target, e.time_skip) if side == "out" else (e.source, new_id, e.time_skip)
        if child.edge_by_key(key) is None:
            _add_edge(child, key, e.weight, innovations)


def op_split_node(child, cfg, rng, innovations):
    hidden = [n for n in _live(child) if n.kind == "hidden"]
    if not hidden:
        raise Inapplicable("no hidden node to split")
    old = _pick(rng, hidden)
    ins = sorted((e for e in child.edges.values() if e.enabled and e.target == old.id
                  and e.source != old.id), key=lambda e: e.id)
    outs = sorted((e for e in child.edges.values() if e.enabled and e.source == old.id
                   and e.target != old.id), key=lambda e: e.id)
    if not ins or not outs:
        raise Inapplicable("node lacks inputs or outputs")
    halves = []
    for _ in range(2):
        node = _new_node(innovations.node_id(child), "hidden", _random_cell(rng), old.depth, rng)
        child.nodes[node.id] = node
        halves.append(node.id)
    for edges, side in ((ins, "in"), (outs, "out")):
        assign = rng.integers(0, 2, len(edges))
        for which, new_id in enumerate(halves):
            mine = [e for e, a in zip(edges, assign) if a == which] or [_pick(rng, edges)]
            _copy_edges_to(child, mine, new_id, side, innovations)
    old.enabled = False


def op_merge_node(child, cfg, rng, innovations):
    hidden = [n for n in _live(child) if n.kind == "hidden"]
    if len(hidden) < 2:
        raise Inapplicable("fewer than two hidden nodes")
    idx = rng.choice(len(hidden), 2, replace=False)
    a, b = hidden[int(idx[0])], hidden[int(idx[1])]
    depth = 0.5 * (a.depth + b.depth)
    merged = {a.id, b.id}
    node_depth = {n.id: n.depth for n in child.nodes.values()}
    ins, outs = [], []
    for e in sorted(child.edges.values(), key=lambda e: e.id):
        if not e.enabled:
            continue
        if e.target in merged and e.source not in merged:
            if e.time_skip > 0 or node_depth[e.source] < depth:
                ins.append(e)
        elif e.source in merged and e.target not in merged:
            if e.time_skip > 0 or node_depth[e.target] > depth:
                outs.append(e)
    if not any(e.time_skip == 0 for e in ins) or not any(e.time_skip == 0 for e in outs):
        raise Inapplicable("merged node would lose its feed-forward path")
    node = _new_node(innovations.node_id(child), "hidden", _random_cell(rng), depth, rng)
    child.nodes[node.id] = node
    _copy_edges_to(child, ins, node.id, "in", innovations)
    _copy_edges_to(child, outs, node.id, "out", innovations)
    a.enabled = False
    b.enabled = False


def op_enable_node(child, cfg, rng, innovations):
    candidates = sorted(n.id for n in child.nodes.values() if not n.enabled)
    if not candidates:
        raise Inapplicable("no disabled node")
    child.nodes[_pick(rng, candidates)].enabled = True


def op_disable_node(child, cfg, rng, innovations):
    candidates = sorted(n.id for n in child.nodes.values() if n.enabled and n.kind == "hidden")
    rng.shuffle(candidates)
    for nid in candidates:
        child.nodes[nid].enabled = False
        if _outputs_connected(child):
            return
        child.nodes[nid].enabled = True
    raise Inapplicable("no hidden node can be disabled without disconnecting an output")


def op_clone(child, cfg, rng, innovations):
    return None


OPS = {
    "add_edge": op_add_edge,
    "add_recurrent_edge": op_add_recurrent_edge,
    "enable_edge": op_enable_edge,
    "disable_edge": op_disable_edge,
    "add_node": op_add_node,
    "split_node": op_split_node,
    "merge_node": op_merge_node,
    "enable_node": op_enable_node,
    "disable_node": op_disable_node,
    "clone": op_clone,
}


def _start_child(parent: Genome, origin: str, parent_ids) -> Genome:
    child = parent.copy()
    child.fitness = None
    child.origin = origin
    child.parent_ids = tuple(parent_ids)
    return child


def mutate(parent: Genome, cfg: OperatorConfig, rng: np.random.Generator,
           innovations: Innovations | None = None, op: str | None = None) -> Genome:
    """Apply exactly one structural operation to a copy of ``parent``.

    An inapplicable draw is resampled up to ``cfg.max_retries`` times before
    falling back to a clone. Pass ``op`` to force a specific operation.
    """
    innovations = innovations if innovations is not None else Innovations()
    names = [name for name in MUTATION_OPS if cfg.op_weights.get(name, 0.0) > 0]
    probs = np.array([cfg.op_weights[name] for name in names])
    probs = probs / probs.sum()
    for _ in range(cfg.max_retries):
        name = op if op is not None else names[int(rng.choice(len(names), p=probs))]
        child = _start_child(parent, f"mutation:{name}", (parent.genome_id,))
        try:
            OPS[name](child, cfg, rng, innovations)
        except Inapplicable as exc:
            if op is not None:
                raise
            log.debug("mutation %s inapplicable: %s", name, exc)
            continue
        return child
    return _start_child(parent, "mutation:clone", (parent.genome_id,))


def _recombine(better, other, rng, cfg):
    if rng.random() < cfg.better_weight_probability:
        return better
    return 0.5 * (better + other)


def crossover(better_parent: Genome, other_parent: Genome, rng: np.random.Generator,
              cfg: OperatorConfig | None = None, innovations: Innovations | None = None,
              origin: str = "crossover") -> Genome:
    """Child holding all of the better parent's structure plus some of the other's.

    Shared components take the better parent's value or the mean of both; structure
    only the other parent has is included with ``cfg.inclusion_probability``.
    """
    cfg = cfg if cfg is not None else OperatorConfig()
    innovations = innovations if innovations is not None else Innovations()
    if (better_parent.input_names != other_parent.input_names
            or better_parent.output_names != other_parent.output_names):
        raise ContractError("crossover parents have different input/output parameters")
    child = _start_child(better_parent, origin, (better_parent.genome_id, other_parent.genome_id))
    child.next_node_id = max(better_parent.next_node_id, other_parent.next_node_id)
    child.next_edge_id = max(better_parent.next_edge_id, other_parent.next_edge_id)

    for nid in sorted(other_parent.nodes):
        theirs = other_parent.nodes[nid]
        mine = child.nodes.get(nid)
        if mine is not None:
            if mine.cell == theirs.cell:
                mine.params = _recombine(mine.params, theirs.params, rng, cfg)
        elif rng.random() < cfg.inclusion_probability:
            child.nodes[nid] = theirs.copy()

    own_keys = {e.key: e for e in child.edges.values()}
    for e in sorted(other_parent.edges.values(), key=lambda e: e.id):
        mine = own_keys.get(e.key)
        if mine is not None:
            mine.weight = float(_recombine(mine.weight, e.weight, rng, cfg))
            continue
        if rng.random() >= cfg.inclusion_probability:
            continue
        src, dst = child.nodes.get(e.source), child.nodes.get(e.target)
        if src is None or dst is None or (e.time_skip == 0 and not src.depth < dst.depth):
            continue
        edge = e.copy()
        if edge.id in child.edges:
            edge.id = innovations.edge_id(child)
        child.edges[edge.id] = edge
        own_keys[edge.key] = edge
    innovations.observe(child)
    return child


def inherit_weights(child: Genome, parents, rng: np.random.Generator | None = None) -> Genome:
    """Copy trained values onto ``child`` from the first parent sharing each component.

    Edges match on (source, target, time skip), nodes on id and cell kind; anything
    without a match is re-drawn from U(-0.5, 0.5).
    """
    rng = rng if rng is not None else np.random.default_rng()
    child = child.copy()
    for e in child.edges.values():
        for p in parents:
            match = p.edge_by_key(e.key)
            if match is not None:
                e.weight = match.weight
                break
        else:
            e.weight = _fresh_weight(rng)
    for n in child.nodes.values():
        for p in parents:
            match = p.nodes.get(n.id)
            if match is not None and match.cell == n.cell:
                n.params = match.params.copy()
                break
        else:
            n.params = _new_node(n.id, n.kind, n.cell, n.depth, rng).params
    return child


def inheritance_counts(child: Genome, parents) -> tuple[int, int]:
    """(scalars matching some parent's component, scalars without any parent counterpart)."""
    parent_items = [p.weight_items() for p in parents]
    inherited = fresh = 0
    for key in child.weight_items():
        if any(key in items for items in parent_items):
            inherited += 1
        else:
            fresh += 1
    return inherited, fresh
