"""Genome encoding of an evolvable recurrent network.

Nodes carry a continuous depth in [0, 1]: inputs sit at 0, outputs at 1 and
hidden nodes strictly between. Feed-forward edges (time skip 0) must go from a
shallower to a deeper node, so each time step is an acyclic graph; recurrent
edges (time skip 1..10) may connect any pair of nodes.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from onenas.cells import CELL_NAMES, cell_kind, new_cell_params
from onenas.errors import ContractError

CELL_KINDS = CELL_NAMES
NODE_KINDS = ("input", "output", "hidden")
MAX_TIME_SKIP = 10
INIT_LOW, INIT_HIGH = -0.5, 0.5
FORMAT_HEADER = "onenas-genome v1"


@dataclass
class NodeGene:
    id: int
    kind: str
    cell: str
    depth: float
    params: np.ndarray
    enabled: bool = True

    def copy(self) -> "NodeGene":
        return NodeGene(self.id, self.kind, self.cell, self.depth, self.params.copy(), self.enabled)


@dataclass
class EdgeGene:
    id: int
    source: int
    target: int
    weight: float
    time_skip: int = 0
    enabled: bool = True

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.source, self.target, self.time_skip)

    @property
    def recurrent(self) -> bool:
        return self.time_skip > 0

    def copy(self) -> "EdgeGene":
        return EdgeGene(self.id, self.source, self.target, self.weight, self.time_skip, self.enabled)


class Innovations:
    """Run-wide id source so that node ids mean the same thing in every genome of a run."""

    def __init__(self, next_node_id: int = 0, next_edge_id: int = 0):
        self.next_node_id = next_node_id
        self.next_edge_id = next_edge_id

    def node_id(self, genome: "Genome") -> int:
        nid = max(self.next_node_id, genome.next_node_id)
        self.next_node_id = nid + 1
        genome.next_node_id = nid + 1
        return nid

    def edge_id(self, genome: "Genome") -> int:
        eid = max(self.next_edge_id, genome.next_edge_id)
        self.next_edge_id = eid + 1
        genome.next_edge_id = eid + 1
        return eid

    def observe(self, genome: "Genome") -> None:
        self.next_node_id = max(self.next_node_id, genome.next_node_id)
        self.next_edge_id = max(self.next_edge_id, genome.next_edge_id)


@dataclass
class Genome:
    nodes: dict[int, NodeGene]
    edges: dict[int, EdgeGene]
    input_names: tuple[str, ...]
    output_names: tuple[str, ...]
    fitness: float | None = None
    generation_born: int = 0
    island_id: int = 0
    next_node_id: int = 0
    next_edge_id: int = 0
    genome_id: int = 0
    origin: str = "seed"
    parent_ids: tuple[int, ...] = ()

    def copy(self) -> "Genome":
        return Genome(
            nodes={k: n.copy() for k, n in self.nodes.items()},
            edges={k: e.copy() for k, e in self.edges.items()},
            input_names=self.input_names,
            output_names=self.output_names,
            fitness=self.fitness,
            generation_born=self.generation_born,
            island_id=self.island_id,
            next_node_id=self.next_node_id,
            next_edge_id=self.next_edge_id,
            genome_id=self.genome_id,
            origin=self.origin,
            parent_ids=self.parent_ids,
        )

    def __deepcopy__(self, memo):
        return self.copy()

    @property
    def input_nodes(self) -> list[NodeGene]:
        return sorted((n for n in self.nodes.values() if n.kind == "input"), key=lambda n: n.id)

    @property
    def output_nodes(self) -> list[NodeGene]:
        return sorted((n for n in self.nodes.values() if n.kind == "output"), key=lambda n: n.id)

    @property
    def hidden_nodes(self) -> list[NodeGene]:
        return sorted((n for n in self.nodes.values() if n.kind == "hidden"), key=lambda n: n.id)

    def enabled_edges(self) -> list[EdgeGene]:
        return [e for e in self.edges.values() if e.enabled]

    def edge_by_key(self, key) -> EdgeGene | None:
        for e in self.edges.values():
            if e.key == tuple(key):
                return e
        return None

    def size(self) -> tuple[int, int]:
        """(enabled nodes, enabled edges)."""
        return (sum(n.enabled for n in self.nodes.values()),
                sum(e.enabled for e in self.edges.values()))

    def active_nodes(self) -> set[int]:
        """Nodes that take part in execution.

        Inputs and outputs always do; an enabled hidden node only when an
        enabled path leads to it from an input and from it to an output.
        """
        live = {n.id for n in self.nodes.values() if n.enabled}
        edges = [e for e in self.edges.values()
                 if e.enabled and e.source in live and e.target in live]
        fwd_adj: dict[int, list[int]] = {}
        bwd_adj: dict[int, list[int]] = {}
        for e in edges:
            fwd_adj.setdefault(e.source, []).append(e.target)
            bwd_adj.setdefault(e.target, []).append(e.source)

        def reach(starts, adj):
            seen = set(starts)
            stack = list(starts)
            while stack:
                for nxt in adj.get(stack.pop(), ()):
                    if nxt not in seen:
                        seen.add(nxt)
                        stack.append(nxt)
            return seen

        io = [n.id for n in self.nodes.values() if n.kind != "hidden"]
        forward = reach([n.id for n in self.input_nodes], fwd_adj)
        backward = reach([n.id for n in self.output_nodes], bwd_adj)
        return (forward & backward) | set(io)

    def weight_items(self) -> dict[tuple, float]:
        """Every trainable scalar keyed by a structural address (used for inheritance checks)."""
        items: dict[tuple, float] = {}
        for e in self.edges.values():
            items[("edge",) + e.key] = e.weight
        for n in self.nodes.values():
            for i, v in enumerate(n.params):
                items[("node", n.id, n.cell, i)] = float(v)
        return items


def _new_node(node_id: int, kind: str, cell: str, depth: float, rng) -> NodeGene:
    return NodeGene(node_id, kind, cell, depth, new_cell_params(cell, rng, INIT_LOW, INIT_HIGH))


def seed_genome(input_names: Sequence[str], output_names: Sequence[str],
                rng: np.random.Generator | None = None) -> Genome:
    """Minimal genome: every input wired straight to every output, nothing hidden."""
    input_names = tuple(input_names)
    output_names = tuple(output_names)
    if not input_names or not output_names:
        raise ContractError("seed genome needs at least one input and one output name")
    rng = rng if rng is not None else np.random.default_rng()
    nodes: dict[int, NodeGene] = {}
    for i, _ in enumerate(input_names):
        nodes[i] = _new_node(i, "input", "simple", 0.0, rng)
    for j, _ in enumerate(output_names):
        nid = len(input_names) + j
        nodes[nid] = _new_node(nid, "output", "simple", 1.0, rng)
    edges: dict[int, EdgeGene] = {}
    for i in range(len(input_names)):
        for j in range(len(output_names)):
            eid = len(edges)
            edges[eid] = EdgeGene(eid, i, len(input_names) + j,
                                  float(rng.uniform(INIT_LOW, INIT_HIGH)))
    return Genome(nodes, edges, input_names, output_names,
                  next_node_id=len(nodes), next_edge_id=len(edges))


def validate(genome: Genome) -> list[str]:
    """List every violated structural invariant. An empty list means the genome is valid."""
    problems: list[str] = []
    nodes = genome.nodes
    inputs = [n for n in nodes.values() if n.kind == "input"]
    outputs = [n for n in nodes.values() if n.kind == "output"]
    if len(inputs) != len(genome.input_names):
        problems.append(f"arity: {len(inputs)} input nodes for {len(genome.input_names)} inputs")
    if len(outputs) != len(genome.output_names):
        problems.append(f"arity: {len(outputs)} output nodes for {len(genome.output_names)} outputs")

    for nid, n in nodes.items():
        if nid != n.id:
            problems.append(f"node key {nid} holds node {n.id}")
        if n.kind not in NODE_KINDS:
            problems.append(f"node {n.id}: unknown kind {n.kind!r}")
            continue
        if n.cell not in CELL_NAMES:
            problems.append(f"node {n.id}: unknown cell {n.cell!r}")
            continue
        if n.kind == "input" and n.depth != 0.0:
            problems.append(f"depth: input node {n.id} at depth {n.depth}")
        elif n.kind == "output" and n.depth != 1.0:
            problems.append(f"depth: output node {n.id} at depth {n.depth}")
        elif n.kind == "hidden" and not 0.0 < n.depth < 1.0:
            problems.append(f"depth: hidden node {n.id} at depth {n.depth}")
        if n.kind != "hidden" and (not n.enabled or n.cell != "simple"):
            problems.append(f"io node {n.id} must be an enabled simple neuron")
        if np.shape(n.params) != (cell_kind(n.cell).parameter_count,):
            problems.append(f"node {n.id}: {np.shape(n.params)} params for {n.cell}")
        elif not np.all(np.isfinite(n.params)):
            problems.append(f"non-finite parameter on node {n.id}")
        if n.id >= genome.next_node_id:
            problems.append(f"node id {n.id} not below counter {genome.next_node_id}")

    seen_keys: set[tuple[int, int, int]] = set()
    for eid, e in genome.edges.items():
        if eid != e.id:
            problems.append(f"edge key {eid} holds edge {e.id}")
        if e.id >= genome.next_edge_id:
            problems.append(f"edge id {e.id} not below counter {genome.next_edge_id}")
        src, dst = nodes.get(e.source), nodes.get(e.target)
        if src is None or dst is None:
            problems.append(f"edge {e.id} references a missing node")
            continue
        if not math.isfinite(e.weight):
            problems.append(f"non-finite parameter on edge {e.id}")
        if not 0 <= e.time_skip <= MAX_TIME_SKIP:
            problems.append(f"edge {e.id}: time skip {e.time_skip} out of range")
        if dst.kind == "input":
            problems.append(f"edge {e.id} targets input node {dst.id}")
        if e.time_skip == 0 and not src.depth < dst.depth:
            problems.append(f"acyclicity: feed-forward edge {e.id} from depth {src.depth} "
                            f"to depth {dst.depth}")
        if e.enabled:
            if e.key in seen_keys:
                problems.append(f"duplicate enabled edge {e.key}")
            seen_keys.add(e.key)
    return problems


def structural_hash(genome: Genome) -> int:
    """Hash of topology only; weights, fitness and storage order are ignored."""
    node_part = sorted((n.id, n.kind, n.cell, repr(float(n.depth)), n.enabled)
                       for n in genome.nodes.values())
    edge_part = sorted((e.source, e.target, e.time_skip, e.enabled) for e in genome.edges.values())
    blob = repr((genome.input_names, genome.output_names, node_part, edge_part)).encode()
    return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "big")


def _f(x: float) -> str:
    return format(float(x), ".17g")


def dumps(genome: Genome) -> str:
    """Serialize to the line-oriented text format; weights round-trip exactly."""
    lines = [
        FORMAT_HEADER,
        "inputs " + json.dumps(list(genome.input_names)),
        "outputs " + json.dumps(list(genome.output_names)),
        "meta " + json.dumps({
            "fitness": None if genome.fitness is None else _f(genome.fitness),
            "generation_born": genome.generation_born,
            "island_id": genome.island_id,
            "next_node_id": genome.next_node_id,
            "next_edge_id": genome.next_edge_id,
            "genome_id": genome.genome_id,
            "origin": genome.origin,
            "parent_ids": list(genome.parent_ids),
        }, sort_keys=True),
    ]
    for n in sorted(genome.nodes.values(), key=lambda n: n.id):
        lines.append(" ".join(["node", str(n.id), n.kind, n.cell, _f(n.depth), str(int(n.enabled))]
                              + [_f(v) for v in n.params]))
    for e in sorted(genome.edges.values(), key=lambda e: e.id):
        lines.append(" ".join(["edge", str(e.id), str(e.source), str(e.target), str(e.time_skip),
                               str(int(e.enabled)), _f(e.weight)]))
    return "\n".join(lines) + "\n"


def loads(text: str) -> Genome:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != FORMAT_HEADER:
        raise ContractError("not a genome file (bad header)")
    inputs: Iterable[str] = ()
    outputs: Iterable[str] = ()
    meta: dict = {}
    nodes: dict[int, NodeGene] = {}
    edges: dict[int, EdgeGene] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        tag, _, rest = line.partition(" ")
        try:
            if tag == "inputs":
                inputs = json.loads(rest)
            elif tag == "outputs":
                outputs = json.loads(rest)
            elif tag == "meta":
                meta = json.loads(rest)
            elif tag == "node":
                f = rest.split()
                nid = int(f[0])
                nodes[nid] = NodeGene(nid, f[1], f[2], float(f[3]),
                                      np.array([float(v) for v in f[5:]]), bool(int(f[4])))
            elif tag == "edge":
                f = rest.split()
                eid = int(f[0])
                edges[eid] = EdgeGene(eid, int(f[1]), int(f[2]), float(f[5]), int(f[3]),
                                      bool(int(f[4])))
            else:
                raise ContractError(f"line {lineno}: unknown record {tag!r}")
        except (ValueError, IndexError) as exc:
            raise ContractError(f"line {lineno}: malformed {tag} record ({exc})") from None
    fitness = meta.get("fitness")
    return Genome(
        nodes, edges, tuple(inputs), tuple(outputs),
        fitness=None if fitness is None else float(fitness),
        generation_born=meta.get("generation_born", 0),
        island_id=meta.get("island_id", 0),
        next_node_id=meta.get("next_node_id", max(nodes, default=-1) + 1),
        next_edge_id=meta.get("next_edge_id", max(edges, default=-1) + 1),
        genome_id=meta.get("genome_id", 0),
        origin=meta.get("origin", "seed"),
        parent_ids=tuple(meta.get("parent_ids", ())),
    )

