"""The online generation loop.

Each generation lasts ``p`` stream steps. While the current global best genome
forecasts the arriving subsequence one step at a time, the coordinator breeds
offspring from the island elites, a pool of worker threads trains and scores
them, and the next elites are selected. The finished subsequence then joins
the historical pool that later generations train and validate on.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import logging
import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from onenas import genome as genome_mod
from onenas.data_io import OnlineNormalizer, StreamReader, TimeSeries
from onenas.errors import ContractError, OneNasError
from onenas.evo_ops import OperatorConfig
from onenas.genome import Genome, seed_genome
from onenas.population import (
    PopulationState,
    extinction_due,
    generate_offspring,
    note_selection,
    rank_islands,
    repopulate,
    select_elite,
    update_global_best,
)
from onenas.rnn_exec import RESCALE_ACTIONS, Subsequence, evaluate, run_network, stack, train_weights, write_back

log = logging.getLogger(__name__)


class ConfigError(OneNasError, ValueError):
    pass


@dataclass
class EngineConfig:
    p: int = 25
    num_train_sets: int = 600
    num_validation_sets: int = 100
    islands: int = 10
    elite_capacity: int = 5
    generated_per_island: int = 10
    extinct_freq: int = 200
    epochs: int = 10
    noise_epochs: int = 5
    noise_fraction: float = 0.10
    mutation_rate: float = 0.3
    intra_crossover_rate: float = 0.3
    inter_crossover_rate: float = 0.4
    learning_rate: float = 0.001
    momentum: float = 0.9
    workers: int = 1
    seed: int = 0
    generations: int = 2000
    mode: str = "replay"
    pace_ms: float = 0.0
    checkpoint_every: int = 0
    data: str = ""
    target: str = ""
    inputs: list = field(default_factory=list)

    def __post_init__(self):
        problems = []
        if self.p < 2:
            problems.append("p must be >= 2")
        if self.num_validation_sets < 1:
            problems.append("num_validation_sets must be >= 1")
        if self.num_train_sets < 1:
            problems.append("num_train_sets must be >= 1")
        if not 0 <= self.noise_epochs <= self.epochs:
            problems.append("need 0 <= noise_epochs <= epochs")
        if self.workers < 1:
            problems.append("workers must be >= 1")
        if self.islands < 1 or self.elite_capacity < 1 or self.generated_per_island < 1:
            problems.append("islands, elite_capacity and generated_per_island must be >= 1")
        if self.extinct_freq < 0 or self.extinct_freq == 1:
            problems.append("extinct_freq must be 0 (disabled) or >= 2")
        if self.generations < 0:
            problems.append("generations must be >= 0")
        if self.mode not in ("replay", "paced"):
            problems.append("mode must be 'replay' or 'paced'")
        if self.noise_fraction < 0 or self.pace_ms < 0:
            problems.append("noise_fraction and pace_ms must be non-negative")
        if problems:
            raise ConfigError("; ".join(problems))
        self.operators()

    def operators(self) -> OperatorConfig:
        try:
            return OperatorConfig(self.mutation_rate, self.intra_crossover_rate,
                                  self.inter_crossover_rate)
        except ContractError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_mapping(cls, values: dict) -> "EngineConfig":
        """Build from flat key/value pairs, rejecting unknown keys and wrong types."""
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - set(fields))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        defaults = cls()
        typed = {}
        for key, value in values.items():
            expected = type(getattr(defaults, key))
            if expected is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
                raise ConfigError(f"config key {key!r} expects {expected.__name__}, "
                                  f"got {type(value).__name__}")
            typed[key] = value
        return cls(**typed)

    @classmethod
    def single_population(cls, **overrides) -> "EngineConfig":
        base = dict(islands=1, elite_capacity=50, generated_per_island=100, extinct_freq=0,
                    mutation_rate=0.4, intra_crossover_rate=0.6, inter_crossover_rate=0.0)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path) -> EngineConfig:
    import tomli

    path = Path(path)
    try:
        with path.open("rb") as fh:
            values = tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    nested = [k for k, v in values.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{path}: config must be flat key = value pairs, found tables {nested}")
    return EngineConfig.from_mapping(values)


def derive_seed(master: int, *keys: int) -> int:
    """Stable 32-bit seed from a master seed and integer keys (independent of thread/worker)."""
    return int(np.random.SeedSequence([int(master) % 2**32, *[int(k) % 2**32 for k in keys]])
               .generate_state(1)[0])


# ------------------------------------------------------------------ data pool


class HistoricalPool:
    """Append-only store of finished subsequences, kept packed for the kernels."""

    def __init__(self):
        self.subsequences: list[Subsequence] = []
        self._X: np.ndarray | None = None
        self._Y: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.subsequences)

    def append(self, sub: Subsequence) -> None:
        if self.subsequences:
            last = self.subsequences[-1]
            if sub.origin_index <= last.origin_index:
                raise ContractError("subsequences must be appended in stream order")
            if sub.inputs.shape != last.inputs.shape:
                raise ContractError("all pooled subsequences must share one shape")
        n = len(self.subsequences)
        if self._X is None or n == len(self._X):
            cap = max(16, 2 * n)
            X = np.empty((cap,) + sub.inputs.shape)
            Y = np.empty((cap,) + sub.target_matrix().shape)
            if n:
                X[:n] = self._X[:n]
                Y[:n] = self._Y[:n]
            self._X, self._Y = X, Y
        self._X[n] = sub.inputs
        self._Y[n] = sub.target_matrix()
        self.subsequences.append(sub)

    def arrays(self, indices) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(indices, dtype=np.int64)
        return np.ascontiguousarray(self._X[idx]), np.ascontiguousarray(self._Y[idx])


def validation_indices(pool_size: int, num_validation_sets: int) -> list[int]:
    if pool_size < 1:
        raise ContractError("historical pool is empty")
    return list(range(max(0, pool_size - num_validation_sets), pool_size))


def training_indices(pool_size: int, num_train_sets: int, num_validation_sets: int,
                     rng: np.random.Generator) -> list[int]:
    """Random draw without replacement from the pool minus its validation tail.

    When the tail covers the whole pool (cold start) the draw uses the whole pool.
    """
    if pool_size < 1:
        raise ContractError("historical pool is empty")
    available = pool_size - num_validation_sets
    if available <= 0:
        log.debug("cold start: pool of %d within the validation tail, training on it", pool_size)
        available = pool_size
    k = min(num_train_sets, available)
    return sorted(int(i) for i in rng.choice(available, size=k, replace=False))


def get_validation_data(pool: HistoricalPool, num_validation_sets: int) -> list[Subsequence]:
    return [pool.subsequences[i] for i in validation_indices(len(pool), num_validation_sets)]


def get_training_data(pool: HistoricalPool, num_train_sets: int, num_validation_sets: int,
                      rng: np.random.Generator) -> list[Subsequence]:
    idx = training_indices(len(pool), num_train_sets, num_validation_sets, rng)
    return [pool.subsequences[i] for i in idx]


# ------------------------------------------------------------------ training


@dataclass
class TrainResult:
    genome: Genome
    epoch_losses: np.ndarray
    rescale_counts: dict[str, int]
    ok: bool


def train_genome(genome: Genome, train_sets, epochs: int = 10, noise_epochs: int = 5,
                 noise_fraction: float = 0.10, lr: float = 0.001, mu: float = 0.9,
                 seed: int = 0) -> TrainResult:
    """BPTT + Nesterov on every training subsequence each epoch, order reshuffled per epoch.

    The last ``noise_epochs`` epochs see inputs with added zero-mean Gaussian
    noise (std = ``noise_fraction`` x the subsequence's per-parameter std).
    Velocity starts at zero. Returns a trained copy; the input genome is untouched.
    """
    X, Y = stack(train_sets) if not isinstance(train_sets, tuple) else train_sets
    theta, losses, counts, ok = train_weights(
        genome, X, Y, epochs=epochs, noise_epochs=noise_epochs, noise_fraction=noise_fraction,
        lr=lr, mu=mu, seed=seed)
    trained = genome.copy()
    if ok:
        write_back(trained, theta)
    return TrainResult(trained, losses, dict(zip(RESCALE_ACTIONS, map(int, counts))), bool(ok))


@dataclass
class WorkerOutcome:
    genome_id: int
    fitness: float
    theta: np.ndarray | None = None
    rescale_counts: dict[str, int] | None = None
    failed: bool = False
    error: str = ""
    worker: int = -1
    started: float = 0.0
    finished: float = 0.0


def worker_pool_train(genomes: Sequence[Genome], work: Callable[[Genome], WorkerOutcome],
                      workers: int) -> list[WorkerOutcome]:
    """Run ``work`` once per genome on ``workers`` threads pulling from a shared index.

    Workers take the next untouched genome as soon as they finish one, so nobody
    idles while work remains. Returns after every genome is done (the barrier),
    outcomes in input order. An exception marks that genome failed.
    """
    if not genomes:
        return []
    ticket = itertools.count()
    outcomes: list[WorkerOutcome | None] = [None] * len(genomes)

    def worker(wid: int) -> None:
        while True:
            i = next(ticket)
            if i >= len(genomes):
                return
            started = time.perf_counter()
            try:
                out = work(genomes[i])
            except Exception as exc:  # a crashed task must not take the pool down
                log.warning("genome %d failed in worker %d: %s", genomes[i].genome_id, wid, exc)
                out = WorkerOutcome(genomes[i].genome_id, math.inf, failed=True, error=repr(exc))
            out.worker, out.started, out.finished = wid, started, time.perf_counter()
            outcomes[i] = out

    threads = [threading.Thread(target=worker, args=(w,), daemon=True)
               for w in range(min(workers, len(genomes)))]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    return outcomes


# ------------------------------------------------------------------ prediction context


@dataclass
class WindowResult:
    subsequence: Subsequence
    target_indices: list[int]
    predictions: list[float]
    naive: list[float]
    actuals: list[float]
    max_read_at_emit: list[int]
    finished: float = 0.0


class PredictionContext:
    """Sole reader of the stream: normalizes rows as they arrive and forecasts each next step."""

    def __init__(self, series: TimeSeries, input_cols: Sequence[int], p: int,
                 pace_seconds: float = 0.0):
        self.reader = StreamReader(series.values)
        self.normalizer = OnlineNormalizer(series.values.shape[1])
        self.input_cols = list(input_cols)
        self.target_col = series.target_index
        self.p = p
        self.pace = pace_seconds

    def can_run_window(self) -> bool:
        return self.reader.remaining >= self.p + 1

    def run_window(self, genome: Genome) -> WindowResult:
        start = self.reader.position
        rows, preds, naive, targets, audit = [], [], [], [], []
        for _ in range(self.p):
            if self.pace:
                time.sleep(self.pace)
            raw = self.reader.read()
            rows.append(self.normalizer.update(raw))
            normed = np.array(rows)
            out = run_network(genome, normed[:, self.input_cols])[-1, 0]
            preds.append(self.normalizer.denormalize(out, self.target_col))
            naive.append(float(raw[self.target_col]))
            targets.append(self.reader.position)
            audit.append(self.reader.max_index_read)
        block = np.array(rows)
        raw_block = self.reader.values[start:start + self.p + 1, self.target_col]
        actuals = [float(v) for v in raw_block[1:]]
        actuals[-1] = float(self.reader.peek()[self.target_col])
        sub = Subsequence(block[:, self.input_cols], block[:, self.target_col].copy(), start)
        return WindowResult(sub, targets, preds, naive, actuals, audit, time.perf_counter())


# ------------------------------------------------------------------ run


@dataclass
class GenerationReport:
    generation: int
    window_start: int
    target_indices: list[int]
    predictions: list[float]
    naive_predictions: list[float]
    actuals: list[float]
    squared_errors: list[float]
    naive_squared_errors: list[float]
    max_read_at_emit: list[int]
    global_best_id: int
    global_best_fitness: float | None
    global_best_nodes: int
    global_best_edges: int
    island_ranking: list[int]
    island_best_fitness: list[float | None]
    repopulated_island: int | None
    rescale_counts: dict[str, int]
    failed_genomes: int
    pool_size: int
    evolve_seconds: float = 0.0
    barrier_time: float = 0.0
    deadline_miss: bool = False

    TIMING_FIELDS = ("evolve_seconds", "barrier_time", "deadline_miss")

    def log_record(self) -> dict:
        """The deterministic part, written to generations.jsonl."""
        rec = dataclasses.asdict(self)
        for k in self.TIMING_FIELDS:
            rec.pop(k)
        return _json_safe(rec)

    def timing_record(self) -> dict:
        return {"generation": self.generation,
                **{k: getattr(self, k) for k in self.TIMING_FIELDS}}


def _json_safe(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


@dataclass
class RunResult:
    config: EngineConfig
    reports: list[GenerationReport]
    state: PopulationState
    timings: list[dict] = field(default_factory=list)

    def series(self, name: str) -> np.ndarray:
        if not self.reports:
            return np.array([])
        return np.concatenate([np.asarray(getattr(r, name), dtype=np.float64) for r in self.reports])

    @property
    def predictions(self) -> np.ndarray:
        return self.series("predictions")

    @property
    def naive_predictions(self) -> np.ndarray:
        return self.series("naive_predictions")

    @property
    def actuals(self) -> np.ndarray:
        return self.series("actuals")

    @property
    def target_indices(self) -> np.ndarray:
        return self.series("target_indices").astype(np.int64)

    @property
    def repopulations(self) -> list[tuple[int, int]]:
        return list(self.state.repopulations)


def _input_columns(series: TimeSeries, cfg: EngineConfig) -> list[int]:
    names = cfg.inputs or list(series.names)
    missing = [n for n in names if n not in series.names]
    if missing:
        raise ConfigError(f"input columns {missing} not in data columns {list(series.names)}")
    return [series.names.index(n) for n in names]


class Engine:
    """One online evolution run over a recorded stream. Use :func:`run` for the common case."""

    def __init__(self, series: TimeSeries, cfg: EngineConfig):
        self.series = series
        self.cfg = cfg
        self.ops = cfg.operators()
        self.input_cols = _input_columns(series, cfg)
        names = [series.names[i] for i in self.input_cols]
        seed = seed_genome(names, [series.target], np.random.default_rng(derive_seed(cfg.seed, 0)))
        self.state = PopulationState.create(seed, cfg.islands, cfg.elite_capacity,
                                            cfg.generated_per_island, cfg.extinct_freq)
        self.pool = HistoricalPool()
        pace = cfg.pace_ms / 1000.0 if cfg.mode == "paced" else 0.0
        self.context = PredictionContext(series, self.input_cols, cfg.p, pace)

    # -- one evolution step (coordinator side) --

    def _work(self, generation: int, trained: set[int], Xv: np.ndarray, Yv: np.ndarray):
        cfg, pool = self.cfg, self.pool

        def work(g: Genome) -> WorkerOutcome:
            if g.genome_id not in trained:
                return WorkerOutcome(g.genome_id, evaluate(g, Xv, Yv))
            gseed = derive_seed(cfg.seed, generation, g.genome_id)
            idx = training_indices(len(pool), cfg.num_train_sets, cfg.num_validation_sets,
                                   np.random.default_rng(gseed))
            X, Y = pool.arrays(idx)
            theta, _, counts, ok = train_weights(
                g, X, Y, epochs=cfg.epochs, noise_epochs=cfg.noise_epochs,
                noise_fraction=cfg.noise_fraction, lr=cfg.learning_rate, mu=cfg.momentum,
                seed=gseed)
            counts = dict(zip(RESCALE_ACTIONS, map(int, counts)))
            if not ok:
                return WorkerOutcome(g.genome_id, math.inf, rescale_counts=counts, failed=True,
                                     error="non-finite value during training")
            return WorkerOutcome(g.genome_id, evaluate(g, Xv, Yv, theta), theta, counts)

        return work

    def evolve(self, t: int) -> dict:
        cfg, state = self.cfg, self.state
        repopulated = None
        if extinction_due(t, cfg.extinct_freq):
            repopulated = rank_islands(state)[-1]
            rng = np.random.default_rng(derive_seed(cfg.seed, t, repopulated, 2))
            repopulate(state.island(repopulated), state.global_best, self.ops, rng, state, t)
            log.info("generation %d: island %d repopulated from genome %d", t, repopulated,
                     state.global_best.genome_id)
        for island in state.islands:
            if island.id != repopulated:
                rng = np.random.default_rng(derive_seed(cfg.seed, t, island.id, 1))
                island.generated = generate_offspring(island, self.ops, rng, state, t)

        Xv, Yv = self.pool.arrays(validation_indices(len(self.pool), cfg.num_validation_sets))
        offspring = [g for isl in state.islands for g in isl.generated]
        elites = [g for isl in state.islands for g in isl.elite]
        trained = {g.genome_id for g in offspring}
        started = time.perf_counter()
        outcomes = worker_pool_train(offspring + elites, self._work(t, trained, Xv, Yv),
                                     cfg.workers)
        barrier = time.perf_counter()

        counts = dict.fromkeys(RESCALE_ACTIONS, 0)
        failed = 0
        for g, out in zip(offspring + elites, outcomes):
            if out.theta is not None:
                write_back(g, out.theta)
            g.fitness = out.fitness if math.isfinite(out.fitness) else math.inf
            failed += out.failed or not math.isfinite(out.fitness)
            for k, v in (out.rescale_counts or {}).items():
                counts[k] += v

        for island in state.islands:
            island.elite = select_elite(island.elite, island.generated, island.elite_capacity)
            island.generated = []
            note_selection(island)
        update_global_best(state)
        state.generation = t
        return {"repopulated": repopulated, "counts": counts, "failed": failed,
                "barrier": barrier, "train_seconds": barrier - started,
                "workers": [(o.worker, o.genome_id, o.finished - o.started) for o in outcomes]}

    # -- the generation loop --

    def run(self, out_dir=None) -> RunResult:
        cfg = self.cfg
        writer = _OutputWriter(out_dir, cfg) if out_dir is not None else None
        reports: list[GenerationReport] = []
        timings: list[dict] = []
        needed = (cfg.generations + 1) * cfg.p + 1
        if len(self.series) < needed:
            log.warning("stream has %d rows, %d generations need %d; stopping early",
                        len(self.series), cfg.generations, needed)
        try:
            for t in range(cfg.generations + 1):
                if not self.context.can_run_window():
                    break
                report, timing = self._generation(t)
                reports.append(report)
                timings.append(timing)
                if writer:
                    writer.generation(report, timing, self.state, t)
        finally:
            if writer:
                writer.close(self.state)
        return RunResult(cfg, reports, self.state, timings)

    def _generation(self, t: int) -> tuple[GenerationReport, dict]:
        cfg = self.cfg
        predictor = self.state.global_best.copy()
        box: dict = {}

        def predict():
            try:
                box["window"] = self.context.run_window(predictor)
            except BaseException as exc:  # re-raised on the coordinator
                box["error"] = exc

        thread = threading.Thread(target=predict, name=f"predict-{t}", daemon=True)
        started = time.perf_counter()
        thread.start()
        info = self.evolve(t) if t > 0 else {"repopulated": None, "failed": 0,
                                              "counts": dict.fromkeys(RESCALE_ACTIONS, 0),
                                              "barrier": started, "train_seconds": 0.0,
                                              "workers": []}
        evolve_seconds = time.perf_counter() - started
        thread.join()
        if "error" in box:
            raise box["error"]
        window: WindowResult = box["window"]
        self.pool.append(window.subsequence)

        best = self.state.global_best
        ranking = rank_islands(self.state) if t > 0 else [isl.id for isl in self.state.islands]
        actual = np.asarray(window.actuals)
        report = GenerationReport(
            generation=t,
            window_start=window.subsequence.origin_index,
            target_indices=window.target_indices,
            predictions=[float(v) for v in window.predictions],
            naive_predictions=window.naive,
            actuals=window.actuals,
            squared_errors=[float(v) for v in (np.asarray(window.predictions) - actual) ** 2],
            naive_squared_errors=[float(v) for v in (np.asarray(window.naive) - actual) ** 2],
            max_read_at_emit=window.max_read_at_emit,
            global_best_id=best.genome_id,
            global_best_fitness=best.fitness,
            global_best_nodes=sum(n.enabled for n in best.nodes.values()),
            global_best_edges=len(best.enabled_edges()),
            island_ranking=ranking,
            island_best_fitness=[isl.best_fitness for isl in self.state.islands],
            repopulated_island=info["repopulated"],
            rescale_counts=info["counts"],
            failed_genomes=info["failed"],
            pool_size=len(self.pool),
            evolve_seconds=evolve_seconds,
            barrier_time=info["barrier"] - started,
            deadline_miss=bool(self.context.pace) and evolve_seconds > cfg.p * self.context.pace,
        )
        if report.deadline_miss:
            log.warning("generation %d: evolution took %.3fs, longer than the window", t,
                        evolve_seconds)
        timing = {**report.timing_record(), "train_seconds": info["train_seconds"],
                  "window_seconds": window.finished - started, "assignments": info["workers"]}
        log.info("generation %d: best %d fitness %s, window mse %.6g", t, best.genome_id,
                 best.fitness, float(np.mean(report.squared_errors)))
        return report, timing


def run(series: TimeSeries, cfg: EngineConfig, out_dir=None) -> RunResult:
    """Evolve and forecast online over ``series`` and optionally write its logs under ``out_dir``."""
    return Engine(series, cfg).run(out_dir)


def _num(x: float) -> str:
    return repr(float(x))


class _OutputWriter:
    """generations.jsonl (deterministic), timings.jsonl, predictions.csv, checkpoints."""

    def __init__(self, out_dir, cfg: EngineConfig):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        (self.dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        self.gen = (self.dir / "generations.jsonl").open("w", encoding="utf-8")
        self.tim = (self.dir / "timings.jsonl").open("w", encoding="utf-8")
        self.pred = (self.dir / "predictions.csv").open("w", encoding="utf-8", newline="")
        self.pred.write("step_index,generation,method,actual,predicted\n")

    def generation(self, report: GenerationReport, timing: dict, state: PopulationState,
                   t: int) -> None:
        self.gen.write(json.dumps(report.log_record(), sort_keys=True) + "\n")
        self.tim.write(json.dumps(_json_safe(timing), sort_keys=True) + "\n")
        for method, preds in (("onenas", report.predictions), ("naive", report.naive_predictions)):
            for idx, a, p in zip(report.target_indices, report.actuals, preds):
                self.pred.write(f"{idx},{t},{method},{_num(a)},{_num(p)}\n")
        every = self.cfg.checkpoint_every
        if every and t % every == 0:
            ckpt = self.dir / "checkpoints"
            ckpt.mkdir(exist_ok=True)
            (ckpt / f"generation_{t:06d}.genome").write_text(genome_mod.dumps(state.global_best))

    def close(self, state: PopulationState) -> None:
        for fh in (self.gen, self.tim, self.pred):
            fh.close()
        (self.dir / "best.genome").write_text(genome_mod.dumps(state.global_best))
