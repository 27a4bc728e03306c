"""Time series ingestion, causal normalization, slicing and synthetic streams."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from onenas.errors import ContractError, OneNasError
from onenas.rnn_exec import Subsequence

log = logging.getLogger(__name__)


class DataError(OneNasError, ValueError):
    pass


@dataclass
class TimeSeries:
    names: tuple[str, ...]
    values: np.ndarray
    target: str
    stats: dict[str, dict[str, float]] = field(default_factory=dict)

    def __post_init__(self):
        self.names = tuple(self.names)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise DataError(f"values of shape {self.values.shape} do not match {len(self.names)} names")
        if self.target not in self.names:
            raise DataError(f"target {self.target!r} is not one of the parameters {list(self.names)}")
        if not self.stats and len(self.values):
            self.stats = {
                name: {"min": float(col.min()), "max": float(col.max()),
                       "mean": float(col.mean()), "std": float(col.std())}
                for name, col in zip(self.names, self.values.T)
            }

    @property
    def target_index(self) -> int:
        return self.names.index(self.target)

    @property
    def target_series(self) -> np.ndarray:
        return self.values[:, self.target_index]

    def __len__(self) -> int:
        return len(self.values)

    def select(self, columns: Sequence[str]) -> "TimeSeries":
        missing = [c for c in columns if c not in self.names]
        if missing:
            raise DataError(f"unknown columns {missing}")
        idx = [self.names.index(c) for c in columns]
        return TimeSeries(tuple(columns), self.values[:, idx], self.target)


def load_csv(path, target_name: str) -> TimeSeries:
    """Parse a header + numeric-body CSV. No cleaning: spikes and outliers are kept."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if target_name not in header:
            raise DataError(f"{path}: target column {target_name!r} not in header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            parsed = []
            for col, cell in zip(header, row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: column {col!r} is not numeric: {cell!r}") from None
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return TimeSeries(tuple(header), np.array(rows), target_name)


def write_csv(series: TimeSeries, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(series.names)
        for row in series.values:
            writer.writerow([format(v, ".17g") for v in row])


class OnlineNormalizer:
    """Running min-max scaling to [0, 1]; statistics only ever include rows already seen."""

    def __init__(self, n_params: int):
        self.lo = np.full(n_params, np.inf)
        self.hi = np.full(n_params, -np.inf)
        self.count = 0

    def update(self, row) -> np.ndarray:
        """Fold ``row`` into the statistics, then return its normalized value."""
        row = np.asarray(row, dtype=np.float64)
        if not np.all(np.isfinite(row)):
            raise DataError(f"non-finite value in stream row {self.count}")
        np.minimum(self.lo, row, out=self.lo)
        np.maximum(self.hi, row, out=self.hi)
        self.count += 1
        return self.normalize(row)

    def normalize(self, row) -> np.ndarray:
        row = np.asarray(row, dtype=np.float64)
        span = self.hi - self.lo
        flat = span <= 0
        out = np.where(flat, 0.5, (row - self.lo) / np.where(flat, 1.0, span))
        return out

    def denormalize(self, value, col: int) -> float:
        span = self.hi[col] - self.lo[col]
        if span <= 0:
            return float(self.lo[col])
        return float(self.lo[col] + value * span)


def normalize_online(values) -> np.ndarray:
    """Normalize a whole recorded stream row by row, exactly as the engine sees it."""
    values = np.asarray(values, dtype=np.float64)
    norm = OnlineNormalizer(values.shape[1])
    return np.array([norm.update(row) for row in values]).reshape(values.shape)


def slice_stream(stream: Iterable, p: int, target_col: int = 0,
                 input_cols: Sequence[int] | None = None, start_index: int = 0
                 ) -> Iterator[Subsequence]:
    """Consecutive non-overlapping windows of ``p`` rows; a short tail is dropped."""
    if p < 2:
        raise ContractError("subsequence length must be at least 2")
    buf: list[np.ndarray] = []
    origin = start_index
    for row in stream:
        buf.append(np.asarray(row, dtype=np.float64))
        if len(buf) == p:
            block = np.array(buf)
            inputs = block if input_cols is None else block[:, list(input_cols)]
            yield Subsequence(inputs, block[:, target_col].copy(), origin)
            origin += p
            buf = []
    if buf:
        log.info("discarding %d trailing rows shorter than a subsequence", len(buf))


class StreamReader:
    """Sequential reader over a recorded series that logs how far it has read.

    ``max_index_read`` is the causality witness: whatever a consumer computes
    after a ``read()`` can only depend on rows up to that index.
    """

    def __init__(self, values: np.ndarray):
        self.values = np.asarray(values, dtype=np.float64)
        self.position = 0

    @property
    def max_index_read(self) -> int:
        return self.position - 1

    @property
    def remaining(self) -> int:
        return len(self.values) - self.position

    def read(self) -> np.ndarray:
        if self.position >= len(self.values):
            raise EOFError("stream exhausted")
        row = self.values[self.position]
        self.position += 1
        return row

    def peek(self) -> np.ndarray:
        """The next row without consuming it (used only to score a finished forecast)."""
        if self.position >= len(self.values):
            raise EOFError("stream exhausted")
        return self.values[self.position]


# ------------------------------------------------------------- synthetic data


def noisy_sine(steps: int, seed: int = 0, period: float = 20.0, noise: float = 0.3,
               amplitude: float = 1.0, drift_period: float = 0.0) -> TimeSeries:
    """Sine wave plus i.i.d. Gaussian noise.

    Columns: ``value`` (the noisy target) and ``phase`` (a noisy cosine companion,
    giving the multivariate shape the engine is built for). A non-zero
    ``drift_period`` slowly modulates the amplitude.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(steps, dtype=np.float64)
    amp = amplitude * (1.0 + 0.5 * np.sin(2 * math.pi * t / drift_period)) if drift_period else amplitude
    angle = 2 * math.pi * t / period
    value = amp * np.sin(angle) + noise * rng.standard_normal(steps)
    phase = amp * np.cos(angle) + noise * rng.standard_normal(steps)
    return TimeSeries(("value", "phase"), np.column_stack([value, phase]), "value")


def ar2(steps: int, seed: int = 0, coefs: tuple[float, float] = (0.6, -0.3),
        noise: float = 1.0, burn_in: int = 100) -> TimeSeries:
    rng = np.random.default_rng(seed)
    x = np.zeros(steps + burn_in)
    eps = noise * rng.standard_normal(steps + burn_in)
    for i in range(2, steps + burn_in):
        x[i] = coefs[0] * x[i - 1] + coefs[1] * x[i - 2] + eps[i]
    return TimeSeries(("value",), x[burn_in:, None], "value")


def mackey_glass(steps: int, seed: int = 0, tau: int = 17, beta: float = 0.2,
                 gamma: float = 0.1, n: float = 10.0, noise: float = 0.0,
                 subsample: int = 1) -> TimeSeries:
    """Discretized Mackey-Glass delay equation (unit Euler steps), optionally noisy."""
    rng = np.random.default_rng(seed)
    total = steps * subsample + tau + 500
    x = np.empty(total)
    x[: tau + 1] = 1.2 + 0.1 * rng.standard_normal(tau + 1)
    for i in range(tau, total - 1):
        lag = x[i - tau]
        x[i + 1] = x[i] + beta * lag / (1.0 + lag**n) - gamma * x[i]
    series = x[500 + tau:][::subsample][:steps]
    series = series + noise * rng.standard_normal(len(series))
    return TimeSeries(("value",), series[:, None], "value")


SYNTHETIC = {"noisy_sine": noisy_sine, "ar2": ar2, "mackey_glass": mackey_glass}
