"""Online forecast scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from onenas.errors import ContractError


def online_rmse_series(residuals) -> np.ndarray:
    """Entry k is the RMSE over residuals 0..k (cumulative, not a sliding window)."""
    r = np.asarray(residuals, dtype=np.float64)
    if r.size == 0:
        raise ContractError("need at least one residual")
    return np.sqrt(np.cumsum(r * r) / np.arange(1, r.size + 1))


def generation_win_rate(engine_predictions, naive_predictions, targets, p: int) -> np.ndarray:
    """Per generation, the fraction of steps where the engine's error is strictly smaller.

    Ties count for the naive forecaster.
    """
    e = np.asarray(engine_predictions, dtype=np.float64)
    n = np.asarray(naive_predictions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if not e.shape == n.shape == y.shape:
        raise ContractError("predictions and targets must be aligned")
    if p < 1 or e.size % p:
        raise ContractError(f"series length {e.size} is not a multiple of p={p}")
    wins = np.abs(e - y) < np.abs(n - y)
    return wins.reshape(-1, p).mean(axis=1)


def mse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape or p.size == 0:
        raise ContractError("predictions and targets must be non-empty and aligned")
    return float(np.mean((p - y) ** 2))


@dataclass
class OnlineScore:
    """Running tally for one forecaster; feed it predictions as they are scored."""

    sse: float = 0.0
    count: int = 0
    wins: list[int] = field(default_factory=list)
    rmse_over_time: list[float] = field(default_factory=list)

    def add(self, residual: float) -> None:
        self.sse += residual * residual
        self.count += 1
        self.rmse_over_time.append(math.sqrt(self.sse / self.count))

    def add_generation(self, residuals, naive_residuals) -> float:
        residuals = np.asarray(residuals, dtype=np.float64)
        naive_residuals = np.asarray(naive_residuals, dtype=np.float64)
        for r in residuals:
            self.add(float(r))
        won = int(np.sum(np.abs(residuals) < np.abs(naive_residuals)))
        self.wins.append(won)
        return won / len(residuals)

    @property
    def mse(self) -> float:
        return self.sse / self.count if self.count else math.nan

    @property
    def rmse(self) -> float:
        return math.sqrt(self.mse) if self.count else math.nan
