"""Online comparison forecasters: naive, moving average, exponential smoothing, online ARIMA.

Each forecaster sees a univariate stream one value at a time and only ever
predicts the next value from values already observed.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from onenas.errors import ContractError

log = logging.getLogger(__name__)

ONS_LEARNING_RATE = math.exp(-3)
ONS_EPSILON = 3.16e-6
# The reference setting divides the gradient by e^3; here rates multiply it.
OGD_LEARNING_RATE = math.exp(-3)
OGD_EPSILON = math.exp(-5.5)


@dataclass
class BaselineConfig:
    ma_window: int = 3
    alpha: float = 0.2
    ar_order: int = 8
    differencing: int = 1
    learning_rate: float | None = None
    epsilon: float | None = None
    variant: str = "ogd"
    radius: float = 1.0
    decay: bool = True

    def __post_init__(self):
        if self.ma_window < 1:
            raise ContractError("moving average window must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ContractError("smoothing factor must satisfy 0 < alpha < 1")
        if self.ar_order < 1 or self.differencing < 0:
            raise ContractError("ARIMA needs ar_order >= 1 and differencing >= 0")
        if self.variant not in ("ogd", "ons"):
            raise ContractError(f"unknown ARIMA variant {self.variant!r}")
        if self.learning_rate is None:
            self.learning_rate = OGD_LEARNING_RATE if self.variant == "ogd" else ONS_LEARNING_RATE
        if self.epsilon is None:
            self.epsilon = OGD_EPSILON if self.variant == "ogd" else ONS_EPSILON
        if self.epsilon <= 0:
            raise ContractError("epsilon must be positive")


def _require_history(history) -> Sequence[float]:
    if len(history) == 0:
        raise ContractError("forecast needs at least one past value")
    return history


def naive_predict(history) -> float:
    """The last observed value."""
    return float(_require_history(history)[-1])


def moving_average_predict(history, n: int) -> float:
    """Mean of the last ``min(n, len(history))`` values."""
    history = _require_history(history)
    if n < 1:
        raise ContractError("window must be >= 1")
    window = history[-n:]
    return float(sum(window) / len(window))


class ExpSmoothing:
    """Simple exponential smoothing, started at the first observation."""

    def __init__(self, alpha: float):
        if not 0.0 < alpha < 1.0:
            raise ContractError("smoothing factor must satisfy 0 < alpha < 1")
        self.alpha = alpha
        self.level: float | None = None

    def predict(self) -> float:
        if self.level is None:
            raise ContractError("exponential smoothing has not seen any value yet")
        return self.level

    def observe(self, x: float) -> None:
        if self.level is None:
            self.level = float(x)
        else:
            self.level = self.alpha * float(x) + (1.0 - self.alpha) * self.level


def exp_smoothing_predict(prev_forecast: float, prev_value: float, alpha: float) -> float:
    return alpha * prev_value + (1.0 - alpha) * prev_forecast


class OnlineArima:
    """ARIMA(k, d, 0) with AR coefficients learned online on the d-times differenced series.

    Prediction: AR inner product over the last ``k`` differenced values, then
    un-differenced back onto the original scale. After each observation the
    coefficients take one step on the squared loss: plain gradient (OGD, rate
    decaying as 1/sqrt(t)) or Newton-style with the accumulated gradient
    outer-product matrix (ONS). Coefficients are clipped to ``[-radius, radius]``.
    """

    def __init__(self, cfg: BaselineConfig | None = None, **kwargs):
        self.cfg = cfg if cfg is not None else BaselineConfig(**kwargs)
        k = self.cfg.ar_order
        self.coef = np.zeros(k)
        self.history: list[float] = []
        self.steps = 0
        self.resets = 0
        if self.cfg.variant == "ons":
            self.a_inv = np.eye(k) / self.cfg.epsilon

    def _features(self) -> tuple[np.ndarray, float]:
        """(lagged differenced values, un-differencing offset) for the next prediction."""
        d, k = self.cfg.differencing, self.cfg.ar_order
        hist = np.asarray(self.history[-(k + d):], dtype=np.float64)
        offset = 0.0
        diffs = [hist]
        for _ in range(d):
            diffs.append(np.diff(diffs[-1]))
        for level in diffs[:-1]:
            if len(level):
                offset += level[-1]
        series = diffs[-1][::-1]
        lags = np.zeros(k)
        lags[: min(k, len(series))] = series[:k]
        return lags, offset

    def predict(self) -> float:
        lags, offset = self._features()
        return float(self.coef @ lags + offset)

    def update(self, observation: float) -> float:
        """Predict, observe, learn; returns the prediction made before seeing ``observation``."""
        lags, offset = self._features()
        pred = float(self.coef @ lags + offset)
        if self.history:
            self.steps += 1
            grad = 2.0 * (pred - observation) * lags
            if self.cfg.variant == "ogd":
                rate = self.cfg.learning_rate / (math.sqrt(self.steps) if self.cfg.decay else 1.0)
                self.coef = self.coef - rate * grad
            else:
                self._ons_step(grad)
            np.clip(self.coef, -self.cfg.radius, self.cfg.radius, out=self.coef)
        self.history.append(float(observation))
        if len(self.history) > 4 * (self.cfg.ar_order + self.cfg.differencing):
            del self.history[: -(self.cfg.ar_order + self.cfg.differencing)]
        return pred

    def _ons_step(self, grad: np.ndarray) -> None:
        ag = self.a_inv @ grad
        denom = 1.0 + grad @ ag
        if not math.isfinite(denom) or denom <= 0.0:
            log.warning("ONS second-moment update is singular; resetting to epsilon * I")
            self.a_inv = np.eye(len(grad)) / self.cfg.epsilon
            self.resets += 1
            return
        self.a_inv = self.a_inv - np.outer(ag, ag) / denom
        self.coef = self.coef - self.cfg.learning_rate * (self.a_inv @ grad)

    def arima_step(self, new_observation: float) -> float:
        """Alias of :meth:`update` under the name used in the interface description."""
        return self.update(new_observation)


def arima_step(state: OnlineArima, new_observation: float):
    """Functional form: returns (prediction made before the observation, updated state)."""
    pred = state.update(new_observation)
    return pred, state


BASELINE_METHODS = ("naive", "ma", "exp", "arima_ogd", "arima_ons")


def run_baseline(series, method: str, cfg: BaselineConfig | None = None) -> np.ndarray:
    """One-step forecasts for indices 1..len-1 of ``series`` (entry i forecasts series[i+1])."""
    series = np.asarray(series, dtype=np.float64)
    cfg = cfg if cfg is not None else BaselineConfig()
    n = len(series)
    if n < 2:
        raise ContractError("need at least two values")
    if method == "naive":
        return series[:-1].copy()
    if method == "ma":
        w = cfg.ma_window
        head = [series[:i].mean() for i in range(1, min(w, n))]
        tail = np.lib.stride_tricks.sliding_window_view(series[:-1], w).mean(axis=1) if n > w else []
        return np.concatenate([head, tail])
    if method == "exp":
        es = ExpSmoothing(cfg.alpha)
        out = np.empty(n - 1)
        for i in range(n - 1):
            es.observe(series[i])
            out[i] = es.predict()
        return out
    if method in ("arima_ogd", "arima_ons"):
        variant = method.split("_")[1]
        acfg = cfg if cfg.variant == variant else dataclasses.replace(
            cfg, variant=variant, learning_rate=None, epsilon=None)
        model = OnlineArima(acfg)
        model.update(series[0])
        out = np.empty(n - 1)
        for i in range(1, n):
            out[i - 1] = model.update(series[i])
        return out
    raise ContractError(f"unknown baseline method {method!r}; choose from {BASELINE_METHODS}")
