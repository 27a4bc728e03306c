"""Scalar memory cells: simple tanh neuron, delta-RNN, GRU, LSTM, MGU and UGRNN.

Every node in a genome is a scalar unit. Its input is the weighted sum of the
incoming edges, its recurrent state is its own previous output (plus the cell
memory for the LSTM). The numba kernels ``cell_fwd``/``cell_bwd`` are shared
with the network executor so the same equations run at both levels.

Parameter layouts (``w`` input weight, ``u`` recurrent weight, ``b`` bias):

    simple     [b]
    delta_rnn  [alpha, beta1, beta2, v, b_z, b_r]
    gru        [w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h]
    lstm       [w_i, u_i, b_i, w_f, u_f, b_f, w_o, u_o, b_o, w_g, u_g, b_g]
    mgu        [w_f, u_f, b_f, w_h, u_h, b_h]
    ugrnn      [w_c, u_c, b_c, w_g, u_g, b_g]
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

from onenas.errors import ContractError, NumericError

SIMPLE, DELTA_RNN, GRU, LSTM, MGU, UGRNN = range(6)
CELL_NAMES = ("simple", "delta_rnn", "gru", "lstm", "mgu", "ugrnn")
PARAM_COUNTS = (1, 6, 9, 12, 6, 6)
LSTM_FORGET_BIAS = 5
FORGET_BIAS_SHIFT = 1.0


@dataclass(frozen=True)
class CellKind:
    tag: str
    code: int
    parameter_count: int
    has_forget_gate: bool


KINDS = {
    name: CellKind(name, code, PARAM_COUNTS[code], code == LSTM)
    for code, name in enumerate(CELL_NAMES)
}


def cell_kind(kind) -> CellKind:
    if isinstance(kind, CellKind):
        return kind
    if isinstance(kind, (int, np.integer)):
        return KINDS[CELL_NAMES[int(kind)]]
    try:
        return KINDS[kind]
    except KeyError:
        raise ContractError(f"unknown cell kind {kind!r}") from None


class CellState(NamedTuple):
    h: float = 0.0
    c: float = 0.0


class CellTrace(NamedTuple):
    """Inputs of one forward evaluation; the backward pass recomputes gate values from these."""

    x: float
    prev: CellState


@njit(cache=True, nogil=True, inline="always")
def _sigmoid(a):
    return 1.0 / (1.0 + math.exp(-a))


@njit(cache=True, nogil=True)
def cell_fwd(kind, p, o, x, h, c):
    """Return (output, new cell memory) for params ``p[o:o+count]``."""
    if kind == SIMPLE:
        return math.tanh(x + p[o]), 0.0
    if kind == DELTA_RNN:
        alpha, beta1, beta2, v, bz, br = p[o], p[o + 1], p[o + 2], p[o + 3], p[o + 4], p[o + 5]
        vh = v * h
        z = math.tanh(alpha * vh * x + beta1 * vh + beta2 * x + bz)
        r = _sigmoid(x + br)
        return math.tanh((1.0 - r) * z + r * h), 0.0
    if kind == GRU:
        z = _sigmoid(p[o] * x + p[o + 1] * h + p[o + 2])
        r = _sigmoid(p[o + 3] * x + p[o + 4] * h + p[o + 5])
        hh = math.tanh(p[o + 6] * x + p[o + 7] * r * h + p[o + 8])
        return (1.0 - z) * h + z * hh, 0.0
    if kind == LSTM:
        i = _sigmoid(p[o] * x + p[o + 1] * h + p[o + 2])
        f = _sigmoid(p[o + 3] * x + p[o + 4] * h + p[o + 5])
        og = _sigmoid(p[o + 6] * x + p[o + 7] * h + p[o + 8])
        g = math.tanh(p[o + 9] * x + p[o + 10] * h + p[o + 11])
        cn = f * c + i * g
        return og * math.tanh(cn), cn
    if kind == MGU:
        f = _sigmoid(p[o] * x + p[o + 1] * h + p[o + 2])
        hh = math.tanh(p[o + 3] * x + p[o + 4] * f * h + p[o + 5])
        return (1.0 - f) * h + f * hh, 0.0
    # UGRNN
    cc = math.tanh(p[o] * x + p[o + 1] * h + p[o + 2])
    g = _sigmoid(p[o + 3] * x + p[o + 4] * h + p[o + 5])
    return g * h + (1.0 - g) * cc, 0.0


@njit(cache=True, nogil=True)
def cell_bwd(kind, p, o, x, h, c, dy, dc, grad, go):
    """Accumulate parameter gradients into ``grad[go:]``; return (dx, dh_prev, dc_prev).

    ``dy`` is dL/d(output) and ``dc`` dL/d(new cell memory) (LSTM only).
    """
    if kind == SIMPLE:
        y = math.tanh(x + p[o])
        da = dy * (1.0 - y * y)
        grad[go] += da
        return da, 0.0, 0.0
    if kind == DELTA_RNN:
        alpha, beta1, beta2, v, bz, br = p[o], p[o + 1], p[o + 2], p[o + 3], p[o + 4], p[o + 5]
        vh = v * h
        z = math.tanh(alpha * vh * x + beta1 * vh + beta2 * x + bz)
        r = _sigmoid(x + br)
        y = math.tanh((1.0 - r) * z + r * h)
        da = dy * (1.0 - y * y)
        dz = da * (1.0 - r)
        dr = da * (h - z)
        dh = da * r
        daz = dz * (1.0 - z * z)
        dar = dr * r * (1.0 - r)
        grad[go] += daz * vh * x
        grad[go + 1] += daz * vh
        grad[go + 2] += daz * x
        dvh = daz * (alpha * x + beta1)
        grad[go + 3] += dvh * h
        grad[go + 4] += daz
        grad[go + 5] += dar
        dh += dvh * v
        dx = daz * (alpha * vh + beta2) + dar
        return dx, dh, 0.0
    if kind == GRU:
        wz, uz, wr, ur, wh, uh = p[o], p[o + 1], p[o + 3], p[o + 4], p[o + 6], p[o + 7]
        z = _sigmoid(wz * x + uz * h + p[o + 2])
        r = _sigmoid(wr * x + ur * h + p[o + 5])
        hh = math.tanh(wh * x + uh * r * h + p[o + 8])
        daz = dy * (hh - h) * z * (1.0 - z)
        dah = dy * z * (1.0 - hh * hh)
        drh = dah * uh
        dar = drh * h * r * (1.0 - r)
        grad[go] += daz * x
        grad[go + 1] += daz * h
        grad[go + 2] += daz
        grad[go + 3] += dar * x
        grad[go + 4] += dar * h
        grad[go + 5] += dar
        grad[go + 6] += dah * x
        grad[go + 7] += dah * r * h
        grad[go + 8] += dah
        dx = daz * wz + dar * wr + dah * wh
        dh = dy * (1.0 - z) + daz * uz + dar * ur + drh * r
        return dx, dh, 0.0
    if kind == LSTM:
        wi, ui, wf, uf, wo, uo, wg, ug = (
            p[o], p[o + 1], p[o + 3], p[o + 4], p[o + 6], p[o + 7], p[o + 9], p[o + 10]
        )
        i = _sigmoid(wi * x + ui * h + p[o + 2])
        f = _sigmoid(wf * x + uf * h + p[o + 5])
        og = _sigmoid(wo * x + uo * h + p[o + 8])
        g = math.tanh(wg * x + ug * h + p[o + 11])
        cn = f * c + i * g
        th = math.tanh(cn)
        dcn = dc + dy * og * (1.0 - th * th)
        dai = dcn * g * i * (1.0 - i)
        daf = dcn * c * f * (1.0 - f)
        dao = dy * th * og * (1.0 - og)
        dag = dcn * i * (1.0 - g * g)
        grad[go] += dai * x
        grad[go + 1] += dai * h
        grad[go + 2] += dai
        grad[go + 3] += daf * x
        grad[go + 4] += daf * h
        grad[go + 5] += daf
        grad[go + 6] += dao * x
        grad[go + 7] += dao * h
        grad[go + 8] += dao
        grad[go + 9] += dag * x
        grad[go + 10] += dag * h
        grad[go + 11] += dag
        dx = dai * wi + daf * wf + dao * wo + dag * wg
        dh = dai * ui + daf * uf + dao * uo + dag * ug
        return dx, dh, dcn * f
    if kind == MGU:
        wf, uf, wh, uh = p[o], p[o + 1], p[o + 3], p[o + 4]
        f = _sigmoid(wf * x + uf * h + p[o + 2])
        hh = math.tanh(wh * x + uh * f * h + p[o + 5])
        dah = dy * f * (1.0 - hh * hh)
        dfh = dah * uh
        daf = (dy * (hh - h) + dfh * h) * f * (1.0 - f)
        grad[go] += daf * x
        grad[go + 1] += daf * h
        grad[go + 2] += daf
        grad[go + 3] += dah * x
        grad[go + 4] += dah * f * h
        grad[go + 5] += dah
        dx = daf * wf + dah * wh
        dh = dy * (1.0 - f) + dfh * f + daf * uf
        return dx, dh, 0.0
    # UGRNN
    wc, uc, wg, ug = p[o], p[o + 1], p[o + 3], p[o + 4]
    cc = math.tanh(wc * x + uc * h + p[o + 2])
    g = _sigmoid(wg * x + ug * h + p[o + 5])
    dac = dy * (1.0 - g) * (1.0 - cc * cc)
    dag = dy * (h - cc) * g * (1.0 - g)
    grad[go] += dac * x
    grad[go + 1] += dac * h
    grad[go + 2] += dac
    grad[go + 3] += dag * x
    grad[go + 4] += dag * h
    grad[go + 5] += dag
    dx = dac * wc + dag * wg
    dh = dy * g + dac * uc + dag * ug
    return dx, dh, 0.0


def _check_params(kind: CellKind, params) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (kind.parameter_count,):
        raise ContractError(
            f"{kind.tag} cell expects {kind.parameter_count} parameters, got {params.shape}"
        )
    return params


def cell_forward(kind, params, aggregated_input: float, prev_state: CellState = CellState(),
                 node_id=None):
    """Evaluate one cell for one time step; returns ``(output, new_state)``."""
    kind = cell_kind(kind)
    params = _check_params(kind, params)
    values = (aggregated_input, prev_state[0], prev_state[1])
    if not all(math.isfinite(v) for v in values) or not np.all(np.isfinite(params)):
        raise NumericError(f"non-finite input to {kind.tag} node {node_id}", node_id=node_id)
    y, c = cell_fwd(kind.code, params, 0, float(aggregated_input), float(prev_state[0]),
                    float(prev_state[1]))
    if not (math.isfinite(y) and math.isfinite(c)):
        raise NumericError(f"non-finite output from {kind.tag} node {node_id}", node_id=node_id)
    return y, CellState(y, c)


def cell_backward(kind, params, forward_trace: CellTrace | None, upstream_gradient: float,
                  upstream_cell_gradient: float = 0.0):
    """Gradients of one cell step.

    Returns ``(param_gradients, input_gradient, state_gradient)`` where
    ``state_gradient`` is a :class:`CellState` of dL/dh_prev and dL/dc_prev.
    """
    kind = cell_kind(kind)
    params = _check_params(kind, params)
    if forward_trace is None:
        raise ContractError("cell_backward needs the trace of the matching forward call")
    x, prev = forward_trace
    grad = np.zeros(kind.parameter_count)
    dx, dh, dc = cell_bwd(kind.code, params, 0, float(x), float(prev[0]), float(prev[1]),
                          float(upstream_gradient), float(upstream_cell_gradient), grad, 0)
    return grad, dx, CellState(dh, dc)


def new_cell_params(kind, rng: np.random.Generator, low=-0.5, high=0.5) -> np.ndarray:
    """Fresh uniform parameters; LSTM forget bias gets its one-time +1.0 shift here."""
    kind = cell_kind(kind)
    params = rng.uniform(low, high, kind.parameter_count)
    if kind.has_forget_gate:
        params[LSTM_FORGET_BIAS] += FORGET_BIAS_SHIFT
    return params


def apply_forget_bias_shift(genome):
    """Return a copy of ``genome`` with every LSTM forget-gate bias raised by 1.0.

    Node creation already calls this shift through :func:`new_cell_params`; use
    this on genomes whose parameters were set by hand.
    """
    shifted = genome.copy()
    for node in shifted.nodes.values():
        if node.cell == "lstm":
            node.params[LSTM_FORGET_BIAS] += FORGET_BIAS_SHIFT
    return shifted
