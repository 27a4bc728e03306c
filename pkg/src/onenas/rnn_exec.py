"""Unrolled execution of genomes: forward prediction, MSE loss and BPTT.

A genome is compiled into flat arrays (topologically ordered active nodes,
incoming edges in CSR form, one parameter vector ``theta`` holding edge weights
followed by node parameters) so the per-step work runs inside numba kernels.
All kernels release the GIL, which lets a thread pool train genomes in
parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from onenas.cells import CELL_NAMES, cell_bwd, cell_fwd, cell_kind
from onenas.errors import ContractError, NumericError

SCALE_THRESHOLD = 1.0
BOOST_THRESHOLD = 0.05
RESCALE_ACTIONS = ("none", "scaled", "boosted")


@dataclass
class Subsequence:
    inputs: np.ndarray
    targets: np.ndarray
    origin_index: int = 0

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.inputs.ndim != 2:
            raise ContractError("subsequence inputs must be a [steps x parameters] matrix")
        if len(self.targets) != len(self.inputs):
            raise ContractError("inputs and targets differ in length")

    @property
    def step_count(self) -> int:
        return len(self.inputs)

    def target_matrix(self) -> np.ndarray:
        return self.targets.reshape(len(self.targets), -1)


@dataclass
class GradientReport:
    gradient: np.ndarray
    pre_norm: float
    action: str = "none"


@dataclass
class CompiledNetwork:
    node_ids: list[int]
    cells: np.ndarray
    poff: np.ndarray
    inslot: np.ndarray
    in_ptr: np.ndarray
    in_src: np.ndarray
    in_skip: np.ndarray
    in_widx: np.ndarray
    out_idx: np.ndarray
    edge_ids: list[int]
    theta: np.ndarray = field(repr=False)
    n_inputs: int = 0

    @property
    def kernel_args(self):
        return (self.cells, self.poff, self.inslot, self.in_ptr, self.in_src, self.in_skip,
                self.in_widx)


def compile_genome(genome) -> CompiledNetwork:
    """Flatten the active part of ``genome``; dormant components are left out."""
    active = genome.active_nodes()
    order = sorted((genome.nodes[i] for i in active), key=lambda n: (n.depth, n.id))
    index = {n.id: k for k, n in enumerate(order)}
    edges = sorted((e for e in genome.edges.values()
                    if e.enabled and e.source in index and e.target in index),
                   key=lambda e: e.id)
    n_edges = len(edges)
    poff = np.empty(len(order), dtype=np.int64)
    offset = n_edges
    for k, n in enumerate(order):
        poff[k] = offset
        offset += cell_kind(n.cell).parameter_count
    theta = np.empty(offset)
    for k, e in enumerate(edges):
        theta[k] = e.weight
    for k, n in enumerate(order):
        theta[poff[k]:poff[k] + len(n.params)] = n.params

    input_ids = [n.id for n in genome.input_nodes]
    inslot = np.full(len(order), -1, dtype=np.int64)
    for s, nid in enumerate(input_ids):
        inslot[index[nid]] = s
    incoming: list[list[int]] = [[] for _ in order]
    for k, e in enumerate(edges):
        incoming[index[e.target]].append(k)
    in_ptr = np.zeros(len(order) + 1, dtype=np.int64)
    in_src, in_skip, in_widx = [], [], []
    for j, lst in enumerate(incoming):
        for k in lst:
            in_src.append(index[edges[k].source])
            in_skip.append(edges[k].time_skip)
            in_widx.append(k)
        in_ptr[j + 1] = len(in_src)
    net = CompiledNetwork(
        node_ids=[n.id for n in order],
        cells=np.array([CELL_NAMES.index(n.cell) for n in order], dtype=np.int64),
        poff=poff,
        inslot=inslot,
        in_ptr=in_ptr,
        in_src=np.array(in_src, dtype=np.int64),
        in_skip=np.array(in_skip, dtype=np.int64),
        in_widx=np.array(in_widx, dtype=np.int64),
        out_idx=np.array([index[n.id] for n in genome.output_nodes], dtype=np.int64),
        edge_ids=[e.id for e in edges],
        theta=theta,
        n_inputs=len(input_ids),
    )
    return net


def write_back(genome, theta: np.ndarray) -> None:
    """Store a trained parameter vector into the genome's genes."""
    net = compile_genome(genome)
    if theta.shape != net.theta.shape:
        raise ContractError("parameter vector does not match the compiled genome")
    for k, eid in enumerate(net.edge_ids):
        genome.edges[eid].weight = float(theta[k])
    for k, nid in enumerate(net.node_ids):
        node = genome.nodes[nid]
        node.params = theta[net.poff[k]:net.poff[k] + len(node.params)].copy()


# ---------------------------------------------------------------- kernels


@njit(cache=True, nogil=True)
def _forward(cells, poff, inslot, in_ptr, in_src, in_skip, in_widx, theta, X, A, H, C):
    """Fill aggregated inputs A, outputs H and cell memories C; return -1 or the first bad t*N+j."""
    T = X.shape[0]
    N = cells.shape[0]
    for t in range(T):
        for j in range(N):
            a = 0.0
            s = inslot[j]
            if s >= 0:
                a = X[t, s]
            for k in range(in_ptr[j], in_ptr[j + 1]):
                tt = t - in_skip[k]
                if tt >= 0:
                    a += theta[in_widx[k]] * H[tt, in_src[k]]
            hp = 0.0
            cp = 0.0
            if t > 0:
                hp = H[t - 1, j]
                cp = C[t - 1, j]
            y, c = cell_fwd(cells[j], theta, poff[j], a, hp, cp)
            A[t, j] = a
            H[t, j] = y
            C[t, j] = c
            if not (math.isfinite(y) and math.isfinite(c)):
                return t * N + j
    return -1


@njit(cache=True, nogil=True)
def _backward(cells, poff, in_ptr, in_src, in_skip, in_widx, theta, A, H, C, dH, grad):
    T = A.shape[0]
    N = cells.shape[0]
    dc_cur = np.zeros(N)
    dc_prev = np.zeros(N)
    for t in range(T - 1, -1, -1):
        for j in range(N - 1, -1, -1):
            hp = 0.0
            cp = 0.0
            if t > 0:
                hp = H[t - 1, j]
                cp = C[t - 1, j]
            dx, dh, dcp = cell_bwd(cells[j], theta, poff[j], A[t, j], hp, cp, dH[t, j],
                                   dc_cur[j], grad, poff[j])
            if t > 0:
                dH[t - 1, j] += dh
            dc_prev[j] = dcp
            for k in range(in_ptr[j], in_ptr[j + 1]):
                tt = t - in_skip[k]
                if tt >= 0:
                    grad[in_widx[k]] += dx * H[tt, in_src[k]]
                    dH[tt, in_src[k]] += dx * theta[in_widx[k]]
        for j in range(N):
            dc_cur[j] = dc_prev[j]
            dc_prev[j] = 0.0


@njit(cache=True, nogil=True)
def _loss(H, out_idx, Y):
    T = H.shape[0]
    n_out = out_idx.shape[0]
    total = 0.0
    for t in range(T - 1):
        for o in range(n_out):
            d = H[t, out_idx[o]] - Y[t + 1, o]
            total += d * d
    return total / ((T - 1) * n_out)


@njit(cache=True, nogil=True)
def _loss_grad(cells, poff, inslot, in_ptr, in_src, in_skip, in_widx, out_idx, theta, X, Y,
               A, H, C, dH, grad):
    """Loss at ``theta`` with its full BPTT gradient written into ``grad`` (NaN loss on failure)."""
    bad = _forward(cells, poff, inslot, in_ptr, in_src, in_skip, in_widx, theta, X, A, H, C)
    if bad >= 0:
        return np.nan
    T = X.shape[0]
    n_out = out_idx.shape[0]
    scale = 2.0 / ((T - 1) * n_out)
    dH[:, :] = 0.0
    total = 0.0
    for t in range(T - 1):
        for o in range(n_out):
            d = H[t, out_idx[o]] - Y[t + 1, o]
            total += d * d
            dH[t, out_idx[o]] += scale * d
    grad[:] = 0.0
    _backward(cells, poff, in_ptr, in_src, in_skip, in_widx, theta, A, H, C, dH, grad)
    return total / ((T - 1) * n_out)


@njit(cache=True, nogil=True)
def _rescale(grad):
    """In-place scaling/boosting; returns (pre-norm, action code)."""
    norm = math.sqrt(np.sum(grad * grad))
    if norm > 1.0:
        grad *= 1.0 / norm
        return norm, 1
    if 0.0 < norm < 0.05:
        grad *= 0.05 / norm
        return norm, 2
    return norm, 0


@njit(cache=True, nogil=True)
def _train(cells, poff, inslot, in_ptr, in_src, in_skip, in_widx, out_idx, theta, Xs, Ys,
           epochs, noise_epochs, noise_fraction, lr, mu, seed):
    """Nesterov SGD over every subsequence, once per epoch in a fresh random order.

    The last ``noise_epochs`` epochs add zero-mean Gaussian noise to the inputs
    with per-parameter std ``noise_fraction`` x that subsequence's std.
    Returns (theta, per-epoch mean loss, rescale-action counts, ok flag).
    """
    np.random.seed(seed)
    S, T, n_in = Xs.shape
    N = cells.shape[0]
    theta = theta.copy()
    vel = np.zeros(theta.shape[0])
    grad = np.zeros(theta.shape[0])
    A = np.zeros((T, N))
    H = np.zeros((T, N))
    C = np.zeros((T, N))
    dH = np.zeros((T, N))
    X = np.empty((T, n_in))
    epoch_loss = np.zeros(epochs)
    counts = np.zeros(3, dtype=np.int64)
    for ep in range(epochs):
        noisy = ep >= epochs - noise_epochs and noise_fraction > 0.0
        order = np.random.permutation(S)
        total = 0.0
        for s in order:
            if noisy:
                for col in range(n_in):
                    sd = np.std(Xs[s, :, col])
                    for t in range(T):
                        X[t, col] = Xs[s, t, col] + noise_fraction * sd * np.random.standard_normal()
            else:
                X[:, :] = Xs[s]
            loss = _loss_grad(cells, poff, inslot, in_ptr, in_src, in_skip, in_widx, out_idx,
                              theta, X, Ys[s], A, H, C, dH, grad)
            if not math.isfinite(loss):
                return theta, epoch_loss, counts, False
            total += loss
            _, action = _rescale(grad)
            counts[action] += 1
            for k in range(theta.shape[0]):
                prev = vel[k]
                vel[k] = mu * vel[k] - lr * grad[k]
                theta[k] += -mu * prev + (1.0 + mu) * vel[k]
                if not math.isfinite(theta[k]):
                    return theta, epoch_loss, counts, False
        epoch_loss[ep] = total / S
    return theta, epoch_loss, counts, True


@njit(cache=True, nogil=True)
def _evaluate(cells, poff, inslot, in_ptr, in_src, in_skip, in_widx, out_idx, theta, Xs, Ys):
    S, T, _ = Xs.shape
    N = cells.shape[0]
    A = np.zeros((T, N))
    H = np.zeros((T, N))
    C = np.zeros((T, N))
    total = 0.0
    for s in range(S):
        if _forward(cells, poff, inslot, in_ptr, in_src, in_skip, in_widx, theta, Xs[s], A, H,
                    C) >= 0:
            return np.inf
        total += _loss(H, out_idx, Ys[s])
    return total / S


# ---------------------------------------------------------------- python surface


def _check_arity(net: CompiledNetwork, inputs: np.ndarray) -> None:
    if inputs.ndim != 2 or inputs.shape[1] != net.n_inputs:
        raise ContractError(f"genome has {net.n_inputs} inputs, data has shape {inputs.shape}")


def run_network(genome, inputs: np.ndarray, theta: np.ndarray | None = None) -> np.ndarray:
    """Output-node activations for every step, shape [steps x outputs]."""
    net = compile_genome(genome)
    inputs = np.ascontiguousarray(inputs, dtype=np.float64)
    _check_arity(net, inputs)
    T, N = len(inputs), len(net.node_ids)
    A, H, C = np.zeros((T, N)), np.zeros((T, N)), np.zeros((T, N))
    theta = net.theta if theta is None else theta
    bad = _forward(*net.kernel_args, theta, inputs, A, H, C)
    if bad >= 0:
        step, j = divmod(bad, N)
        raise NumericError(f"non-finite activation at step {step}, node {net.node_ids[j]}",
                           node_id=net.node_ids[j], step=step)
    return H[:, net.out_idx]


def forward(genome, sub: Subsequence) -> np.ndarray:
    """One prediction per step; entry t forecasts the target at step t+1."""
    out = run_network(genome, sub.inputs)
    return out[:, 0] if out.shape[1] == 1 else out


def mse(predictions, targets) -> float:
    """Mean squared one-step-ahead error: prediction t against target t+1, last step unscored."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ContractError(f"length mismatch {predictions.shape} vs {targets.shape}")
    if len(predictions) < 2:
        raise ContractError("need at least two steps to score a one-step-ahead forecast")
    return float(np.mean((predictions[:-1] - targets[1:]) ** 2))


def loss_and_gradient(genome, sub: Subsequence, theta: np.ndarray | None = None):
    """Loss and raw (un-rescaled) gradient with respect to the compiled parameter vector."""
    net = compile_genome(genome)
    X = np.ascontiguousarray(sub.inputs)
    _check_arity(net, X)
    Y = np.ascontiguousarray(sub.target_matrix())
    T, N = len(X), len(net.node_ids)
    theta = net.theta if theta is None else np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    loss = _loss_grad(*net.kernel_args, net.out_idx, theta, X, Y, np.zeros((T, N)),
                      np.zeros((T, N)), np.zeros((T, N)), np.zeros((T, N)), grad)
    return loss, grad


def rescale_gradient(g) -> GradientReport:
    """Scale down above norm 1.0, boost up below 0.05, leave the band [0.05, 1.0] alone."""
    g = np.array(g, dtype=np.float64)
    norm, action = _rescale(g)
    return GradientReport(g, float(norm), RESCALE_ACTIONS[action])


def bptt_step(genome, sub: Subsequence):
    """Full unrolled backward pass; returns the loss and the rescaled gradient report."""
    loss, grad = loss_and_gradient(genome, sub)
    if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NumericError("training failure: non-finite loss or gradient")
    return loss, rescale_gradient(grad)


def nesterov_update(params, velocity, gradient, lr: float = 0.001, mu: float = 0.9):
    """One Nesterov momentum step in the form that stores look-ahead parameters.

    With velocity ``v`` and gradient ``g`` taken at ``params``:
    ``v' = mu*v - lr*g`` and ``params' = params - mu*v + (1 + mu)*v'``.
    """
    params = np.asarray(params, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    gradient = np.asarray(gradient, dtype=np.float64)
    if not params.shape == velocity.shape == gradient.shape:
        raise ContractError("params, velocity and gradient must share a shape")
    new_velocity = mu * velocity - lr * gradient
    return params - mu * velocity + (1.0 + mu) * new_velocity, new_velocity


def stack(subs) -> tuple[np.ndarray, np.ndarray]:
    """Pack equal-length subsequences into kernel-ready [S x T x k] arrays."""
    X = np.ascontiguousarray(np.stack([s.inputs for s in subs]))
    Y = np.ascontiguousarray(np.stack([s.target_matrix() for s in subs]))
    return X, Y


def train_weights(genome, X: np.ndarray, Y: np.ndarray, *, epochs: int, noise_epochs: int,
                  noise_fraction: float, lr: float, mu: float, seed: int):
    """Train the genome's parameters on packed data; returns (theta, epoch losses, counts, ok)."""
    net = compile_genome(genome)
    _check_arity(net, X[0])
    return _train(*net.kernel_args, net.out_idx, net.theta, X, Y, int(epochs),
                  int(noise_epochs), float(noise_fraction), float(lr), float(mu),
                  int(seed) % (2**32))


def evaluate(genome, X: np.ndarray, Y: np.ndarray, theta: np.ndarray | None = None) -> float:
    """Mean one-step MSE over packed subsequences; ``inf`` on numeric failure."""
    net = compile_genome(genome)
    _check_arity(net, X[0])
    theta = net.theta if theta is None else np.ascontiguousarray(theta, dtype=np.float64)
    return float(_evaluate(*net.kernel_args, net.out_idx, theta, X, Y))
