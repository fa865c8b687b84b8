"""Parameter learning by gradient descent on the CFD to the data's ECF.

The objective at frozen frequencies ``t_1..t_k ~ omega(t; eta)`` is

    L = 1/b * sum_batches 1/k * sum_j |ecf_batch(t_j) - phi(t_j)|**2,

which for ``b = 1`` is exactly the Monte-Carlo CFD between the ECF and the
circuit.  Gradients are propagated in reverse through the circuit using the
adjoint ``g = dL/dRe(phi) + i dL/dIm(phi)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import softmax

from ..circuit import Circuit, LeafNode, ProductNode, SumNode
from ..distance import EcfModel, draw_frequencies, squared_diff_stats
from ..errors import ConfigError, DimensionError, NumericError
from ..inference import forward_cf


@dataclass(frozen=True)
class OptimizerConfig:
    lr_start: float = 0.5
    lr_end: float = 0.01
    iters: int = 300
    eta: float = 1.0
    num_freqs: int = 100
    batch_count: int = 1
    seed: int = 0
    resample: bool = False

    def __post_init__(self):
        if not (self.lr_start >= self.lr_end > 0) or not math.isfinite(self.lr_start):
            raise ConfigError(f"need lr_start >= lr_end > 0, got {self.lr_start}, {self.lr_end}")
        for name in ("iters", "num_freqs", "batch_count"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise ConfigError(f"eta must be positive, got {self.eta!r}")

    def learning_rate(self, it: int) -> float:
        if self.iters == 1:
            return self.lr_start
        return self.lr_start + (self.lr_end - self.lr_start) * it / (self.iters - 1)


class ParameterMap:
    """Flat vector of unconstrained parameters of a circuit.

    Sum weights and categorical probabilities are softmax logits, scales are
    log-transformed, alpha goes through a shifted sigmoid and beta through tanh.
    """

    def __init__(self, circuit: Circuit):
        self.circuit = circuit
        self.slots = []  # (node id, start, size)
        self.names = []
        pos = 0
        for nid in circuit.order:
            node = circuit.nodes[nid]
            if isinstance(node, SumNode):
                size = len(node.weights)
                self.names += [f"node[{nid}].weights[{i}]" for i in range(size)]
            elif isinstance(node, LeafNode):
                size = node.leaf.n_free
                self.names += [f"node[{nid}].{node.leaf.family}[{i}]" for i in range(size)]
            else:
                continue
            if size:
                self.slots.append((nid, pos, size))
                pos += size
        self.size = pos

    def theta(self) -> np.ndarray:
        out = np.empty(self.size)
        for nid, start, size in self.slots:
            node = self.circuit.nodes[nid]
            if isinstance(node, SumNode):
                out[start:start + size] = np.log(np.maximum(node.weights, 1e-300))
            else:
                out[start:start + size] = node.leaf.free_params()
        return out

    def materialize(self, theta) -> Circuit:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.size,):
            raise DimensionError(f"expected {self.size} parameters, got shape {theta.shape}")
        repl = {}
        for nid, start, size in self.slots:
            node = self.circuit.nodes[nid]
            part = theta[start:start + size]
            if isinstance(node, SumNode):
                w = softmax(part)
                repl[nid] = SumNode(node.children, tuple(w / w.sum()))
            else:
                repl[nid] = LeafNode(node.var, node.leaf.with_free_params(part))
        return self.circuit.replace_nodes(repl)


def circuit_gradient(circuit: Circuit, pmap: ParameterMap, T: np.ndarray, adjoint_root: np.ndarray,
                     values: dict | None = None) -> np.ndarray:
    """Gradient w.r.t. ``pmap``'s free parameters given the root adjoint.

    ``circuit`` must share its structure with ``pmap.circuit``; ``values`` may
    carry a previous :func:`forward_cf` result for ``circuit`` at ``T``.
    """
    values = forward_cf(circuit, T) if values is None else values
    nodes = circuit.nodes
    adj = {circuit.root: adjoint_root.astype(complex, copy=True)}
    grads = {}
    for nid in reversed(circuit.order):
        g = adj.pop(nid, None)
        if g is None:
            continue
        node = nodes[nid]
        if isinstance(node, SumNode):
            w = np.asarray(node.weights)
            dw = np.array([np.sum((np.conj(g) * values[c]).real) for c in node.children])
            grads[nid] = w * (dw - np.dot(w, dw))
            for c, wi in zip(node.children, w):
                adj[c] = adj[c] + wi * g if c in adj else wi * g
        elif isinstance(node, ProductNode):
            kids = node.children
            m = len(kids)
            prefix = [np.ones_like(g)]
            for c in kids[:-1]:
                prefix.append(prefix[-1] * values[c])
            suffix = np.ones_like(g)
            for i in range(m - 1, -1, -1):
                others = prefix[i] * suffix
                contrib = g * np.conj(others)
                c = kids[i]
                adj[c] = adj[c] + contrib if c in adj else contrib
                suffix = suffix * values[c]
        else:
            if node.leaf.n_free:
                _, jac = node.leaf.cf_grad(T[:, node.var])
                grads[nid] = (jac @ np.conj(g)).real
    out = np.zeros(pmap.size)
    for nid, start, size in pmap.slots:
        if nid in grads:
            out[start:start + size] = grads[nid]
    return out


def _rows(data) -> np.ndarray:
    X = getattr(data, "values", data)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DimensionError("training data must be a non-empty (n, d) matrix")
    return X


class CfdObjective:
    """CFD between a circuit family (fixed structure) and the ECF of ``data``."""

    def __init__(self, circuit: Circuit, data, eta: float = 1.0, num_freqs: int = 100,
                 seed: int = 0, batch_count: int = 1):
        circuit.check()
        X = _rows(data)
        if X.shape[1] != circuit.dim:
            raise DimensionError(f"data has {X.shape[1]} columns, circuit expects {circuit.dim}")
        if batch_count > X.shape[0]:
            raise ConfigError(f"batch_count {batch_count} exceeds the {X.shape[0]} training rows")
        self.circuit = circuit
        self.pmap = ParameterMap(circuit)
        self.eta = eta
        self.num_freqs = num_freqs
        if batch_count == 1:
            self.batches = [X]
        else:
            perm = np.random.default_rng(seed).permutation(X.shape[0])
            self.batches = [X[idx] for idx in np.array_split(perm, batch_count)]
        self.set_frequencies(eta * draw_frequencies(circuit.dim, num_freqs, seed))

    def set_frequencies(self, T: np.ndarray) -> None:
        self.T = T
        self.ecf = np.stack([EcfModel(b).cf(T) for b in self.batches])
        self.ecf_mean = self.ecf.mean(axis=0)

    def loss_of(self, circuit: Circuit, values: dict | None = None) -> float:
        values = forward_cf(circuit, self.T) if values is None else values
        phi = values[circuit.root]
        if len(self.batches) == 1:
            return squared_diff_stats(self.ecf[0] - phi).value
        return float(np.mean([squared_diff_stats(e - phi).value for e in self.ecf]))

    def value(self, theta) -> float:
        return self.loss_of(self.pmap.materialize(theta))

    def value_and_grad(self, theta=None, circuit: Circuit | None = None) -> tuple[float, np.ndarray]:
        """Loss and gradient at ``theta`` (or at ``circuit`` itself when given)."""
        if circuit is None:
            circuit = self.circuit if theta is None else self.pmap.materialize(theta)
        values = forward_cf(circuit, self.T)
        loss = self.loss_of(circuit, values)
        adjoint = (2.0 / self.T.shape[0]) * (values[circuit.root] - self.ecf_mean)
        return loss, circuit_gradient(circuit, self.pmap, self.T, adjoint, values)


class FitResult(NamedTuple):
    circuit: Circuit
    trace: list  # (iter, loss, lr)
    best_iter: int


def fit_parameters(circuit: Circuit, data, cfg: OptimizerConfig | None = None) -> FitResult:
    """Gradient descent from ``circuit`` on the CFD to the ECF of ``data``.

    Returns the iterate with the lowest loss, so its loss never exceeds the
    initial one.  ``trace`` has one ``(iter, loss, lr)`` row per iteration.
    """
    cfg = cfg or OptimizerConfig()
    obj = CfdObjective(circuit, data, cfg.eta, cfg.num_freqs, cfg.seed, cfg.batch_count)
    pmap = obj.pmap
    theta = pmap.theta()
    current = circuit
    best = (math.inf, circuit, 0)
    trace = []
    for it in range(cfg.iters):
        if cfg.resample and it > 0:
            obj.set_frequencies(cfg.eta * draw_frequencies(circuit.dim, cfg.num_freqs, cfg.seed + it))
        loss, grad = obj.value_and_grad(circuit=current)
        lr = cfg.learning_rate(it)
        trace.append((it, loss, lr))
        if loss < best[0]:
            best = (loss, current, it)
        bad = ~np.isfinite(grad)
        if np.any(bad):
            name = pmap.names[int(np.argmax(bad))]
            raise NumericError(f"non-finite gradient at iteration {it} for parameter {name}")
        theta = theta - lr * grad
        current = pmap.materialize(theta)
    final_loss = obj.loss_of(current)
    if final_loss < best[0]:
        best = (final_loss, current, cfg.iters)
    return FitResult(best[1], trace, best[2])
