"""Bottom-up queries on a circuit: CF values, densities, marginals and moments.

Densities are taken with respect to counting measure on discrete columns and
Lebesgue measure on continuous ones.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.special import logsumexp

from .circuit import Circuit, LeafNode, ProductNode, SumNode
from .errors import (
    ConfigError,
    DimensionError,
    InvalidParameterError,
    MomentDoesNotExistError,
    NumericError,
    QuadratureUnderflowError,
)
from .leaves import i_power
from .quadrature import QuadratureConfig

MOMENT_IMAG_TOL = 1e-9
THREADS_ENV = "CHARCIRC_THREADS"


def _as_batch(values, dim: int, what: str) -> tuple[np.ndarray, bool]:
    arr = np.asarray(values, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise DimensionError(f"{what} must have {dim} columns, got shape {np.shape(values)}")
    return arr, single


def forward_cf(circuit: Circuit, T: np.ndarray) -> dict:
    """CF value of every reachable node at the rows of ``T`` (shape ``(m, d)``)."""
    values = {}
    nodes = circuit.nodes
    for nid in circuit.order:
        node = nodes[nid]
        if isinstance(node, LeafNode):
            values[nid] = node.leaf.cf(T[:, node.var])
        elif isinstance(node, ProductNode):
            acc = values[node.children[0]].copy()
            for c in node.children[1:]:
                acc *= values[c]
            values[nid] = acc
        else:
            acc = np.zeros(T.shape[0], dtype=complex)
            for c, w in zip(node.children, node.weights):
                acc += w * values[c]
            values[nid] = acc
    return values


def evaluate_cf(circuit: Circuit, t):
    """``phi(t)`` for one frequency vector ``t`` (length ``dim``) or a batch ``(m, dim)``."""
    circuit.check()
    T, single = _as_batch(t, circuit.dim, "frequency vector")
    if not np.all(np.isfinite(T)):
        raise DimensionError("frequencies must be finite")
    out = forward_cf(circuit, T)[circuit.root]
    return complex(out[0]) if single else out


def _resolve_threads(threads) -> int:
    if threads is None:
        threads = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(threads)
    except (TypeError, ValueError):
        raise ConfigError(f"thread count must be an integer, got {threads!r}") from None
    if n < 1:
        raise ConfigError(f"thread count must be >= 1, got {n}")
    return n


def _log_density_rows(circuit: Circuit, X: np.ndarray, quad, on_underflow, keep) -> np.ndarray:
    values = {}
    nodes = circuit.nodes
    n = X.shape[0]
    for nid in circuit.order:
        node = nodes[nid]
        if isinstance(node, LeafNode):
            if keep is not None and node.var not in keep:
                values[nid] = np.zeros(n)
                continue
            try:
                val = np.asarray(node.leaf.log_density(X[:, node.var], quad, on_underflow), dtype=float)
            except QuadratureUnderflowError as exc:
                raise QuadratureUnderflowError(f"leaf node {nid}: {exc}", raw=exc.raw) from exc
            except NumericError as exc:
                raise NumericError(f"leaf node {nid}: {exc}") from exc
            if np.any(np.isnan(val)):
                raise NumericError(f"leaf node {nid} ({node.leaf.family}) produced NaN log-density")
            values[nid] = val
        elif isinstance(node, ProductNode):
            acc = values[node.children[0]].copy()
            for c in node.children[1:]:
                acc += values[c]
            values[nid] = acc
        else:
            with np.errstate(divide="ignore"):
                logw = np.log(np.asarray(node.weights))
            stacked = np.stack([values[c] for c in node.children])
            values[nid] = logsumexp(stacked + logw[:, None], axis=0)
    return values[circuit.root]


def _run_rows(circuit, X, quad, on_underflow, keep, threads):
    n_threads = min(_resolve_threads(threads), max(1, X.shape[0]))
    if n_threads == 1:
        return _log_density_rows(circuit, X, quad, on_underflow, keep)
    chunks = np.array_split(X, n_threads)
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        parts = list(pool.map(lambda c: _log_density_rows(circuit, c, quad, on_underflow, keep), chunks))
    return np.concatenate(parts)


def log_density(circuit: Circuit, x, quad: QuadratureConfig | None = None, *,
                on_underflow: str = "raise", threads=None):
    """``log f(x)`` for one assignment (length ``dim``) or a batch ``(n, dim)``.

    Values outside a categorical leaf's states give ``-inf``.  ``threads``
    splits the rows into order-preserving chunks (default from the
    ``CHARCIRC_THREADS`` environment variable, else 1).
    """
    circuit.check()
    X, single = _as_batch(x, circuit.dim, "assignment")
    out = _run_rows(circuit, X, quad or QuadratureConfig(), on_underflow, None, threads)
    return float(out[0]) if single else out


def _keep_set(circuit: Circuit, keep) -> tuple:
    keep = tuple(sorted(set(int(k) for k in keep)))
    if not keep:
        raise InvalidParameterError("keep must name at least one variable")
    if keep[0] < 0 or keep[-1] >= circuit.dim:
        raise DimensionError(f"keep {keep} has indices outside 0..{circuit.dim - 1}")
    return keep


def _pad(circuit: Circuit, keep: tuple, sub, what: str) -> tuple[np.ndarray, bool]:
    S, single = _as_batch(sub, len(keep), what)
    full = np.zeros((S.shape[0], circuit.dim))
    full[:, list(keep)] = S
    return full, single


def marginal_cf(circuit: Circuit, keep, t_sub):
    """CF of the marginal over ``keep``; ``t_sub`` is ordered like ``sorted(keep)``.

    Computed as :func:`evaluate_cf` with zeros for the dropped coordinates.
    """
    keep = _keep_set(circuit, keep)
    full, single = _pad(circuit, keep, t_sub, "marginal frequency vector")
    return evaluate_cf(circuit, full[0] if single else full)


def marginal_log_density(circuit: Circuit, keep, x_sub, quad: QuadratureConfig | None = None, *,
                         on_underflow: str = "raise", threads=None):
    """Log-density of the marginal over ``keep``; ``x_sub`` is ordered like ``sorted(keep)``.

    Leaves on dropped variables integrate to one and contribute nothing.
    """
    circuit.check()
    keep = _keep_set(circuit, keep)
    full, single = _pad(circuit, keep, x_sub, "marginal assignment")
    out = _run_rows(circuit, full, quad or QuadratureConfig(), on_underflow, set(keep), threads)
    return float(out[0]) if single else out


def moment(circuit: Circuit, order) -> float:
    """Raw mixed moment ``E[prod_j X_j ** order[j]]``.

    Differentiates the circuit CF at the origin bottom-up and rescales by
    ``i ** -sum(order)``.
    """
    circuit.check()
    order = list(order)
    if len(order) != circuit.dim:
        raise DimensionError(f"order must have {circuit.dim} entries, got {len(order)}")
    if any(int(k) != k or k < 0 for k in order) or not any(order):
        raise InvalidParameterError("order must hold non-negative integers with at least one positive entry")
    order = [int(k) for k in order]
    values = {}
    nodes = circuit.nodes
    for nid in circuit.order:
        node = nodes[nid]
        if isinstance(node, LeafNode):
            try:
                values[nid] = complex(node.leaf.cf_derivative_at_zero(order[node.var]))
            except MomentDoesNotExistError as exc:
                raise MomentDoesNotExistError(f"leaf node {nid}: {exc}", node=nid) from exc
        elif isinstance(node, ProductNode):
            acc = 1.0 + 0j
            for c in node.children:
                acc *= values[c]
            values[nid] = acc
        elif isinstance(node, SumNode):
            values[nid] = sum(w * values[c] for c, w in zip(node.children, node.weights))
    value = values[circuit.root] * i_power(-sum(order))
    if abs(value.imag) > MOMENT_IMAG_TOL * max(abs(value.real), 1.0):
        raise NumericError(f"moment has imaginary residue {value.imag!r}")
    return float(value.real)
