"""Squared characteristic function distance (CFD) between distributions.

``CFD(P, Q) = E_{t ~ omega}|phi_P(t) - phi_Q(t)|**2`` with ``omega`` a product of
zero-mean Gaussians with standard deviation ``eta``.  It is estimated by Monte
Carlo for anything with a CF, and computed in closed form for pairs of
compatible circuits with Gaussian and categorical leaves.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .circuit import Circuit, LeafNode, ProductNode, write_text_atomic
from .errors import ConfigError, DataError, DimensionError, IncompatibleCircuitsError, UnsupportedAnalyticError
from .inference import forward_cf
from .leaves import CATEGORICAL, GAUSSIAN, Categorical, Gaussian, Leaf

_ECF_CHUNK = 1 << 22  # max entries of the (freqs x rows) phase matrix per chunk


@dataclass(frozen=True)
class CfdConfig:
    eta: float = 1.0
    num_freqs: int = 100
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise ConfigError(f"eta must be positive, got {self.eta!r}")
        if int(self.num_freqs) != self.num_freqs or self.num_freqs < 1:
            raise ConfigError(f"num_freqs must be a positive integer, got {self.num_freqs!r}")


class EcfModel:
    """Empirical characteristic function of an ``(n, d)`` sample."""

    def __init__(self, data):
        X = np.asarray(data, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 1:
            raise DataError("ECF needs a non-empty (n, d) data matrix")
        if not np.all(np.isfinite(X)):
            raise DataError("ECF data must be finite")
        self.data = X
        self.dim = X.shape[1]

    def cf(self, T) -> np.ndarray:
        T = np.asarray(T, dtype=float)
        if T.ndim == 1:
            return self.cf(T[None, :])[0]
        if T.shape[1] != self.dim:
            raise DimensionError(f"frequencies need {self.dim} columns, got {T.shape[1]}")
        n = self.data.shape[0]
        step = max(1, _ECF_CHUNK // n)
        out = np.empty(T.shape[0], dtype=complex)
        for s in range(0, T.shape[0], step):
            phase = T[s:s + step] @ self.data.T
            out[s:s + step] = np.exp(1j * phase).mean(axis=1)
        return out


def ecf_eval(ecf: EcfModel, t):
    return ecf.cf(t)


def _dim_of(obj) -> int:
    if isinstance(obj, (Circuit, EcfModel)):
        return obj.dim
    if isinstance(obj, Leaf):
        return 1
    dim = getattr(obj, "dim", None)
    if dim is None:
        raise TypeError(f"cannot infer the dimension of {type(obj).__name__}")
    return int(dim)


def cf_values(obj, T: np.ndarray) -> np.ndarray:
    """CF of a circuit, ECF model, leaf or any object with ``cf(T)`` at rows of ``T``."""
    if isinstance(obj, Circuit):
        obj.check()
        return forward_cf(obj, T)[obj.root]
    if isinstance(obj, Leaf):
        return obj.cf(T[:, 0])
    return np.asarray(obj.cf(T), dtype=complex)


def draw_frequencies(dim: int, num_freqs: int, seed: int) -> np.ndarray:
    """Standard-normal draws of shape ``(num_freqs, dim)``; scale by ``eta`` to sample ``omega``."""
    return np.random.default_rng(seed).standard_normal((num_freqs, dim))


class CfdEstimate(NamedTuple):
    value: float
    stderr: float


def squared_diff_stats(diff: np.ndarray) -> CfdEstimate:
    sq = diff.real**2 + diff.imag**2
    k = sq.size
    stderr = float(np.std(sq, ddof=1) / math.sqrt(k)) if k > 1 else 0.0
    return CfdEstimate(float(np.mean(sq)), stderr)


def mc_cfd(phi_a, phi_b, cfg: CfdConfig | None = None) -> CfdEstimate:
    """Monte-Carlo CFD with its standard error; deterministic given ``cfg.seed``."""
    cfg = cfg or CfdConfig()
    dim = _dim_of(phi_a)
    if _dim_of(phi_b) != dim:
        raise DimensionError(f"operands have dimensions {dim} and {_dim_of(phi_b)}")
    T = cfg.eta * draw_frequencies(dim, cfg.num_freqs, cfg.seed)
    return squared_diff_stats(cf_values(phi_a, T) - cf_values(phi_b, T))


# analytic CFD ---------------------------------------------------------------

def _pair_integral(a: Leaf, b: Leaf, eta: float) -> float:
    """``E_omega[phi_a(t) conj(phi_b(t))]`` for one coordinate; always real."""
    inv = 1.0 / eta**2
    if isinstance(a, Gaussian) and isinstance(b, Gaussian):
        s2 = a.sigma2 + b.sigma2 + inv
        return math.exp(-((a.mu - b.mu) ** 2) / (2 * s2)) / (eta * math.sqrt(s2))
    if isinstance(a, Categorical) and isinstance(b, Categorical):
        d = np.subtract.outer(a._s, b._s)
        return float(a._p @ np.exp(-0.5 * eta**2 * d * d) @ b._p)
    if isinstance(a, Categorical) and isinstance(b, Gaussian):
        a, b = b, a
    if isinstance(a, Gaussian) and isinstance(b, Categorical):
        s2 = a.sigma2 + inv
        terms = np.exp(-((a.mu - b._s) ** 2) / (2 * s2)) / (eta * math.sqrt(s2))
        return float(b._p @ terms)
    fams = {a.family, b.family} - {GAUSSIAN, CATEGORICAL}
    raise UnsupportedAnalyticError(
        f"no closed-form CFD for {sorted(fams)} leaves; use mc_cfd instead"
    )


def _walk_pairs(a: Circuit, b: Circuit):
    """Yield ``(ia, ib)`` pairs visited by the cross-term recursion, children first.

    Raises :class:`IncompatibleCircuitsError` at the first structural mismatch.
    """
    seen = set()
    order = []
    stack = [((a.root, b.root), False)]
    while stack:
        pair, expanded = stack.pop()
        if expanded:
            order.append(pair)
            continue
        if pair in seen:
            continue
        seen.add(pair)
        ia, ib = pair
        na, nb = a.nodes[ia], b.nodes[ib]
        if type(na) is not type(nb):
            raise IncompatibleCircuitsError(
                f"node {ia} ({type(na).__name__}) vs node {ib} ({type(nb).__name__}): types differ"
            )
        if isinstance(na, LeafNode):
            if na.var != nb.var:
                raise IncompatibleCircuitsError(f"leaf {ia} on var {na.var} vs leaf {ib} on var {nb.var}")
            children = []
        elif len(na.children) != len(nb.children):
            raise IncompatibleCircuitsError(
                f"node {ia} has {len(na.children)} children, node {ib} has {len(nb.children)}"
            )
        elif isinstance(na, ProductNode):
            parts_a = [a.scope(c) for c in na.children]
            parts_b = [b.scope(c) for c in nb.children]
            if parts_a != parts_b:
                raise IncompatibleCircuitsError(
                    f"products {ia} and {ib} partition their scope differently: {parts_a} vs {parts_b}"
                )
            children = list(zip(na.children, nb.children))
        else:
            children = [(ca, cb) for ca in na.children for cb in nb.children]
        stack.append((pair, True))
        for child in reversed(children):
            if child not in seen:
                stack.append((child, False))
    return order


def compatibility_check(a: Circuit, b: Circuit) -> tuple[bool, str | None]:
    """Whether the closed-form CFD recursion applies to ``(a, b)``, and the first mismatch."""
    if a.dim != b.dim:
        return False, f"dimensions differ ({a.dim} vs {b.dim})"
    a.check()
    b.check()
    for x, y in ((a, b), (a, a), (b, b)):
        try:
            _walk_pairs(x, y)
        except IncompatibleCircuitsError as exc:
            return False, str(exc)
    return True, None


def _cross_term(a: Circuit, b: Circuit, eta: float) -> float:
    vals = {}
    for ia, ib in _walk_pairs(a, b):
        na, nb = a.nodes[ia], b.nodes[ib]
        if isinstance(na, LeafNode):
            vals[ia, ib] = _pair_integral(na.leaf, nb.leaf, eta)
        elif isinstance(na, ProductNode):
            v = 1.0
            for ca, cb in zip(na.children, nb.children):
                v *= vals[ca, cb]
            vals[ia, ib] = v
        else:
            v = 0.0
            for ca, wa in zip(na.children, na.weights):
                for cb, wb in zip(nb.children, nb.weights):
                    v += wa * wb * vals[ca, cb]
            vals[ia, ib] = v
    return vals[a.root, b.root]


def analytic_cfd(a: Circuit, b: Circuit, eta: float = 1.0) -> float:
    """Closed-form CFD between compatible Gaussian/categorical circuits."""
    if not (math.isfinite(eta) and eta > 0):
        raise ConfigError(f"eta must be positive, got {eta!r}")
    ok, why = compatibility_check(a, b)
    if not ok:
        raise IncompatibleCircuitsError(why)
    value = _cross_term(a, a, eta) + _cross_term(b, b, eta) - 2.0 * _cross_term(a, b, eta)
    return max(value, 0.0)


# profiles -------------------------------------------------------------------

def default_eta_grid(num: int = 25, low: float = -2.0, high: float = 2.0) -> np.ndarray:
    """``eta`` values equally spaced in natural log between ``low`` and ``high``."""
    return np.exp(np.linspace(low, high, num))


@dataclass(frozen=True)
class CfdProfile:
    rows: tuple  # (eta, cfd, stderr)

    @property
    def argmax(self) -> tuple:
        return max(self.rows, key=lambda r: r[1])

    @property
    def max_cfd(self) -> float:
        return self.argmax[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["eta", "cfd", "stderr"])
        for row in self.rows:
            writer.writerow([format(float(v), ".17g") for v in row])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        write_text_atomic(path, self.to_csv())


def cfd_profile(phi_a, phi_b, eta_grid=None, cfg: CfdConfig | None = None) -> CfdProfile:
    """Monte-Carlo CFD at every ``eta`` in the grid, all sharing ``cfg.seed``."""
    cfg = cfg or CfdConfig()
    grid = default_eta_grid() if eta_grid is None else np.asarray(eta_grid, dtype=float).ravel()
    if grid.size == 0:
        raise ConfigError("eta grid is empty")
    rows = []
    for eta in grid:
        est = mc_cfd(phi_a, phi_b, CfdConfig(float(eta), cfg.num_freqs, cfg.seed))
        rows.append((float(eta), est.value, est.stderr))
    return CfdProfile(tuple(rows))
