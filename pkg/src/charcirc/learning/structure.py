"""Recursive structure learning and random structures.

Sum nodes come from clustering the rows of a slice, product nodes from
splitting its variables into mutually independent groups.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.stats import chi2, rankdata
from sklearn.cluster import KMeans

from ..circuit import CONTINUOUS, DISCRETE, Circuit, CircuitBuilder
from ..errors import ConfigError, DataError
from ..leaves import (
    ALPHA_STABLE,
    CATEGORICAL,
    DEFAULT_SMOOTHING,
    ECF,
    FAMILIES,
    GAUSSIAN,
    AlphaStable,
    Categorical,
    Gaussian,
    fit_leaf,
)

GTEST = "gtest"
RDC = "rdc"
DEFAULT_LEAF_POLICY = {DISCRETE: CATEGORICAL, CONTINUOUS: GAUSSIAN}


@dataclass(frozen=True)
class StructureConfig:
    min_k: int = 100
    k_sum: int = 2
    k_prod: int = 2
    split_method: str = GTEST
    rdc_threshold: float | None = None
    leaf_policy: dict = field(default_factory=lambda: dict(DEFAULT_LEAF_POLICY))
    seed: int = 0
    significance: float = 0.05
    smoothing: float = DEFAULT_SMOOTHING
    rdc_features: int = 20
    rdc_scale: float = 1.0 / 6.0

    def __post_init__(self):
        if int(self.min_k) != self.min_k or self.min_k < 1:
            raise ConfigError(f"min_k must be a positive integer, got {self.min_k!r}")
        for name in ("k_sum", "k_prod"):
            v = getattr(self, name)
            if int(v) != v or v < 2:
                raise ConfigError(f"{name} must be an integer >= 2, got {v!r}")
        if self.split_method not in (GTEST, RDC):
            raise ConfigError(f"split_method must be 'gtest' or 'rdc', got {self.split_method!r}")
        if self.split_method == RDC:
            if self.rdc_threshold is None or not 0 < self.rdc_threshold < 1:
                raise ConfigError(f"rdc mode needs a threshold in (0, 1), got {self.rdc_threshold!r}")
        elif self.rdc_threshold is not None:
            raise ConfigError("rdc_threshold is only used with split_method='rdc'")
        if not 0 < self.significance < 1:
            raise ConfigError(f"significance must lie in (0, 1), got {self.significance!r}")
        if self.smoothing < 0:
            raise ConfigError("smoothing must be non-negative")
        for kind, fam in self.leaf_policy.items():
            if kind not in (DISCRETE, CONTINUOUS) or fam not in FAMILIES:
                raise ConfigError(f"bad leaf policy entry {kind!r} -> {fam!r}")
        if self.leaf_policy.get(DISCRETE, CATEGORICAL) != CATEGORICAL:
            # densities of discrete columns are probabilities of states
            raise ConfigError("discrete columns must use categorical leaves")


# clustering -----------------------------------------------------------------

def _kmeans_features(X: np.ndarray, kinds) -> np.ndarray:
    cols = []
    for j, kind in enumerate(kinds):
        x = X[:, j]
        if kind == DISCRETE:
            states, inv = np.unique(x, return_inverse=True)
            cols.append(np.eye(states.size)[inv] / math.sqrt(2.0))
        else:
            sd = x.std()
            cols.append(((x - x.mean()) / (sd if sd > 0 else 1.0))[:, None])
    return np.hstack(cols)


def kmeans_partition(rows, k: int, seed: int = 0, kinds=None) -> list:
    """Row-index arrays of the non-empty k-means clusters, ordered by first row.

    Continuous columns are z-scored and discrete ones one-hot encoded and
    scaled by ``1/sqrt(2)``.  Fewer than ``k`` distinct rows give one cluster.
    """
    X = np.asarray(rows, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if k < 2:
        raise ConfigError("k must be at least 2")
    kinds = kinds or (CONTINUOUS,) * X.shape[1]
    F = _kmeans_features(X, kinds)
    if np.unique(F, axis=0).shape[0] < k:
        return [np.arange(X.shape[0])]
    labels = KMeans(n_clusters=k, init="k-means++", n_init=3, random_state=seed).fit_predict(F)
    groups = [np.flatnonzero(labels == c) for c in range(k)]
    groups = [g for g in groups if g.size]
    return sorted(groups, key=lambda g: g[0])


# independence tests ---------------------------------------------------------

def _discretize(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == DISCRETE:
        return np.unique(x, return_inverse=True)[1]
    n = x.size
    bins = math.ceil(math.sqrt(n))
    ranks = rankdata(x, method="average")
    return np.minimum(((ranks - 1) * bins / n).astype(int), bins - 1)


def g_test(a: np.ndarray, b: np.ndarray) -> tuple[float, int, float]:
    """Williams-corrected G statistic, degrees of freedom and log p-value.

    ``a`` and ``b`` are integer codes of two discretised columns.
    """
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    R, C = ia.max() + 1, ib.max() + 1
    n = a.size
    dof = (R - 1) * (C - 1)
    if dof == 0:
        return 0.0, 0, 0.0
    obs = np.zeros((R, C))
    np.add.at(obs, (ia, ib), 1.0)
    rows, cols = obs.sum(axis=1), obs.sum(axis=0)
    exp = np.outer(rows, cols) / n
    nz = obs > 0
    g = 2.0 * float(np.sum(obs[nz] * np.log(obs[nz] / exp[nz])))
    q = 1.0 + (n * np.sum(1.0 / rows) - 1.0) * (n * np.sum(1.0 / cols) - 1.0) / (6.0 * n * dof)
    stat = g / q
    return stat, dof, float(chi2.logsf(stat, dof))


def _rdc_features(x: np.ndarray, k: int, s: float, rng) -> np.ndarray:
    u = rankdata(x, method="average") / x.size
    Z = np.column_stack([u, np.ones_like(u)])
    W = rng.standard_normal((2, k)) * (s / Z.shape[1])
    return np.sin(Z @ W)


def _orthobasis(F: np.ndarray) -> np.ndarray:
    F = F - F.mean(axis=0)
    U, sv, _ = np.linalg.svd(F, full_matrices=False)
    keep = sv > sv.max(initial=0.0) * 1e-10 if sv.size else sv.astype(bool)
    return U[:, keep]


def _max_canonical_corr(Fa: np.ndarray, Fb: np.ndarray) -> float:
    Qa, Qb = _orthobasis(Fa), _orthobasis(Fb)
    if Qa.shape[1] == 0 or Qb.shape[1] == 0:
        return 0.0
    sv = np.linalg.svd(Qa.T @ Qb, compute_uv=False)
    return float(min(sv.max(initial=0.0), 1.0))


def rdc(x, y, k: int = 20, s: float = 1.0 / 6.0, seed: int = 0) -> float:
    """Randomized dependence coefficient between two samples."""
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return _max_canonical_corr(_rdc_features(x, k, s, rng), _rdc_features(y, k, s, rng))


def _components(d: int, edges) -> list:
    parent = list(range(d))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups = {}
    for i in range(d):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def _merge_to(groups: list, strength: np.ndarray, limit: int) -> list:
    """Merge the most strongly linked groups until at most ``limit`` remain."""
    groups = [list(g) for g in groups]
    while len(groups) > limit:
        best, pair = -np.inf, (0, 1)
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                link = strength[np.ix_(groups[a], groups[b])].max()
                if link > best:
                    best, pair = link, (a, b)
        a, b = pair
        groups[a] = sorted(groups[a] + groups.pop(b))
    return sorted(groups, key=lambda g: g[0])


def independence_partition(X, kinds, method: str = GTEST, *, k_prod: int = 2, threshold: float | None = None,
                           significance: float = 0.05, rdc_features: int = 20, rdc_scale: float = 1.0 / 6.0,
                           seed: int = 0):
    """Groups of column indices that are mutually independent, or ``None``.

    ``gtest``: an edge joins two columns whose G-test p-value falls below the
    Bonferroni-corrected level; components are then merged down to at most
    ``k_prod`` groups, most strongly linked first.  ``rdc``: an edge joins
    columns whose RDC exceeds ``threshold``; components are used as they are.
    """
    X = np.asarray(X, dtype=float)
    d = X.shape[1]
    if d < 2:
        raise DataError("need at least two variables to split")
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    strength = np.full((d, d), -np.inf)
    edges = []
    if method == GTEST:
        codes = [_discretize(X[:, j], kinds[j]) for j in range(d)]
        log_level = math.log(significance / len(pairs))
        for i, j in pairs:
            _, _, logp = g_test(codes[i], codes[j])
            strength[i, j] = strength[j, i] = -logp
            if logp < log_level:
                edges.append((i, j))
    elif method == RDC:
        if threshold is None:
            raise ConfigError("rdc splitting needs a threshold")
        rng = np.random.default_rng(seed)
        feats = [_rdc_features(X[:, j], rdc_features, rdc_scale, rng) for j in range(d)]
        bases = [_orthobasis(f) for f in feats]
        for i, j in pairs:
            if bases[i].shape[1] == 0 or bases[j].shape[1] == 0:
                r = 0.0
            else:
                r = float(min(np.linalg.svd(bases[i].T @ bases[j], compute_uv=False).max(), 1.0))
            strength[i, j] = strength[j, i] = r
            if r > threshold:
                edges.append((i, j))
    else:
        raise ConfigError(f"unknown split method {method!r}")
    groups = _components(d, edges)
    if method == GTEST and len(groups) > k_prod:
        groups = _merge_to(groups, strength, k_prod)
    return groups if len(groups) >= 2 else None


# structure learning -----------------------------------------------------------

@dataclass
class LearnInfo:
    """Diagnostics from one :func:`learn_structure` run."""

    max_depth: int = 0
    sum_slices: dict = field(default_factory=dict)  # sum node id -> child slice sizes
    naive_factorizations: int = 0
    forced_splits: int = 0
    summary: dict = field(default_factory=dict)


class _Learner:
    def __init__(self, X, kinds, cfg: StructureConfig, states):
        self.X = X
        self.kinds = kinds
        self.cfg = cfg
        self.b = CircuitBuilder()
        self.info = LearnInfo()
        self.rng = np.random.default_rng(cfg.seed)
        self.states = states

    def leaf(self, rows, var):
        kind = self.kinds[var]
        family = self.cfg.leaf_policy.get(kind, DEFAULT_LEAF_POLICY[kind])
        leaf = fit_leaf(family, self.X[rows, var], states=self.states[var], smoothing=self.cfg.smoothing)
        return self.b.add_leaf(var, leaf)

    def naive(self, rows, vars_, depth):
        self.info.naive_factorizations += 1
        self.info.max_depth = max(self.info.max_depth, depth + 1)
        return self.b.add_product([self.leaf(rows, v) for v in vars_])

    def build_sum(self, rows, vars_, depth=0, retry=False):
        self.info.max_depth = max(self.info.max_depth, depth)
        if len(vars_) == 1:
            return self.leaf(rows, vars_[0])
        if rows.size <= self.cfg.min_k:
            return self.naive(rows, vars_, depth)
        sub = self.X[np.ix_(rows, vars_)]
        clusters = kmeans_partition(sub, self.cfg.k_sum, self.cfg.seed, [self.kinds[v] for v in vars_])
        if len(clusters) < 2:
            return self.naive(rows, vars_, depth)
        children = [self.build_prod(rows[c], vars_, depth + 1, retry) for c in clusters]
        sizes = [c.size for c in clusters]
        nid = self.b.add_sum(children, [s / rows.size for s in sizes])
        self.info.sum_slices[nid] = sizes
        return nid

    def build_prod(self, rows, vars_, depth, from_retry):
        self.info.max_depth = max(self.info.max_depth, depth)
        cfg = self.cfg
        groups = independence_partition(
            self.X[np.ix_(rows, vars_)], [self.kinds[v] for v in vars_], cfg.split_method,
            k_prod=cfg.k_prod, threshold=cfg.rdc_threshold, significance=cfg.significance,
            rdc_features=cfg.rdc_features, rdc_scale=cfg.rdc_scale, seed=cfg.seed,
        )
        if groups is None:
            if not from_retry:
                return self.build_sum(rows, vars_, depth + 1, retry=True)
            self.info.forced_splits += 1
            perm = self.rng.permutation(len(vars_))
            half = len(vars_) // 2
            groups = [sorted(perm[:half].tolist()), sorted(perm[half:].tolist())]
            groups.sort(key=lambda g: g[0])
        children = [self.build_sum(rows, [vars_[i] for i in g], depth + 1) for g in groups]
        return self.b.add_product(children)


class LearnResult(NamedTuple):
    circuit: Circuit
    info: LearnInfo


def _table(data, kinds=None):
    X = getattr(data, "values", data)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise DataError("structure learning needs a non-empty (n, d) table")
    if kinds is None:
        kinds = getattr(data, "kinds", None)
    if kinds is None:
        raise DataError("column kinds are required")
    kinds = tuple(kinds)
    if len(kinds) != X.shape[1]:
        raise DataError(f"{len(kinds)} column kinds for {X.shape[1]} columns")
    return X, kinds


def _domains(X, kinds, states) -> list:
    """State tuple per discrete column: the observed values plus any given in ``states``."""
    states = dict(states or {})
    bad = [j for j in states if not (isinstance(j, (int, np.integer)) and 0 <= j < X.shape[1])]
    if bad:
        raise ConfigError(f"states given for unknown columns {bad}")
    out = []
    for j, kind in enumerate(kinds):
        if kind != DISCRETE:
            if j in states:
                raise ConfigError(f"states given for continuous column {j}")
            out.append(None)
            continue
        out.append(tuple(sorted(set(np.unique(X[:, j]).tolist()) | set(map(float, states.get(j, ()))))))
    return out


def learn_structure(data, cfg: StructureConfig | None = None, *, kinds=None, states=None,
                    return_info: bool = False):
    """Learn a smooth, decomposable circuit from a typed table.

    ``data`` is a :class:`~charcirc.data.Dataset` or an array together with
    ``kinds``.  ``states`` optionally maps discrete column indices to their
    full domain, so that values absent from the training rows keep a smoothed
    probability.  With ``return_info`` a :class:`LearnResult` is returned.
    """
    cfg = cfg or StructureConfig()
    X, kinds = _table(data, kinds)
    learner = _Learner(X, kinds, cfg, _domains(X, kinds, states))
    root = learner.build_sum(np.arange(X.shape[0]), list(range(X.shape[1])))
    circuit = learner.b.build(root, X.shape[1], kinds).check()
    if not return_info:
        return circuit
    learner.info.summary = circuit.summary()
    return LearnResult(circuit, learner.info)


# random structures ------------------------------------------------------------

def _random_leaf(family: str, col: np.ndarray, rng, states=None) -> object:
    # unit scale, location drawn from N(column mean, 1)
    mean = float(col.mean())
    if family == CATEGORICAL:
        states = np.unique(col) if states is None else np.asarray(states)
        p = rng.random(states.size) + 1e-3
        return Categorical(tuple(states), tuple(p / p.sum()))
    if family == GAUSSIAN:
        return Gaussian(float(rng.normal(mean, 1.0)), 1.0)
    if family == ALPHA_STABLE:
        return AlphaStable(float(rng.uniform(1.2, 1.9)), 0.0, 1.0 / math.sqrt(2.0), float(rng.normal(mean, 1.0)))
    if family == ECF:
        return fit_leaf(ECF, col)
    raise ConfigError(f"unknown leaf family {family!r}")


def build_random_structure(dim: int, column_kinds, data=None, seed: int = 0, *, n_children: int = 2,
                           leaf_policy: dict | None = None, states=None) -> Circuit:
    """Random circuit alternating mixtures and random balanced scope splits.

    Each sum has ``n_children`` product children with random weights; each
    product splits its scope into two random halves.  Leaves have unit scale
    and locations drawn from a unit normal around the column mean of ``data``;
    categorical leaves get uniformly drawn, normalised probabilities over the
    column's states (widened by ``states`` as in :func:`learn_structure`).
    Without data, columns are taken as standard normal or three-state.
    """
    if int(dim) != dim or dim < 1:
        raise ConfigError(f"dim must be a positive integer, got {dim!r}")
    kinds = tuple(column_kinds)
    if len(kinds) != dim:
        raise ConfigError(f"{len(kinds)} column kinds for dim={dim}")
    if n_children < 1:
        raise ConfigError("n_children must be positive")
    policy = dict(DEFAULT_LEAF_POLICY)
    policy.update(leaf_policy or {})
    rng = np.random.default_rng(seed)
    if data is not None:
        X = np.asarray(getattr(data, "values", data), dtype=float)
        if X.ndim != 2 or X.shape[1] != dim:
            raise DataError(f"data must have {dim} columns")
    else:
        X = np.column_stack([
            rng.integers(1, 4, 30).astype(float) if k == DISCRETE else rng.standard_normal(30) for k in kinds
        ])
    domains = _domains(X, kinds, states)
    b = CircuitBuilder()

    def leaf(var):
        return b.add_leaf(var, _random_leaf(policy[kinds[var]], X[:, var], rng, domains[var]))

    def build_sum(scope):
        if len(scope) == 1:
            return leaf(scope[0])
        children = [build_prod(scope) for _ in range(n_children)]
        w = rng.random(n_children) + 1e-3
        return b.add_sum(children, w / w.sum())

    def build_prod(scope):
        perm = [scope[i] for i in rng.permutation(len(scope))]
        half = len(scope) // 2
        parts = sorted([sorted(perm[:half]), sorted(perm[half:])], key=lambda p: p[0])
        return b.add_product([build_sum(p) for p in parts])

    if dim == 1:
        root = b.add_sum([leaf(0)], [1.0])
    else:
        root = build_sum(list(range(dim)))
    return b.build(root, dim, kinds).check()
