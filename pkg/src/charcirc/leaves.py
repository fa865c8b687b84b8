"""Univariate leaf distributions described by their characteristic functions.

Every leaf exposes the same small surface:

* ``cf(t)``: characteristic function, vectorised over ``t``;
* ``log_density(x, quad)``: closed form where one exists, otherwise numerical
  inversion of the characteristic function with Gauss-Hermite quadrature;
* ``cf_derivative_at_zero(k)``: ``d^k phi / dt^k`` at ``t = 0``;
* ``free_params()`` / ``with_free_params(theta)`` / ``cf_grad(t)``: an
  unconstrained parameterisation used by gradient-based learning.

Discrete leaves have densities with respect to counting measure, continuous
ones with respect to Lebesgue measure.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import ClassVar

import numpy as np
from scipy.special import expit, logit, softmax

from ._mcculloch import ALPHA_MAX, ALPHA_MIN, mcculloch_fit
from .errors import (
    ConfigError,
    DataError,
    InvalidParameterError,
    MomentDoesNotExistError,
    NumericError,
    QuadratureUnderflowError,
    QuadratureUnderflowWarning,
    UnsupportedAnalyticError,
)
from .quadrature import QuadratureConfig, abs_mass, default_scale, invert_cf

GAUSSIAN = "gaussian"
CATEGORICAL = "categorical"
ALPHA_STABLE = "alpha_stable"
ECF = "ecf"
FAMILIES = (GAUSSIAN, CATEGORICAL, ALPHA_STABLE, ECF)

VAR_FLOOR = 1e-6
DEFAULT_SMOOTHING = 0.1
DENSITY_FLOOR = 1e-300
LOG_DENSITY_FLOOR = math.log(DENSITY_FLOOR)
IMAG_RESIDUE_TOL = 1e-6
# Below this distance from alpha=1 the alpha-derivative is taken numerically.
_ALPHA_ONE_BAND = 1e-3
_ALPHA_FD_STEP = 1e-6
_STATE_TOL = 1e-9

_I_POWERS = (1.0 + 0j, 1j, -1.0 + 0j, -1j)


def i_power(k: int) -> complex:
    """``1j ** k`` without rounding error."""
    return _I_POWERS[k % 4]


def _freqs(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise DataError("frequencies must be finite")
    return t


def _scalar_or_array(arr, like):
    return arr[()] if np.ndim(like) == 0 else arr


def _check_order(k) -> int:
    if int(k) != k or k < 0:
        raise InvalidParameterError(f"derivative order must be a non-negative integer, got {k!r}")
    return int(k)


class Leaf:
    """Common behaviour of the leaf families."""

    family: ClassVar[str]

    def cf(self, t):
        raise NotImplementedError

    def log_density(self, x, quad: QuadratureConfig | None = None, on_underflow: str = "raise"):
        return quadrature_log_density(self, x, quad, on_underflow)

    def cf_derivative_at_zero(self, k: int) -> complex:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    # parameterisation for learning
    def free_params(self) -> np.ndarray:
        return np.empty(0)

    def with_free_params(self, theta) -> "Leaf":
        return self

    def cf_grad(self, t) -> tuple[np.ndarray, np.ndarray]:
        """``(phi(t), d phi / d theta)``; the Jacobian has shape ``(n_free, len(t))``."""
        t = _freqs(t)
        return self.cf(t), np.empty((0,) + t.shape, dtype=complex)

    @property
    def n_free(self) -> int:
        return self.free_params().size

    # inversion hooks
    def _inversion_cf(self, t):
        return self.cf(t)

    def _decay(self) -> tuple[float, float]:
        """``(c, alpha)`` such that ``|phi(t)|`` behaves like ``exp(-|c t|**alpha)``."""
        raise UnsupportedAnalyticError(f"{self.family} leaves cannot be inverted numerically")


def invert_density(leaf: Leaf, x, quad: QuadratureConfig | None = None) -> np.ndarray:
    """Real part of the quadrature inversion of ``leaf`` at ``x`` (may be <= 0)."""
    quad = quad or QuadratureConfig()
    x = np.asarray(x, dtype=float)
    if quad.scale is not None:
        scale = quad.scale
    else:
        c, alpha = leaf._decay()
        scale = default_scale(quad.degree, c, alpha)
    raw = invert_cf(leaf._inversion_cf, x, quad.degree, scale)
    if not np.all(np.isfinite(raw)):
        raise NumericError(f"non-finite quadrature value for {leaf.family} leaf")
    mass = abs_mass(leaf._inversion_cf, quad.degree, scale)
    residue = np.max(np.abs(raw.imag), initial=0.0)
    if residue > IMAG_RESIDUE_TOL * max(mass, DENSITY_FLOOR):
        raise NumericError(
            f"imaginary residue {residue:.3g} of {leaf.family} inversion exceeds tolerance"
        )
    return raw.real


def quadrature_log_density(leaf: Leaf, x, quad: QuadratureConfig | None = None,
                           on_underflow: str = "raise"):
    """Log of the numerically inverted density.

    Non-positive quadrature values raise :class:`QuadratureUnderflowError` with
    ``on_underflow="raise"``; with ``"floor"`` they become ``log(1e-300)`` and a
    :class:`QuadratureUnderflowWarning` reports how many were replaced.
    """
    if on_underflow not in ("raise", "floor"):
        raise ConfigError(f"on_underflow must be 'raise' or 'floor', got {on_underflow!r}")
    raw = invert_density(leaf, x, quad)
    bad = raw <= 0
    if np.any(bad):
        if on_underflow == "raise":
            raise QuadratureUnderflowError(
                f"quadrature density of {leaf.family} leaf is non-positive at "
                f"{int(np.sum(bad))} point(s)",
                raw=raw[bad] if raw.ndim else float(raw),
            )
        n_bad = int(np.sum(bad))
        warnings.warn(
            QuadratureUnderflowWarning(
                f"{n_bad} non-positive quadrature densities floored at {DENSITY_FLOOR:g}", n_bad
            ),
            stacklevel=2,
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(bad, LOG_DENSITY_FLOOR, np.log(np.where(bad, 1.0, raw)))
    return _scalar_or_array(out, x)


@dataclass(frozen=True)
class Gaussian(Leaf):
    mu: float
    sigma2: float

    family: ClassVar[str] = GAUSSIAN

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma2) and self.sigma2 > 0):
            raise InvalidParameterError(
                f"Gaussian needs finite mu and sigma2 > 0, got mu={self.mu}, sigma2={self.sigma2}"
            )

    def cf(self, t):
        t = _freqs(t)
        return np.exp(1j * t * self.mu - 0.5 * self.sigma2 * t * t)

    def log_density(self, x, quad=None, on_underflow="raise"):
        x = np.asarray(x, dtype=float)
        out = -0.5 * (np.log(2 * np.pi * self.sigma2) + (x - self.mu) ** 2 / self.sigma2)
        return _scalar_or_array(out, x)

    def raw_moment(self, k: int) -> float:
        m_prev, m = 0.0, 1.0
        for j in range(1, k + 1):
            m_prev, m = m, self.mu * m + (j - 1) * self.sigma2 * m_prev
        return m

    def cf_derivative_at_zero(self, k):
        k = _check_order(k)
        return i_power(k) * self.raw_moment(k)

    def to_dict(self):
        return {"family": GAUSSIAN, "mu": float(self.mu), "sigma2": float(self.sigma2)}

    def _decay(self):
        return math.sqrt(self.sigma2 / 2.0), 2.0

    def free_params(self):
        return np.array([self.mu, 0.5 * math.log(self.sigma2)])

    def with_free_params(self, theta):
        mu, log_sigma = theta
        return Gaussian(float(mu), max(math.exp(2.0 * log_sigma), np.finfo(float).tiny))

    def cf_grad(self, t):
        t = _freqs(t)
        phi = self.cf(t)
        return phi, np.stack([1j * t * phi, -self.sigma2 * t * t * phi])


@dataclass(frozen=True)
class Categorical(Leaf):
    """Distribution over real-valued state codes ``states`` with masses ``probs``."""

    states: tuple
    probs: tuple

    family: ClassVar[str] = CATEGORICAL

    def __post_init__(self):
        states = tuple(float(s) for s in self.states)
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "probs", probs)
        if len(states) == 0 or len(states) != len(probs):
            raise InvalidParameterError("Categorical needs equally many states and probs (>= 1)")
        if len(set(states)) != len(states) or not all(map(math.isfinite, states)):
            raise InvalidParameterError("Categorical states must be distinct finite numbers")
        if any(p < 0 or not math.isfinite(p) for p in probs) or abs(math.fsum(probs) - 1) > 1e-9:
            raise InvalidParameterError("Categorical probs must be non-negative and sum to 1")

    @cached_property
    def _s(self):
        return np.array(self.states)

    @cached_property
    def _p(self):
        return np.array(self.probs)

    def cf(self, t):
        t = _freqs(t)
        return np.exp(1j * np.multiply.outer(t, self._s)) @ self._p

    def state_index(self, x) -> np.ndarray:
        """Index of the matching state for each ``x``, ``-1`` if none matches."""
        x = np.asarray(x, dtype=float)
        diff = np.abs(np.subtract.outer(x, self._s))
        hit = diff <= _STATE_TOL * np.maximum(1.0, np.abs(self._s))
        return np.where(hit.any(axis=-1), hit.argmax(axis=-1), -1)

    def log_density(self, x, quad=None, on_underflow="raise"):
        x = np.asarray(x, dtype=float)
        idx = self.state_index(x)
        with np.errstate(divide="ignore"):
            logp = np.log(self._p)
        out = np.where(idx >= 0, logp[np.maximum(idx, 0)], -np.inf)
        return _scalar_or_array(out, x)

    def cf_derivative_at_zero(self, k):
        k = _check_order(k)
        return i_power(k) * float(np.dot(self._p, self._s**k))

    def to_dict(self):
        return {"family": CATEGORICAL, "states": list(self.states), "probs": list(self.probs)}

    def free_params(self):
        return np.log(np.maximum(self._p, 1e-300))

    def with_free_params(self, theta):
        p = softmax(np.asarray(theta, dtype=float))
        return Categorical(self.states, tuple(p / p.sum()))

    def cf_grad(self, t):
        t = _freqs(t)
        atoms = np.exp(1j * np.multiply.outer(t, self._s))
        phi = atoms @ self._p
        jac = self._p[:, None] * (atoms.T - phi[None, :])
        return phi, jac


@dataclass(frozen=True)
class AlphaStable(Leaf):
    """Alpha-stable law in the S1 parameterisation.

    ``phi(t) = exp(i t mu - |c t|**alpha * (1 - i beta sign(t) Phi))`` with
    ``Phi = tan(pi alpha / 2)`` for ``alpha != 1`` and ``-(2/pi) log|t|`` otherwise.
    """

    alpha: float
    beta: float
    c: float
    mu: float

    family: ClassVar[str] = ALPHA_STABLE

    def __post_init__(self):
        ok = (
            0 < self.alpha <= 2
            and -1 <= self.beta <= 1
            and self.c > 0
            and all(map(math.isfinite, (self.alpha, self.beta, self.c, self.mu)))
        )
        if not ok:
            raise InvalidParameterError(
                "alpha-stable needs 0 < alpha <= 2, -1 <= beta <= 1, c > 0, finite mu; got "
                f"alpha={self.alpha}, beta={self.beta}, c={self.c}, mu={self.mu}"
            )

    @staticmethod
    def _log_cf(t, alpha, beta, c, mu):
        ct = np.abs(c * t)
        sgn = np.sign(t)
        power = ct**alpha
        if alpha == 1.0:
            with np.errstate(divide="ignore"):
                log_abs_t = np.where(t == 0, 0.0, np.log(np.abs(np.where(t == 0, 1.0, t))))
            phi_term = -(2.0 / math.pi) * log_abs_t
        elif alpha == 2.0:
            phi_term = 0.0
        else:
            phi_term = math.tan(math.pi * alpha / 2.0)
        return 1j * t * mu - power * (1 - 1j * beta * sgn * phi_term)

    def cf(self, t):
        t = _freqs(t)
        return np.exp(self._log_cf(t, self.alpha, self.beta, self.c, self.mu))

    def cf_derivative_at_zero(self, k):
        k = _check_order(k)
        if k == 0:
            return 1.0 + 0j
        if k == 1 and self.alpha <= 1:
            raise MomentDoesNotExistError(
                f"alpha-stable leaf with alpha={self.alpha} has no mean (needs alpha > 1)"
            )
        if k >= 2 and self.alpha < 2:
            raise MomentDoesNotExistError(
                f"alpha-stable leaf with alpha={self.alpha} has no moment of order {k}"
            )
        if k == 1:
            return 1j * self.mu
        return Gaussian(self.mu, 2.0 * self.c**2).cf_derivative_at_zero(k)

    def to_dict(self):
        return {
            "family": ALPHA_STABLE,
            "alpha": float(self.alpha),
            "beta": float(self.beta),
            "c": float(self.c),
            "mu": float(self.mu),
        }

    def _decay(self):
        return self.c, self.alpha

    def free_params(self):
        u = min(max((self.alpha - ALPHA_MIN) / (ALPHA_MAX - ALPHA_MIN), 1e-6), 1 - 1e-6)
        b = min(max(self.beta, -1 + 1e-9), 1 - 1e-9)
        return np.array([logit(u), math.atanh(b), math.log(self.c), self.mu])

    def with_free_params(self, theta):
        a, b, log_c, mu = (float(v) for v in theta)
        # same floor on u as free_params, so alpha stays strictly above its minimum
        alpha = ALPHA_MIN + (ALPHA_MAX - ALPHA_MIN) * max(float(expit(a)), 1e-6)
        return AlphaStable(alpha, math.tanh(b), math.exp(log_c), mu)

    def _dlog_dalpha(self, t):
        alpha, beta, c = self.alpha, self.beta, self.c
        if abs(alpha - 1.0) < _ALPHA_ONE_BAND:
            # the step never crosses alpha=1, where Phi switches branch
            h = min(_ALPHA_FD_STEP, abs(alpha - 1.0) / 100.0) if alpha != 1.0 else _ALPHA_FD_STEP
            up = self._log_cf(t, alpha + h, beta, c, self.mu)
            lo = self._log_cf(t, alpha - h, beta, c, self.mu)
            return (up - lo) / (2 * h)
        ct = np.abs(c * t)
        sgn = np.sign(t)
        power = ct**alpha
        with np.errstate(divide="ignore", invalid="ignore"):
            log_ct = np.where(ct == 0, 0.0, np.log(np.where(ct == 0, 1.0, ct)))
        tan_term = 0.0 if alpha == 2.0 else math.tan(math.pi * alpha / 2.0)
        dtan = (math.pi / 2.0) / math.cos(math.pi * alpha / 2.0) ** 2
        return -power * log_ct * (1 - 1j * beta * sgn * tan_term) + 1j * beta * sgn * power * dtan

    def cf_grad(self, t):
        t = _freqs(t)
        log_phi = self._log_cf(t, self.alpha, self.beta, self.c, self.mu)
        phi = np.exp(log_phi)
        power = np.abs(self.c * t) ** self.alpha
        sgn = np.sign(t)
        if self.alpha == 1.0:
            with np.errstate(divide="ignore"):
                log_abs_t = np.where(t == 0, 0.0, np.log(np.abs(np.where(t == 0, 1.0, t))))
            phi_term = -(2.0 / math.pi) * log_abs_t
        elif self.alpha == 2.0:
            phi_term = np.zeros_like(t)
        else:
            phi_term = np.full_like(t, math.tan(math.pi * self.alpha / 2.0))
        u = float(expit(self.free_params()[0]))
        d_alpha = self._dlog_dalpha(t) * (ALPHA_MAX - ALPHA_MIN) * u * (1 - u)
        d_beta = 1j * sgn * power * phi_term * (1 - self.beta**2)
        d_logc = -self.alpha * power * (1 - 1j * self.beta * sgn * phi_term)
        d_mu = 1j * t
        return phi, np.stack([d_alpha, d_beta, d_logc, d_mu]) * phi


@dataclass(frozen=True)
class EmpiricalCF(Leaf):
    """Empirical characteristic function of the leaf's local sample.

    Densities are obtained by inverting the ECF times a Gaussian taper
    ``exp(-h**2 t**2 / 2)`` with Silverman's bandwidth ``h``.
    """

    points: tuple

    family: ClassVar[str] = ECF

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) == 0 or not all(map(math.isfinite, pts)):
            raise InvalidParameterError("ECF leaf needs a non-empty list of finite points")

    @cached_property
    def _x(self):
        return np.array(self.points)

    @cached_property
    def bandwidth(self) -> float:
        x = self._x
        n = x.size
        sd = float(np.std(x, ddof=1)) if n > 1 else 0.0
        iqr = float(np.subtract(*np.percentile(x, [75, 25])))
        spread = min(sd, iqr / 1.34) if iqr > 0 else sd
        return max(0.9 * spread * n ** (-0.2), math.sqrt(VAR_FLOOR))

    def cf(self, t):
        t = _freqs(t)
        return np.exp(1j * np.multiply.outer(t, self._x)).mean(axis=-1)

    def _inversion_cf(self, t):
        return self.cf(t) * np.exp(-0.5 * (self.bandwidth * t) ** 2)

    def _decay(self):
        return self.bandwidth / math.sqrt(2.0), 2.0

    def cf_derivative_at_zero(self, k):
        k = _check_order(k)
        return i_power(k) * float(np.mean(self._x**k))

    def to_dict(self):
        return {"family": ECF, "points": list(self.points)}


_CLASSES = {GAUSSIAN: Gaussian, CATEGORICAL: Categorical, ALPHA_STABLE: AlphaStable, ECF: EmpiricalCF}


def leaf_cf(leaf: Leaf, t):
    return leaf.cf(t)


def leaf_log_density(leaf: Leaf, x, quad: QuadratureConfig | None = None):
    return leaf.log_density(x, quad)


def leaf_cf_derivative_at_zero(leaf: Leaf, k: int) -> complex:
    return leaf.cf_derivative_at_zero(k)


def leaf_from_dict(payload: dict) -> Leaf:
    try:
        family = payload["family"]
        cls = _CLASSES[family]
    except (KeyError, TypeError):
        raise InvalidParameterError(f"unknown leaf payload {payload!r}") from None
    fields = {k: v for k, v in payload.items() if k != "family"}
    try:
        return cls(**fields)
    except TypeError as exc:
        raise InvalidParameterError(f"bad {family} leaf payload: {exc}") from None


def fit_leaf(kind: str, column_data, *, states=None, smoothing: float = DEFAULT_SMOOTHING,
             var_floor: float = VAR_FLOOR) -> Leaf:
    """Estimate a leaf of family ``kind`` from one column of data.

    Gaussian leaves use the sample mean and unbiased variance (floored at
    ``var_floor``); categorical leaves use Laplace-smoothed frequencies over
    ``states`` (default: the observed states); alpha-stable leaves use the
    McCulloch quantile estimator; ECF leaves keep the data.
    """
    x = np.asarray(column_data, dtype=float).ravel()
    if x.size == 0:
        raise DataError("cannot fit a leaf on an empty column")
    if not np.all(np.isfinite(x)):
        raise DataError("cannot fit a leaf on non-finite data")
    if kind == GAUSSIAN:
        var = float(np.var(x, ddof=1)) if x.size > 1 else 0.0
        return Gaussian(float(np.mean(x)), max(var, var_floor))
    if kind == CATEGORICAL:
        support = np.unique(x) if states is None else np.asarray(sorted(set(map(float, states))))
        cat = Categorical(tuple(support), (1.0,) + (0.0,) * (len(support) - 1))
        idx = cat.state_index(x)
        if np.any(idx < 0):
            raise DataError("categorical column holds values outside the given states")
        counts = np.bincount(idx, minlength=len(support)) + smoothing
        return Categorical(tuple(support), tuple(counts / counts.sum()))
    if kind == ALPHA_STABLE:
        return AlphaStable(*mcculloch_fit(x))
    if kind == ECF:
        return EmpiricalCF(tuple(x))
    raise ConfigError(f"unknown leaf family {kind!r}; expected one of {FAMILIES}")
