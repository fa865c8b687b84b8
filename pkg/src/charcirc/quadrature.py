"""Gauss-Hermite rules for inverting univariate characteristic functions.

A characteristic function ``phi`` with ``int |phi| < inf`` has density

    f(x) = 1/(2 pi) * int exp(-i t x) phi(t) dt.

The integral has no Gaussian weight of its own, so the rule is applied to
``h(t) = exp(-i t x) phi(t)`` after the substitution ``t = s / scale``::

    int h(t) dt = sum_i w_i * exp(s_i**2) * h(s_i / scale) / scale

The products ``w_i * exp(s_i**2)`` overflow/underflow separately for large
degrees, so they are computed directly from normalised Hermite functions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite import hermgauss

from .errors import ConfigError

# Offset in the cutoff ``log(degree) + _CUTOFF_OFFSET`` used by ``default_scale``.
_CUTOFF_OFFSET = 3.0


@dataclass(frozen=True)
class QuadratureConfig:
    """Number of Gauss-Hermite nodes and an optional fixed scale.

    With ``scale=None`` each leaf picks its own scale from its decay rate
    (see :func:`default_scale`).
    """

    degree: int = 50
    scale: float | None = None

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 2:
            raise ConfigError(f"quadrature degree must be an integer >= 2, got {self.degree!r}")
        if self.scale is not None and not (np.isfinite(self.scale) and self.scale > 0):
            raise ConfigError(f"quadrature scale must be positive, got {self.scale!r}")


@lru_cache(maxsize=32)
def scaled_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes ``s_i`` and exp-scaled weights ``w_i * exp(s_i**2)``.

    Uses ``w_i exp(s_i^2) = 1 / (n * psi_{n-1}(s_i)^2)`` with ``psi_k`` the
    orthonormal Hermite functions, evaluated by their three-term recurrence.
    """
    nodes, _ = hermgauss(degree)
    prev = np.zeros_like(nodes)
    cur = np.pi ** -0.25 * np.exp(-0.5 * nodes**2)
    for k in range(degree - 1):
        nxt = math.sqrt(2.0 / (k + 1)) * nodes * cur - math.sqrt(k / (k + 1)) * prev
        prev, cur = cur, nxt
    weights = 1.0 / (degree * cur**2)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def default_scale(degree: int, c: float, alpha: float) -> float:
    """Scale placing the outermost node where ``|c t|**alpha`` reaches a cutoff.

    The cutoff ``log(degree) + 3`` balances truncation of the tail against the
    discretisation error caused by the non-smooth ``|t|**alpha`` at the origin.
    """
    s_max = float(scaled_rule(degree)[0][-1])
    cutoff = math.log(degree) + _CUTOFF_OFFSET
    return c * s_max / cutoff ** (1.0 / alpha)


def invert_cf(cf, x, degree: int, scale: float) -> np.ndarray:
    """Approximate ``1/(2 pi) int exp(-i t x) cf(t) dt`` for every entry of ``x``.

    Returns the complex quadrature values, shape ``x.shape``.
    """
    x = np.asarray(x, dtype=float)
    nodes, weights = scaled_rule(int(degree))
    t = nodes / scale
    phi = cf(t)
    kernel = np.exp(-1j * np.multiply.outer(x, t))
    return kernel @ (weights * phi) / (2.0 * np.pi * scale)


def abs_mass(cf, degree: int, scale: float) -> float:
    """Quadrature estimate of ``1/(2 pi) int |cf(t)| dt``; bounds the density."""
    nodes, weights = scaled_rule(int(degree))
    return float(np.sum(weights * np.abs(cf(nodes / scale))) / (2.0 * np.pi * scale))
