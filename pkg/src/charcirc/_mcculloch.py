"""Quantile-based estimation of alpha-stable parameters (McCulloch, 1986).

The lookup tables are the published ones; values are bilinearly
interpolated and inputs outside the tabulated range are clipped to its edge.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.interpolate import RegularGridInterpolator

ALPHA_MIN = 0.6
ALPHA_MAX = 2.0

# nu_alpha = (q95 - q05) / (q75 - q25); nu_beta = (q95 + q05 - 2 q50) / (q95 - q05)
_NU_ALPHA = np.array([2.439, 2.5, 2.6, 2.7, 2.8, 3, 3.2, 3.5, 4, 5, 6, 8, 10, 15, 25])
_NU_BETA = np.array([0, 0.1, 0.2, 0.3, 0.5, 0.7, 1])

# alpha = psi_1(nu_alpha, nu_beta); rows follow _NU_ALPHA, columns _NU_BETA
_ALPHA_TABLE = np.array([
    [2.000, 2.000, 2.000, 2.000, 2.000, 2.000, 2.000],
    [1.916, 1.924, 1.924, 1.924, 1.924, 1.924, 1.924],
    [1.808, 1.813, 1.829, 1.829, 1.829, 1.829, 1.829],
    [1.729, 1.730, 1.737, 1.745, 1.745, 1.745, 1.745],
    [1.664, 1.663, 1.663, 1.668, 1.676, 1.676, 1.676],
    [1.563, 1.560, 1.553, 1.548, 1.547, 1.547, 1.547],
    [1.484, 1.480, 1.471, 1.460, 1.448, 1.438, 1.438],
    [1.391, 1.386, 1.378, 1.364, 1.337, 1.318, 1.318],
    [1.279, 1.273, 1.266, 1.250, 1.210, 1.184, 1.150],
    [1.128, 1.121, 1.114, 1.101, 1.067, 1.027, 0.973],
    [1.029, 1.021, 1.014, 1.004, 0.974, 0.935, 0.874],
    [0.896, 0.892, 0.884, 0.883, 0.855, 0.823, 0.769],
    [0.818, 0.812, 0.806, 0.801, 0.780, 0.756, 0.691],
    [0.698, 0.695, 0.692, 0.689, 0.676, 0.656, 0.597],
    [0.593, 0.590, 0.588, 0.586, 0.579, 0.563, 0.513],
])

# beta = psi_2(nu_alpha, nu_beta), same layout
_BETA_TABLE = np.array([
    [0, 2.160, 1.000, 1.000, 1.000, 1.000, 1.000],
    [0, 1.592, 3.390, 1.000, 1.000, 1.000, 1.000],
    [0, 0.759, 1.800, 1.000, 1.000, 1.000, 1.000],
    [0, 0.482, 1.048, 1.694, 1.000, 1.000, 1.000],
    [0, 0.360, 0.760, 1.232, 2.229, 1.000, 1.000],
    [0, 0.253, 0.518, 0.823, 1.575, 1.000, 1.000],
    [0, 0.203, 0.410, 0.632, 1.244, 1.906, 1.000],
    [0, 0.165, 0.332, 0.499, 0.943, 1.560, 1.000],
    [0, 0.136, 0.271, 0.404, 0.689, 1.230, 2.195],
    [0, 0.109, 0.216, 0.323, 0.539, 0.827, 1.917],
    [0, 0.096, 0.190, 0.284, 0.472, 0.693, 1.759],
    [0, 0.082, 0.163, 0.243, 0.412, 0.601, 1.596],
    [0, 0.074, 0.147, 0.220, 0.377, 0.546, 1.482],
    [0, 0.064, 0.128, 0.191, 0.330, 0.478, 1.362],
    [0, 0.056, 0.112, 0.167, 0.285, 0.428, 1.274],
])

_ALPHA_GRID = np.array([0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9, 2.0])
_BETA_GRID = np.array([0, 0.25, 0.5, 0.75, 1])

# nu_c = phi_3(alpha, beta); rows follow _ALPHA_GRID in *descending* order
_NU_C_TABLE = np.array([
    [1.908, 1.908, 1.908, 1.908, 1.908],
    [1.914, 1.915, 1.916, 1.918, 1.921],
    [1.921, 1.922, 1.927, 1.936, 1.947],
    [1.927, 1.930, 1.943, 1.961, 1.987],
    [1.933, 1.940, 1.962, 1.997, 2.043],
    [1.939, 1.952, 1.988, 2.045, 2.116],
    [1.946, 1.967, 2.022, 2.106, 2.211],
    [1.955, 1.984, 2.067, 2.188, 2.333],
    [1.965, 2.007, 2.125, 2.294, 2.491],
    [1.980, 2.040, 2.205, 2.435, 2.696],
    [2.000, 2.085, 2.311, 2.624, 2.973],
    [2.040, 2.149, 2.461, 2.886, 3.356],
    [2.098, 2.244, 2.676, 3.265, 3.912],
    [2.189, 2.392, 3.004, 3.844, 4.775],
    [2.337, 2.634, 3.542, 4.808, 6.247],
    [2.588, 3.073, 4.534, 6.636, 9.144],
])[::-1]

# nu_zeta = phi_5(alpha, beta), same layout as _NU_C_TABLE
_NU_ZETA_TABLE = np.array([
    [0, 0.000, 0.000, 0.000, 0.000],
    [0, -0.017, -0.032, -0.049, -0.064],
    [0, -0.030, -0.061, -0.092, -0.123],
    [0, -0.043, -0.088, -0.132, -0.179],
    [0, -0.056, -0.111, -0.170, -0.232],
    [0, -0.066, -0.134, -0.206, -0.283],
    [0, -0.075, -0.154, -0.241, -0.335],
    [0, -0.084, -0.173, -0.276, -0.390],
    [0, -0.090, -0.192, -0.310, -0.447],
    [0, -0.095, -0.208, -0.346, -0.508],
    [0, -0.098, -0.223, -0.380, -0.576],
    [0, -0.099, -0.237, -0.424, -0.652],
    [0, -0.096, -0.250, -0.469, -0.742],
    [0, -0.089, -0.262, -0.520, -0.853],
    [0, -0.078, -0.272, -0.581, -0.997],
    [0, -0.061, -0.279, -0.659, -1.198],
])[::-1]

_psi1 = RegularGridInterpolator((_NU_ALPHA, _NU_BETA), _ALPHA_TABLE)
_psi2 = RegularGridInterpolator((_NU_ALPHA, _NU_BETA), _BETA_TABLE)
_phi3 = RegularGridInterpolator((_ALPHA_GRID, _BETA_GRID), _NU_C_TABLE)
_phi5 = RegularGridInterpolator((_ALPHA_GRID, _BETA_GRID), _NU_ZETA_TABLE)

# Scale used when the interquartile range collapses.
_MIN_SCALE = math.sqrt(1e-6 / 2.0)


def _lookup(table, u, v, u_grid, v_grid):
    u = min(max(u, u_grid[0]), u_grid[-1])
    v = min(max(v, v_grid[0]), v_grid[-1])
    return float(table([[u, v]])[0])


def mcculloch_fit(data) -> tuple[float, float, float, float]:
    """Estimate ``(alpha, beta, c, mu)`` of an S1 alpha-stable law from quantiles.

    ``alpha`` is clamped to ``[0.6, 2]`` and ``beta`` to ``[-1, 1]``.  Data whose
    quantile spread is at or below the Gaussian limit gets ``alpha=2, beta=0``.
    """
    x = np.asarray(data, dtype=float)
    q05, q25, q50, q75, q95 = np.percentile(x, [5, 25, 50, 75, 95])
    iqr = q75 - q25
    spread = q95 - q05
    if iqr <= 0 or spread <= 0:
        c = max(iqr / 1.908, _MIN_SCALE)
        return 2.0, 0.0, c, float(q50)

    nu_alpha = spread / iqr
    nu_beta = (q95 + q05 - 2.0 * q50) / spread
    sign = 1.0 if nu_beta >= 0 else -1.0

    if nu_alpha <= _NU_ALPHA[0]:
        alpha, beta = 2.0, 0.0
    else:
        alpha = _lookup(_psi1, nu_alpha, abs(nu_beta), _NU_ALPHA, _NU_BETA)
        beta = sign * _lookup(_psi2, nu_alpha, abs(nu_beta), _NU_ALPHA, _NU_BETA)
    alpha = min(max(alpha, ALPHA_MIN), ALPHA_MAX)
    beta = min(max(beta, -1.0), 1.0)

    bsign = 1.0 if beta >= 0 else -1.0
    nu_c = _lookup(_phi3, alpha, abs(beta), _ALPHA_GRID, _BETA_GRID)
    nu_zeta = bsign * _lookup(_phi5, alpha, abs(beta), _ALPHA_GRID, _BETA_GRID)
    c = max(iqr / nu_c, _MIN_SCALE)
    zeta = q50 + c * nu_zeta
    if alpha == 1.0:
        mu = zeta
    else:
        mu = zeta - beta * c * math.tan(math.pi * alpha / 2.0)
    return float(alpha), float(beta), float(c), float(mu)
