"""Closed-form references for the linear (coupling-off) regime.

With the nonlinear couplings disabled the complex field obeys a linear ODE
with constant forcing,

    du/dt = (-iA - alpha) u - i f,

whose mean is computed here by a dense matrix exponential, and each real site
decouples into a scalar mean-reverting process

    dv_m = (-beta v_m + g_m) dt + eps sum_k (gamma_{k,m}) dW_k

with exactly known transient mean and variance. These serve as ground truth
for the integrator tests.

The matrix exponential is a self-contained scaling-and-squaring routine with
a fixed-order diagonal Pade approximant, kept independent of the integrator's
exponential factors (which are built by eigendecomposition) so the two routes
cross-check each other. The dense route is capped at radius 32: the oracle is
meant to be unquestionably correct, not fast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import ZERO, dense_second_difference, num_sites, radius_of

MAX_ORACLE_RADIUS = 32

_PADE13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)


def expm_pade(a: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling-and-squaring with the [13/13] Pade form."""
    a = np.asarray(a)
    norm = np.linalg.norm(a, 1)
    squarings = max(0, int(np.ceil(np.log2(norm / 5.4))) if norm > 5.4 else 0)
    a = a / (2.0**squarings)
    n = a.shape[0]
    ident = np.eye(n, dtype=a.dtype)
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a2 @ a4
    b = _PADE13
    u = a @ (
        a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
        + b[7] * a6
        + b[5] * a4
        + b[3] * a2
        + b[1] * ident
    )
    v = (
        a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
        + b[6] * a6
        + b[4] * a4
        + b[2] * a2
        + b[0] * ident
    )
    r = np.linalg.solve(v - u, v + u)
    for _ in range(squarings):
        r = r @ r
    return r


def _check_radius(radius: int) -> None:
    if radius > MAX_ORACLE_RADIUS:
        raise ValueError(
            f"radius {radius} exceeds the dense-exponential cap {MAX_ORACLE_RADIUS}"
        )


def ou_complex_mean(
    u0: np.ndarray, f: np.ndarray, alpha: float, t: float, boundary: str = ZERO
) -> np.ndarray:
    """Mean of the linear complex field at time t: propagator times u0 plus the
    constant-forcing response, evaluated via one augmented matrix exponential."""
    radius = radius_of(u0)
    _check_radius(radius)
    n = num_sites(radius)
    lmat = -1j * dense_second_difference(radius, boundary) - alpha * np.eye(n)
    aug = np.zeros((n + 1, n + 1), dtype=np.complex128)
    aug[:n, :n] = t * lmat
    aug[:n, n] = t * (-1j * f)
    e = expm_pade(aug)
    return e[:n, :n] @ u0 + e[:n, n]


@dataclass
class StationaryStats:
    mean: float
    variance: float


def ou_real_stationary(
    beta: float, eps: float, gamma_site: np.ndarray, g_site: float = 0.0
) -> StationaryStats:
    """Stationary law of one real site: mean g/beta, variance eps^2 |gamma|^2/(2 beta).

    ``gamma_site`` holds the additive amplitudes of that site across modes.
    """
    if beta <= 0:
        raise ValueError("beta must be > 0")
    gamma_site = np.atleast_1d(np.asarray(gamma_site, dtype=np.float64))
    var = eps**2 * float(np.sum(gamma_site**2)) / (2.0 * beta)
    return StationaryStats(mean=g_site / beta, variance=var)


def ou_real_moments(
    v0: np.ndarray, g: np.ndarray, beta: float, eps: float, gamma: np.ndarray, t: float
):
    """Transient per-site mean and variance of the decoupled real field.

    mean_m(t) = g_m/beta + (v0_m - g_m/beta) e^{-beta t}
    var_m(t)  = eps^2 (sum_k gamma_{k,m}^2) (1 - e^{-2 beta t}) / (2 beta)
    """
    gamma = np.atleast_2d(np.asarray(gamma, dtype=np.float64))
    fixed = g / beta
    mean = fixed + (v0 - fixed) * np.exp(-beta * t)
    var = eps**2 * np.sum(gamma**2, axis=0) * (1.0 - np.exp(-2.0 * beta * t)) / (2.0 * beta)
    return mean, var
