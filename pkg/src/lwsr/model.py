"""System parameters, nonlinear couplings, and the explicit constant chain.

The coupled system on the window, component by component (site m, K noise
modes, intensity eps):

    du_m = (-i (A u)_m - alpha u_m - i u_m v_m - i f_m) dt
           + eps * sum_k (-i) (h_{k,m}(u_m) + b_{k,m}) dW_k
    dv_m = (-beta v_m - lambda (B|u|^2)_m + g_m) dt
           + eps * sum_k (sigma_{k,m}(v_m) + gamma_{k,m}) dW_k

The same Wiener increment dW_k drives the k-th term of both equations.
Forcing (f, g) and the additive profiles (b_k, gamma_k) are constant in time.

``derive_constants`` evaluates the fully explicit decay-rate / forcing-gain
chain that the moment diagnostics compare against:

    kappa       = min(alpha - 18 lambda^2 / beta, beta / 2)
    kappa_tilde = max(27/alpha, 2/beta, 9 beta^2 / (576 alpha |delta|^4),
                      beta / (4 |delta|^2), beta (1 + 8 |delta|^2) / (8 |delta|^2))

with |delta|^2 the squared l2-mass of the diffusion bound sequence. The
admissible noise-intensity threshold has two candidate roots,
sqrt(alpha / (24 |delta|^2)) and sqrt(beta / (48 |delta|^2)); the absorption
argument needs both margins simultaneously, so ``eps0`` is their minimum
(conservative). The larger root is reported alongside as ``eps0_loose`` and is
not used for validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionMismatchError, DissipativityError
from .lattice import ZERO, LatticeState, apply_A, apply_B, norm_sq, radius_of


@dataclass
class SystemParams:
    """Coefficients, forcing, and additive noise profiles of one system."""

    alpha: float
    beta: float
    lam: float
    eps: float
    f: np.ndarray  # complex forcing for u, shape (N,)
    g: np.ndarray  # real forcing for v, shape (N,)
    b: np.ndarray  # complex additive profiles, shape (K, N)
    gamma: np.ndarray  # real additive profiles, shape (K, N)
    coupling_enabled: bool = True  # False switches off both nonlinear couplings
    allow_eps_above_threshold: bool = False

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=np.complex128)
        self.g = np.asarray(self.g, dtype=np.float64)
        self.b = np.atleast_2d(np.asarray(self.b, dtype=np.complex128))
        self.gamma = np.atleast_2d(np.asarray(self.gamma, dtype=np.float64))
        if self.alpha <= 0 or self.beta <= 0 or self.lam < 0:
            raise ConfigError("alpha, beta must be > 0 and lambda >= 0")
        if self.eps < 0:
            raise ConfigError("epsilon must be >= 0")
        n = len(self.f)
        if len(self.g) != n or self.b.shape[1] != n or self.gamma.shape[1] != n:
            raise DimensionMismatchError("forcing/profile site counts disagree")
        if self.b.shape[0] != self.gamma.shape[0]:
            raise DimensionMismatchError("b and gamma mode counts disagree")
        for name, arr in (("f", self.f), ("g", self.g), ("b", self.b), ("gamma", self.gamma)):
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"non-finite entries in {name}")

    @property
    def radius(self) -> int:
        return radius_of(self.f)

    @property
    def n_modes(self) -> int:
        return self.b.shape[0]

    @property
    def b_norm_sq(self) -> float:
        """sum_k |b_k|^2."""
        return float(np.sum(np.abs(self.b) ** 2))

    @property
    def gamma_norm_sq(self) -> float:
        return float(np.sum(self.gamma**2))

    def forcing_mass(self) -> float:
        """|f|^4 + |g|^4 + (sum_k |b_k|^2)^2 + (sum_k |gamma_k|^2)^2."""
        return (
            norm_sq(self.f) ** 2
            + norm_sq(self.g) ** 2
            + self.b_norm_sq**2
            + self.gamma_norm_sq**2
        )


@dataclass
class DerivedConstants:
    """Decay rate, forcing gain, noise threshold, and steady-state bound."""

    kappa: float
    kappa_tilde: float
    eps0: float
    eps0_loose: float
    absorbing_bound: float
    dissipativity_margin: float = field(default=float("nan"))

    def envelope(self, initial_moment: float, t) -> np.ndarray:
        """exp(-kappa t) * initial + absorbing_bound, the moment ceiling."""
        return np.exp(-self.kappa * np.asarray(t, dtype=float)) * initial_moment + self.absorbing_bound


def coupling_F(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Componentwise product (u_m v_m)_m coupling the real field into u."""
    if u.shape != v.shape:
        raise DimensionMismatchError(f"shape mismatch {u.shape} vs {v.shape}")
    return u * v


def coupling_G(u: np.ndarray, lam: float, boundary: str = ZERO) -> np.ndarray:
    """lambda * forward difference of |u|^2, coupling u into the real field."""
    return lam * apply_B(np.abs(u) ** 2, boundary)


def dissipativity_margin(alpha: float, beta: float, lam: float) -> float:
    return alpha - 18.0 * lam**2 / beta


def derive_constants(params: SystemParams, delta_norm_sq: float) -> DerivedConstants:
    """Evaluate the explicit constant chain for the given parameters.

    Raises DissipativityError when alpha - 18 lambda^2 / beta <= 0, naming the
    failed inequality. ``delta_norm_sq`` is the squared mass of the diffusion
    bound sequence; when it is zero the state-dependent noise vanishes, the
    threshold is unconstrained, and the delta-dependent gain entries are
    evaluated at the actual intensity instead.
    """
    alpha, beta, lam = params.alpha, params.beta, params.lam
    margin = dissipativity_margin(alpha, beta, lam)
    if margin <= 0:
        raise DissipativityError(
            f"alpha - 18*lambda^2/beta = {margin:.6g} <= 0 "
            f"(alpha={alpha:g}, beta={beta:g}, lambda={lam:g})"
        )
    kappa = min(margin, beta / 2.0)
    d2 = float(delta_norm_sq)
    if d2 < 0:
        raise ConfigError("delta_norm_sq must be >= 0")
    if d2 > 0:
        eps_a = math.sqrt(alpha / (24.0 * d2))
        eps_b = math.sqrt(beta / (48.0 * d2))
        eps0 = min(eps_a, eps_b)
        eps0_loose = max(eps_a, eps_b)
        kappa_tilde = max(
            27.0 / alpha,
            2.0 / beta,
            9.0 * beta**2 / (576.0 * alpha * d2**2),
            beta / (4.0 * d2),
            beta * (1.0 + 8.0 * d2) / (8.0 * d2),
        )
    else:
        eps0 = eps0_loose = float("inf")
        e2 = params.eps**2
        kappa_tilde = max(27.0 / alpha, 2.0 / beta, 36.0 * e2**2 / alpha, 12.0 * e2, 6.0 * e2)
    absorbing = (kappa_tilde / kappa) * (params.forcing_mass() + 1.0)
    return DerivedConstants(
        kappa=kappa,
        kappa_tilde=kappa_tilde,
        eps0=eps0,
        eps0_loose=eps0_loose,
        absorbing_bound=absorbing,
        dissipativity_margin=margin,
    )


def check_eps_admissible(params: SystemParams, delta_norm_sq: float) -> DerivedConstants:
    """Derive constants and enforce eps <= eps0 unless the override flag is set."""
    derived = derive_constants(params, delta_norm_sq)
    if params.eps > derived.eps0 and not params.allow_eps_above_threshold:
        raise ConfigError(
            f"epsilon={params.eps:g} exceeds the admissible threshold "
            f"eps0={derived.eps0:g}; set allow_eps_above_threshold for "
            f"exploratory runs outside the proven regime"
        )
    return derived


def drift(state: LatticeState, params: SystemParams, boundary: str = ZERO):
    """Deterministic part (du, dv) of the system at the given state."""
    u, v = state.u, state.v
    du = -1j * apply_A(u, boundary) - params.alpha * u - 1j * params.f
    dv = -params.beta * v + params.g
    if params.coupling_enabled:
        du = du - 1j * coupling_F(u, v)
        dv = dv - coupling_G(u, params.lam, boundary)
    return du, dv
