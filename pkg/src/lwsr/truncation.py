"""Radial cutoffs and the globally Lipschitz truncated nonlinearities.

The complex cutoff clamps |z| to the level n while preserving the argument;
the real cutoff clamps to [-n, n]. Both are exact identities inside the ball
(bit-for-bit: the inside branch returns the input unchanged), which is what
makes level-n and level-(n+1) trajectories coincide until the level-n exit
time. Lipschitz factors asserted by the property suite: 2 for the complex
cutoff and 1 for the real one.

Concrete global Lipschitz constants for the truncated maps, derived from the
cutoff bounds (|cut z| <= n, complex factor 2, real factor 1):

    product coupling:  |cut(u1)cut(v1) - cut(u2)cut(v2)|
                         <= n |v1 - v2| + 2n |u1 - u2|
                       => squared-norm constant 8 n^2
    gradient coupling: |B(|cut u1|^2 - |cut u2|^2)| uses
                       ||a|^2 - |b|^2| <= 2n * 2|a - b|
                       => squared-norm constant 64 lambda^2 n^2
    diffusion:         family modulus L per site times factor 2 (complex) or
                       1 (real) => sum-over-modes constant
                       4 L^2 max_m sum_k delta_{k,m}^2  (complex side)

These are artifact constants (the tightest ones provable from the built-in
families), exposed so tests can assert them on random samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .lattice import ZERO, apply_B
from .noise import DiffusionFamily


def _check_level(level: float) -> float:
    level = float(level)
    if not level > 0:
        raise ConfigError(f"cutoff level must be > 0, got {level}")
    return level


def cutoff_complex(z, level):
    """Radial clamp of complex values at |z| = level; argument preserved."""
    n = _check_level(level)
    z = np.asarray(z, dtype=np.complex128)
    az = np.abs(z)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(az <= n, z, z * (n / np.where(az > 0, az, 1.0)))
    if out.ndim == 0:
        return complex(out)
    return out


def cutoff_real(s, level):
    """Clamp of real values to [-level, level]."""
    n = _check_level(level)
    s = np.asarray(s, dtype=np.float64)
    out = np.clip(s, -n, n)
    if out.ndim == 0:
        return float(out)
    return out


def truncated_F(u: np.ndarray, v: np.ndarray, level: float) -> np.ndarray:
    """Componentwise product of the clamped fields."""
    if u.shape != v.shape:
        raise ConfigError(f"shape mismatch {u.shape} vs {v.shape}")
    return cutoff_complex(u, level) * cutoff_real(v, level)


def truncated_G(u: np.ndarray, level: float, lam: float, boundary: str = ZERO) -> np.ndarray:
    """lambda * forward difference of |clamped u|^2."""
    uc = cutoff_complex(u, level)
    return lam * apply_B(np.abs(uc) ** 2, boundary)


def truncated_h(family: DiffusionFamily, u: np.ndarray, level: float) -> np.ndarray:
    """Diffusion coefficients evaluated on the clamped complex field."""
    return family.eval_h(cutoff_complex(u, level))


def truncated_sigma(family: DiffusionFamily, v: np.ndarray, level: float) -> np.ndarray:
    return family.eval_sigma(cutoff_real(v, level))


def lipschitz_sq_F(level: float) -> float:
    """Constant Q with |F_n(x1) - F_n(x2)|^2 <= Q (|du|^2 + |dv|^2)."""
    return 8.0 * level**2


def lipschitz_sq_G(level: float, lam: float) -> float:
    return 64.0 * lam**2 * level**2


def lipschitz_sq_h(family: DiffusionFamily) -> float:
    """Sum-over-modes constant for the truncated complex diffusion."""
    return 4.0 * family.lipschitz_modulus**2 * family.delta.max_site_mass


def lipschitz_sq_sigma(family: DiffusionFamily) -> float:
    return family.lipschitz_modulus**2 * family.delta.max_site_mass


@dataclass
class StoppingRecord:
    """First grid time at which a path's combined norm exceeded a level."""

    level: float
    hit_time: float | None  # None means "never" within the horizon
    hit_step: int | None
    trigger_norm: float | None

    @property
    def escaped(self) -> bool:
        return self.hit_time is not None


def detect_stopping(times: np.ndarray, norm_sums: np.ndarray, level: float) -> StoppingRecord:
    """First grid time with ||u|| + ||v|| > level, or "never".

    ``times`` and ``norm_sums`` are samples on a uniform time grid.
    """
    n = _check_level(level)
    times = np.asarray(times, dtype=np.float64)
    norm_sums = np.asarray(norm_sums, dtype=np.float64)
    if times.shape != norm_sums.shape:
        raise ConfigError("times and norm_sums must align")
    hits = np.nonzero(norm_sums > n)[0]
    if len(hits) == 0:
        return StoppingRecord(level=n, hit_time=None, hit_step=None, trigger_norm=None)
    i = int(hits[0])
    return StoppingRecord(
        level=n, hit_time=float(times[i]), hit_step=i, trigger_norm=float(norm_sums[i])
    )
