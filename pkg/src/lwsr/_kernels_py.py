"""Pure-numpy step kernels: the portable backend for the time steppers.

Both kernels advance a whole block of paths at once; arrays are laid out
(path, site) so every operation is elementwise or a small matmul and per-path
results are independent of how paths are grouped into blocks. The compiled
backend (``_kernels_cy``) fuses the same arithmetic into one pass per step;
either backend may be selected at import time (see ``kernels``).
"""

from __future__ import annotations

import numpy as np

from .lattice import PERIODIC, dense_second_difference, num_sites
from .noise import DiffusionFamily


def _shift_up_2d(x: np.ndarray, periodic: bool) -> np.ndarray:
    """Row-wise m -> m+1 neighbor."""
    if periodic:
        return np.roll(x, -1, axis=1)
    out = np.zeros_like(x)
    out[:, :-1] = x[:, 1:]
    return out


def _shift_down_2d(x: np.ndarray, periodic: bool) -> np.ndarray:
    if periodic:
        return np.roll(x, 1, axis=1)
    out = np.zeros_like(x)
    out[:, 1:] = x[:, :-1]
    return out


def _clamp_complex(u: np.ndarray, level: float) -> np.ndarray:
    az = np.abs(u)
    return np.where(az <= level, u, u * (level / np.where(az > 0, az, 1.0)))


class EulerStepPy:
    """Explicit Euler-Maruyama step for a block of paths (numpy backend)."""

    name = "python"

    def __init__(self, params, family: DiffusionFamily, dt: float, boundary: str, cutoff=None):
        self.alpha = params.alpha
        self.beta = params.beta
        self.lam = params.lam
        self.eps = params.eps
        self.dt = dt
        self.coupling = params.coupling_enabled
        self.cut = float(cutoff) if cutoff else 0.0
        self.periodic = boundary == PERIODIC
        self.family = family
        self.f = params.f
        self.g = params.g
        # (K, N) matrices so the mode sums become one matmul with dW (B, K)
        self.delta = family.delta.values
        self.b = params.b
        self.gamma = params.gamma
        self.minus_if = -1j * params.f

    def step_block(self, u, v, dW, out_u, out_v):
        dt = self.dt
        cut = self.cut
        if cut > 0.0:
            uc = _clamp_complex(u, cut)
            vc = np.clip(v, -cut, cut)
        else:
            uc, vc = u, v

        au = 2.0 * u - _shift_down_2d(u, self.periodic) - _shift_up_2d(u, self.periodic)
        du = -1j * au - self.alpha * u + self.minus_if
        dv = -self.beta * v + self.g
        if self.coupling:
            du = du - 1j * (uc * vc)
            absu2 = uc.real**2 + uc.imag**2
            dv = dv - self.lam * (_shift_up_2d(absu2, self.periodic) - absu2)

        np.multiply(du, dt, out=du)
        np.add(du, u, out=du)
        np.multiply(dv, dt, out=dv)
        np.add(dv, v, out=dv)

        if self.eps != 0.0 and dW is not None:
            wd = dW @ self.delta
            wb = dW.astype(np.complex128) @ self.b
            wg = dW @ self.gamma
            hfac = self.family.phi_complex(uc)
            sfac = self.family.phi_real(vc)
            du += (-1j * self.eps) * (hfac * wd + wb)
            dv += self.eps * (sfac * wd + wg)

        out_u[...] = du
        out_v[...] = dv


def _phi1(z: np.ndarray) -> np.ndarray:
    """(e^z - 1)/z, stable near 0."""
    z = np.asarray(z, dtype=np.complex128)
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + z / 2.0, (np.exp(safe) - 1.0) / safe)


class ExpEulerStep:
    """Exponential Euler-Maruyama: the linear flow is applied exactly via
    precomputed eigendecomposition factors, and the constant-plus-nonlinear
    drift through the first phi-function, so the linear constant-forcing flow
    is integrated exactly. Numpy-only (the dense factor application is a
    matmul and already runs in BLAS)."""

    name = "exp"

    def __init__(self, params, family: DiffusionFamily, dt: float, boundary: str, cutoff=None):
        self.alpha = params.alpha
        self.beta = params.beta
        self.lam = params.lam
        self.eps = params.eps
        self.dt = dt
        self.coupling = params.coupling_enabled
        self.cut = float(cutoff) if cutoff else 0.0
        self.periodic = boundary == PERIODIC
        self.family = family
        self.f = params.f
        self.g = params.g
        self.delta = family.delta.values
        self.b = params.b
        self.gamma = params.gamma

        n = num_sites(params.radius)
        a = dense_second_difference(params.radius, boundary)
        evals, q = np.linalg.eigh(a)
        z = dt * (-1j * evals - params.alpha)
        # symmetric factors: new_row = row @ factor works for both orientations
        self.exp_u = (q * np.exp(z)) @ q.T
        self.phi_u = (q * (dt * _phi1(z))) @ q.T
        self.exp_v = float(np.exp(-params.beta * dt))
        self.phi_v = float(dt * _phi1(np.array(-params.beta * dt)).real)
        self._n = n

    def step_block(self, u, v, dW, out_u, out_v):
        cut = self.cut
        if cut > 0.0:
            uc = _clamp_complex(u, cut)
            vc = np.clip(v, -cut, cut)
        else:
            uc, vc = u, v

        nl_u = np.broadcast_to(-1j * self.f, u.shape).copy()
        nl_v = np.broadcast_to(self.g, v.shape).copy()
        if self.coupling:
            nl_u -= 1j * (uc * vc)
            absu2 = uc.real**2 + uc.imag**2
            nl_v -= self.lam * (_shift_up_2d(absu2, self.periodic) - absu2)

        lin_u = u
        lin_v = v
        if self.eps != 0.0 and dW is not None:
            wd = dW @ self.delta
            wb = dW.astype(np.complex128) @ self.b
            wg = dW @ self.gamma
            hfac = self.family.phi_complex(uc)
            sfac = self.family.phi_real(vc)
            lin_u = u + (-1j * self.eps) * (hfac * wd + wb)
            lin_v = v + self.eps * (sfac * wd + wg)

        out_u[...] = lin_u @ self.exp_u + nl_u @ self.phi_u
        out_v[...] = self.exp_v * lin_v + self.phi_v * nl_v
