"""Backend selection for the hot step kernels.

The explicit Euler-Maruyama block step exists twice: a fused Cython extension
(``lwsr._kernels_cy``, built at install time) and a portable numpy fallback.
The compiled backend is picked automatically when it imports and supports the
requested configuration; set ``LWSR_BACKEND=python`` or ``compiled`` to force
one. The exponential stepper is numpy-only (its cost is a BLAS matmul).

Backends agree to floating-point roundoff, not bitwise; reproducibility
guarantees (identical results across runs and worker counts) hold per
backend.
"""

from __future__ import annotations

import os

import numpy as np

from ._kernels_py import EulerStepPy, ExpEulerStep
from .errors import ConfigError
from .lattice import PERIODIC

try:  # pragma: no cover - exercised indirectly via backend tests
    from . import _kernels_cy

    HAVE_COMPILED = True
except ImportError:  # pragma: no cover
    _kernels_cy = None
    HAVE_COMPILED = False

_COMPILED_KINDS = {"zero": 0, "linear_saturating": 1, "sine_bounded": 2}


class EulerStepCy:
    """Thin wrapper dispatching the fused compiled step."""

    name = "compiled"

    def __init__(self, params, family, dt, boundary, cutoff=None):
        self.alpha = params.alpha
        self.beta = params.beta
        self.lam = params.lam if params.coupling_enabled else 0.0
        self.eps = params.eps
        self.dt = dt
        self.coupling = 1 if params.coupling_enabled else 0
        self.cut = float(cutoff) if cutoff else 0.0
        self.periodic = 1 if boundary == PERIODIC else 0
        self.kind = _COMPILED_KINDS[family.kind]
        self.c = family.c
        self.offset = family.offset
        self.f_re = np.ascontiguousarray(params.f.real)
        self.f_im = np.ascontiguousarray(params.f.imag)
        self.g = np.ascontiguousarray(params.g)
        self.delta = np.ascontiguousarray(family.delta.values)
        self.b_re = np.ascontiguousarray(params.b.real)
        self.b_im = np.ascontiguousarray(params.b.imag)
        self.gamma = np.ascontiguousarray(params.gamma)
        n = len(self.g)
        self._scratch = np.empty((8, n), dtype=np.float64)
        self._zero_dw = np.zeros((1, self.delta.shape[0]), dtype=np.float64)

    def step_block(self, u, v, dW, out_u, out_v):
        eps = self.eps
        if dW is None or eps == 0.0:
            dw_arr, eps = self._zero_dw, 0.0  # kernel skips noise, never reads it
        elif dW.flags["C_CONTIGUOUS"]:
            dw_arr = dW
        else:
            dw_arr = np.ascontiguousarray(dW)
        _kernels_cy.em_step_block(
            u, v, out_u, out_v, dw_arr,
            self.f_re, self.f_im, self.g, self.delta, self.b_re, self.b_im, self.gamma,
            self.alpha, self.beta, self.lam, eps, self.dt,
            self.cut, self.coupling, self.periodic,
            self.kind, self.c, self.offset,
            self._scratch,
        )


def requested_backend() -> str:
    req = os.environ.get("LWSR_BACKEND", "auto").lower()
    if req not in ("auto", "python", "compiled"):
        raise ConfigError(f"LWSR_BACKEND must be auto|python|compiled, got {req!r}")
    return req


def backend_name(requested: str | None = None) -> str:
    """Resolve which Euler backend would run under the given request."""
    req = requested or requested_backend()
    if req == "compiled" and not HAVE_COMPILED:
        raise ConfigError("compiled backend requested but lwsr._kernels_cy is not built")
    if req == "auto":
        return "compiled" if HAVE_COMPILED else "python"
    return req


def make_step_kernel(params, family, dt, boundary, cutoff=None,
                     scheme: str = "euler_maruyama", backend: str | None = None):
    """Construct the step object for one run configuration."""
    if scheme == "exp_euler_maruyama":
        return ExpEulerStep(params, family, dt, boundary, cutoff)
    if scheme != "euler_maruyama":
        raise ConfigError(f"unknown scheme {scheme!r}")
    resolved = backend_name(backend)
    if resolved == "compiled" and family.kind in _COMPILED_KINDS:
        return EulerStepCy(params, family, dt, boundary, cutoff)
    if resolved == "compiled" and (backend or requested_backend()) == "compiled":
        raise ConfigError(f"compiled backend does not support family kind {family.kind!r}")
    return EulerStepPy(params, family, dt, boundary, cutoff)
