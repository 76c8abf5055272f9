"""Finite-window lattice difference operators and square-summable-sequence algebra.

Sequences over sites m in {-M..M} are stored as 1-D numpy arrays of length
2M+1 (complex128 for the complex field, float64 for the real field). Two
boundary rules are supported for the difference stencils:

* ``"zero"`` (default): off-window neighbors are treated as 0. This is the
  truncation of the bi-infinite lattice and converges to it as M grows.
* ``"periodic"``: the window wraps. Under this rule the operator identities
  (second difference = backward o forward difference, summation by parts)
  hold exactly at every site, which is what the property suite checks.

Under zero padding the second-difference form ``(Au, u)`` exceeds
``norm_sq(B u)`` by exactly ``|u_{-M}|^2`` (the forward difference leaving the
window on the left is dropped); tests pin that deficit rather than ignore it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError

ZERO = "zero"
PERIODIC = "periodic"
BOUNDARIES = (ZERO, PERIODIC)


def num_sites(radius: int) -> int:
    return 2 * radius + 1


def radius_of(values: np.ndarray) -> int:
    n = len(values)
    if n < 3 or n % 2 == 0:
        raise DimensionMismatchError(f"sequence length {n} is not 2M+1 with M >= 1")
    return (n - 1) // 2


def site_index(m: int, radius: int) -> int:
    """Array index of lattice site m in {-M..M}."""
    if not -radius <= m <= radius:
        raise IndexError(f"site {m} outside radius {radius}")
    return m + radius


def basis(m: int, radius: int, dtype=np.complex128) -> np.ndarray:
    e = np.zeros(num_sites(radius), dtype=dtype)
    e[site_index(m, radius)] = 1
    return e


def _check_boundary(boundary: str) -> None:
    if boundary not in BOUNDARIES:
        raise ValueError(f"unknown boundary rule {boundary!r}")


def shift_up(x: np.ndarray, boundary: str = ZERO) -> np.ndarray:
    """Sequence m -> x_{m+1} under the boundary rule."""
    _check_boundary(boundary)
    if boundary == PERIODIC:
        return np.roll(x, -1)
    out = np.empty_like(x)
    out[:-1] = x[1:]
    out[-1] = 0
    return out


def shift_down(x: np.ndarray, boundary: str = ZERO) -> np.ndarray:
    """Sequence m -> x_{m-1} under the boundary rule."""
    _check_boundary(boundary)
    if boundary == PERIODIC:
        return np.roll(x, 1)
    out = np.empty_like(x)
    out[1:] = x[:-1]
    out[0] = 0
    return out


def apply_A(x: np.ndarray, boundary: str = ZERO) -> np.ndarray:
    """Second-difference stencil: -x_{m-1} + 2 x_m - x_{m+1}."""
    return 2 * x - shift_down(x, boundary) - shift_up(x, boundary)


def apply_B(x: np.ndarray, boundary: str = ZERO) -> np.ndarray:
    """Forward difference: x_{m+1} - x_m."""
    return shift_up(x, boundary) - x


def apply_B_star(x: np.ndarray, boundary: str = ZERO) -> np.ndarray:
    """Backward difference x_{m-1} - x_m; the adjoint of apply_B."""
    return shift_down(x, boundary) - x


def dense_second_difference(radius: int, boundary: str = ZERO) -> np.ndarray:
    """The second-difference stencil as a dense symmetric (2M+1)^2 matrix."""
    _check_boundary(boundary)
    n = num_sites(radius)
    a = 2.0 * np.eye(n)
    idx = np.arange(n - 1)
    a[idx, idx + 1] = -1.0
    a[idx + 1, idx] = -1.0
    if boundary == PERIODIC:
        a[0, n - 1] -= 1.0
        a[n - 1, 0] -= 1.0
    return a


def inner(a: np.ndarray, b: np.ndarray):
    """Inner product sum_m a_m conj(b_m); conjugate-linear in the second slot.

    Returns a complex scalar when either operand is complex, float otherwise.
    """
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch {a.shape} vs {b.shape}")
    val = np.vdot(b, a)  # vdot conjugates its first argument
    if np.iscomplexobj(a) or np.iscomplexobj(b):
        return complex(val)
    return float(val.real)


def norm_sq(a: np.ndarray) -> float:
    return float(np.vdot(a, a).real)


@dataclass
class LatticeState:
    """Pair (u, v) of complex and real site arrays sharing one radius."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.complex128)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape:
            raise DimensionMismatchError(
                f"u and v radii differ: {self.u.shape} vs {self.v.shape}"
            )
        radius_of(self.u)  # validates the 2M+1 layout

    @property
    def radius(self) -> int:
        return radius_of(self.u)

    def validate_finite(self) -> None:
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise ValueError("state contains NaN/Inf entries")

    def norm_sq_u(self) -> float:
        return norm_sq(self.u)

    def norm_sq_v(self) -> float:
        return norm_sq(self.v)

    def copy(self) -> "LatticeState":
        return LatticeState(self.u.copy(), self.v.copy())

    @classmethod
    def zeros(cls, radius: int) -> "LatticeState":
        n = num_sites(radius)
        return cls(np.zeros(n, dtype=np.complex128), np.zeros(n, dtype=np.float64))
