"""Randomized identity battery behind the ``validate-operators`` verb.

Each check states an exact algebraic identity (or a pinned constant bound) of
the difference operators and cutoffs, evaluates it on randomized inputs, and
reports the worst residual against a 1e-12-scale tolerance. The difference
identities are run under the periodic rule, where they hold at every site;
adjointness is additionally checked under zero padding (exact there too).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import apply_A, apply_B, apply_B_star, inner, norm_sq, num_sites
from .truncation import cutoff_complex, cutoff_real, truncated_F

TOL_SCALE = 1e-12


@dataclass
class CheckResult:
    name: str
    worst_residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.worst_residual <= self.tolerance


def run_operator_checks(
    radius: int = 64,
    n_samples: int = 1000,
    seed: int = 0,
    b_star=apply_B_star,
) -> list:
    """The full identity suite; ``b_star`` is injectable for mutation tests."""
    rng = np.random.default_rng(seed)
    n = num_sites(radius)

    def draw():
        return rng.standard_normal(n) + 1j * rng.standard_normal(n)

    worst = {
        "adjointness (zero padding)": 0.0,
        "adjointness (periodic)": 0.0,
        "second difference = backward o forward (periodic)": 0.0,
        "energy identity (periodic)": 0.0,
        "energy positivity": 0.0,
        "forward-difference norm bound": 0.0,
        "complex cutoff Lipschitz factor <= 2": 0.0,
        "real cutoff Lipschitz factor <= 1": 0.0,
        "truncated product matches inside ball": 0.0,
    }
    tol = {name: TOL_SCALE for name in worst}
    tol["complex cutoff Lipschitz factor <= 2"] = 1e-12
    tol["real cutoff Lipschitz factor <= 1"] = 1e-12

    for _ in range(n_samples):
        u = draw()
        v = draw()
        scale_pair = 1.0 + np.sqrt(norm_sq(u) * norm_sq(v))
        scale_u = 1.0 + norm_sq(u)

        for bc, key in (("zero", "adjointness (zero padding)"),
                        ("periodic", "adjointness (periodic)")):
            res = abs(inner(apply_B(u, bc), v) - inner(u, b_star(v, bc))) / scale_pair
            worst[key] = max(worst[key], res)

        res = np.max(np.abs(b_star(apply_B(u, "periodic"), "periodic")
                            - apply_A(u, "periodic"))) / (1.0 + np.max(np.abs(u)))
        worst["second difference = backward o forward (periodic)"] = max(
            worst["second difference = backward o forward (periodic)"], res
        )

        quad = inner(apply_A(u, "periodic"), u).real
        worst["energy identity (periodic)"] = max(
            worst["energy identity (periodic)"],
            abs(quad - norm_sq(apply_B(u, "periodic"))) / scale_u,
        )
        worst["energy positivity"] = max(worst["energy positivity"], max(0.0, -quad) / scale_u)

        worst["forward-difference norm bound"] = max(
            worst["forward-difference norm bound"],
            max(0.0, norm_sq(apply_B(u, "periodic")) - 4 * norm_sq(u)) / scale_u,
        )

    # cutoff factors on bulk random pairs
    z = 3.0 * (rng.standard_normal((2, 100 * n_samples)) + 1j * rng.standard_normal((2, 100 * n_samples)))
    qc = np.abs(cutoff_complex(z[0], 1.0) - cutoff_complex(z[1], 1.0)) / np.abs(z[0] - z[1])
    worst["complex cutoff Lipschitz factor <= 2"] = max(0.0, float(np.max(qc)) - 2.0)
    s = 3.0 * rng.standard_normal((2, 100 * n_samples))
    qr = np.abs(cutoff_real(s[0], 1.0) - cutoff_real(s[1], 1.0)) / np.abs(s[0] - s[1])
    worst["real cutoff Lipschitz factor <= 1"] = max(0.0, float(np.max(qr)) - 1.0)

    u_small = 0.1 * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    v_small = 0.1 * rng.standard_normal(n)
    worst["truncated product matches inside ball"] = float(
        np.max(np.abs(truncated_F(u_small, v_small, 1.0) - u_small * v_small))
    )

    return [CheckResult(name, worst[name], tol[name]) for name in worst]
