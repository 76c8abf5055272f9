import numpy as np
import pytest

from lwsr.lattice import norm_sq
from lwsr.model import coupling_F, coupling_G
from lwsr.noise import DeltaSequence, DiffusionFamily
from lwsr.truncation import (
    StoppingRecord,
    cutoff_complex,
    cutoff_real,
    detect_stopping,
    lipschitz_sq_F,
    lipschitz_sq_G,
    lipschitz_sq_h,
    lipschitz_sq_sigma,
    truncated_F,
    truncated_G,
    truncated_h,
    truncated_sigma,
)


def test_cutoff_identity_inside_ball_is_exact():
    z = 1 + 1j
    assert cutoff_complex(z, 2.0) == z
    arr = np.array([0.5 + 0.25j, -1.0 + 0.5j])
    out = cutoff_complex(arr, 2.0)
    np.testing.assert_array_equal(out, arr)  # bitwise


def test_cutoff_radial_projection_outside():
    assert cutoff_complex(3 + 4j, 2.0) == pytest.approx(1.2 + 1.6j)
    assert cutoff_real(5.0, 2.0) == 2.0
    assert cutoff_real(-5.0, 2.0) == -2.0
    assert cutoff_complex(0j, 3.0) == 0


def test_cutoff_preserves_argument():
    rng = np.random.default_rng(1)
    z = 10 * (rng.standard_normal(100) + 1j * rng.standard_normal(100))
    out = cutoff_complex(z, 0.5)
    np.testing.assert_allclose(np.angle(out), np.angle(z), atol=1e-12)
    np.testing.assert_allclose(np.abs(out), np.minimum(np.abs(z), 0.5), atol=1e-12)


def test_cutoff_lipschitz_factors():
    rng = np.random.default_rng(2)
    n = 1.5
    z = 4 * (rng.standard_normal((2, 5000)) + 1j * rng.standard_normal((2, 5000)))
    qc = np.abs(cutoff_complex(z[0], n) - cutoff_complex(z[1], n)) / np.abs(z[0] - z[1])
    assert np.max(qc) <= 2.0 + 1e-12
    s = 4 * rng.standard_normal((2, 5000))
    qr = np.abs(cutoff_real(s[0], n) - cutoff_real(s[1], n)) / np.abs(s[0] - s[1])
    assert np.max(qr) <= 1.0 + 1e-12


def test_cutoff_idempotent():
    # inside the ball the identity branch is bitwise; clamped points may move
    # by one rounding unit when re-measured, so the outside branch gets an ulp
    rng = np.random.default_rng(3)
    inside = 0.3 * (rng.standard_normal(200) + 1j * rng.standard_normal(200))
    inside = inside / np.maximum(1.0, np.abs(inside) / 1.1)
    np.testing.assert_array_equal(cutoff_complex(cutoff_complex(inside, 1.2), 1.2),
                                  cutoff_complex(inside, 1.2))
    z = 5 * (rng.standard_normal(200) + 1j * rng.standard_normal(200))
    once = cutoff_complex(z, 1.2)
    np.testing.assert_allclose(cutoff_complex(once, 1.2), once, rtol=0, atol=1e-14)
    s = 5 * rng.standard_normal(200)
    once_r = cutoff_real(s, 1.2)
    np.testing.assert_array_equal(cutoff_real(once_r, 1.2), once_r)


def test_truncated_couplings_match_untruncated_inside_ball():
    rng = np.random.default_rng(4)
    u = 0.5 * (rng.standard_normal(9) + 1j * rng.standard_normal(9))
    v = 0.5 * rng.standard_normal(9)
    n = 1.01 * max(np.max(np.abs(u)), np.max(np.abs(v)))  # every site inside
    np.testing.assert_array_equal(truncated_F(u, v, n), coupling_F(u, v))
    np.testing.assert_array_equal(truncated_G(u, n, 0.3), coupling_G(u, 0.3))


def test_truncated_product_clamps_both_factors():
    u = 10.0 * np.eye(1, 7, 3)[0].astype(complex)
    v = 10.0 * np.eye(1, 7, 3)[0]
    out = truncated_F(u, v, 1.0)
    assert out[3] == pytest.approx(1.0)  # 1 * 1, phases preserved


def test_truncated_product_global_lipschitz():
    rng = np.random.default_rng(5)
    level = 2.0
    q = lipschitz_sq_F(level)
    for _ in range(60):
        u1, u2 = (8 * (rng.standard_normal(9) + 1j * rng.standard_normal(9)) for _ in range(2))
        v1, v2 = (8 * rng.standard_normal(9) for _ in range(2))
        lhs = norm_sq(truncated_F(u1, v1, level) - truncated_F(u2, v2, level))
        assert lhs <= q * (norm_sq(u1 - u2) + norm_sq(v1 - v2)) + 1e-10


def test_truncated_gradient_global_lipschitz():
    rng = np.random.default_rng(6)
    level, lam = 1.5, 0.4
    q = lipschitz_sq_G(level, lam)
    for _ in range(60):
        u1, u2 = (8 * (rng.standard_normal(9) + 1j * rng.standard_normal(9)) for _ in range(2))
        lhs = norm_sq(truncated_G(u1, level, lam) - truncated_G(u2, level, lam))
        assert lhs <= q * norm_sq(u1 - u2) + 1e-10


def family_for_tests():
    delta = DeltaSequence.from_profile(n_modes=4, radius=4, target_norm_sq=0.7)
    return DiffusionFamily(kind="linear_saturating", delta=delta, c=0.9)


def test_truncated_diffusion_matches_inside_ball_and_growth():
    rng = np.random.default_rng(7)
    fam = family_for_tests()
    u = 0.4 * (rng.standard_normal(9) + 1j * rng.standard_normal(9))
    level = 1.01 * np.max(np.abs(u))
    np.testing.assert_array_equal(truncated_h(fam, u, level), fam.eval_h(u))
    v = 0.4 * rng.standard_normal(9)
    level_v = 1.01 * np.max(np.abs(v))
    np.testing.assert_array_equal(truncated_sigma(fam, v, level_v), fam.eval_sigma(v))
    big = 50 * (rng.standard_normal(9) + 1j * rng.standard_normal(9))
    hs = truncated_h(fam, big, 2.0)
    assert np.sum(np.abs(hs) ** 2) <= 2 * fam.delta.norm_sq * (1 + norm_sq(big)) + 1e-12


def test_truncated_diffusion_mode_sum_lipschitz():
    rng = np.random.default_rng(8)
    fam = family_for_tests()
    qh = lipschitz_sq_h(fam)
    qs = lipschitz_sq_sigma(fam)
    for _ in range(60):
        u1, u2 = (6 * (rng.standard_normal(9) + 1j * rng.standard_normal(9)) for _ in range(2))
        lhs = np.sum(np.abs(truncated_h(fam, u1, 1.0) - truncated_h(fam, u2, 1.0)) ** 2)
        assert lhs <= qh * norm_sq(u1 - u2) + 1e-10
        v1, v2 = (6 * rng.standard_normal(9) for _ in range(2))
        lhs_s = np.sum((truncated_sigma(fam, v1, 1.0) - truncated_sigma(fam, v2, 1.0)) ** 2)
        assert lhs_s <= qs * norm_sq(v1 - v2) + 1e-10


def test_detect_stopping_never_on_flat_trajectory():
    times = np.linspace(0, 1, 11)
    rec = detect_stopping(times, np.zeros(11), 2.0)
    assert not rec.escaped
    assert rec.hit_time is None


def test_detect_stopping_on_constructed_ramp():
    dt = 0.1
    times = np.arange(11) * dt
    norms = np.linspace(0, 2.0, 11)  # first value above 1.25 sits at step 7
    rec = detect_stopping(times, norms, 1.25)
    assert rec.escaped
    assert rec.hit_step == 7
    assert rec.hit_time == pytest.approx(7 * dt)
    assert rec.trigger_norm > 1.25


def test_detect_stopping_nonincreasing_path_never_escapes():
    times = np.arange(20) * 0.05
    norms = 1.5 * np.exp(-times)
    assert not detect_stopping(times, norms, 1.6).escaped


def test_stopping_record_dataclass():
    rec = StoppingRecord(level=2.0, hit_time=None, hit_step=None, trigger_norm=None)
    assert not rec.escaped
