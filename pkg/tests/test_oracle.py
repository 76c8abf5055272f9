import numpy as np
import pytest
import scipy.linalg

from lwsr.lattice import basis, num_sites
from lwsr.oracle import (
    expm_pade,
    ou_complex_mean,
    ou_real_moments,
    ou_real_stationary,
)


def test_expm_agrees_with_scipy_reference():
    rng = np.random.default_rng(0)
    for size, scale in ((4, 0.5), (12, 3.0), (20, 10.0)):
        a = scale * (rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size)))
        ours = expm_pade(a)
        ref = scipy.linalg.expm(a)
        assert np.max(np.abs(ours - ref)) <= 1e-10 * max(1.0, np.max(np.abs(ref)))


def test_expm_identity_and_diagonal():
    np.testing.assert_allclose(expm_pade(np.zeros((3, 3))), np.eye(3), atol=1e-15)
    d = np.diag([0.1, -2.0, 1.5])
    np.testing.assert_allclose(expm_pade(d), np.diag(np.exp(np.diag(d))), rtol=1e-13)


def test_linear_mean_at_time_zero_is_initial():
    u0 = basis(1, 4)
    np.testing.assert_allclose(
        ou_complex_mean(u0, np.zeros(9, dtype=complex), alpha=1.0, t=0.0), u0, atol=1e-14
    )


def test_linear_mean_norm_decay_rate():
    # skew part preserves the norm; damping gives exactly exp(-alpha t)
    u0 = basis(0, 6)
    for t in (0.3, 1.0, 2.5):
        out = ou_complex_mean(u0, np.zeros(13, dtype=complex), alpha=1.0, t=t)
        assert np.linalg.norm(out) == pytest.approx(np.exp(-t), rel=1e-12)


def test_linear_mean_unitary_when_undamped():
    rng = np.random.default_rng(1)
    u0 = rng.standard_normal(9) + 1j * rng.standard_normal(9)
    out = ou_complex_mean(u0, np.zeros(9, dtype=complex), alpha=0.0, t=1.7)
    assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(u0), rel=1e-12)


def test_linear_mean_forced_fixed_point():
    # constant forcing: the mean converges to the solve of L u = i f
    rng = np.random.default_rng(2)
    n = num_sites(3)
    f = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    from lwsr.lattice import dense_second_difference

    lmat = -1j * dense_second_difference(3) - 2.0 * np.eye(n)
    fixed = np.linalg.solve(lmat, 1j * f)
    out = ou_complex_mean(np.zeros(n, dtype=complex), f, alpha=2.0, t=40.0)
    np.testing.assert_allclose(out, fixed, atol=1e-10)


def test_radius_cap():
    n = num_sites(40)
    with pytest.raises(ValueError, match="cap"):
        ou_complex_mean(np.zeros(n, dtype=complex), np.zeros(n, dtype=complex), 1.0, 1.0)


def test_scalar_stationary_examples():
    st = ou_real_stationary(beta=2.0, eps=0.1, gamma_site=np.array([1.0]))
    assert st.variance == pytest.approx(0.0025)
    assert ou_real_stationary(beta=2.0, eps=0.0, gamma_site=np.array([1.0])).variance == 0
    assert ou_real_stationary(beta=2.0, eps=0.1, gamma_site=np.array([1.0]), g_site=4.0).mean == 2.0


def test_transient_moments_limit_to_stationary():
    v0 = np.array([1.0, -2.0, 0.5])
    g = np.array([4.0, 0.0, 1.0])
    gamma = np.array([[1.0, 0.5, 0.0], [0.0, 0.5, 2.0]])
    mean, var = ou_real_moments(v0, g, beta=2.0, eps=0.1, gamma=gamma, t=50.0)
    np.testing.assert_allclose(mean, g / 2.0, atol=1e-12)
    np.testing.assert_allclose(var, 0.01 * np.sum(gamma**2, axis=0) / 4.0, atol=1e-12)
    mean0, var0 = ou_real_moments(v0, g, 2.0, 0.1, gamma, t=0.0)
    np.testing.assert_allclose(mean0, v0, atol=1e-14)
    np.testing.assert_allclose(var0, 0.0, atol=1e-14)
