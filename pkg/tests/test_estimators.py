import numpy as np
import pytest
from scipy.stats import kstest

from lwsr.errors import ConfigError
from lwsr.estimators import (
    EmpiricalMeasure,
    bootstrap_noise_floor,
    eps_divergence,
    estimate_moments,
    estimate_tails,
    fit_decay_rate,
    fit_divergence_slope,
    kb_measure,
    measure_distance,
    tails_from_ensemble,
)
from lwsr.integrator import (
    InitialCondition,
    PathOutput,
    RecordSpec,
    SimConfig,
    run_ensemble,
)
from lwsr.lattice import LatticeState, num_sites
from lwsr.model import SystemParams, derive_constants
from lwsr.noise import DeltaSequence, DiffusionFamily, zero_family
from lwsr.oracle import ou_real_moments, ou_real_stationary


def make_params(radius=4, n_modes=2, alpha=1.0, beta=2.0, lam=0.1, eps=0.0, **kw):
    n = num_sites(radius)
    return SystemParams(
        alpha=alpha,
        beta=beta,
        lam=lam,
        eps=eps,
        f=kw.pop("f", np.zeros(n, dtype=complex)),
        g=kw.pop("g", np.zeros(n)),
        b=kw.pop("b", np.zeros((n_modes, n), dtype=complex)),
        gamma=kw.pop("gamma", np.zeros((n_modes, n))),
        **kw,
    )


def test_moments_of_resting_system_are_zero_with_positive_envelope():
    params = make_params()
    fam = zero_family(2, 4)
    derived = derive_constants(params, fam.delta.norm_sq)
    cfg = SimConfig(radius=4, n_modes=2, dt=0.01, t_final=1.0, n_paths=4, seed=0,
                    record_stride=10)
    res = run_ensemble(cfg, params, fam)
    series = estimate_moments(res.to_path_outputs(), derived)
    assert np.all(series.m4u == 0) and np.all(series.m2v == 0)
    assert np.all(series.envelope > 0)
    assert series.n_violations == 0


def test_moments_grid_mismatch_rejected():
    params = make_params()
    derived = derive_constants(params, 0.5)
    t1 = np.arange(3) * 0.1
    t2 = np.arange(4) * 0.1
    mk = lambda t: PathOutput(0, t, np.zeros_like(t), np.zeros_like(t), np.zeros_like(t))
    with pytest.raises(ConfigError, match="grid"):
        estimate_moments([mk(t1), mk(t2)], derived)


def test_moments_match_exact_scalar_law_in_linear_regime():
    radius, n_modes = 2, 2
    n = num_sites(radius)
    gamma = np.zeros((n_modes, n))
    gamma[0] = np.array([0.5, 1.0, 0.25, 0.0, 0.75])
    params = make_params(radius=radius, n_modes=n_modes, lam=0.0, beta=2.0, eps=0.3,
                         gamma=gamma, coupling_enabled=False,
                         allow_eps_above_threshold=True)
    fam = zero_family(n_modes, radius)
    derived = derive_constants(params, fam.delta.norm_sq)
    cfg = SimConfig(radius=radius, n_modes=n_modes, dt=0.005, t_final=2.0, n_paths=3000,
                    seed=11, scheme="exp_euler_maruyama", record_stride=80,
                    block_size=1000)
    res = run_ensemble(cfg, params, fam)
    series = estimate_moments(res.to_path_outputs(), derived)
    v0 = np.zeros(n)
    for ti, t in enumerate(series.times):
        mean, var = ou_real_moments(v0, params.g, params.beta, params.eps, gamma, t)
        exact = float(np.sum(var + mean**2))
        se = max(series.m2v_se[ti], 1e-12)
        assert abs(series.m2v[ti] - exact) < 4 * se + 0.01 * exact


def test_measured_decay_rate_beats_the_guaranteed_rate():
    params = make_params(radius=8, alpha=0.8, lam=0.1)
    fam = zero_family(2, 8)
    derived = derive_constants(params, 0.5)
    cfg = SimConfig(radius=8, n_modes=2, dt=0.01, t_final=5.0, n_paths=1, seed=0,
                    scheme="exp_euler_maruyama", record_stride=50,
                    initial=InitialCondition(kind="bump", amp_u=1.0, amp_v=0.5))
    res = run_ensemble(cfg, params, fam)
    series = estimate_moments(res.to_path_outputs(), derived)
    rate = fit_decay_rate(series.times, series.m4u)
    assert rate >= 4 * params.alpha - 0.1
    assert rate >= derived.kappa  # the proven rate is the weaker bound


def synthetic_path(u_sites, v_sites, radius, t=0.0):
    n = num_sites(radius)
    u = np.zeros(n, dtype=complex)
    v = np.zeros(n)
    for m, val in u_sites.items():
        u[m + radius] = val
    for m, val in v_sites.items():
        v[m + radius] = val
    st = LatticeState(u, v)
    times = np.array([t])
    u2 = np.array([st.norm_sq_u()])
    return PathOutput(0, times, u2, u2**2, np.array([st.norm_sq_v()]),
                      snapshots=[(t, st)])


def test_tail_mass_zero_outside_support():
    p = synthetic_path({0: 1 + 1j, 2: 0.5}, {-1: 2.0}, radius=5)
    series = estimate_tails([p], n_values=(3, 4))
    assert series.tail_mass[0, 0] == 0.0
    assert series.tail_mass[0, 1] == 0.0


def test_tail_mass_whole_lattice_case():
    p = synthetic_path({0: 1 + 1j}, {1: 2.0}, radius=4)
    series = estimate_tails([p], n_values=(0,))
    # (E|u|^2)^2 + E|v|^2 with a single path: (2)^2 + 4
    assert series.tail_mass[0, 0] == pytest.approx(8.0)


def test_tail_mass_monotone_and_smooth_dominates_hard():
    rng = np.random.default_rng(0)
    radius = 12
    paths = []
    for i in range(20):
        u_sites = {m: 0.5 * (rng.standard_normal() + 1j * rng.standard_normal())
                   * np.exp(-abs(m) / 4) for m in range(-radius, radius + 1)}
        v_sites = {m: 0.4 * rng.standard_normal() * np.exp(-abs(m) / 4)
                   for m in range(-radius, radius + 1)}
        paths.append(synthetic_path(u_sites, v_sites, radius))
    series = estimate_tails(paths, n_values=(0, 2, 4, 6, 8, 12), smooth_levels=(3, 4))
    assert series.is_monotone_in_radius()
    for li, lv in enumerate(series.smooth_levels):
        hard_idx = series.n_values.index(2 * lv)
        assert np.all(series.smooth_mass[:, li] >= series.tail_mass[:, hard_idx] - 1e-12)


def test_streamed_tails_agree_with_snapshot_tails():
    params = make_params(eps=0.2, lam=0.1)
    fam = DiffusionFamily(kind="linear_saturating",
                          delta=DeltaSequence.from_profile(2, 4, 0.5))
    cfg = SimConfig(radius=4, n_modes=2, dt=0.01, t_final=0.5, n_paths=6, seed=4,
                    record_stride=10,
                    initial=InitialCondition(kind="bump", amp_u=0.5, amp_v=0.3))
    res = run_ensemble(cfg, params, fam,
                       RecordSpec(site_moments=True, smooth_levels=(2,), keep_snapshots=True))
    streamed = tails_from_ensemble(res, n_values=(0, 2, 4))
    snap = estimate_tails(res.to_path_outputs(), n_values=(0, 2, 4), smooth_levels=(2,))
    np.testing.assert_allclose(streamed.tail_mass, snap.tail_mass, rtol=1e-12)
    np.testing.assert_allclose(streamed.smooth_mass, snap.smooth_mass, rtol=1e-12)


def test_kb_measure_degenerate_at_origin_without_noise():
    params = make_params(lam=0.1)
    fam = zero_family(2, 4)
    cfg = SimConfig(radius=4, n_modes=2, dt=0.01, t_final=1.0, n_paths=2, seed=0,
                    record_stride=25,
                    initial=InitialCondition(kind="bump", amp_u=0.5, amp_v=0.25))
    meas = kb_measure(cfg, params, fam, burn_in=20.0, avg_T=5.0)
    for name in meas.observables:
        assert np.max(np.abs(meas.pooled(name))) < 1e-6


def test_kb_measure_matches_scalar_stationary_law():
    # coupling off, one noisy site: v0 samples follow the exact normal law
    radius, n_modes = 2, 1
    n = num_sites(radius)
    g = np.zeros(n)
    g[radius] = 1.0
    gamma = np.zeros((n_modes, n))
    gamma[0, radius] = 1.0
    beta, eps = 2.0, 0.3
    params = make_params(radius=radius, n_modes=n_modes, lam=0.0, beta=beta, eps=eps,
                         g=g, gamma=gamma, coupling_enabled=False,
                         allow_eps_above_threshold=True)
    fam = zero_family(n_modes, radius)
    record_dt = 2.5  # 5 relaxation times: samples effectively independent
    cfg = SimConfig(radius=radius, n_modes=n_modes, dt=0.0025, t_final=1.0,
                    n_paths=500, seed=21, record_stride=int(record_dt / 0.0025),
                    block_size=250)
    meas = kb_measure(cfg, params, fam, burn_in=5.0, avg_T=50.0, observables=("v0",))
    samples = meas.pooled("v0")
    st = ou_real_stationary(beta, eps, gamma[:, radius], g_site=g[radius])
    stat = kstest(samples, "norm", args=(st.mean, np.sqrt(st.variance))).statistic
    assert stat < 1.63 / np.sqrt(len(samples))  # 1% critical value


def test_kb_measure_cauchy_in_averaging_window():
    radius, n_modes = 2, 1
    n = num_sites(radius)
    gamma = np.zeros((n_modes, n))
    gamma[0, radius] = 1.0
    params = make_params(radius=radius, n_modes=n_modes, lam=0.0, beta=2.0, eps=0.3,
                         gamma=gamma, coupling_enabled=False,
                         allow_eps_above_threshold=True)
    fam = zero_family(n_modes, radius)
    cfg = SimConfig(radius=radius, n_modes=n_modes, dt=0.005, t_final=1.0,
                    n_paths=200, seed=33, record_stride=100, block_size=100)
    short = kb_measure(cfg, params, fam, burn_in=5.0, avg_T=25.0, observables=("v0",))
    long = kb_measure(cfg, params, fam, burn_in=5.0, avg_T=50.0, observables=("v0",))
    dist = measure_distance(short, long)
    scale = np.std(long.pooled("v0"))
    assert dist < 0.15 * scale


def test_measure_distance_identity_and_diracs():
    times = np.zeros(1)
    a = EmpiricalMeasure(("x",), times, {"x": np.zeros((10, 1))})
    b = EmpiricalMeasure(("x",), times, {"x": np.full((10, 1), 0.7)})
    assert measure_distance(a, a) == 0.0
    assert measure_distance(a, b) == pytest.approx(0.7)


def test_equal_law_samples_fall_below_bootstrap_floor():
    rng = np.random.default_rng(1)
    times = np.arange(10)
    a = EmpiricalMeasure(("x",), times, {"x": rng.standard_normal((100, 10))})
    b = EmpiricalMeasure(("x",), times, {"x": rng.standard_normal((100, 10))})
    floor = bootstrap_noise_floor(a, b, n_boot=200, seed=5)
    assert measure_distance(a, b) <= floor["x"]


def test_observable_mismatch_rejected():
    times = np.zeros(1)
    a = EmpiricalMeasure(("x",), times, {"x": np.zeros((4, 1))})
    b = EmpiricalMeasure(("y",), times, {"y": np.zeros((4, 1))})
    with pytest.raises(ConfigError, match="observable"):
        measure_distance(a, b)


def test_eps_divergence_zero_gap_and_growth():
    params = make_params(lam=0.1, eps=0.0)
    delta = DeltaSequence.from_profile(2, 4, 0.5)
    fam = DiffusionFamily(kind="linear_saturating", delta=delta)
    cfg = SimConfig(radius=4, n_modes=2, dt=0.01, t_final=1.0, n_paths=16, seed=9,
                    initial=InitialCondition(kind="bump", amp_u=0.5, amp_v=0.3))
    rows = eps_divergence(cfg, params, fam,
                          eps_pairs=[(0.1, 0.1), (0.0, 0.05), (0.0, 0.2)])
    assert rows[0].divergence == 0.0
    assert rows[2].divergence > rows[1].divergence > 0
    slope = fit_divergence_slope(rows[1:])
    assert slope > 0


def test_histogram_integrates_to_one():
    rng = np.random.default_rng(3)
    m = EmpiricalMeasure(("x",), np.arange(5), {"x": rng.standard_normal((50, 5))})
    dens, edges = m.histogram("x", bins=32)
    assert np.sum(dens * np.diff(edges)) == pytest.approx(1.0)


def test_eps_divergence_vanishes_when_noise_enters_nowhere():
    # zero diffusion family and no additive profiles: intensity is inert
    params = make_params(lam=0.1, eps=0.0)
    fam = zero_family(2, 4)
    cfg = SimConfig(radius=4, n_modes=2, dt=0.01, t_final=0.5, n_paths=4, seed=2,
                    initial=InitialCondition(kind="bump", amp_u=0.5, amp_v=0.3))
    rows = eps_divergence(cfg, params, fam, eps_pairs=[(0.0, 0.1), (0.05, 0.2)])
    assert all(r.divergence == 0.0 for r in rows)


def test_eps_divergence_independent_of_worker_count():
    params = make_params(lam=0.1)
    fam = DiffusionFamily(kind="linear_saturating",
                          delta=DeltaSequence.from_profile(2, 4, 0.5))
    cfg = SimConfig(radius=4, n_modes=2, dt=0.01, t_final=0.5, n_paths=8, seed=3,
                    block_size=2,
                    initial=InitialCondition(kind="bump", amp_u=0.5, amp_v=0.3))
    rows1 = eps_divergence(cfg, params, fam, [(0.0, 0.1)], n_workers=1)
    rows2 = eps_divergence(cfg, params, fam, [(0.0, 0.1)], n_workers=2)
    assert rows1[0].divergence == rows2[0].divergence
    assert rows1[0].se == rows2[0].se


def test_measure_sweep_reference_only_is_trivial():
    from lwsr.estimators import eps_measure_sweep

    params = make_params(lam=0.1)
    fam = DiffusionFamily(kind="linear_saturating",
                          delta=DeltaSequence.from_profile(2, 4, 0.5))
    cfg = SimConfig(radius=4, n_modes=2, dt=0.01, t_final=1.0, n_paths=4, seed=5,
                    record_stride=25,
                    initial=InitialCondition(kind="bump", amp_u=0.4, amp_v=0.2))
    sweep = eps_measure_sweep(cfg, params, fam, [0.0], burn_in=1.0, avg_T=2.0)
    assert len(sweep.rows) == 1
    assert sweep.rows[0].eps == 0.0 and sweep.rows[0].distance == 0.0


def test_kb_measure_halves_agree_within_floor():
    radius, n_modes = 2, 1
    n = num_sites(radius)
    gamma = np.zeros((n_modes, n))
    gamma[0, radius] = 1.0
    params = make_params(radius=radius, n_modes=n_modes, lam=0.0, beta=2.0, eps=0.3,
                         gamma=gamma, coupling_enabled=False,
                         allow_eps_above_threshold=True)
    fam = zero_family(n_modes, radius)
    cfg = SimConfig(radius=radius, n_modes=n_modes, dt=0.005, t_final=1.0,
                    n_paths=200, seed=77, record_stride=100, block_size=100)
    meas = kb_measure(cfg, params, fam, burn_in=5.0, avg_T=30.0, observables=("v0",))
    a, b = meas.split_halves()
    floor = bootstrap_noise_floor(a, b, n_boot=150, seed=1)
    assert measure_distance(a, b) <= floor["v0"]
