"""Ensemble statistics: moment envelopes, tail masses, time-averaged measures,
measure distances, and intensity-continuity studies.

Every diagnostic here has the same shape: a Monte Carlo estimate with a
standard error on one side, and on the other either an explicit bound from
the derived-constant chain (moments, tails) or a scaling law checked by a
log-log fit (intensity continuity). Violation flags use one-sided
3-standard-error tests; the bounds are non-asymptotic, so a robust violation
indicates a real defect in either the implementation or the constant chain.

Weak convergence of time-averaged measures is assessed through finitely many
scalar observables (a configurable projection, not the full product-space
topology), with one-dimensional Wasserstein-1 distances between pooled sample
sets and a path-resampling bootstrap for the sampling noise floor.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import spearmanr, wasserstein_distance

from .errors import ConfigError
from .integrator import (
    DEFAULT_OBSERVABLES,
    RecordSpec,
    SimConfig,
    _block_ranges,
    divergence_pair_block,
    run_ensemble,
    smooth_tail_profile,
)
from .model import DerivedConstants, SystemParams


# -- moment envelope ----------------------------------------------------------


@dataclass
class MomentSeries:
    """Estimates of the fourth/second moment pair against the decay envelope."""

    times: np.ndarray
    m4u: np.ndarray
    m4u_se: np.ndarray
    m2v: np.ndarray
    m2v_se: np.ndarray
    envelope: np.ndarray
    violation: np.ndarray  # bool per time: estimate - 3 se exceeds the envelope

    @property
    def n_violations(self) -> int:
        return int(np.sum(self.violation))


def _stack_norms(ensemble):
    paths = list(ensemble)
    if not paths:
        raise ConfigError("empty ensemble")
    times = paths[0].times
    for p in paths[1:]:
        if p.times.shape != times.shape or not np.array_equal(p.times, times):
            raise ConfigError("ensemble paths use different record grids")
    u4 = np.stack([p.norm_u4 for p in paths])
    v2 = np.stack([p.norm_v2 for p in paths])
    return times, u4, v2


def estimate_moments(ensemble, derived: DerivedConstants) -> MomentSeries:
    """Pointwise moment estimates with the decay envelope attached.

    The envelope is exp(-kappa t) * E[|u(0)|^4 + |v(0)|^2] + absorbing_bound,
    with the initial moment taken from the ensemble's own t=0 records. A time
    is flagged when the estimated sum minus three standard errors still
    exceeds the envelope.
    """
    times, u4, v2 = _stack_norms(ensemble)
    p = u4.shape[0]
    se = lambda a: a.std(axis=0, ddof=1) / np.sqrt(p) if p > 1 else np.zeros(a.shape[1])
    m4u, m2v = u4.mean(axis=0), v2.mean(axis=0)
    initial = float(m4u[0] + m2v[0])
    env = derived.envelope(initial, times)
    total = u4 + v2
    mean_t, se_t = total.mean(axis=0), se(total)
    violation = (
        (mean_t - 3 * se_t > env)
        | (m4u - 3 * se(u4) > env)
        | (m2v - 3 * se(v2) > env)
    )
    return MomentSeries(
        times=times, m4u=m4u, m4u_se=se(u4), m2v=m2v, m2v_se=se(v2),
        envelope=env, violation=violation,
    )


def fit_decay_rate(times: np.ndarray, values: np.ndarray) -> float:
    """Exponential rate fitted to a positive decaying series (negated slope)."""
    good = values > 0
    if np.sum(good) < 2:
        raise ConfigError("need at least two positive values to fit a rate")
    return float(-np.polyfit(times[good], np.log(values[good]), 1)[0])


# -- tail masses --------------------------------------------------------------


@dataclass
class TailSeries:
    """Hard and smooth-weighted tail masses on a ladder of radii."""

    times: np.ndarray
    n_values: tuple
    tail_mass: np.ndarray  # (n_times, n_levels)
    smooth_levels: tuple = ()
    smooth_mass: np.ndarray | None = None  # (n_times, n_smooth)

    def is_monotone_in_radius(self) -> bool:
        return bool(np.all(np.diff(self.tail_mass, axis=1) <= 1e-12))


def _hard_tail_mass(site_u2_mean, site_v2_mean, radius, n_values):
    m = np.abs(np.arange(-radius, radius + 1))
    cols = []
    for n in n_values:
        sel = m >= n
        cols.append(np.sum(site_u2_mean[:, sel], axis=1) ** 2 + np.sum(site_v2_mean[:, sel], axis=1))
    return np.stack(cols, axis=1)


def estimate_tails(ensemble, n_values, smooth_levels=()) -> TailSeries:
    """Tail masses (sum of per-site second moments beyond each radius, with the
    fourth power on the complex part) from snapshot-carrying path outputs.

    Also evaluates the smooth-weighted functional E|w_n u|^4 + E|w_n^2 v|^2
    with the ramp weight w_n(m) = ramp(m/n) (0 inside |m| <= n, 1 outside
    |m| >= 2n) for each level in ``smooth_levels``; by construction it
    dominates the hard tail at radius 2n.
    """
    paths = list(ensemble)
    if not paths or paths[0].snapshots is None:
        raise ConfigError("tail estimation needs snapshot-carrying paths")
    times = np.array([t for t, _ in paths[0].snapshots])
    radius = paths[0].snapshots[0][1].radius
    n_values = tuple(int(n) for n in n_values)
    if any(n > radius for n in n_values):
        raise ConfigError("tail radii must be <= the lattice radius")
    n_t = len(times)
    n = 2 * radius + 1
    site_u2 = np.zeros((n_t, n))
    site_v2 = np.zeros((n_t, n))
    sm_levels = tuple(smooth_levels)
    weights = None
    smooth_u4 = smooth_v2 = None
    if sm_levels:
        m_grid = np.arange(-radius, radius + 1, dtype=float)
        weights = np.stack([smooth_tail_profile(m_grid / lv) for lv in sm_levels])
        smooth_u4 = np.zeros((n_t, len(sm_levels)))
        smooth_v2 = np.zeros((n_t, len(sm_levels)))
    for p in paths:
        for ti, (t, st) in enumerate(p.snapshots):
            au2 = st.u.real**2 + st.u.imag**2
            sv2 = st.v**2
            site_u2[ti] += au2
            site_v2[ti] += sv2
            if sm_levels:
                for li in range(len(sm_levels)):
                    w2 = weights[li] ** 2
                    smooth_u4[ti, li] += float(au2 @ w2) ** 2
                    smooth_v2[ti, li] += float(sv2 @ (w2 * w2))
    np_paths = len(paths)
    site_u2 /= np_paths
    site_v2 /= np_paths
    out = TailSeries(
        times=times,
        n_values=n_values,
        tail_mass=_hard_tail_mass(site_u2, site_v2, radius, n_values),
    )
    if sm_levels:
        out.smooth_levels = sm_levels
        out.smooth_mass = np.stack(
            [smooth_u4[:, li] / np_paths + smooth_v2[:, li] / np_paths
             for li in range(len(sm_levels))], axis=1
        )
    return out


def tails_from_ensemble(result, n_values) -> TailSeries:
    """TailSeries from a streamed ensemble result (site moments + smooth sums)."""
    if result.site_u2_mean is None:
        raise ConfigError("ensemble was run without site-moment recording")
    n_values = tuple(int(n) for n in n_values)
    radius = result.config.radius
    if any(n > radius for n in n_values):
        raise ConfigError("tail radii must be <= the lattice radius")
    out = TailSeries(
        times=result.times,
        n_values=n_values,
        tail_mass=_hard_tail_mass(result.site_u2_mean, result.site_v2_mean, radius, n_values),
    )
    if result.smooth_u4_mean is not None:
        out.smooth_levels = tuple(result.smooth_levels)
        out.smooth_mass = (result.smooth_u4_mean + result.smooth_v2_mean).T
    return out


# -- time-averaged measures ---------------------------------------------------


@dataclass
class EmpiricalMeasure:
    """Time-and-ensemble averaged occupation measure of scalar observables.

    Samples are kept per path (rows) so resampling whole paths — the
    independent unit — gives honest bootstrap fluctuations for the
    time-correlated columns. All samples carry equal weight.
    """

    observables: tuple
    times: np.ndarray
    samples: dict  # name -> (n_paths, n_times)

    @property
    def n_paths(self) -> int:
        return next(iter(self.samples.values())).shape[0]

    @property
    def n_samples(self) -> int:
        arr = next(iter(self.samples.values()))
        return arr.shape[0] * arr.shape[1]

    def pooled(self, name: str) -> np.ndarray:
        return self.samples[name].ravel()

    def histogram(self, name: str, bins: int = 64, range=None):
        """Unit-mass histogram (density) of one observable."""
        return np.histogram(self.pooled(name), bins=bins, range=range, density=True)

    def split_halves(self):
        """Disjoint path halves, for self-consistency checks."""
        half = self.n_paths // 2
        a = {k: v[:half] for k, v in self.samples.items()}
        b = {k: v[half:] for k, v in self.samples.items()}
        return (
            EmpiricalMeasure(self.observables, self.times, a),
            EmpiricalMeasure(self.observables, self.times, b),
        )


def kb_measure(
    config: SimConfig,
    params: SystemParams,
    family,
    burn_in: float,
    avg_T: float,
    observables=DEFAULT_OBSERVABLES,
    n_workers: int = 1,
) -> EmpiricalMeasure:
    """Time-averaged occupation measure over [burn_in, burn_in + avg_T],
    pooled across the ensemble: the Monte Carlo realization of averaging the
    transition kernel in time from one initial condition."""
    if avg_T <= 0:
        raise ConfigError("avg_T must be > 0")
    observables = tuple(observables)
    t_final = burn_in + avg_T
    n_steps = int(round(t_final / config.dt))
    stride = config.record_stride
    if n_steps % stride != 0:
        n_steps = (n_steps // stride + 1) * stride
    cfg = replace(config, t_final=n_steps * config.dt)
    record = RecordSpec(observables=observables, obs_window=(burn_in, cfg.t_final))
    res = run_ensemble(cfg, params, family, record, n_workers=n_workers)
    return EmpiricalMeasure(observables=observables, times=res.obs_times, samples=res.obs_samples)


def measure_distance(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Max over observables of the 1-D Wasserstein-1 distance between pooled samples."""
    if a.observables != b.observables:
        raise ConfigError("measures track different observable lists")
    return max(
        float(wasserstein_distance(a.pooled(name), b.pooled(name)))
        for name in a.observables
    )


def measure_distances_by_observable(a: EmpiricalMeasure, b: EmpiricalMeasure) -> dict:
    if a.observables != b.observables:
        raise ConfigError("measures track different observable lists")
    return {
        name: float(wasserstein_distance(a.pooled(name), b.pooled(name)))
        for name in a.observables
    }


def bootstrap_noise_floor(
    a: EmpiricalMeasure,
    b: EmpiricalMeasure,
    n_boot: int = 200,
    seed: int = 0,
    quantile: float = 0.99,
) -> dict:
    """Per-observable sampling-noise floor for the distance between a and b.

    Under the null that both come from one law, paths from the pooled set are
    resampled (whole paths, the independent unit) into two groups of the
    original sizes; the floor is the given quantile of the resampled
    distances. An observed distance at or below the floor is explained by
    sampling noise alone.
    """
    if a.observables != b.observables:
        raise ConfigError("measures track different observable lists")
    rng = np.random.default_rng(seed)
    floors = {}
    for name in a.observables:
        pool = np.vstack([a.samples[name], b.samples[name]])
        pa, pb = a.n_paths, b.n_paths
        dists = np.empty(n_boot)
        for i in range(n_boot):
            ia = rng.integers(0, pa + pb, size=pa)
            ib = rng.integers(0, pa + pb, size=pb)
            dists[i] = wasserstein_distance(pool[ia].ravel(), pool[ib].ravel())
        floors[name] = float(np.quantile(dists, quantile))
    return floors


# -- intensity continuity -----------------------------------------------------


@dataclass
class DivergenceRow:
    eps1: float
    eps2: float
    divergence: float  # E[sup_t (|du|^4 + |dv|^2)]
    se: float


def eps_divergence(
    config: SimConfig,
    params: SystemParams,
    family,
    eps_pairs,
    n_workers: int = 1,
) -> list:
    """Common-noise pathwise divergence for each intensity pair.

    Both members of a pair consume literally the same increment streams, so
    the estimate isolates the intensity difference; equal intensities give
    exactly zero.
    """
    config.validate(params.alpha)
    rows = []
    for eps1, eps2 in eps_pairs:
        pa = replace(params, eps=float(eps1), allow_eps_above_threshold=True)
        pb = replace(params, eps=float(eps2), allow_eps_above_threshold=True)
        sups = _pair_sups(config, pa, pb, family, n_workers)
        mean = float(sups.mean())
        se = float(sups.std(ddof=1) / np.sqrt(len(sups))) if len(sups) > 1 else 0.0
        rows.append(DivergenceRow(float(eps1), float(eps2), mean, se))
    return rows


def _pair_task(args):
    config, pa, pb, family, lo, hi = args
    return divergence_pair_block(config, pa, pb, family, lo, hi)


def _pair_sups(config, pa, pb, family, n_workers):
    ranges = _block_ranges(config.n_paths, config.block_size)
    tasks = [(config, pa, pb, family, lo, hi) for lo, hi in ranges]
    if n_workers <= 1 or len(ranges) == 1:
        parts = [_pair_task(t) for t in tasks]
    else:
        from concurrent.futures import ProcessPoolExecutor
        from multiprocessing import get_context

        with ProcessPoolExecutor(max_workers=n_workers, mp_context=get_context("spawn")) as pool:
            parts = list(pool.map(_pair_task, tasks))
    return np.concatenate(parts)


def fit_divergence_slope(rows) -> float:
    """Log-log slope of divergence against the intensity gap (nonzero gaps)."""
    gaps = np.array([abs(r.eps1 - r.eps2) for r in rows])
    vals = np.array([r.divergence for r in rows])
    keep = (gaps > 0) & (vals > 0)
    if np.sum(keep) < 2:
        raise ConfigError("need at least two nonzero-gap rows to fit a slope")
    return float(np.polyfit(np.log(gaps[keep]), np.log(vals[keep]), 1)[0])


@dataclass
class MeasureSweepRow:
    eps: float
    distance: float  # max-over-observables distance to the eps=0 measure
    floor: float  # matching bootstrap noise floor


@dataclass
class MeasureSweep:
    rows: list
    spearman: float = field(default=float("nan"))


def eps_measure_sweep(
    config: SimConfig,
    params: SystemParams,
    family,
    eps_list,
    burn_in: float,
    avg_T: float,
    observables=DEFAULT_OBSERVABLES,
    n_workers: int = 1,
    n_boot: int = 100,
) -> MeasureSweep:
    """Distances of time-averaged measures to the zero-intensity one.

    ``eps_list`` must include 0 (the reference). Distances are expected to
    decrease toward the sampling floor as the intensity shrinks; the sweep
    reports the Spearman rank correlation over the nonzero intensities.
    """
    eps_list = [float(e) for e in eps_list]
    if 0.0 not in eps_list:
        raise ConfigError("eps_list must include 0 as the reference")
    measures = {}
    for eps in eps_list:
        p_eps = replace(params, eps=eps, allow_eps_above_threshold=True)
        measures[eps] = kb_measure(
            config, p_eps, family, burn_in, avg_T, observables, n_workers
        )
    ref = measures[0.0]
    rows = []
    for eps in eps_list:
        if eps == 0.0:
            rows.append(MeasureSweepRow(0.0, 0.0, 0.0))
            continue
        dist = measure_distance(measures[eps], ref)
        floor = max(bootstrap_noise_floor(measures[eps], ref, n_boot=n_boot).values())
        rows.append(MeasureSweepRow(eps, dist, floor))
    nz = [r for r in rows if r.eps > 0]
    sp = float("nan")
    if len(nz) >= 3:
        sp = float(spearmanr([r.eps for r in nz], [r.distance for r in nz]).statistic)
    return MeasureSweep(rows=rows, spearman=sp)
