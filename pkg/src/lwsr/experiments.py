"""Experiment drivers behind the CLI verbs: orchestration plus result files.

Every run writes a ``manifest.json`` holding the fully resolved
configuration, package version, backend, seed, wall-clock, per-stage
timings, the list of produced files, and a completion status — enough to
reproduce every output from the manifest alone. Partial results are never
left unflagged: a failed run still writes its manifest with
``status = "failed"`` and the error.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .config import AssembledRun, initial_condition_from
from .errors import ConfigError
from .estimators import (
    bootstrap_noise_floor,
    eps_divergence,
    eps_measure_sweep,
    estimate_moments,
    fit_divergence_slope,
    kb_measure,
    measure_distances_by_observable,
    tails_from_ensemble,
)
from .integrator import RecordSpec, run_ensemble, simulate_block, _block_ranges
from .kernels import backend_name
from .oracle import ou_complex_mean, ou_real_stationary
from .recordio import TrajectoryWriter, write_csv


class Manifest:
    def __init__(self, asm: AssembledRun, verb: str):
        self.data = {
            "verb": verb,
            "version": __version__,
            "backend": backend_name(),
            "seed": asm.sim.seed,
            "config": asm.run_config.resolved(),
            "derived": {
                "kappa": asm.derived.kappa,
                "kappa_tilde": asm.derived.kappa_tilde,
                "eps0": asm.derived.eps0,
                "eps0_loose": asm.derived.eps0_loose,
                "absorbing_bound": asm.derived.absorbing_bound,
                "mode_tail_fraction": asm.family.delta.mode_tail_fraction,
            },
            "started_unix": time.time(),
            "timings_s": {},
            "outputs": [],
            "metrics": {},
            "status": "running",
        }
        self._t0 = time.perf_counter()
        self._stage_t = self._t0

    def stage(self, name: str) -> None:
        now = time.perf_counter()
        self.data["timings_s"][name] = round(now - self._stage_t, 6)
        self._stage_t = now

    def add_output(self, path: str) -> None:
        self.data["outputs"].append(os.path.basename(path))

    def finish(self, out_dir: str, status: str = "complete", error: str | None = None) -> str:
        self.data["status"] = status
        if error:
            self.data["error"] = error
        self.data["wall_clock_s"] = round(time.perf_counter() - self._t0, 6)
        path = os.path.join(out_dir, "manifest.json")
        with open(path, "w") as fh:
            json.dump(self.data, fh, indent=2, default=_json_default)
            fh.write("\n")
        return path


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def _prepare(asm: AssembledRun, verb: str):
    os.makedirs(asm.out_dir, exist_ok=True)
    return Manifest(asm, verb)


def run_moments(asm: AssembledRun, n_workers: int = 1) -> dict:
    man = _prepare(asm, "moments")
    try:
        res = run_ensemble(asm.sim, asm.params, asm.family, n_workers=n_workers)
        man.stage("simulate")
        series = estimate_moments(res.to_path_outputs(), asm.derived)
        man.stage("estimate")
        path = os.path.join(asm.out_dir, "moments.csv")
        write_csv(
            path,
            ["t", "m4u", "m4u_se", "m2v", "m2v_se", "envelope", "violation"],
            (
                (series.times[i], series.m4u[i], series.m4u_se[i], series.m2v[i],
                 series.m2v_se[i], series.envelope[i], int(series.violation[i]))
                for i in range(len(series.times))
            ),
        )
        man.add_output(path)
        man.data["metrics"]["n_violations"] = series.n_violations
        man.stage("write")
        man.finish(asm.out_dir)
        return {"series": series, "manifest": man.data}
    except Exception as exc:
        man.finish(asm.out_dir, status="failed", error=str(exc))
        raise


def default_tail_radii(radius: int) -> list:
    return sorted({0, radius // 4, radius // 2, (2 * radius) // 3, radius})


def run_tails(asm: AssembledRun, n_workers: int = 1) -> dict:
    man = _prepare(asm, "tails")
    try:
        exp = asm.run_config.experiment
        radii = [int(x) for x in exp["tail_radii"]] or default_tail_radii(asm.sim.radius)
        smooth = [int(x) for x in exp["smooth_levels"]] or [max(1, asm.sim.radius // 3)]
        record = RecordSpec(site_moments=True, smooth_levels=tuple(smooth))
        res = run_ensemble(asm.sim, asm.params, asm.family, record, n_workers=n_workers)
        man.stage("simulate")
        series = tails_from_ensemble(res, radii)
        man.stage("estimate")
        path = os.path.join(asm.out_dir, "tails.csv")

        def rows():
            for li, lv in enumerate(series.n_values):
                for ti, t in enumerate(series.times):
                    yield ("hard", lv, t, series.tail_mass[ti, li])
            for li, lv in enumerate(series.smooth_levels):
                for ti, t in enumerate(series.times):
                    yield ("smooth", lv, t, series.smooth_mass[ti, li])

        write_csv(path, ["kind", "level", "t", "mass"], rows())
        man.add_output(path)
        man.data["metrics"]["monotone_in_radius"] = bool(series.is_monotone_in_radius())
        man.stage("write")
        man.finish(asm.out_dir)
        return {"series": series, "manifest": man.data}
    except Exception as exc:
        man.finish(asm.out_dir, status="failed", error=str(exc))
        raise


def run_invariant_measure(asm: AssembledRun, n_workers: int = 1) -> dict:
    man = _prepare(asm, "invariant-measure")
    try:
        exp = asm.run_config.experiment
        burn = exp["burn_in"] if exp["burn_in"] is not None else 5.0 / asm.derived.kappa
        avg = exp["avg_t"] if exp["avg_t"] is not None else 50.0 / asm.derived.kappa
        observables = tuple(exp["observables"])
        bins = int(exp["bins"])
        meas = kb_measure(asm.sim, asm.params, asm.family, burn, avg, observables, n_workers)
        man.stage("simulate")
        outputs = {}
        for name in observables:
            dens, edges = meas.histogram(name, bins=bins)
            path = os.path.join(asm.out_dir, f"measure_{name}.csv")
            write_csv(
                path,
                ["bin_left", "bin_right", "density"],
                ((edges[i], edges[i + 1], dens[i]) for i in range(len(dens))),
            )
            man.add_output(path)
            outputs[name] = path
        man.data["metrics"]["burn_in"] = burn
        man.data["metrics"]["avg_t"] = avg
        man.data["metrics"]["n_samples"] = meas.n_samples
        result = {"measure": meas, "manifest": man.data}
        if exp["compare_second_initial"]:
            ic2 = initial_condition_from(
                {**exp, "ic_seed": asm.run_config.system.get("ic_seed")}, prefix="ic2"
            )
            sim2 = replace(asm.sim, initial=ic2)
            meas2 = kb_measure(sim2, asm.params, asm.family, burn, avg, observables, n_workers)
            man.stage("simulate-second-initial")
            dists = measure_distances_by_observable(meas, meas2)
            floors = bootstrap_noise_floor(meas, meas2, n_boot=int(exp["n_boot"]))
            path = os.path.join(asm.out_dir, "measure_compare.csv")
            write_csv(
                path,
                ["observable", "distance", "floor", "within_floor"],
                ((n, dists[n], floors[n], int(dists[n] <= floors[n])) for n in observables),
            )
            man.add_output(path)
            man.data["metrics"]["distances"] = dists
            man.data["metrics"]["floors"] = floors
            result["measure2"] = meas2
            result["distances"] = dists
            result["floors"] = floors
        man.stage("write")
        man.finish(asm.out_dir)
        return result
    except Exception as exc:
        man.finish(asm.out_dir, status="failed", error=str(exc))
        raise


def run_eps_sweep(asm: AssembledRun, n_workers: int = 1) -> dict:
    man = _prepare(asm, "eps-sweep")
    try:
        exp = asm.run_config.experiment
        eps_values = [float(e) for e in exp["eps_values"]]
        mode = exp["mode"]
        result: dict = {"manifest": man.data}
        if mode not in ("divergence", "measures", "both"):
            raise ConfigError(f"[experiment] mode must be divergence|measures|both, got {mode!r}")
        if mode in ("divergence", "both"):
            t_div = float(exp["t_divergence"])
            n_steps = int(round(t_div / asm.sim.dt))
            sim_div = replace(asm.sim, t_final=n_steps * asm.sim.dt,
                              record_stride=max(1, n_steps // 10) if n_steps else 1)
            sim_div = replace(sim_div, record_stride=_divisor_stride(n_steps, sim_div.record_stride))
            pairs = [(e, e) for e in eps_values[:1]] + [(0.0, e) for e in eps_values]
            rows = eps_divergence(sim_div, asm.params, asm.family, pairs, n_workers)
            man.stage("divergence")
            path = os.path.join(asm.out_dir, "eps_divergence.csv")
            write_csv(
                path,
                ["eps1", "eps2", "divergence", "se"],
                ((r.eps1, r.eps2, r.divergence, r.se) for r in rows),
            )
            man.add_output(path)
            slope = fit_divergence_slope([r for r in rows if r.eps1 != r.eps2])
            man.data["metrics"]["divergence_slope"] = slope
            result["divergence_rows"] = rows
            result["divergence_slope"] = slope
        if mode in ("measures", "both"):
            burn = exp["burn_in"] if exp["burn_in"] is not None else 5.0 / asm.derived.kappa
            avg = exp["avg_t"] if exp["avg_t"] is not None else 50.0 / asm.derived.kappa
            sweep = eps_measure_sweep(
                asm.sim, asm.params, asm.family, [0.0] + eps_values, burn, avg,
                n_workers=n_workers, n_boot=int(exp["n_boot"]),
            )
            man.stage("measures")
            path = os.path.join(asm.out_dir, "eps_measure.csv")
            write_csv(
                path,
                ["eps", "distance", "floor"],
                ((r.eps, r.distance, r.floor) for r in sweep.rows),
            )
            man.add_output(path)
            man.data["metrics"]["spearman"] = sweep.spearman
            result["sweep"] = sweep
        man.stage("write")
        man.finish(asm.out_dir)
        return result
    except Exception as exc:
        man.finish(asm.out_dir, status="failed", error=str(exc))
        raise


def _divisor_stride(n_steps: int, target: int) -> int:
    if n_steps == 0:
        return 1
    s = min(max(1, target), n_steps)
    while n_steps % s != 0:
        s -= 1
    return s


def run_simulate(asm: AssembledRun, n_workers: int = 1) -> dict:
    """Stream trajectory snapshots to the binary record file plus a norm CSV.

    Snapshot-carrying runs are computed block by block in one process so the
    single writer bounds memory; norm-only runs distribute blocks across the
    pool and write the ordered results afterwards.
    """
    man = _prepare(asm, "simulate")
    try:
        keep = bool(asm.run_config.output["write_binary"])
        record = RecordSpec(keep_snapshots=keep)
        ranges = _block_ranges(asm.sim.n_paths, asm.sim.block_size)
        bin_path = os.path.join(asm.out_dir, "trajectory.bin")
        csv_path = os.path.join(asm.out_dir, "norms.csv")
        writer = None
        if keep:
            writer = TrajectoryWriter(bin_path, asm.sim.radius, asm.sim.n_modes,
                                      asm.sim.dt, asm.sim.record_stride)

        def blocks():
            if keep or n_workers <= 1 or len(ranges) == 1:
                for lo, hi in ranges:
                    yield simulate_block(asm.sim, asm.params, asm.family, lo, hi, record)
            else:
                from concurrent.futures import ProcessPoolExecutor
                from multiprocessing import get_context

                from .integrator import _run_block_task

                tasks = [(asm.sim, asm.params, asm.family, lo, hi, record)
                         for lo, hi in ranges]
                ctx = get_context("spawn")
                with ProcessPoolExecutor(max_workers=n_workers, mp_context=ctx) as pool:
                    yield from pool.map(_run_block_task, tasks)

        csv_rows = []
        for blk in blocks():
            for col, pid in enumerate(blk.path_indices):
                if writer is not None:
                    for t, ub, vb in blk.snapshots:
                        writer.append(int(pid), float(t), ub[col], vb[col])
                for ti, t in enumerate(blk.times):
                    csv_rows.append((int(pid), t, blk.norm_u2[col, ti],
                                     blk.norm_u4[col, ti], blk.norm_v2[col, ti]))
        if writer is not None:
            writer.close()
            man.add_output(bin_path)
        man.stage("simulate")
        if asm.run_config.output["write_csv"]:
            write_csv(csv_path, ["path", "t", "norm_u2", "norm_u4", "norm_v2"], csv_rows)
            man.add_output(csv_path)
        man.stage("write")
        man.finish(asm.out_dir)
        return {"manifest": man.data}
    except Exception as exc:
        man.finish(asm.out_dir, status="failed", error=str(exc))
        raise


def run_oracle_check(asm: AssembledRun, n_workers: int = 1) -> dict:
    """Integrator-vs-closed-form battery in the linear regime (small lattice)."""
    from .integrator import InitialCondition, SimConfig, simulate_path
    from .lattice import num_sites
    from .noise import zero_family
    from .model import SystemParams

    man = _prepare(asm, "oracle-check")
    try:
        radius = min(asm.sim.radius, 8)
        n = num_sites(radius)
        rng = np.random.default_rng(asm.sim.seed)
        f = 0.4 * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        u0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        fam0 = zero_family(asm.sim.n_modes, radius)
        lin = SystemParams(
            alpha=asm.params.alpha, beta=asm.params.beta, lam=0.0, eps=0.0,
            f=f, g=np.zeros(n), b=np.zeros((asm.sim.n_modes, n), dtype=complex),
            gamma=np.zeros((asm.sim.n_modes, n)), coupling_enabled=False,
        )
        cfg = SimConfig(radius=radius, n_modes=asm.sim.n_modes, dt=0.01, t_final=2.0,
                        n_paths=1, seed=asm.sim.seed, scheme="exp_euler_maruyama",
                        record_stride=50,
                        initial=InitialCondition(kind="given", u0=u0, v0=np.zeros(n)))
        out = simulate_path(cfg, lin, fam0, keep_snapshots=True)
        worst_mean = 0.0
        for t, st in out.snapshots:
            ref = ou_complex_mean(u0, f, lin.alpha, t)
            worst_mean = max(worst_mean, float(np.max(np.abs(st.u - ref))
                                               / (1.0 + np.max(np.abs(ref)))))
        man.stage("propagator-mean")

        decay = SystemParams(
            alpha=asm.params.alpha, beta=asm.params.beta, lam=0.0, eps=0.0,
            f=np.zeros(n, dtype=complex), g=np.zeros(n),
            b=np.zeros((asm.sim.n_modes, n), dtype=complex),
            gamma=np.zeros((asm.sim.n_modes, n)),
        )
        cfg2 = replace(cfg, initial=InitialCondition(kind="bump", amp_u=1.0, amp_v=0.0),
                       t_final=10.0, record_stride=100)
        out2 = simulate_path(cfg2, decay, fam0)
        expected = out2.norm_u2[0] * np.exp(-2 * decay.alpha * out2.times)
        worst_decay = float(np.max(np.abs(out2.norm_u2 - expected) / expected))
        man.stage("energy-decay")

        # stationary statistics of one noisy real site
        gamma = np.zeros((asm.sim.n_modes, n))
        gamma[0, radius] = 1.0
        g = np.zeros(n)
        g[radius] = 1.0
        ou = SystemParams(
            alpha=asm.params.alpha, beta=asm.params.beta, lam=0.0, eps=0.25,
            f=np.zeros(n, dtype=complex), g=g,
            b=np.zeros((asm.sim.n_modes, n), dtype=complex), gamma=gamma,
            coupling_enabled=False, allow_eps_above_threshold=True,
        )
        cfg3 = SimConfig(radius=radius, n_modes=asm.sim.n_modes, dt=0.005,
                         t_final=4.0, n_paths=4000, seed=asm.sim.seed,
                         scheme="exp_euler_maruyama", record_stride=800,
                         block_size=1000)
        rec = RecordSpec(observables=("v0",), obs_window=(cfg3.t_final, cfg3.t_final))
        res = run_ensemble(cfg3, ou, fam0, rec, n_workers=n_workers)
        samples = res.obs_samples["v0"][:, 0]
        st = ou_real_stationary(ou.beta, ou.eps, gamma[:, radius], g[radius])
        z_mean = abs(samples.mean() - st.mean) / (samples.std(ddof=1) / np.sqrt(len(samples)))
        z_var = abs(samples.var(ddof=1) - st.variance) / (
            st.variance * np.sqrt(2.0 / (len(samples) - 1))
        )
        man.stage("stationary-stats")

        checks = [
            ("propagator mean vs dense exponential", worst_mean, 1e-10),
            ("coupling-free energy decay", worst_decay, 1e-10),
            ("stationary mean z-score", z_mean, 3.0),
            ("stationary variance z-score", z_var, 3.0),
        ]
        path = os.path.join(asm.out_dir, "oracle_check.csv")
        write_csv(path, ["check", "value", "tolerance", "passed"],
                  ((name, val, tol, int(val <= tol)) for name, val, tol in checks))
        man.add_output(path)
        ok = all(val <= tol for _, val, tol in checks)
        man.data["metrics"]["all_passed"] = ok
        man.stage("write")
        man.finish(asm.out_dir)
        return {"checks": checks, "passed": ok, "manifest": man.data}
    except Exception as exc:
        man.finish(asm.out_dir, status="failed", error=str(exc))
        raise
