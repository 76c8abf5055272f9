"""Time-stepping and ensemble simulation with deterministic seeding.

Paths are independent work units: path p of a run consumes the counter-based
increment stream keyed by (seed, p), so its trajectory is a pure function of
(seed, p, config) regardless of scheduling. Blocks of paths are stepped
together through (path, site) arrays; all per-path arithmetic is elementwise
or row-local, so the block partition cannot change any path's values. Cross-
path reductions are accumulated per block and merged in block order, which
makes every ensemble statistic bit-identical across worker counts.

Available schemes:

* ``euler_maruyama`` (default): explicit step; the guard
  dt * (4 + alpha) <= 0.5 keeps the stiffest linear mode inside the stability
  region (4 bounds the second-difference spectrum).
* ``exp_euler_maruyama``: the linear flow is applied through precomputed
  exponential factors, which keeps the coupling-free energy decay exact; used
  by the oracle comparisons.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from multiprocessing import get_context

import numpy as np

from .errors import BlowUpError, ConfigError
from .kernels import make_step_kernel
from .lattice import BOUNDARIES, ZERO, LatticeState, num_sites
from .model import SystemParams
from .noise import DiffusionFamily, NoiseStream, gaussian_initial_state
from .truncation import StoppingRecord

SCHEMES = ("euler_maruyama", "exp_euler_maruyama")

_CHUNK_TARGET_BYTES = 24 << 20  # per-block increment chunk size


@dataclass
class InitialCondition:
    """Initial data: a fixed pair, a named shape, or per-site Gaussians."""

    kind: str = "zeros"  # zeros | given | site | bump | random
    u0: np.ndarray | None = None
    v0: np.ndarray | None = None
    amp_u: float = 1.0
    amp_v: float = 1.0
    width: float = 3.0
    ic_seed: int | None = None  # defaults to the run seed (salted internally)

    def materialize_block(self, paths: np.ndarray, radius: int, run_seed: int):
        n = num_sites(radius)
        m = np.arange(-radius, radius + 1, dtype=np.float64)
        if self.kind == "zeros":
            u = np.zeros((len(paths), n), dtype=np.complex128)
            v = np.zeros((len(paths), n), dtype=np.float64)
        elif self.kind == "given":
            if self.u0 is None or self.v0 is None:
                raise ConfigError("initial condition 'given' needs u0 and v0")
            u = np.tile(np.asarray(self.u0, dtype=np.complex128), (len(paths), 1))
            v = np.tile(np.asarray(self.v0, dtype=np.float64), (len(paths), 1))
        elif self.kind == "site":
            u = np.zeros((len(paths), n), dtype=np.complex128)
            v = np.zeros((len(paths), n), dtype=np.float64)
            u[:, radius] = self.amp_u
            v[:, radius] = self.amp_v
        elif self.kind == "bump":
            env = np.exp(-((m / self.width) ** 2))
            u = np.tile(self.amp_u * env.astype(np.complex128), (len(paths), 1))
            v = np.tile(self.amp_v * env, (len(paths), 1))
        elif self.kind == "random":
            seed = self.ic_seed if self.ic_seed is not None else run_seed
            env = np.exp(-((m / self.width) ** 2))
            u = np.empty((len(paths), n), dtype=np.complex128)
            v = np.empty((len(paths), n), dtype=np.float64)
            for row, p in enumerate(paths):
                u[row], v[row] = gaussian_initial_state(
                    seed, int(p), radius, env, self.amp_u, self.amp_v
                )
        else:
            raise ConfigError(f"unknown initial-condition kind {self.kind!r}")
        if u.shape[1] != n:
            raise ConfigError("initial data radius does not match the lattice")
        return u, v


@dataclass
class SimConfig:
    """Discretization and ensemble controls for one run."""

    radius: int
    n_modes: int
    dt: float
    t_final: float
    n_paths: int
    seed: int
    scheme: str = "euler_maruyama"
    cutoff: float | None = None  # None = untruncated system
    record_stride: int = 1
    boundary: str = ZERO
    stop_levels: tuple = ()
    initial: InitialCondition = field(default_factory=InitialCondition)
    block_size: int = 256
    backend: str | None = None  # None = auto

    def validate(self, alpha: float | None = None) -> None:
        if self.radius < 1 or self.n_modes < 1 or self.n_paths < 1:
            raise ConfigError("radius, n_modes, n_paths must be >= 1")
        if self.dt <= 0 or self.t_final < 0:
            raise ConfigError("dt must be > 0 and t_final >= 0")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        if self.boundary not in BOUNDARIES:
            raise ConfigError(f"boundary must be one of {BOUNDARIES}")
        if self.scheme == "euler_maruyama" and alpha is not None:
            if self.dt * (4.0 + alpha) > 0.5 + 1e-12:
                raise ConfigError(
                    f"stability guard failed: dt*(4+alpha) = "
                    f"{self.dt * (4 + alpha):.4g} > 0.5"
                )
        if self.record_stride < 1:
            raise ConfigError("record_stride must be >= 1")
        n = self.n_steps
        if abs(n * self.dt - self.t_final) > 1e-9 * max(1.0, self.t_final):
            raise ConfigError("t_final must be an integer multiple of dt")
        if n % self.record_stride != 0:
            raise ConfigError("record_stride must divide the step count")
        if self.cutoff is not None and self.cutoff <= 0:
            raise ConfigError("cutoff level must be > 0")
        if self.block_size < 1:
            raise ConfigError("block_size must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt)) if self.t_final > 0 else 0

    @property
    def record_times(self) -> np.ndarray:
        n_rec = self.n_steps // self.record_stride + 1
        return np.arange(n_rec) * (self.record_stride * self.dt)


@dataclass
class RecordSpec:
    """What the ensemble driver should collect besides the norm series."""

    site_moments: bool = False
    smooth_levels: tuple = ()
    smooth_weights: np.ndarray | None = None  # (n_levels, N), filled by the driver
    observables: tuple = ()
    obs_window: tuple | None = None  # (t_lo, t_hi); record times inside it
    keep_snapshots: bool = False


@dataclass
class PathOutput:
    """One path's recorded trajectory data."""

    path_index: int
    times: np.ndarray
    norm_u2: np.ndarray
    norm_u4: np.ndarray
    norm_v2: np.ndarray
    snapshots: list | None = None  # [(time, LatticeState)] when requested
    stopping: list = field(default_factory=list)


DEFAULT_OBSERVABLES = ("norm_u_sq", "norm_v_sq", "re_u0", "im_u0", "v0")


def _eval_observable(name: str, u: np.ndarray, v: np.ndarray, radius: int) -> np.ndarray:
    if name == "norm_u_sq":
        return np.einsum("ij,ij->i", u.real, u.real) + np.einsum("ij,ij->i", u.imag, u.imag)
    if name == "norm_v_sq":
        return np.einsum("ij,ij->i", v, v)
    if name == "re_u0":
        return u[:, radius].real.copy()
    if name == "im_u0":
        return u[:, radius].imag.copy()
    if name == "v0":
        return v[:, radius].copy()
    raise ConfigError(f"unknown observable {name!r}")


def smooth_tail_profile(s: np.ndarray) -> np.ndarray:
    """Monotone weight: 0 for |s| <= 1, 1 for |s| >= 2, cubic ramp between."""
    x = np.clip(np.abs(np.asarray(s, dtype=np.float64)) - 1.0, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _smooth_weights(levels, radius: int) -> np.ndarray:
    m = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.stack([smooth_tail_profile(m / n) for n in levels]) if levels else None


@dataclass
class BlockResult:
    path_indices: np.ndarray
    times: np.ndarray
    norm_u2: np.ndarray  # (B, n_rec)
    norm_u4: np.ndarray
    norm_v2: np.ndarray
    hit_step: np.ndarray | None = None  # (L, B), -1 = never
    hit_norm: np.ndarray | None = None
    site_u2_sum: np.ndarray | None = None  # (n_rec, N) summed over block paths
    site_v2_sum: np.ndarray | None = None
    smooth_u4_sum: np.ndarray | None = None  # (n_levels, n_rec)
    smooth_v2_sum: np.ndarray | None = None
    obs_times: np.ndarray | None = None
    obs_samples: dict | None = None  # name -> (B, n_obs_times)
    snapshots: list | None = None  # [(time, u_block, v_block)]


def _row_norms(u: np.ndarray, v: np.ndarray):
    u2 = np.einsum("ij,ij->i", u.real, u.real) + np.einsum("ij,ij->i", u.imag, u.imag)
    v2 = np.einsum("ij,ij->i", v, v)
    return u2, v2


def simulate_block(
    config: SimConfig,
    params: SystemParams,
    family: DiffusionFamily,
    path_lo: int,
    path_hi: int,
    record: RecordSpec | None = None,
) -> BlockResult:
    """Integrate paths [path_lo, path_hi) and collect the requested records."""
    record = record or RecordSpec()
    paths = np.arange(path_lo, path_hi, dtype=np.int64)
    n = num_sites(config.radius)
    n_steps = config.n_steps
    stride = config.record_stride
    n_rec = n_steps // stride + 1
    times = config.record_times

    kernel = make_step_kernel(
        params, family, config.dt, config.boundary, config.cutoff,
        scheme=config.scheme, backend=config.backend,
    )
    stream = NoiseStream(seed=config.seed, n_modes=config.n_modes)
    u, v = config.initial.materialize_block(paths, config.radius, config.seed)
    u = np.ascontiguousarray(u)
    v = np.ascontiguousarray(v)
    out_u = np.empty_like(u)
    out_v = np.empty_like(v)
    b = len(paths)

    levels = tuple(config.stop_levels)
    res = BlockResult(
        path_indices=paths,
        times=times,
        norm_u2=np.empty((b, n_rec)),
        norm_u4=np.empty((b, n_rec)),
        norm_v2=np.empty((b, n_rec)),
    )
    if levels:
        res.hit_step = np.full((len(levels), b), -1, dtype=np.int64)
        res.hit_norm = np.full((len(levels), b), np.nan)
    if record.site_moments:
        res.site_u2_sum = np.zeros((n_rec, n))
        res.site_v2_sum = np.zeros((n_rec, n))
    weights = record.smooth_weights
    if record.smooth_levels:
        if weights is None:
            weights = _smooth_weights(record.smooth_levels, config.radius)
        res.smooth_u4_sum = np.zeros((len(record.smooth_levels), n_rec))
        res.smooth_v2_sum = np.zeros((len(record.smooth_levels), n_rec))
    obs_idx = None
    if record.observables:
        lo, hi = record.obs_window if record.obs_window else (0.0, config.t_final)
        obs_idx = np.nonzero((times >= lo - 1e-12) & (times <= hi + 1e-12))[0]
        res.obs_times = times[obs_idx]
        res.obs_samples = {
            name: np.empty((b, len(obs_idx))) for name in record.observables
        }
    if record.keep_snapshots:
        res.snapshots = []

    def check_stopping(step_index: int, u2: np.ndarray, v2: np.ndarray) -> None:
        ns = np.sqrt(u2) + np.sqrt(v2)
        for li, level in enumerate(levels):
            fresh = (res.hit_step[li] < 0) & (ns > level)
            if np.any(fresh):
                res.hit_step[li, fresh] = step_index
                res.hit_norm[li, fresh] = ns[fresh]

    def record_at(rec_i: int, step_index: int, u2: np.ndarray, v2: np.ndarray) -> None:
        if not (np.all(np.isfinite(u2)) and np.all(np.isfinite(v2))):
            bad = int(paths[np.nonzero(~(np.isfinite(u2) & np.isfinite(v2)))[0][0]])
            raise BlowUpError(
                f"non-finite state at or before step {step_index} "
                f"(path {bad}); reduce dt or the noise intensity",
                path_index=bad,
                step=step_index,
            )
        res.norm_u2[:, rec_i] = u2
        res.norm_u4[:, rec_i] = u2 * u2
        res.norm_v2[:, rec_i] = v2
        if record.site_moments:
            res.site_u2_sum[rec_i] = np.einsum("ij,ij->j", u.real, u.real) + np.einsum(
                "ij,ij->j", u.imag, u.imag
            )
            res.site_v2_sum[rec_i] = np.einsum("ij,ij->j", v, v)
        if record.smooth_levels:
            absu2 = u.real**2 + u.imag**2
            for li in range(len(record.smooth_levels)):
                w2 = weights[li] ** 2
                su = absu2 @ w2
                res.smooth_u4_sum[li, rec_i] = float(np.sum(su * su))
                res.smooth_v2_sum[li, rec_i] = float(np.sum((v * v) @ (w2 * w2)))
        if record.observables and rec_i in obs_pos:
            col = obs_pos[rec_i]
            for name in record.observables:
                res.obs_samples[name][:, col] = _eval_observable(name, u, v, config.radius)
        if record.keep_snapshots:
            res.snapshots.append((times[rec_i], u.copy(), v.copy()))

    obs_pos = {int(ri): ci for ci, ri in enumerate(obs_idx)} if obs_idx is not None else {}

    u2, v2 = _row_norms(u, v)
    if levels:
        check_stopping(0, u2, v2)
    record_at(0, 0, u2, v2)

    need_noise = params.eps != 0.0 and family is not None
    chunk_steps = max(1, min(n_steps, _CHUNK_TARGET_BYTES // max(1, 8 * b * config.n_modes)))
    chunk0 = 0
    chunk = None
    for s in range(n_steps):
        dw = None
        if need_noise:
            if chunk is None or s >= chunk0 + chunk.shape[1]:
                chunk0 = s
                chunk = stream.increments_block(
                    paths, s, min(chunk_steps, n_steps - s), config.dt
                )
            dw = chunk[:, s - chunk0, :]
        kernel.step_block(u, v, dw, out_u, out_v)
        u, out_u = out_u, u
        v, out_v = out_v, v
        step_index = s + 1
        if levels or step_index % stride == 0:
            u2, v2 = _row_norms(u, v)
            if levels:
                check_stopping(step_index, u2, v2)
            if step_index % stride == 0:
                record_at(step_index // stride, step_index, u2, v2)
    return res


@dataclass
class EnsembleResult:
    """Per-path series plus block-merged accumulators for a whole ensemble."""

    config: SimConfig
    times: np.ndarray
    path_indices: np.ndarray
    norm_u2: np.ndarray  # (P, n_rec)
    norm_u4: np.ndarray
    norm_v2: np.ndarray
    hit_step: np.ndarray | None = None
    hit_norm: np.ndarray | None = None
    site_u2_mean: np.ndarray | None = None  # (n_rec, N), mean over paths
    site_v2_mean: np.ndarray | None = None
    smooth_u4_mean: np.ndarray | None = None  # (n_levels, n_rec)
    smooth_v2_mean: np.ndarray | None = None
    smooth_levels: tuple = ()
    obs_times: np.ndarray | None = None
    obs_samples: dict | None = None  # name -> (P, n_obs_times)
    snapshots: list | None = None

    @property
    def n_paths(self) -> int:
        return len(self.path_indices)

    def stopping_records(self, levels) -> list:
        """Per-level StoppingRecord lists reconstructed from the hit table."""
        out = []
        for li, level in enumerate(levels):
            recs = []
            for col, p in enumerate(self.path_indices):
                hs = int(self.hit_step[li, col])
                if hs < 0:
                    recs.append(StoppingRecord(level, None, None, None))
                else:
                    recs.append(
                        StoppingRecord(
                            level, hs * self.config.dt, hs, float(self.hit_norm[li, col])
                        )
                    )
            out.append(recs)
        return out

    def to_path_outputs(self) -> list:
        """Per-path views of the norm series (and snapshots when kept)."""
        outs = []
        levels = tuple(self.config.stop_levels)
        per_level = self.stopping_records(levels) if levels else []
        for col, p in enumerate(self.path_indices):
            snaps = None
            if self.snapshots is not None:
                snaps = [
                    (t, LatticeState(ub[col].copy(), vb[col].copy()))
                    for t, ub, vb in self.snapshots
                ]
            outs.append(
                PathOutput(
                    path_index=int(p),
                    times=self.times,
                    norm_u2=self.norm_u2[col],
                    norm_u4=self.norm_u4[col],
                    norm_v2=self.norm_v2[col],
                    snapshots=snaps,
                    stopping=[per_level[li][col] for li in range(len(levels))],
                )
            )
        return outs


def _block_ranges(n_paths: int, block_size: int):
    return [(lo, min(lo + block_size, n_paths)) for lo in range(0, n_paths, block_size)]


def _run_block_task(args):
    config, params, family, lo, hi, record = args
    return simulate_block(config, params, family, lo, hi, record)


def run_ensemble(
    config: SimConfig,
    params: SystemParams,
    family: DiffusionFamily,
    record: RecordSpec | None = None,
    n_workers: int = 1,
) -> EnsembleResult:
    """Simulate the whole ensemble; results are identical for any n_workers.

    The fixed block partition (by ``config.block_size``) defines the units of
    work; workers only decide *where* a block is computed. Accumulators are
    merged in block order.
    """
    config.validate(params.alpha)
    record = record or RecordSpec()
    if record.smooth_levels and record.smooth_weights is None:
        record = replace(
            record, smooth_weights=_smooth_weights(record.smooth_levels, config.radius)
        )
    ranges = _block_ranges(config.n_paths, config.block_size)
    tasks = [(config, params, family, lo, hi, record) for lo, hi in ranges]
    if n_workers <= 1 or len(ranges) == 1:
        blocks = [_run_block_task(t) for t in tasks]
    else:
        ctx = get_context("spawn")
        with ProcessPoolExecutor(max_workers=n_workers, mp_context=ctx) as pool:
            blocks = list(pool.map(_run_block_task, tasks))

    first = blocks[0]
    res = EnsembleResult(
        config=config,
        times=first.times,
        path_indices=np.concatenate([blk.path_indices for blk in blocks]),
        norm_u2=np.concatenate([blk.norm_u2 for blk in blocks], axis=0),
        norm_u4=np.concatenate([blk.norm_u4 for blk in blocks], axis=0),
        norm_v2=np.concatenate([blk.norm_v2 for blk in blocks], axis=0),
    )
    p = res.n_paths
    if first.hit_step is not None:
        res.hit_step = np.concatenate([blk.hit_step for blk in blocks], axis=1)
        res.hit_norm = np.concatenate([blk.hit_norm for blk in blocks], axis=1)
    if first.site_u2_sum is not None:
        res.site_u2_mean = sum(blk.site_u2_sum for blk in blocks) / p
        res.site_v2_mean = sum(blk.site_v2_sum for blk in blocks) / p
    if first.smooth_u4_sum is not None:
        res.smooth_u4_mean = sum(blk.smooth_u4_sum for blk in blocks) / p
        res.smooth_v2_mean = sum(blk.smooth_v2_sum for blk in blocks) / p
        res.smooth_levels = tuple(record.smooth_levels)
    if first.obs_samples is not None:
        res.obs_times = first.obs_times
        res.obs_samples = {
            name: np.concatenate([blk.obs_samples[name] for blk in blocks], axis=0)
            for name in record.observables
        }
    if first.snapshots is not None:
        res.snapshots = [
            (
                first.snapshots[i][0],
                np.concatenate([blk.snapshots[i][1] for blk in blocks], axis=0),
                np.concatenate([blk.snapshots[i][2] for blk in blocks], axis=0),
            )
            for i in range(len(first.snapshots))
        ]
    return res


def simulate_path(
    config: SimConfig,
    params: SystemParams,
    family: DiffusionFamily,
    path_index: int = 0,
    keep_snapshots: bool = False,
) -> PathOutput:
    """Integrate a single path; bit-identical for identical (seed, path, config)."""
    config.validate(params.alpha)
    record = RecordSpec(keep_snapshots=keep_snapshots)
    block = simulate_block(config, params, family, path_index, path_index + 1, record)
    snaps = None
    if keep_snapshots:
        snaps = [(t, LatticeState(ub[0].copy(), vb[0].copy())) for t, ub, vb in block.snapshots]
    stopping = []
    for li, level in enumerate(config.stop_levels):
        hs = int(block.hit_step[li, 0])
        if hs < 0:
            stopping.append(StoppingRecord(level, None, None, None))
        else:
            stopping.append(
                StoppingRecord(level, hs * config.dt, hs, float(block.hit_norm[li, 0]))
            )
    return PathOutput(
        path_index=path_index,
        times=block.times,
        norm_u2=block.norm_u2[0],
        norm_u4=block.norm_u4[0],
        norm_v2=block.norm_v2[0],
        snapshots=snaps,
        stopping=stopping,
    )


def step(
    state: LatticeState,
    params: SystemParams,
    family: DiffusionFamily,
    increments: np.ndarray | None,
    dt: float,
    scheme: str = "euler_maruyama",
    cutoff: float | None = None,
    boundary: str = ZERO,
) -> LatticeState:
    """Advance one state by one step (single-path convenience wrapper)."""
    kernel = make_step_kernel(params, family, dt, boundary, cutoff, scheme=scheme)
    u = np.ascontiguousarray(state.u[None, :])
    v = np.ascontiguousarray(state.v[None, :])
    out_u = np.empty_like(u)
    out_v = np.empty_like(v)
    dw = None if increments is None else np.asarray(increments, dtype=np.float64)[None, :]
    kernel.step_block(u, v, dw, out_u, out_v)
    if not (np.all(np.isfinite(out_u)) and np.all(np.isfinite(out_v))):
        raise BlowUpError("non-finite state after one step", step=1)
    return LatticeState(out_u[0], out_v[0])


def divergence_pair_block(
    config: SimConfig,
    params_a: SystemParams,
    params_b: SystemParams,
    family: DiffusionFamily,
    path_lo: int,
    path_hi: int,
) -> np.ndarray:
    """Common-noise coupling: run two parameter sets on identical increments
    and return, per path, sup over the step grid of |du|^4 + |dv|^2."""
    paths = np.arange(path_lo, path_hi, dtype=np.int64)
    b = len(paths)
    stream = NoiseStream(seed=config.seed, n_modes=config.n_modes)
    ka = make_step_kernel(params_a, family, config.dt, config.boundary, config.cutoff,
                          scheme=config.scheme, backend=config.backend)
    kb = make_step_kernel(params_b, family, config.dt, config.boundary, config.cutoff,
                          scheme=config.scheme, backend=config.backend)
    ua, va = config.initial.materialize_block(paths, config.radius, config.seed)
    ua = np.ascontiguousarray(ua)
    va = np.ascontiguousarray(va)
    ub, vb = ua.copy(), va.copy()
    oua, ova, oub, ovb = (np.empty_like(ua), np.empty_like(va),
                          np.empty_like(ub), np.empty_like(vb))
    sup = np.zeros(b)
    n_steps = config.n_steps
    need_noise = (params_a.eps != 0.0 or params_b.eps != 0.0)
    chunk_steps = max(1, min(n_steps, _CHUNK_TARGET_BYTES // max(1, 8 * b * config.n_modes)))
    chunk0, chunk = 0, None
    for s in range(n_steps):
        dw = None
        if need_noise:
            if chunk is None or s >= chunk0 + chunk.shape[1]:
                chunk0 = s
                chunk = stream.increments_block(paths, s, min(chunk_steps, n_steps - s), config.dt)
            dw = chunk[:, s - chunk0, :]
        ka.step_block(ua, va, dw, oua, ova)
        kb.step_block(ub, vb, dw, oub, ovb)
        ua, oua = oua, ua
        va, ova = ova, va
        ub, oub = oub, ub
        vb, ovb = ovb, vb
        du = ua - ub
        dv = va - vb
        du2 = np.einsum("ij,ij->i", du.real, du.real) + np.einsum("ij,ij->i", du.imag, du.imag)
        dv2 = np.einsum("ij,ij->i", dv, dv)
        np.maximum(sup, du2 * du2 + dv2, out=sup)
        if (s + 1) % max(1, config.record_stride) == 0 and not np.all(np.isfinite(sup)):
            raise BlowUpError(f"non-finite divergence at step {s + 1}", step=s + 1)
    return sup
