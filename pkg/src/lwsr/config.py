"""Run configuration: strict structured-text (TOML) parsing and assembly.

A run file has five sections; every key has a default, unknown keys are hard
errors naming the section and key (no silent typos). Parse errors carry the
line/column from the TOML parser.

    [system]      coefficients, intensity, forcing shapes, initial data
    [noise]       diffusion family, bound-sequence profile, mode count, seed
    [sim]         lattice radius, step, horizon, ensemble, scheme, cutoffs
    [experiment]  verb-specific options
    [output]      directory and formats

Intensity may be given either absolutely (``epsilon``) or as a fraction of
the derived admissible threshold (``eps_fraction``); setting both is an
error.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError
from .integrator import DEFAULT_OBSERVABLES, InitialCondition, SimConfig
from .lattice import num_sites
from .model import SystemParams, check_eps_admissible, derive_constants
from .noise import DeltaSequence, DiffusionFamily

_SYSTEM_DEFAULTS = {
    "alpha": 1.0,
    "beta": 2.0,
    "lambda": 0.1,
    "epsilon": None,  # absolute intensity; exclusive with eps_fraction
    "eps_fraction": None,  # fraction of the derived threshold
    "coupling_enabled": True,
    "allow_eps_above_threshold": False,
    "f_kind": "zero",  # zero | site | bump
    "f_amp": 0.0,
    "f_width": 3.0,
    "g_kind": "zero",
    "g_amp": 0.0,
    "g_width": 3.0,
    "b_norm_sq": 0.0,  # mass of the separable additive complex profile
    "gamma_norm_sq": 0.0,
    "ic_kind": "zeros",  # zeros | site | bump | random
    "ic_amp_u": 0.0,
    "ic_amp_v": 0.0,
    "ic_width": 3.0,
    "ic_seed": None,
}

_NOISE_DEFAULTS = {
    "family": "linear_saturating",  # zero | linear_saturating | sine_bounded | custom_table
    "delta_norm_sq": 0.5,
    "site_power": 1.0,
    "c": 1.0,
    "offset": 0.0,
    "table_knots": None,
    "table_values": None,
    "n_modes": 8,
    "seed": 12345,
}

_SIM_DEFAULTS = {
    "radius": 32,
    "dt": 1e-3,
    "t_final": 10.0,
    "n_paths": 256,
    "scheme": "euler_maruyama",
    "boundary": "zero",
    "cutoff": None,
    "stop_levels": [],
    "record_stride": 100,
    "block_size": 256,
}

_OUTPUT_DEFAULTS = {
    "dir": None,  # None -> $LWSR_OUTDIR or ./runs
    "write_binary": False,
    "write_csv": True,
}

_EXPERIMENT_DEFAULTS = {
    "moments": {},
    "simulate": {"keep_paths": 4},
    "tails": {"tail_radii": [], "smooth_levels": []},  # [] -> derived from radius
    "invariant-measure": {
        "burn_in": None,  # None -> 5 / kappa
        "avg_t": None,  # None -> 50 / kappa
        "observables": list(DEFAULT_OBSERVABLES),
        "bins": 64,
        "n_boot": 100,
        "compare_second_initial": False,
        "ic2_kind": "zeros",
        "ic2_amp_u": 0.0,
        "ic2_amp_v": 0.0,
        "ic2_width": 3.0,
    },
    "eps-sweep": {
        "mode": "both",  # divergence | measures | both
        "eps_values": [0.02, 0.04, 0.08, 0.16],
        "t_divergence": 5.0,
        "burn_in": None,
        "avg_t": None,
        "n_boot": 100,
    },
    "oracle-check": {},
    "validate-operators": {"radius": 64, "n_samples": 1000, "check_seed": 0},
}

ENV_OUTDIR = "LWSR_OUTDIR"


def _merge_section(name: str, defaults: dict, given: dict) -> dict:
    out = dict(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        out[key] = value
    return out


@dataclass
class RunConfig:
    """Fully resolved run configuration (defaults applied, keys validated)."""

    system: dict
    noise: dict
    sim: dict
    experiment: dict
    output: dict
    verb: str = ""
    source_path: str | None = None

    def resolved(self) -> dict:
        return {
            "system": self.system,
            "noise": self.noise,
            "sim": self.sim,
            "experiment": self.experiment,
            "output": self.output,
        }


def load_run_config(path: str | None, verb: str, text: str | None = None) -> RunConfig:
    """Parse and validate a run file for one verb; missing file parts default."""
    if text is None:
        if path is None:
            doc = {}
        else:
            try:
                with open(path, "rb") as fh:
                    doc = tomllib.load(fh)
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {path}")
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}")
    else:
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config: {exc}")
    if verb not in _EXPERIMENT_DEFAULTS:
        raise ConfigError(f"unknown experiment verb {verb!r}")
    for section in doc:
        if section not in ("system", "noise", "sim", "experiment", "output"):
            raise ConfigError(f"unknown section [{section}]")
    cfg = RunConfig(
        system=_merge_section("system", _SYSTEM_DEFAULTS, doc.get("system", {})),
        noise=_merge_section("noise", _NOISE_DEFAULTS, doc.get("noise", {})),
        sim=_merge_section("sim", _SIM_DEFAULTS, doc.get("sim", {})),
        experiment=_merge_section(
            "experiment", _EXPERIMENT_DEFAULTS[verb], doc.get("experiment", {})
        ),
        output=_merge_section("output", _OUTPUT_DEFAULTS, doc.get("output", {})),
        verb=verb,
        source_path=path,
    )
    if cfg.system["epsilon"] is not None and cfg.system["eps_fraction"] is not None:
        raise ConfigError("[system] give either epsilon or eps_fraction, not both")
    return cfg


def shaped_sequence(kind: str, amp: float, width: float, radius: int, complex_valued: bool):
    n = num_sites(radius)
    dtype = np.complex128 if complex_valued else np.float64
    if kind == "zero":
        return np.zeros(n, dtype=dtype)
    if kind == "site":
        out = np.zeros(n, dtype=dtype)
        out[radius] = amp
        return out
    if kind == "bump":
        m = np.arange(-radius, radius + 1, dtype=np.float64)
        return (amp * np.exp(-((m / width) ** 2))).astype(dtype)
    raise ConfigError(f"unknown forcing shape {kind!r}")


def additive_profile(n_modes: int, radius: int, target_norm_sq: float, site_power: float,
                     complex_valued: bool):
    if target_norm_sq == 0.0:
        n = num_sites(radius)
        dtype = np.complex128 if complex_valued else np.float64
        return np.zeros((n_modes, n), dtype=dtype)
    vals = DeltaSequence.from_profile(n_modes, radius, target_norm_sq, site_power).values
    return vals.astype(np.complex128) if complex_valued else vals


@dataclass
class AssembledRun:
    params: SystemParams
    family: DiffusionFamily
    sim: SimConfig
    derived: object
    run_config: RunConfig
    out_dir: str = ""


def initial_condition_from(system: dict, prefix: str = "ic") -> InitialCondition:
    return InitialCondition(
        kind=system[f"{prefix}_kind"],
        amp_u=float(system[f"{prefix}_amp_u"]),
        amp_v=float(system[f"{prefix}_amp_v"]),
        width=float(system[f"{prefix}_width"]),
        ic_seed=system.get("ic_seed"),
    )


def assemble(cfg: RunConfig, eps_override: bool = False) -> AssembledRun:
    """Build the parameter objects, derive constants, and gate the intensity."""
    sy, nz, sm = cfg.system, cfg.noise, cfg.sim
    radius = int(sm["radius"])
    n_modes = int(nz["n_modes"])
    delta = (
        DeltaSequence.from_profile(n_modes, radius, float(nz["delta_norm_sq"]),
                                   float(nz["site_power"]))
        if float(nz["delta_norm_sq"]) > 0
        else DeltaSequence.zeros(n_modes, radius)
    )
    fam_kw = {}
    if nz["family"] == "custom_table":
        if nz["table_knots"] is None or nz["table_values"] is None:
            raise ConfigError("[noise] custom_table needs table_knots and table_values")
        fam_kw = {
            "table_knots": np.asarray(nz["table_knots"], dtype=float),
            "table_values": np.asarray(nz["table_values"], dtype=float),
        }
    family = DiffusionFamily(kind=nz["family"], delta=delta, c=float(nz["c"]),
                             offset=float(nz["offset"]), **fam_kw)
    family.validate_growth()

    f = shaped_sequence(sy["f_kind"], float(sy["f_amp"]), float(sy["f_width"]), radius, True)
    g = shaped_sequence(sy["g_kind"], float(sy["g_amp"]), float(sy["g_width"]), radius, False)
    b = additive_profile(n_modes, radius, float(sy["b_norm_sq"]), float(nz["site_power"]), True)
    gamma = additive_profile(
        n_modes, radius, float(sy["gamma_norm_sq"]), float(nz["site_power"]), False
    )
    override = bool(sy["allow_eps_above_threshold"]) or eps_override

    probe = SystemParams(
        alpha=float(sy["alpha"]), beta=float(sy["beta"]), lam=float(sy["lambda"]),
        eps=0.0, f=f, g=g, b=b, gamma=gamma,
        coupling_enabled=bool(sy["coupling_enabled"]),
        allow_eps_above_threshold=override,
    )
    derived = derive_constants(probe, delta.norm_sq)
    if sy["eps_fraction"] is not None:
        if not np.isfinite(derived.eps0):
            raise ConfigError("[system] eps_fraction needs a finite threshold (delta mass > 0)")
        eps = float(sy["eps_fraction"]) * derived.eps0
    else:
        eps = float(sy["epsilon"]) if sy["epsilon"] is not None else 0.0
    params = SystemParams(
        alpha=probe.alpha, beta=probe.beta, lam=probe.lam, eps=eps,
        f=f, g=g, b=b, gamma=gamma,
        coupling_enabled=probe.coupling_enabled,
        allow_eps_above_threshold=override,
    )
    derived = check_eps_admissible(params, delta.norm_sq)

    sim = SimConfig(
        radius=radius,
        n_modes=n_modes,
        dt=float(sm["dt"]),
        t_final=float(sm["t_final"]),
        n_paths=int(sm["n_paths"]),
        seed=int(nz["seed"]),
        scheme=str(sm["scheme"]),
        cutoff=None if sm["cutoff"] is None else float(sm["cutoff"]),
        record_stride=int(sm["record_stride"]),
        boundary=str(sm["boundary"]),
        stop_levels=tuple(float(x) for x in sm["stop_levels"]),
        initial=initial_condition_from(sy),
        block_size=int(sm["block_size"]),
    )
    sim.validate(params.alpha)

    out_dir = cfg.output["dir"] or os.environ.get(ENV_OUTDIR) or "./runs"
    return AssembledRun(params=params, family=family, sim=sim, derived=derived,
                        run_config=cfg, out_dir=str(out_dir))
