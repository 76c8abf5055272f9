"""Operator-facing command line.

Verbs: validate-operators, simulate, moments, tails, invariant-measure,
eps-sweep, oracle-check. Each takes a TOML run file (every key optional, see
``config``), a worker count, and an output directory (flag, else $LWSR_OUTDIR,
else ./runs). Exit codes: 0 success, 1 configuration error, 2 numerical
blow-up, 3 property or acceptance failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ENV_OUTDIR, assemble, load_run_config
from .errors import BlowUpError, ConfigError
from .kernels import backend_name
from .opchecks import run_operator_checks

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_BLOWUP = 2
EXIT_PROPERTY = 3

_RUN_VERBS = {
    "simulate": "run_simulate",
    "moments": "run_moments",
    "tails": "run_tails",
    "invariant-measure": "run_invariant_measure",
    "eps-sweep": "run_eps_sweep",
    "oracle-check": "run_oracle_check",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lwsr",
        description="Ensemble simulation and bound verification for the "
        "stochastic coupled lattice system.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", default=None, help="TOML run file")
    common.add_argument("--workers", type=int, default=0,
                        help="worker processes (0 = available hardware)")
    common.add_argument("--out", default=None,
                        help=f"output directory (default ${ENV_OUTDIR} or ./runs)")
    common.add_argument("--eps-override", action="store_true",
                        help="allow intensity above the admissible threshold")
    for verb in _RUN_VERBS:
        sub.add_parser(verb, parents=[common])
    sub.add_parser("validate-operators", parents=[common])
    return parser


def _resolve_workers(requested: int) -> int:
    if requested and requested > 0:
        return requested
    return os.cpu_count() or 1


def _cmd_validate_operators(args) -> int:
    cfg = load_run_config(args.config, "validate-operators")
    exp = cfg.experiment
    results = run_operator_checks(
        radius=int(exp["radius"]),
        n_samples=int(exp["n_samples"]),
        seed=int(exp["check_seed"]),
    )
    width = max(len(r.name) for r in results)
    ok = True
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  residual={r.worst_residual:.3e}  "
              f"tol={r.tolerance:.1e}  {status}")
        ok = ok and r.passed
    return EXIT_OK if ok else EXIT_PROPERTY


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    workers = _resolve_workers(args.workers)
    if workers > 1:
        # keep worker processes single-threaded in BLAS to avoid oversubscription
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, "1")
    try:
        if args.verb == "validate-operators":
            return _cmd_validate_operators(args)
        cfg = load_run_config(args.config, args.verb)
        if args.out:
            cfg.output["dir"] = args.out
        asm = assemble(cfg, eps_override=args.eps_override)
        from . import experiments

        runner = getattr(experiments, _RUN_VERBS[args.verb])
        result = runner(asm, n_workers=workers)
        print(f"[lwsr] {args.verb}: complete (backend={backend_name()}, "
              f"outputs in {asm.out_dir})")
        if args.verb == "oracle-check" and not result["passed"]:
            return EXIT_PROPERTY
        return EXIT_OK
    except ConfigError as exc:
        print(f"[lwsr] configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"[lwsr] numerical blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP


if __name__ == "__main__":
    sys.exit(main())
