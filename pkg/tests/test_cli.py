import json
import os

import numpy as np
import pytest

from lwsr.cli import EXIT_BLOWUP, EXIT_CONFIG, EXIT_OK, main
from lwsr.config import assemble, load_run_config
from lwsr.errors import ConfigError
from lwsr.lattice import apply_B
from lwsr.opchecks import run_operator_checks
from lwsr.recordio import fmt_float, read_trajectory, write_csv

SMALL_RUN = """
[system]
alpha = 1.0
beta = 2.0
lambda = 0.1
epsilon = 0.1
f_kind = "bump"
f_amp = 0.2
gamma_norm_sq = 0.1
ic_kind = "bump"
ic_amp_u = 0.4
ic_amp_v = 0.2

[noise]
family = "linear_saturating"
delta_norm_sq = 0.5
n_modes = 3
seed = 42

[sim]
radius = 6
dt = 0.01
t_final = 0.5
n_paths = 8
record_stride = 10
block_size = 2

[output]
dir = "{out}"
"""


def write_cfg(tmp_path, body, name="run.toml"):
    p = tmp_path / name
    p.write_text(body)
    return str(p)


def test_validate_operators_passes():
    assert main(["validate-operators"]) == EXIT_OK


def test_mutated_adjoint_reported():
    flipped = lambda x, boundary="zero": -apply_B(x, boundary)
    results = run_operator_checks(radius=8, n_samples=20, b_star=flipped)
    failed = {r.name for r in results if not r.passed}
    assert any("adjointness" in name for name in failed)


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[sim]\nradiuss = 4\n")
    assert main(["moments", "-c", cfg]) == EXIT_CONFIG
    assert "radiuss" in capsys.readouterr().err


def test_unknown_section_rejected(tmp_path):
    cfg = write_cfg(tmp_path, "[simulation]\nradius = 4\n")
    assert main(["moments", "-c", cfg]) == EXIT_CONFIG


def test_toml_syntax_error_carries_location(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[sim\nradius = 4\n")
    assert main(["moments", "-c", cfg]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "line" in err


def test_epsilon_and_fraction_are_exclusive(tmp_path):
    cfg = write_cfg(tmp_path, "[system]\nepsilon = 0.1\neps_fraction = 0.5\n")
    with pytest.raises(ConfigError, match="not both"):
        load_run_config(cfg, "moments")


def test_eps_gate_and_override_flag(tmp_path):
    body = "[system]\nepsilon = 5.0\n\n[sim]\nradius = 4\nt_final = 0.1\nn_paths = 2\ndt = 0.01\nrecord_stride = 10\n"
    cfg = load_run_config(write_cfg(tmp_path, body), "moments")
    with pytest.raises(ConfigError, match="threshold"):
        assemble(cfg)
    assembled = assemble(cfg, eps_override=True)
    assert assembled.params.eps == 5.0


def test_eps_fraction_resolves_against_threshold(tmp_path):
    body = "[system]\neps_fraction = 0.5\n\n[noise]\ndelta_norm_sq = 0.5\n"
    asm = assemble(load_run_config(write_cfg(tmp_path, body), "moments"))
    assert asm.params.eps == pytest.approx(0.5 * np.sqrt(1.0 / 12.0))


def test_moments_verb_runs_and_writes(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = write_cfg(tmp_path, SMALL_RUN.format(out=out))
    assert main(["moments", "-c", cfg, "--workers", "1"]) == EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "complete"
    assert "moments.csv" in man["outputs"]
    header = (out / "moments.csv").read_text().splitlines()[0]
    assert header == "t,m4u,m4u_se,m2v,m2v_se,envelope,violation"


def test_blowup_exit_code(tmp_path):
    body = """
[system]
alpha = 1.0
lambda = 0.1
ic_kind = "site"
ic_amp_u = 1.0
ic_amp_v = 1e9

[sim]
radius = 4
dt = 0.09
t_final = 9.0
n_paths = 1
record_stride = 10

[output]
dir = "{out}"
""".format(out=tmp_path / "b")
    cfg = write_cfg(tmp_path, body)
    assert main(["moments", "-c", cfg]) == EXIT_BLOWUP


def test_csv_outputs_identical_across_worker_counts(tmp_path):
    outs = {}
    for workers in (1, 3):
        out = tmp_path / f"w{workers}"
        cfg = write_cfg(tmp_path, SMALL_RUN.format(out=out), name=f"w{workers}.toml")
        assert main(["moments", "-c", cfg, "--workers", str(workers)]) == EXIT_OK
        outs[workers] = (out / "moments.csv").read_bytes()
    assert outs[1] == outs[3]


def test_simulate_binary_roundtrip(tmp_path):
    out = tmp_path / "sim"
    body = SMALL_RUN.format(out=out) + "write_binary = true\n"
    cfg = write_cfg(tmp_path, body)
    assert main(["simulate", "-c", cfg]) == EXIT_OK
    header, records = read_trajectory(str(out / "trajectory.bin"))
    assert header["radius"] == 6
    n_rec_per_path = 0.5 / 0.01 / 10 + 1
    assert len(records) == 8 * n_rec_per_path
    rec = records[0]
    assert rec.path_id == 0 and rec.time == 0.0
    np.testing.assert_allclose(rec.norms[0], np.sum(np.abs(rec.u) ** 2), rtol=1e-15)
    # norms.csv agrees with the binary records
    lines = (out / "norms.csv").read_text().splitlines()[1:]
    first = lines[0].split(",")
    assert int(first[0]) == 0 and float(first[1]) == 0.0
    assert float(first[2]) == pytest.approx(rec.norms[0], rel=1e-16)


def test_float_formatting_round_trips():
    vals = [0.1, 1.0 / 3.0, 2.0**-52, 1e300, -1.2345678901234567e-8]
    for v in vals:
        assert float(fmt_float(v)) == v


def test_write_csv_mixed_cells(tmp_path):
    path = tmp_path / "x.csv"
    write_csv(str(path), ["a", "b", "c"], [("s", 3, 0.5)])
    assert path.read_text() == "a,b,c\ns,3,0.5\n"


def test_defaults_only_config_assembles():
    cfg = load_run_config(None, "moments")
    asm = assemble(cfg)
    assert asm.sim.radius == 32
    assert asm.params.eps == 0.0


def test_simulate_norms_identical_serial_vs_pooled(tmp_path):
    from lwsr.config import assemble
    from lwsr.experiments import run_simulate

    outs = {}
    for workers in (1, 2):
        out = tmp_path / f"s{workers}"
        cfg = load_run_config(
            write_cfg(tmp_path, SMALL_RUN.format(out=out), name=f"s{workers}.toml"),
            "simulate",
        )
        run_simulate(assemble(cfg), n_workers=workers)
        outs[workers] = (out / "norms.csv").read_bytes()
    assert outs[1] == outs[2]


def test_simulate_with_zero_horizon_writes_initial_ensemble_only(tmp_path):
    out = tmp_path / "t0"
    body = SMALL_RUN.format(out=out).replace("t_final = 0.5", "t_final = 0.0")
    body += "write_binary = true\n"
    cfg = write_cfg(tmp_path, body, name="t0.toml")
    assert main(["simulate", "-c", cfg]) == EXIT_OK
    _, records = read_trajectory(str(out / "trajectory.bin"))
    assert len(records) == 8  # one t=0 record per path
    assert all(rec.time == 0.0 for rec in records)
