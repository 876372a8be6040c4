"""Config validation and the command-line harness."""

import csv
import json

import numpy as np
import pytest

from kinflow import snapshot
from kinflow.cli import CSV_HEADER, EXIT_CERT, EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from kinflow.config import SCHEMA, ConfigError, parse_config, validate

MINIMAL = """
[density]
kind = "product-uniform-box"
[run]
n_particles = 16
t_final = 0.05
"""

DECOUPLED = """
[force]
k_n = 0.0
[density]
kind = "product-uniform-box"
lo = [0.0, 0.0, -1.0, -1.0]
hi = [1.0, 1.0, 1.0, 1.0]
[run]
n_particles = 32
t_final = 0.2
dt = 0.01
record_stride = 5
"""


def write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path / "runs")])


def only_dir(tmp_path, prefix):
    dirs = sorted((tmp_path / "runs").glob(prefix + "-*"))
    assert len(dirs) == 1
    return dirs[0]


# -- config ------------------------------------------------------------------

def test_empty_config_lists_required_keys():
    with pytest.raises(ConfigError) as info:
        parse_config("# nothing\n")
    for key in ("density.kind", "run.n_particles", "run.t_final"):
        assert key in str(info.value)


def test_minimal_config_fills_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg["cutoff.theta"] == 0.25 and cfg["run.dt"] == 1e-3
    assert cfg["run.record_stride"] == 10
    assert set(cfg.to_dict()) == set(SCHEMA)


@pytest.mark.parametrize("extra, key", [
    ("[cutoff]\ntheta = -1\n", "cutoff.theta"),
    ("[run2]\nx = 1\n", "run2.x"),
    ("[force]\nR = \"big\"\n", "force.R"),
    ("[force]\nk_n = true\n", "force.k_n"),
    ("[drive]\nvalue = [1.0]\n", "drive.value"),
    ("[drive]\nkind = \"vortex\"\n", "drive.kind"),
    ("[converge]\nsizes = [64, 32]\n", "converge.sizes"),
    ("[grid]\nbins = 1\n", "grid.bins"),
])
def test_invalid_values_name_their_key(extra, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        parse_config(MINIMAL + extra)


def test_bad_toml_and_bad_density_are_config_errors():
    with pytest.raises(ConfigError):
        parse_config("[run\nn = 1\n")
    with pytest.raises(ConfigError, match="density"):
        validate({"density.kind": "truncated-gaussian", "run.n_particles": 4, "run.t_final": 1.0})


def test_digest_ignores_output_location():
    a = parse_config(MINIMAL)
    b = a.with_overrides(output__dir="elsewhere")
    c = a.with_overrides(run__seed=5)
    assert a.digest() == b.digest() != c.digest()


def test_config_builds_model_objects():
    cfg = parse_config(MINIMAL + "[drive]\nkind = \"lane\"\namplitude = 0.5\n")
    assert cfg.cutoff_force().n_particles == 16
    assert cfg.drive().kind == "lane"
    assert cfg.density().mass == 1.0


# -- simulate ----------------------------------------------------------------

def test_simulate_writes_manifest_and_csv(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    assert run(tmp_path, "simulate", "--config", str(cfg)) == EXIT_OK
    d = only_dir(tmp_path, "simulate")
    man = json.loads((d / "manifest.json").read_text())
    assert man["config"]["cutoff.theta"] == 0.25
    for k in ("f_inf_bound", "grad_v_bound", "A", "E_cap", "C_max"):
        assert k in man["derived"]
    assert man["timings"]["wall_seconds"] >= 0
    rows = list(csv.reader((d / "diagnostics.csv").open()))
    assert rows[0] == CSV_HEADER
    assert float(rows[1][0]) == 0.0 and float(rows[-1][0]) == 0.05
    assert len({r[1] for r in rows[1:]}) == 1  # mass column constant


def test_zero_horizon_gives_one_record(tmp_path):
    cfg = write(tmp_path, MINIMAL.replace("t_final = 0.05", "t_final = 0.0"))
    assert run(tmp_path, "simulate", "--config", str(cfg)) == EXIT_OK
    d = only_dir(tmp_path, "simulate")
    rows = list(csv.reader((d / "diagnostics.csv").open()))
    assert len(rows) == 2 and float(rows[1][0]) == 0.0


def test_rerun_requires_force(tmp_path, capsys):
    cfg = write(tmp_path, MINIMAL)
    assert run(tmp_path, "simulate", "--config", str(cfg)) == EXIT_OK
    assert run(tmp_path, "simulate", "--config", str(cfg)) == EXIT_IO
    assert "--force" in capsys.readouterr().err
    assert run(tmp_path, "simulate", "--config", str(cfg), "--force") == EXIT_OK


def test_repeated_runs_are_byte_identical(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    outs = []
    for k in range(2):
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / f"r{k}")]) == 0
        outs.append(next((tmp_path / f"r{k}").glob("*/diagnostics.csv")).read_bytes())
    assert outs[0] == outs[1]


def test_seed_override_changes_run(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    assert run(tmp_path, "simulate", "--config", str(cfg), "--seed", "7") == EXIT_OK
    assert only_dir(tmp_path, "simulate").name.endswith("seed7")


def test_snapshots_at_configured_times(tmp_path):
    text = MINIMAL.replace("t_final = 0.05", "t_final = 0.04\ndt = 0.01\nrecord_stride = 1\n"
                           "snapshot_times = [0.02, 0.04]")
    cfg = write(tmp_path, text)
    assert run(tmp_path, "simulate", "--config", str(cfg)) == EXIT_OK
    d = only_dir(tmp_path, "simulate")
    snap = snapshot.load(d / "snapshot_t0.04.kflo")
    assert snap.time == 0.04 and snapshot.load(d / "snapshot_t0.02.kflo").time == 0.02
    # the split run matches an unsplit one
    plain = write(tmp_path, text.replace("snapshot_times = [0.02, 0.04]", ""), "p.toml")
    assert main(["simulate", "--config", str(plain), "--out", str(tmp_path / "p")]) == 0
    a = (d / "diagnostics.csv").read_bytes()
    b = next((tmp_path / "p").glob("*/diagnostics.csv")).read_bytes()
    assert a == b


def test_missing_config_is_io_error(tmp_path):
    assert run(tmp_path, "simulate", "--config", str(tmp_path / "absent.toml")) == EXIT_IO


def test_invalid_config_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, MINIMAL + "[cutoff]\ntheta = -1\n")
    assert run(tmp_path, "simulate", "--config", str(cfg)) == EXIT_CONFIG
    assert "cutoff.theta" in capsys.readouterr().err


# -- invariants / stability / converge ---------------------------------------

def test_invariants_decoupled_pass(tmp_path, capsys):
    cfg = write(tmp_path, DECOUPLED)
    assert run(tmp_path, "invariants", "--config", str(cfg)) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") == 4
    summary = json.loads((only_dir(tmp_path, "invariants") / "certificates.json").read_text())
    assert summary["passed"] and summary["constants"]["C_max"] == 2.0


def test_invariants_failure_path(tmp_path):
    cfg = write(tmp_path, DECOUPLED)
    assert run(tmp_path, "invariants", "--config", str(cfg), "--debug-e-cap", "1e-6") == EXIT_CERT
    summary = json.loads((only_dir(tmp_path, "invariants") / "certificates.json").read_text())
    assert not summary["passed"]


def test_stability_zero_perturbation(tmp_path):
    cfg = write(tmp_path, DECOUPLED)
    assert run(tmp_path, "stability", "--config", str(cfg)) == EXIT_OK
    rep = json.loads((only_dir(tmp_path, "stability") / "stability.json").read_text())
    assert rep["w1_initial"] == 0.0 and rep["w1_final"] == 0.0 and rep["passed"]


def test_stability_with_second_config(tmp_path):
    a = write(tmp_path, DECOUPLED)
    b = write(tmp_path, DECOUPLED.replace("lo = [0.0, 0.0, -1.0, -1.0]",
                                          "lo = [0.0, 0.0, -1.0, -1.0]\nmass = 1.0")
              .replace("hi = [1.0, 1.0, 1.0, 1.0]", "hi = [1.0, 1.0, 1.0, 1.5]"), "b.toml")
    assert run(tmp_path, "stability", "--config", str(a), "--config-b", str(b)) == EXIT_OK
    rep = json.loads((only_dir(tmp_path, "stability") / "stability.json").read_text())
    assert rep["w1_initial"] > 0 and rep["w1_final"] <= rep["bound"]


def test_converge_small(tmp_path, capsys):
    cfg = write(tmp_path, DECOUPLED + "[converge]\nsizes = [8, 16, 32]\nseeds = [0, 1]\n"
                "subsamples = 3\n")
    assert run(tmp_path, "converge", "--config", str(cfg)) == EXIT_OK
    d = only_dir(tmp_path, "converge")
    rows = list(csv.reader((d / "converge.csv").open()))
    assert rows[0] == ["n_low", "n_high", "seed", "t", "w1"]
    assert len(rows) == 1 + 2 * 2 * 2
    summary = json.loads((d / "summary.json").read_text())
    assert len(summary["median_w1_final"]) == 2 and summary["trend"][1] == 1
    assert "non-increasing comparisons" in capsys.readouterr().out


def test_decoupled_refinement_distances_bounded_by_map_lipschitz(tmp_path):
    cfg = write(tmp_path, DECOUPLED + "[converge]\nsizes = [16, 32, 64]\nseeds = [0, 1, 2]\n")
    assert run(tmp_path, "converge", "--config", str(cfg)) == EXIT_OK
    rows = list(csv.reader((only_dir(tmp_path, "converge") / "converge.csv").open()))[1:]
    by = {(r[0], r[1], r[2], float(r[3])): float(r[4]) for r in rows}
    for (lo, hi, seed, t), w in by.items():
        if t > 0:
            assert w <= 2 * by[(lo, hi, seed, 0.0)]


def test_converge_size_limit_is_config_error(tmp_path):
    cfg = write(tmp_path, DECOUPLED + "[converge]\nsizes = [1025, 2048]\n")
    assert run(tmp_path, "converge", "--config", str(cfg)) == EXIT_CONFIG


def test_version_flag(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert "kinflow" in capsys.readouterr().out
