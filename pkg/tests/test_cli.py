import copy
import csv
import json

import numpy as np
import pytest

from htsched.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, main
from htsched.config import ConfigError, ExperimentConfig, apply_override, bundled

FAST = [
    "--set", "simulation.horizon=50",
    "--set", "heavy_traffic.r_values=[2,3]",
    "--set", "heavy_traffic.replicas=2",
    "--set", "heavy_traffic.horizon=1",
    "--set", "heavy_traffic.grid_step=0.05",
    "--set", "rdrs.paths=5",
    "--set", "rdrs.dt=0.01",
]


# ---------------------------------------------------------------- config


def test_bundled_config_round_trip():
    doc = bundled()
    cfg = ExperimentConfig.from_dict(doc)
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert again.digest() == cfg.digest()


def test_config_builders():
    cfg = ExperimentConfig.from_dict(bundled())
    assert (cfg.K, cfg.J) == (2, 2)
    assert cfg.build_region().K == 2
    np.testing.assert_allclose(cfg.theta(), -0.3)
    np.testing.assert_allclose(cfg.arrival_scv(), 1.0)


@pytest.mark.parametrize(
    "override, field",
    [
        ("simulation.horizon=0", "simulation.horizon"),
        ("traffic.mu=[1,1,1]", "region.kind"),
        ("environment.embedded_matrix=[[0,1]]", "environment.embedded_matrix"),
        ("region.powers=[1]", "region.powers"),
        ("utility.family=\"cubic\"", "utility.family"),
        ("heavy_traffic.r_values=[8,4]", "heavy_traffic.r_values"),
        ("rdrs.t_probe=100", "rdrs.t_probe"),
        ("simulation.unknown=1", "simulation"),
    ],
)
def test_config_errors_name_the_field(override, field):
    doc = apply_override(bundled(), override)
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict(doc)
    assert exc.value.path == field


def test_other_region_kinds_build():
    base = bundled()
    simplex = copy.deepcopy(base)
    simplex["region"] = {"kind": "simplex", "sum_capacity": [1.0, 2.0]}
    assert ExperimentConfig.from_dict(simplex).build_region().kind == "simplex"
    quad = copy.deepcopy(base)
    quad["region"] = {"kind": "custom", "family": "quadratic", "radius": [1.0, 1.0], "sum_capacity": [1.2, 1.2]}
    assert ExperimentConfig.from_dict(quad).build_region().K == 2
    mimo = copy.deepcopy(base)
    mimo["region"] = {
        "kind": "mimo-mac",
        "channels": [[[[1.0, 0.2]], [[0.3, 1.0]]], [[[0.7, 0.1]], [[0.1, 0.7]]]],
        "powers": [1.0, 1.0],
    }
    assert ExperimentConfig.from_dict(mimo).build_region().K == 2
    bc = copy.deepcopy(base)
    bc["region"] = {"kind": "bc2", "gains": [[1.0, 0.6], [0.7, 0.7]], "total_power": 1.0, "split_grid_size": 5, "directions": 5}
    assert ExperimentConfig.from_dict(bc).build_region().kind == "bc"


def test_override_parsing():
    doc = apply_override({}, "a.b=3")
    assert doc == {"a": {"b": 3}}
    assert apply_override({}, "x=hello") == {"x": "hello"}
    with pytest.raises(ConfigError):
        apply_override({}, "no-equals-sign")


# ---------------------------------------------------------------- commands


def test_verify_bundled_passes(capsys):
    assert main(["verify"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "all checks passed" in out and "FAIL" not in out


def test_simulate_horizon_zero_is_config_error(capsys, tmp_path):
    assert main(["simulate", "--out", str(tmp_path), "--set", "simulation.horizon=0"]) == EXIT_CONFIG
    assert "simulation.horizon" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        main(["frobnicate"])


@pytest.mark.parametrize("command, artifact", [
    ("simulate", "trajectory.csv"),
    ("sweep", "sweep.csv"),
    ("rdrs", "path.csv"),
    ("capacity-trace", "boundary.csv"),
])
def test_outputs_are_deterministic_and_have_manifest(command, artifact, tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main([command, "--out", str(out)] + FAST) == EXIT_OK
        outs.append(out)
    assert (outs[0] / artifact).read_bytes() == (outs[1] / artifact).read_bytes()
    manifest = json.loads((outs[0] / "manifest.json").read_text())
    stored = json.loads((outs[0] / "config.json").read_text())
    assert manifest["config_sha256"] == ExperimentConfig.from_dict(stored).digest()
    assert manifest["seed"] == stored["seed"]
    assert {"numpy", "scipy", "python", "htsched"} <= set(manifest["versions"])


def test_sweep_csv_columns(tmp_path):
    assert main(["sweep", "--out", str(tmp_path)] + FAST) == EXIT_OK
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["r", "seed", "policy", "sup-collapse", "avg-collapse", "avg-W_hat", "sup-fluid-norm"]
    assert len(rows) == 1 + 2 * 2 * 3


def test_seed_flag_changes_output(tmp_path):
    main(["simulate", "--out", str(tmp_path / "a")] + FAST)
    main(["simulate", "--out", str(tmp_path / "b"), "--seed", "7"] + FAST)
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() != (tmp_path / "b" / "trajectory.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seed"] == 7


def test_compare_small_ensembles_is_runtime_error(tmp_path):
    # the comparison refuses ensembles below its minimum sizes
    assert main(["compare", "--out", str(tmp_path)] + FAST) == 2


def test_compare_writes_summary(tmp_path):
    args = ["compare", "--out", str(tmp_path), "--set", "heavy_traffic.r_values=[2]", "--set", "heavy_traffic.replicas=20",
            "--set", "heavy_traffic.horizon=1", "--set", "heavy_traffic.grid_step=0.05",
            "--set", "rdrs.paths=100", "--set", "rdrs.dt=0.01"]
    code = main(args)
    assert code in (EXIT_OK, EXIT_CHECK)
    summary = json.loads((tmp_path / "compare.json").read_text())
    assert summary["n_rdrs"] == 100 and summary["n_sim"] == 20
    assert summary["passed"] == (code == EXIT_OK)


def test_bad_jobs(tmp_path):
    assert main(["simulate", "--out", str(tmp_path), "--jobs", "0"]) == EXIT_CONFIG
