import json
import math
from pathlib import Path

import numpy as np
import pytest

from stacksurv.cli import (
    EXIT_CONVERGENCE,
    EXIT_DATA,
    EXIT_OK,
    EXIT_USAGE,
    build_parser,
    main,
)
from stacksurv.data import IntervalObservation, StudyDataset, write_csv

BUNDLED = Path(__file__).resolve().parents[1] / "data" / "synthetic_example.csv"


def _config(tmp_path, **overrides):
    cfg = {
        "data": str(BUNDLED),
        "sampler": {"chains": 2, "warmup": 200, "samples": 200},
        "ed_targets": [0.05, 0.10],
        "seed": 3,
        "output_dir": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_parser_requires_command(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_fit_missing_config_is_usage_error(tmp_path, capsys):
    rc = main(["fit", "--config", str(tmp_path / "nope.json")])
    assert rc == EXIT_USAGE
    assert "config error" in capsys.readouterr().err


def test_fit_bad_json_is_usage_error(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["fit", "--config", str(path)]) == EXIT_USAGE


def test_fit_unknown_model_is_usage_error(tmp_path, capsys):
    cfg = _config(tmp_path)
    rc = main(["fit", "--config", str(cfg), "--models", "weibull,exotic"])
    assert rc == EXIT_USAGE
    assert "unknown model" in capsys.readouterr().err


def test_fit_missing_data_file_is_data_error(tmp_path, capsys):
    cfg = _config(tmp_path, data=str(tmp_path / "missing.csv"))
    rc = main(["fit", "--config", str(cfg)])
    assert rc == EXIT_DATA
    assert "data error" in capsys.readouterr().err


def test_fit_malformed_csv_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("study,dose_low,dose_high\nS,5,2\n")
    cfg = _config(tmp_path, data=str(bad))
    assert main(["fit", "--config", str(cfg)]) == EXIT_DATA


def test_validate_reports_dataset(tmp_path, capsys):
    rc = main(["validate", "--data", str(BUNDLED)])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert "observations" in out
    assert "scale factor" in out


def test_validate_without_data_is_usage_error(capsys):
    assert main(["validate"]) == EXIT_USAGE


def test_validate_missing_file_is_data_error(tmp_path, capsys):
    assert main(["validate", "--data", str(tmp_path / "x.csv")]) == EXIT_DATA


@pytest.mark.slow
def test_fit_end_to_end(tmp_path, capsys):
    cfg = _config(tmp_path)
    rc = main(["fit", "--config", str(cfg), "--models", "weibull,loglogistic"])
    out_dir = tmp_path / "out"
    report = json.loads((out_dir / "report.json").read_text())

    assert rc in (EXIT_OK, EXIT_CONVERGENCE)
    assert rc == (EXIT_CONVERGENCE if report["convergence_failed"] else EXIT_OK)

    weights = report["stacking"]["weights"]
    assert set(weights) == {"weibull", "loglogistic"}
    assert sum(weights.values()) == pytest.approx(1.0, abs=1e-9)

    eds = {row["y"]: row["dose"] for row in report["population_ed"]}
    assert eds[0.05] <= eds[0.10]
    for row in report["population_ed"]:
        assert row["ci_low"] <= row["dose"] <= row["ci_high"]

    assert (out_dir / "report.txt").exists()
    pop = np.loadtxt(out_dir / "curve_population.csv", delimiter=",", skiprows=1)
    assert pop.shape[1] == 4
    assert np.all(np.diff(pop[:, 1]) <= 1e-12)  # survival nonincreasing
    study_files = sorted(out_dir.glob("curve_study_*.csv"))
    assert len(study_files) == len(report["study_ed"])

    assert report["provenance"]["seed"] == 3
    assert "config_sha256" in report["provenance"]

    # determinism: a second run reproduces the report exactly
    out2 = tmp_path / "out2"
    rc2 = main(["fit", "--config", str(cfg), "--models", "weibull,loglogistic",
                "--out", str(out2)])
    report2 = json.loads((out2 / "report.json").read_text())
    assert rc2 == rc
    assert report2 == report


@pytest.mark.slow
def test_simulate_smoke(tmp_path, capsys):
    cfg_path = tmp_path / "sim.json"
    cfg_path.write_text(json.dumps({
        "simulation": {"truth": "weibull_ig", "n_centers": 3, "replications": 3},
        "sampler": {"chains": 2, "warmup": 300, "samples": 300},
    }))
    out = tmp_path / "sim_out"
    rc = main(["simulate", "--config", str(cfg_path), "--seed", "1",
               "--out", str(out)])
    assert rc == EXIT_OK
    lines = (out / "mse_ratios.csv").read_text().strip().splitlines()
    assert lines[0].startswith("failure_probability,mse_ratio")
    assert len(lines) == 4  # header + ED01/ED05/ED10
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["truth"] == "weibull_ig"
    assert manifest["completed"] + manifest["excluded"] == 3
    assert "ED05 ratio" in capsys.readouterr().out


def test_simulate_unknown_truth_is_usage_error(tmp_path, capsys):
    cfg_path = tmp_path / "sim.json"
    cfg_path.write_text(json.dumps({"simulation": {"truth": "cauchy"}}))
    assert main(["simulate", "--config", str(cfg_path)]) == EXIT_USAGE


def test_invalid_sampler_settings_is_usage_error(tmp_path, capsys):
    cfg = _config(tmp_path, sampler={"chains": 0})
    assert main(["fit", "--config", str(cfg)]) == EXIT_USAGE


def test_invalid_ed_targets_is_usage_error(tmp_path, capsys):
    cfg = _config(tmp_path, ed_targets=[0.0, 0.5])
    assert main(["fit", "--config", str(cfg)]) == EXIT_USAGE
