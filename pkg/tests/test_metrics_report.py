import csv

import numpy as np
import pytest

from icc.caching import Trajectory
from icc.metrics import summarize, trajectory_divergence
from icc.report import CSV_COLUMNS, emit, load_json


def _t(vals, idx=(3, 1)):
    lat = [np.full((2, 2), v) for v in vals]
    return Trajectory(idx, lat, [np.zeros((2, 2))] * (len(vals) - 1))


def test_divergence_values():
    d = trajectory_divergence(_t([0.0, 1.0, 2.0]), _t([0.0, 1.0, 1.5]))
    assert d.latent_mse == [0.0, 0.25] and d.latent_max_abs == [0.0, 0.5]
    assert d.final_latent_mse == 0.25 and d.eps_mse == [0.0, 0.0]


def test_divergence_rejects_mismatch():
    with pytest.raises(ValueError):
        trajectory_divergence(_t([0, 1, 2]), _t([0, 1, 2], (4, 1)))


def test_summarize():
    s = summarize([1.0, 3.0])
    assert s == {"n": 2, "mean": 2.0, "std": 1.0, "min": 1.0, "max": 3.0}


def _report():
    run = lambda mode, err: {  # noqa: E731
        "mode": mode, "period": 2, "rank": 4, "method": "svd" if mode == "calibrated" else None,
        "macs": {"total": 10, "block": 8, "estimate_block": 8},
        "final_latent_mse": {"n": 1, "mean": err, "std": 0.0, "min": err, "max": err},
        "per_seed": [{"seed": 0, "latent_mse": [0.0, err]}],
    }
    return {"format": "icc-report", "step_indices": [3, 1],
            "runs": [run("nocache", 0.0), run("naive", 0.1), run("calibrated", 0.01)]}


def test_emit_files(tmp_path):
    paths = emit(_report(), tmp_path)
    assert set(paths) == {"json", "csv", "divergence", "cost_quality"}
    assert load_json(paths["json"])["format"] == "icc-report"
    with open(paths["csv"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == list(CSV_COLUMNS) and len(rows) == 3
    assert float(rows[2]["final_mse_mean"]) == 0.01
    assert paths["divergence"].stat().st_size > 1000
    assert set(emit(_report(), tmp_path / "n", figures=False)) == {"json", "csv"}
