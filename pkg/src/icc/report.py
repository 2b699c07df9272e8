"""Report files: JSON payload, CSV sweep table and matplotlib figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

CSV_COLUMNS = (
    "mode", "period", "rank", "method",
    "macs_total", "macs_block", "estimate_block",
    "final_mse_mean", "final_mse_std", "final_mse_max",
)


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)


def write_json(report: dict, path) -> Path:
    path = Path(path)
    path.write_text(dumps(report) + "\n", encoding="utf-8")
    return path


def load_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def rows(report: dict) -> list[dict]:
    out = []
    for run in report["runs"]:
        fm = run["final_latent_mse"]
        out.append({
            "mode": run["mode"],
            "period": run["period"],
            "rank": run["rank"],
            "method": run["method"] or "",
            "macs_total": run["macs"]["total"],
            "macs_block": run["macs"]["block"],
            "estimate_block": run["macs"]["estimate_block"],
            "final_mse_mean": repr(fm["mean"]),
            "final_mse_std": repr(fm["std"]),
            "final_mse_max": repr(fm["max"]),
        })
    return out


def write_csv(report: dict, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows(report))
    return path


def _label(run: dict) -> str:
    if run["mode"] == "nocache":
        return "no cache"
    if run["mode"] == "naive":
        return f"naive p={run['period']}"
    return f"{run['method']} r={run['rank']} p={run['period']}"


def plot_divergence(report: dict, path) -> Path:
    """Mean per-step latent MSE against the oracle, one line per cell."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    steps = report["step_indices"]
    for run in report["runs"]:
        if run["mode"] == "nocache":
            continue
        per_seed = [s["latent_mse"] for s in run["per_seed"]]
        mean = [sum(col) / len(col) for col in zip(*per_seed)]
        # exact steps have zero error and no place on a log axis
        ax.plot(range(1, len(steps) + 1), [v if v > 0 else float("nan") for v in mean],
                marker="o", ms=3, label=_label(run))
    ax.set_yscale("log")
    ax.set_xlabel("sampler step")
    ax.set_ylabel("latent MSE vs. no-cache")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_cost_quality(report: dict, path) -> Path:
    """Block MACs per trajectory against mean final-latent MSE."""
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    for run in report["runs"]:
        if run["mode"] == "nocache":
            continue
        err = run["final_latent_mse"]["mean"]
        if err <= 0:
            continue
        ax.scatter(run["macs"]["block"], err, s=18)
        ax.annotate(_label(run), (run["macs"]["block"], err), fontsize=6, xytext=(3, 3), textcoords="offset points")
    ax.set_yscale("log")
    ax.set_xlabel("block MACs per trajectory")
    ax.set_ylabel("final latent MSE")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def emit(report: dict, out_dir, figures: bool = True) -> dict:
    """Write ``report.json``, ``runs.csv`` and figures into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": write_json(report, out / "report.json"), "csv": write_csv(report, out / "runs.csv")}
    if figures and any(r["mode"] != "nocache" for r in report["runs"]):
        paths["divergence"] = plot_divergence(report, out / "divergence.png")
        paths["cost_quality"] = plot_cost_quality(report, out / "cost_quality.png")
    return paths
