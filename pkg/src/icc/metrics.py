"""Divergence of a cached trajectory from its no-cache oracle."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class Divergence:
    eps_mse: list[float]
    eps_max_abs: list[float]
    latent_mse: list[float]
    latent_max_abs: list[float]
    final_latent_mse: float

    def to_dict(self) -> dict:
        return asdict(self)


def _mse(a, b) -> float:
    return float(np.mean((a - b) ** 2))


def _max_abs(a, b) -> float:
    return float(np.max(np.abs(a - b)))


def trajectory_divergence(run, oracle) -> Divergence:
    """Per-step MSE / max-abs of predictions and latents against ``oracle``."""
    if tuple(run.step_indices) != tuple(oracle.step_indices):
        raise ValueError("trajectories visit different timesteps")
    if len(run.latents) != len(oracle.latents) or run.final.shape != oracle.final.shape:
        raise ValueError("trajectory shapes differ")
    # latents[0] is the shared starting noise
    lat = list(zip(run.latents[1:], oracle.latents[1:]))
    eps = list(zip(run.eps, oracle.eps))
    return Divergence(
        eps_mse=[_mse(a, b) for a, b in eps],
        eps_max_abs=[_max_abs(a, b) for a, b in eps],
        latent_mse=[_mse(a, b) for a, b in lat],
        latent_max_abs=[_max_abs(a, b) for a, b in lat],
        final_latent_mse=_mse(run.final, oracle.final),
    )


def summarize(values) -> dict:
    v = np.asarray(list(values), dtype=np.float64)
    return {
        "n": int(v.size),
        "mean": float(v.mean()),
        "std": float(v.std()),
        "min": float(v.min()),
        "max": float(v.max()),
    }
