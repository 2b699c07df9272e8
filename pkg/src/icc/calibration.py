"""Low-rank calibration factors from model weights.

Three ways to pick the rank-r factors of each block linear layer:

* plain truncated SVD of ``W``;
* CA-SVD, which weighs channels by their mean activation magnitude;
* CD-SVD, which weighs channels by their mean change between adjacent
  timesteps, the quantity the increment actually multiplies.

Both channel-aware variants factor ``diag(s_o) W diag(s_i)`` and undo the
scaling on the factors afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import thin_svd, truncate_factors
from .model import ModelWeights, forward
from .rng import Rng
from .samplers import NoiseSchedule, ddim_step, forward_noising

SCALE_FLOOR = 1e-6
METHODS = ("identity", "svd", "ca", "cd", "cd_i", "cd_o", "ca_i", "ca_o")


@dataclass(frozen=True)
class ScalePair:
    s_i: np.ndarray
    s_o: np.ndarray
    method: str = "identity"

    def __post_init__(self):
        for name in ("s_i", "s_o"):
            v = getattr(self, name)
            if not np.all(np.isfinite(v)) or np.any(v < SCALE_FLOOR):
                raise ValueError(f"{name} has entries below the {SCALE_FLOOR} floor or non-finite")

    @classmethod
    def identity(cls, c_i: int, c_o: int) -> "ScalePair":
        return cls(np.ones(c_i), np.ones(c_o), "identity")


@dataclass(frozen=True)
class LayerCalib:
    wa: np.ndarray  # (C_o, r)
    wb: np.ndarray  # (r, C_i)
    method: str

    @property
    def rank(self) -> int:
        return self.wb.shape[0]

    def product(self) -> np.ndarray:
        return self.wa @ self.wb


@dataclass
class CalibParams:
    layers: dict
    rank: int
    method: str

    def __post_init__(self):
        for layer, f in self.layers.items():
            if f.rank != self.rank:
                raise ValueError(f"{layer.name} has rank {f.rank}, expected uniform rank {self.rank}")


def _check_rank(weights: ModelWeights, r: int) -> None:
    if r < 0:
        raise ValueError(f"rank must be non-negative, got {r}")
    for layer in weights.config.layer_ids():
        ci, co = weights.config.channels(layer.slot)
        if r > min(ci, co):
            raise ValueError(f"rank {r} exceeds min dimension {min(ci, co)} of {layer.name}")


def plain_svd_calib(weights: ModelWeights, r: int) -> CalibParams:
    _check_rank(weights, r)
    layers = {}
    for layer in weights.config.layer_ids():
        wa, wb = truncate_factors(thin_svd(weights.linear(layer).weight), r)
        layers[layer] = LayerCalib(wa, wb, "svd")
    return CalibParams(layers, r, "svd")


def channel_aware_factors(w: np.ndarray, s_i: np.ndarray, s_o: np.ndarray, r: int):
    """Rank-r factors of ``w`` chosen in the channel-scaled domain.

    ``wa @ wb == diag(1/s_o) @ trunc_r(diag(s_o) @ w @ diag(s_i)) @ diag(1/s_i)``.
    """
    if np.any(s_i < SCALE_FLOOR) or np.any(s_o < SCALE_FLOOR):
        raise ValueError("channel scales below the floor")
    scaled = s_o[:, None] * w * s_i[None, :]
    wa, wb = truncate_factors(thin_svd(scaled), r)
    return wa / s_o[:, None], wb / s_i[None, :]


def channel_aware_calib(weights: ModelWeights, scales: dict, r: int) -> CalibParams:
    _check_rank(weights, r)
    layers = {}
    method = None
    for layer in weights.config.layer_ids():
        if layer not in scales:
            raise ValueError(f"no scales for {layer.name}")
        sp = scales[layer]
        wa, wb = channel_aware_factors(weights.linear(layer).weight, sp.s_i, sp.s_o, r)
        layers[layer] = LayerCalib(wa, wb, sp.method)
        method = sp.method
    return CalibParams(layers, r, method or "identity")


def reduced_variants(scales: ScalePair, which: str) -> ScalePair:
    """Keep only the input-side (``input_only``) or output-side (``output_only``) scale."""
    base = scales.method.split("_")[0]
    if which == "input_only":
        s_o = np.ones_like(scales.s_o)
        s_i = scales.s_i
        suffix = "i"
    elif which == "output_only":
        s_i = np.ones_like(scales.s_i)
        s_o = scales.s_o
        suffix = "o"
    else:
        raise ValueError(f"unknown reduction {which!r}")
    if np.all(s_i == 1.0) and np.all(s_o == 1.0):
        return ScalePair(s_i, s_o, "identity")
    return ScalePair(s_i, s_o, f"{base}_{suffix}")


@dataclass
class CalibSet:
    samples: list
    provenance: str

    def __post_init__(self):
        if not self.samples:
            raise ValueError("calibration set is empty")

    def __len__(self) -> int:
        return len(self.samples)


def make_calib_set(config, size: int = 256, seed: int = 0) -> CalibSet:
    """Synthetic clean samples drawn from a fixed-seed standard normal."""
    rng = Rng(seed)
    samples = [rng.normal((config.tokens, config.hidden)) for _ in range(size)]
    return CalibSet(samples, f"normal(seed={seed}, size={size})")


class ChannelAccumulator:
    """Running per-channel mean of |activation| (or |activation delta|) per layer.

    Each ``add`` contributes the token-mean of one sample; ``finalize`` averages
    over samples in insertion order and applies the floor.
    """

    def __init__(self):
        self.sum_i: dict = {}
        self.sum_o: dict = {}
        self.count: dict = {}

    def add(self, layer, x: np.ndarray, y: np.ndarray) -> None:
        mi = np.abs(x).mean(axis=0)
        mo = np.abs(y).mean(axis=0)
        if layer in self.count:
            self.sum_i[layer] = self.sum_i[layer] + mi
            self.sum_o[layer] = self.sum_o[layer] + mo
            self.count[layer] += 1
        else:
            self.sum_i[layer], self.sum_o[layer], self.count[layer] = mi, mo, 1

    def finalize(self, method: str, floor: float = SCALE_FLOOR) -> dict:
        out = {}
        for layer, n in self.count.items():
            s_i = np.maximum(self.sum_i[layer] / n, floor)
            s_o = np.maximum(self.sum_o[layer] / n, floor)
            out[layer] = ScalePair(s_i, s_o, method)
        return out


def _draw(rng: Rng, weights: ModelWeights, z0: np.ndarray, sched: NoiseSchedule, t_low: int):
    t = rng.integers(t_low, sched.T)
    cond = rng.integers(0, weights.config.cond_classes - 1)
    eps = rng.normal(z0.shape)
    return t, cond, forward_noising(z0, t, eps, sched)


def ca_svd_scales(weights: ModelWeights, calib_set: CalibSet, sched: NoiseSchedule, rng: Rng) -> dict:
    """Mean activation magnitude per channel of every block linear layer."""
    if not len(calib_set):
        raise ValueError("calibration set is empty")
    acc = ChannelAccumulator()
    for z0 in calib_set.samples:
        t, cond, z_t = _draw(rng, weights, z0, sched, 1)
        _, taps = forward(weights, z_t, t, cond)
        for layer in weights.config.layer_ids():
            acc.add(layer, taps.inputs[layer], taps.outputs[layer])
    return acc.finalize("ca")


def cd_svd_scales(weights: ModelWeights, calib_set: CalibSet, sched: NoiseSchedule, rng: Rng) -> dict:
    """Mean absolute change per channel between two adjacent timesteps.

    For each sample: noise to a random ``t`` in [2, T], run the model, take a
    deterministic DDIM step to ``t - 1``, run again, and accumulate the
    per-channel differences of every layer's input and output.
    """
    if sched.T < 2:
        raise ValueError("CD-SVD needs T >= 2")
    if not len(calib_set):
        raise ValueError("calibration set is empty")
    acc = ChannelAccumulator()
    for z0 in calib_set.samples:
        t, cond, z_t = _draw(rng, weights, z0, sched, 2)
        eps, before = forward(weights, z_t, t, cond)
        z_prev = ddim_step(z_t, eps, t, t - 1, sched)
        _, after = forward(weights, z_prev, t - 1, cond)
        for layer in weights.config.layer_ids():
            acc.add(layer, after.inputs[layer] - before.inputs[layer],
                    after.outputs[layer] - before.outputs[layer])
    return acc.finalize("cd")


def identity_scales(weights: ModelWeights) -> dict:
    return {l: ScalePair.identity(*weights.config.channels(l.slot)) for l in weights.config.layer_ids()}


def calibrate(weights: ModelWeights, method: str, r: int, *, calib_set: CalibSet | None = None,
              sched: NoiseSchedule | None = None, seed: int = 0) -> tuple[CalibParams, dict | None]:
    """One-call front end: ``method`` in svd, ca, cd, cd_i, cd_o, ca_i, ca_o."""
    if method == "svd":
        return plain_svd_calib(weights, r), None
    if method not in METHODS or method == "identity":
        raise ValueError(f"unknown calibration method {method!r}")
    if calib_set is None or sched is None:
        raise ValueError(f"method {method!r} needs a calibration set and a schedule")
    rng = Rng(seed)
    base, _, side = method.partition("_")
    scales = (ca_svd_scales if base == "ca" else cd_svd_scales)(weights, calib_set, sched, rng)
    if side:
        which = "input_only" if side == "i" else "output_only"
        scales = {l: reduced_variants(sp, which) for l, sp in scales.items()}
    params = channel_aware_calib(weights, scales, r)
    params.method = method
    return params, scales
