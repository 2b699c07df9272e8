"""Acceptance checks shared by ``icc verify`` and the test suite.

Each check returns a :class:`CheckResult`; nothing here raises on a failed
criterion so the CLI can print every line before choosing an exit status.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .calibration import ChannelAccumulator, channel_aware_factors, plain_svd_calib
from .caching import single_step_error_probe
from .container import decode, encode, model_to_tensors
from .experiment import (
    ExperimentConfig, bench, load_or_init_model, run_once, sampler_for, schedule_for,
    build_calib, measure_macs_vs_model, strip_timing,
)
from .linalg import frobenius_norm, thin_svd, truncate_factors
from .macs import dit_xl2, estimate_macs
from .report import dumps
from .rng import Rng

# Toy model used by the trajectory criteria: L=4, d=64, h=4, N=16, T=50, DDIM 20, FORA p=2.
ACCEPT_CFG = dict(depth=4, hidden=64, heads=4, tokens=16, T=50, steps=20, period=2, model_seed=0)

# (method, rank, steps, reported TMACs) for the calibrated rows; all use p=2 and cfg.
ICC_ROWS = [
    ("ca", 128, 66, 9.40), ("cd", 192, 62, 9.40), ("svd", 256, 58, 9.35),
    ("ca", 128, 50, 7.11), ("cd", 192, 46, 6.98), ("svd", 256, 44, 7.09),
    ("ca", 128, 32, 4.55), ("cd", 192, 30, 4.55), ("svd", 256, 28, 4.51),
    ("ca", 128, 16, 2.27), ("cd", 192, 14, 2.12), ("svd", 256, 14, 2.26),
]
NOCACHE_ROWS = [(40, 9.49), (30, 7.12), (20, 4.75), (10, 2.37)]
NAIVE_ROWS = [(2, 80, 9.51), (2, 60, 7.13), (2, 40, 4.75), (2, 20, 2.38),
              (3, 120, 9.53), (3, 90, 7.15), (3, 60, 4.76), (3, 30, 2.38)]


@dataclass
class CheckResult:
    key: str
    title: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.key:>3} {self.title}: {self.detail} ({self.seconds:.2f}s)"


def _toy_cfg(**kw) -> ExperimentConfig:
    return ExperimentConfig(**{**ACCEPT_CFG, **kw})


def check_mac_model() -> CheckResult:
    t0 = time.perf_counter()
    arch = dit_xl2()
    worst = {"nocache": 0.0, "naive": 0.0, "icc": 0.0}
    for steps, reported in NOCACHE_ROWS:
        est = estimate_macs(arch, steps, "nocache") / 1e12
        worst["nocache"] = max(worst["nocache"], abs(est - reported) / reported)
    for p, steps, reported in NAIVE_ROWS:
        est = estimate_macs(arch, steps, "naive", p) / 1e12
        worst["naive"] = max(worst["naive"], abs(est - reported) / reported)
    for _, r, steps, reported in ICC_ROWS:
        est = estimate_macs(arch, steps, "calibrated", 2, r) / 1e12
        worst["icc"] = max(worst["icc"], abs(est - reported) / reported)
    dt = time.perf_counter() - t0
    ok = worst["nocache"] <= 0.02 and worst["naive"] <= 0.02 and worst["icc"] <= 0.10 and dt < 1.0
    detail = (f"worst rel. err nocache {worst['nocache']:.2%} (<=2%), naive {worst['naive']:.2%} (<=2%), "
              f"icc {worst['icc']:.2%} (<=10%)")
    return CheckResult("1", "MAC model vs reported totals", ok, detail, dt)


def check_full_rank_exact() -> CheckResult:
    t0 = time.perf_counter()
    cfg = _toy_cfg(mode="calibrated", rank=64, method="svd")
    weights = load_or_init_model(cfg)
    sched, run = schedule_for(cfg), sampler_for(cfg)
    calib = plain_svd_calib(weights, 64)
    oracle = run_once(weights, sched, run, "nocache", 1, None, 0)
    cached = run_once(weights, sched, run, "calibrated", 2, calib, 0)
    diff = max(float(np.max(np.abs(a - b))) for a, b in zip(cached.latents, oracle.latents))
    return CheckResult("2", "full-rank calibration matches no-cache", diff < 1e-6,
                       f"max |latent diff| = {diff:.2e} (< 1e-6)", time.perf_counter() - t0)


def check_naive_equivalence() -> CheckResult:
    t0 = time.perf_counter()
    cfg = _toy_cfg()
    weights = load_or_init_model(cfg)
    sched, run = schedule_for(cfg), sampler_for(cfg)
    zero = plain_svd_calib(weights, 0)
    same = 0
    for seed in range(10):
        a = run_once(weights, sched, run, "calibrated", 2, zero, seed)
        b = run_once(weights, sched, run, "naive", 2, None, seed)
        same += all(x.tobytes() == y.tobytes() for x, y in zip(a.latents + a.eps, b.latents + b.eps))
    return CheckResult("3", "rank-0 calibration equals naive caching", same == 10,
                       f"{same}/10 seeds bit-identical", time.perf_counter() - t0)


def check_error_identity(n_probes: int = 100, seed: int = 4) -> CheckResult:
    t0 = time.perf_counter()
    cfg = _toy_cfg()
    weights = load_or_init_model(cfg)
    rng = Rng(seed)
    layers = weights.config.layer_ids()
    svds = {}
    worst_rel, worst_bound = 0.0, 0.0
    for _ in range(n_probes):
        layer = layers[rng.integers(0, len(layers) - 1)]
        w = weights.linear(layer).weight
        if layer not in svds:
            svds[layer] = thin_svd(w)
        f = svds[layer]
        k = f.sigma.size
        r = rng.integers(0, k - 1)
        wa, wb = truncate_factors(f, r)
        n = weights.config.tokens
        x_s = rng.normal((n, w.shape[1]))
        x_m = x_s + rng.uniform() * rng.normal((n, w.shape[1]))
        measured, predicted = single_step_error_probe(weights, layer, x_s, x_m, (wa, wb))
        scale = frobenius_norm((x_m - x_s) @ w.T)
        worst_rel = max(worst_rel, frobenius_norm(measured - predicted) / scale)
        bound = f.sigma[r] * frobenius_norm(x_m - x_s) * (1 + 1e-9)
        worst_bound = max(worst_bound, frobenius_norm(measured) / bound)
    ok = worst_rel <= 1e-10 and worst_bound <= 1.0
    return CheckResult("4", "cached-reuse error identity and bound", ok,
                       f"max rel |measured - predicted| = {worst_rel:.2e} (<= 1e-10); "
                       f"max ||dy|| / (sigma_(r+1) ||dx||) = {worst_bound:.6f} (<= 1)",
                       time.perf_counter() - t0)


def check_eckart_young(n_mats: int = 50, seed: int = 5) -> CheckResult:
    t0 = time.perf_counter()
    rng = Rng(seed)
    worst, monotone = 0.0, True
    for _ in range(n_mats):
        m, n = rng.integers(1, 128), rng.integers(1, 96)
        w = rng.normal((m, n))
        f = thin_svd(w)
        wnorm = frobenius_norm(w)
        errs = []
        for r in range(f.sigma.size + 1):
            wa, wb = truncate_factors(f, r)
            err = frobenius_norm(w - wa @ wb)
            tail = float(np.sqrt(np.sum(f.sigma[r:] ** 2)))
            # exact reconstruction has a zero tail; compare it against the matrix scale instead
            denom = tail if r < f.sigma.size else wnorm
            worst = max(worst, abs(err - tail) / denom)
            errs.append(err)
        monotone &= all(b <= a + 1e-12 * wnorm for a, b in zip(errs, errs[1:]))
    ok = worst <= 1e-8 and monotone
    return CheckResult("5", "truncation error equals spectral tail, monotone in rank", ok,
                       f"max rel deviation {worst:.2e} (<= 1e-8), monotone={monotone}", time.perf_counter() - t0)


def check_channel_identities(seed: int = 6) -> CheckResult:
    t0 = time.perf_counter()
    cfg = _toy_cfg()
    weights = load_or_init_model(cfg)
    rng = Rng(seed)
    worst_id, worst_full = 0.0, 0.0
    for layer in weights.config.layer_ids():
        w = weights.linear(layer).weight
        co, ci = w.shape
        k = min(co, ci)
        f = thin_svd(w)
        for r in (0, k // 4, k // 2, k):
            wa, wb = truncate_factors(f, r)
            ca, cb = channel_aware_factors(w, np.ones(ci), np.ones(co), r)
            worst_id = max(worst_id, frobenius_norm(wa @ wb - ca @ cb) / frobenius_norm(w))
        s_i = np.exp(rng.uniform(ci) * 4.0 - 2.0)
        s_o = np.exp(rng.uniform(co) * 4.0 - 2.0)
        ca, cb = channel_aware_factors(w, s_i, s_o, k)
        worst_full = max(worst_full, frobenius_norm(ca @ cb - w) / frobenius_norm(w))
    ok = worst_id <= 1e-9 and worst_full <= 1e-9
    return CheckResult("6", "channel-aware scaling identities", ok,
                       f"identity-scale deviation {worst_id:.2e}, full-rank round trip {worst_full:.2e} (<= 1e-9)",
                       time.perf_counter() - t0)


def outlier_trial(rng: Rng, c_o: int = 48, c_i: int = 64, n_calib: int = 256, tokens: int = 16):
    """One constructed-outlier trial; returns (channel-aware error, identity-scale error)."""
    w = rng.normal((c_o, c_i)) / np.sqrt(c_i)
    c = rng.integers(0, c_i - 1)
    gain = np.ones(c_i)
    gain[c] = 100.0
    acts = rng.normal((n_calib, c_i)) * gain
    acc = ChannelAccumulator()
    acc.add("layer", acts, acts @ w.T)
    sp = acc.finalize("ca")["layer"]
    r = min(c_o, c_i) // 4
    ca, cb = channel_aware_factors(w, sp.s_i, sp.s_o, r)
    pa, pb = truncate_factors(thin_svd(w), r)
    dx = rng.normal((tokens, c_i))
    dx[:, c] *= 100.0
    err_ca = frobenius_norm(dx @ (w - ca @ cb).T)
    err_plain = frobenius_norm(dx @ (w - pa @ pb).T)
    return err_ca, err_plain


def check_outlier_benefit(trials: int = 100, seed: int = 7) -> CheckResult:
    t0 = time.perf_counter()
    rng = Rng(seed)
    wins = 0
    for _ in range(trials):
        err_ca, err_plain = outlier_trial(rng)
        wins += err_ca < err_plain
    return CheckResult("7", "channel-aware scaling helps on an outlier channel", wins >= 95,
                       f"{wins}/{trials} trials with lower increment error (>= 95)", time.perf_counter() - t0)


def check_calibration_beats_naive(n_seeds: int = 20) -> CheckResult:
    t0 = time.perf_counter()
    cfg = _toy_cfg(seeds=list(range(n_seeds)))
    weights = load_or_init_model(cfg)
    sched, run = schedule_for(cfg), sampler_for(cfg)
    r = 64 // 4
    calibs = {m: build_calib(cfg, weights, sched, m, r) for m in ("svd", "cd")}
    mse = {"naive": [], "svd": [], "cd": []}
    for seed in cfg.seeds:
        oracle = run_once(weights, sched, run, "nocache", 1, None, seed).final
        mse["naive"].append(np.mean((run_once(weights, sched, run, "naive", 2, None, seed).final - oracle) ** 2))
        for m, calib in calibs.items():
            z = run_once(weights, sched, run, "calibrated", 2, calib, seed).final
            mse[m].append(np.mean((z - oracle) ** 2))
    means = {k: float(np.mean(v)) for k, v in mse.items()}
    ok = means["svd"] < means["naive"] and means["cd"] < means["naive"]
    return CheckResult("8", "calibrated caching beats naive caching", ok,
                       f"mean final MSE over {n_seeds} seeds: naive {means['naive']:.3e}, "
                       f"svd r={r} {means['svd']:.3e}, cd r={r} {means['cd']:.3e}", time.perf_counter() - t0)


def check_ledger_soundness() -> CheckResult:
    t0 = time.perf_counter()
    mismatches = []
    n = 0
    base = _toy_cfg()
    for mode in ("nocache", "naive", "calibrated"):
        for p in (1, 2, 3):
            for r in (0, 16, 64):
                est, measured = measure_macs_vs_model(base, mode, p, r)
                n += 1
                if est != measured:
                    mismatches.append(f"{mode}/p={p}/r={r}: {est} != {measured}")
    return CheckResult("9", "analytic block MACs equal the ledger", not mismatches,
                       f"{n - len(mismatches)}/{n} cells exact" + ("; " + "; ".join(mismatches) if mismatches else ""),
                       time.perf_counter() - t0)


def check_determinism_io() -> CheckResult:
    t0 = time.perf_counter()
    cfg = _toy_cfg(seeds=[0, 1], calib_size=16, steps=6, T=20)
    sweep = dict(modes=("nocache", "naive", "calibrated"), ranks=(0, 8), periods=(2,), methods=("svd", "cd"))
    a, _ = bench(cfg, **sweep)
    b, _ = bench(cfg, **sweep)
    same_report = dumps(strip_timing(a)) == dumps(strip_timing(b))
    blob = encode(model_to_tensors(load_or_init_model(cfg)))
    same_file = encode(decode(blob)) == blob
    return CheckResult("10", "deterministic reports and byte-exact weight files", same_report and same_file,
                       f"reports identical={same_report}, container round trip identical={same_file}",
                       time.perf_counter() - t0)


CHECKS = {
    "1": check_mac_model,
    "2": check_full_rank_exact,
    "3": check_naive_equivalence,
    "4": check_error_identity,
    "5": check_eckart_young,
    "6": check_channel_identities,
    "7": check_outlier_benefit,
    "8": check_calibration_beats_naive,
    "9": check_ledger_soundness,
    "10": check_determinism_io,
}


def run_checks(keys=None) -> list[CheckResult]:
    out = []
    for key in keys or CHECKS:
        out.append(CHECKS[key]())
    return out
