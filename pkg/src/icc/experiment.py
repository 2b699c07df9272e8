"""Experiment configuration and runners behind the command line.

A config file is INI-style UTF-8 with one ``[experiment]`` section of
``key = value`` lines; keys match the long CLI flags with dashes turned into
underscores. Lists are comma separated.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .caching import ExecutionContext, fora_plan, run_trajectory
from .calibration import CalibParams, calibrate, make_calib_set
from .container import load_weights, tensors_to_calib, tensors_to_model
from .macs import ArchSpec, MacLedger, estimate_macs
from .metrics import summarize, trajectory_divergence
from .model import ModelConfig, ModelWeights, init_weights
from .rng import Rng
from .samplers import SamplerRun, make_linear_schedule

REPORT_FORMAT = "icc-report"
REPORT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    depth: int = 4
    hidden: int = 64
    heads: int = 4
    tokens: int = 16
    mlp_ratio: int = 4
    cond_classes: int = 10
    model_seed: int = 0
    weights: str | None = None

    T: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.02

    sampler: str = "ddim"
    steps: int = 20
    guidance: float | None = None

    mode: str = "calibrated"
    period: int = 2
    rank: int = 16
    method: str = "svd"
    calib: str | None = None
    calib_size: int = 256
    calib_seed: int = 1

    seeds: list[int] = field(default_factory=lambda: [0])

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in ("nocache", "naive", "calibrated"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.sampler not in ("ddim", "ddpm"):
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        if self.mode == "calibrated" and (self.rank is None or self.method is None):
            raise ConfigError("calibrated mode needs both rank and method")
        if self.period < 1 or self.steps < 1 or self.T < 2:
            raise ConfigError("period, steps must be >= 1 and T >= 2")
        if not self.seeds:
            raise ConfigError("at least one seed is required")

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.depth, self.hidden, self.heads, self.tokens, self.mlp_ratio, self.cond_classes)

    def arch(self, model: ModelConfig | None = None) -> ArchSpec:
        """Cost-model shape of the toy run; the output head is the only non-block work."""
        m = model or self.model_config()
        return ArchSpec(m.depth, m.hidden, m.heads, m.tokens, m.mlp_ratio,
                        cfg_enabled=self.guidance is not None,
                        overhead_macs_per_forward=m.tokens * m.hidden * m.hidden)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


def _coerce(name: str, raw: str):
    fld = {f.name: f for f in dataclasses.fields(ExperimentConfig)}.get(name)
    if fld is None:
        raise ConfigError(f"unknown config key {name!r}")
    raw = raw.strip()
    if name == "seeds":
        return parse_int_list(raw)
    if raw.lower() in ("", "none"):
        return None
    typ = str(fld.type)
    try:
        if typ.startswith("int"):
            return int(raw)
        if typ.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def parse_int_list(raw: str) -> list[int]:
    """``"0,1,2"`` or ``"0-19"`` or a mix of both."""
    out = []
    for part in str(raw).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def load_config_file(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    if not parser.has_section("experiment"):
        raise ConfigError(f"{path}: missing [experiment] section")
    return {k.replace("-", "_"): _coerce(k.replace("-", "_"), v) for k, v in parser.items("experiment")}


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    values = dict(file_values or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# ---- runners -------------------------------------------------------------------

def load_or_init_model(cfg: ExperimentConfig) -> ModelWeights:
    if cfg.weights:
        return tensors_to_model(load_weights(cfg.weights))
    return init_weights(cfg.model_config(), cfg.model_seed)


def schedule_for(cfg: ExperimentConfig):
    return make_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end)


def sampler_for(cfg: ExperimentConfig) -> SamplerRun:
    steps = cfg.T if cfg.sampler == "ddpm" else cfg.steps
    return SamplerRun.make(cfg.sampler, cfg.T, steps, cfg.guidance)


def build_calib(cfg: ExperimentConfig, weights: ModelWeights, sched, method=None, rank=None) -> CalibParams:
    method = cfg.method if method is None else method
    rank = cfg.rank if rank is None else rank
    if cfg.calib:
        params = tensors_to_calib(load_weights(cfg.calib))
        if params.rank != rank:
            raise ConfigError(f"calibration file has rank {params.rank}, config asks for {rank}")
        return params
    calib_set = None if method == "svd" else make_calib_set(weights.config, cfg.calib_size, cfg.calib_seed)
    params, _ = calibrate(weights, method, rank, calib_set=calib_set, sched=sched, seed=cfg.calib_seed)
    return params


def initial_state(weights: ModelWeights, seed: int):
    """Starting noise, class label and the stream for any later sampler noise."""
    rng = Rng(seed)
    cfg = weights.config
    z_T = rng.normal((cfg.tokens, cfg.hidden))
    cond = rng.integers(0, cfg.cond_classes - 1)
    return z_T, cond, rng


def run_once(weights, sched, run, mode: str, period: int, calib, seed: int, ledger=None):
    plan = None if mode == "nocache" else fora_plan(run.n_steps, 4 * weights.config.depth, period)
    ctx = ExecutionContext(weights, mode, plan, calib if mode == "calibrated" else None, ledger)
    z_T, cond, rng = initial_state(weights, seed)
    return run_trajectory(weights, sched, run, ctx, z_T, cond, rng)


def _cell(weights, sched, run, mode, period, rank, method, calib, seeds, oracles) -> dict:
    ledger = MacLedger()
    divs = []
    for i, seed in enumerate(seeds):
        led = ledger if i == 0 else None
        traj = run_once(weights, sched, run, mode, period, calib, seed, led)
        divs.append((seed, trajectory_divergence(traj, oracles[seed]), traj))
    arch_rank = rank if mode == "calibrated" else 0
    return {
        "mode": mode,
        "period": period if mode != "nocache" else 1,
        "rank": arch_rank,
        "method": method if mode == "calibrated" else None,
        "macs": {
            "total": ledger.total(),
            "block": ledger.block_total(),
            "by_kind": ledger.by_kind(),
        },
        "final_latent_mse": summarize(d.final_latent_mse for _, d, _ in divs),
        "per_seed": [
            {"seed": s, **d.to_dict()} for s, d, _ in divs
        ],
        "_final": {s: t.final for s, _, t in divs},
    }


def experiment_cells(cfg: ExperimentConfig, modes, ranks, periods, methods):
    cells = []
    for mode in modes:
        if mode == "nocache":
            cells.append((mode, 1, 0, None))
            continue
        for p in periods:
            if mode == "naive":
                cells.append((mode, p, 0, None))
                continue
            for m in methods:
                for r in ranks:
                    cells.append((mode, p, r, m))
    return cells


def bench(cfg: ExperimentConfig, modes=("nocache", "naive", "calibrated"), ranks=None,
          periods=None, methods=None, threads: int | None = None) -> dict:
    """Sweep modes x periods x methods x ranks over ``cfg.seeds``; returns a Report dict."""
    ranks = [cfg.rank] if ranks is None else list(ranks)
    periods = [cfg.period] if periods is None else list(periods)
    methods = [cfg.method] if methods is None else list(methods)
    threads = threads or int(os.environ.get("ICC_THREADS", "1") or 1)
    started = time.perf_counter()

    weights = load_or_init_model(cfg)
    sched = schedule_for(cfg)
    run = sampler_for(cfg)
    oracles = {s: run_once(weights, sched, run, "nocache", 1, None, s) for s in cfg.seeds}
    calibs = {}
    for mode, _, r, m in experiment_cells(cfg, modes, ranks, periods, methods):
        if mode == "calibrated" and (m, r) not in calibs:
            calibs[(m, r)] = build_calib(cfg, weights, sched, m, r)

    cells = experiment_cells(cfg, modes, ranks, periods, methods)

    def work(cell):
        mode, p, r, m = cell
        return _cell(weights, sched, run, mode, p, r, m, calibs.get((m, r)), cfg.seeds, oracles)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, cells))
    else:
        results = [work(c) for c in cells]

    arch = cfg.arch(weights.config)
    for res in results:
        res["macs"]["estimate_block"] = estimate_macs(arch, run.n_steps, res["mode"], res["period"],
                                                      res["rank"], block_only=True)
        res["macs"]["estimate_total"] = estimate_macs(arch, run.n_steps, res["mode"], res["period"], res["rank"])
    finals = [r.pop("_final") for r in results]
    return {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "kind": "bench",
        "config": cfg.to_dict(),
        "model": dataclasses.asdict(weights.config),
        "sweep": {"modes": list(modes), "ranks": ranks, "periods": periods, "methods": methods},
        "step_indices": list(run.step_indices),
        "runs": results,
        "timing": {"wall_time_s": time.perf_counter() - started},
    }, finals


def sample(cfg: ExperimentConfig) -> tuple[dict, dict]:
    """One trajectory per seed in ``cfg.mode``; returns (report, {seed: final latent})."""
    report, finals = bench(cfg, modes=(cfg.mode,))
    report["kind"] = "sample"
    return report, finals[0]


def measure_macs_vs_model(cfg: ExperimentConfig, mode=None, period=None, rank=None) -> tuple[int, int]:
    """(analytic block-layer estimate, ledger-measured block-layer MACs) for one run."""
    mode = cfg.mode if mode is None else mode
    period = cfg.period if period is None else period
    rank = cfg.rank if rank is None else rank
    weights = load_or_init_model(cfg)
    sched = schedule_for(cfg)
    run = sampler_for(cfg)
    calib = build_calib(cfg, weights, sched, "svd", rank) if mode == "calibrated" else None
    ledger = MacLedger()
    run_once(weights, sched, run, mode, period, calib, cfg.seeds[0], ledger)
    est = estimate_macs(cfg.arch(weights.config), run.n_steps, mode, period, rank if mode == "calibrated" else 0,
                        block_only=True)
    return est, ledger.block_total()


def strip_timing(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "timing"}


def final_latents_array(finals: dict) -> dict:
    return {f"final/seed{s}": np.asarray(z) for s, z in finals.items()}
