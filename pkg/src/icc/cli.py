"""Command line: ``icc <subcommand> [--flags]``.

Subcommands: init-model, calibrate, sample, bench, estimate, verify. Any
subcommand that runs the toy model accepts ``--config FILE`` (see
``experiment.py`` for the grammar); explicit flags override file values.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import checks, report
from .calibration import calibrate, make_calib_set
from .container import calib_to_tensors, model_to_tensors, save_weights
from .experiment import (
    ConfigError, bench, build_config, final_latents_array, load_config_file, load_or_init_model,
    parse_int_list, sample, schedule_for,
)
from .macs import PRESETS, ArchSpec, estimate_macs


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv(kind):
    def parse(raw: str):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        return [kind(s) for s in items]
    return parse


def _add_model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--config", help="INI file with an [experiment] section")
    g.add_argument("--weights", help="weight container to load instead of initialising")
    g.add_argument("--depth", type=int)
    g.add_argument("--hidden", type=int)
    g.add_argument("--heads", type=int)
    g.add_argument("--tokens", type=int)
    g.add_argument("--mlp-ratio", type=int)
    g.add_argument("--cond-classes", type=int)
    g.add_argument("--model-seed", type=int)


def _add_run_flags(p):
    g = p.add_argument_group("schedule / sampler / caching")
    g.add_argument("--T", "--timesteps", dest="T", type=int)
    g.add_argument("--beta-start", type=float)
    g.add_argument("--beta-end", type=float)
    g.add_argument("--sampler", choices=("ddim", "ddpm"))
    g.add_argument("--steps", type=int)
    g.add_argument("--guidance", type=float, help="classifier-free guidance scale (enables cond/uncond passes)")
    g.add_argument("--mode", choices=("nocache", "naive", "calibrated"))
    g.add_argument("--period", type=int)
    g.add_argument("--rank", type=int)
    g.add_argument("--method", choices=("svd", "ca", "cd", "cd_i", "cd_o", "ca_i", "ca_o"))
    g.add_argument("--calib", help="calibration container to load instead of computing factors")
    g.add_argument("--calib-size", type=int)
    g.add_argument("--calib-seed", type=int)
    g.add_argument("--seeds", type=parse_int_list, help="e.g. 0,1,2 or 0-19")


_CONFIG_KEYS = ("weights", "depth", "hidden", "heads", "tokens", "mlp_ratio", "cond_classes", "model_seed",
                "T", "beta_start", "beta_end", "sampler", "steps", "guidance", "mode", "period", "rank",
                "method", "calib", "calib_size", "calib_seed", "seeds")


def _config_from(args):
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    overrides = {k: getattr(args, k) for k in _CONFIG_KEYS if hasattr(args, k)}
    return build_config(file_values, overrides)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="icc", description="increment-calibrated caching for a toy diffusion transformer")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("init-model", help="write freshly initialised weights")
    _add_model_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--dtype", choices=("f64", "f32"), default="f64")

    p = sub.add_parser("calibrate", help="compute calibration factors")
    _add_model_flags(p)
    _add_run_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sample", help="run one trajectory per seed and report divergence")
    _add_model_flags(p)
    _add_run_flags(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("bench", help="sweep modes, ranks and periods")
    _add_model_flags(p)
    _add_run_flags(p)
    p.add_argument("--modes", type=_csv(str), default=["nocache", "naive", "calibrated"])
    p.add_argument("--ranks", type=_csv(int))
    p.add_argument("--periods", type=_csv(int))
    p.add_argument("--methods", type=_csv(str))
    p.add_argument("--threads", type=int)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("estimate", help="analytic MAC estimate")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--depth", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--tokens", type=int)
    p.add_argument("--mlp-ratio", type=int, default=4)
    p.add_argument("--cfg", action="store_true", help="count cond and uncond passes")
    p.add_argument("--overhead", type=int, default=0, help="non-block MACs per forward")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--mode", choices=("nocache", "naive", "calibrated"), default="nocache")
    p.add_argument("--period", type=int, default=1)
    p.add_argument("--rank", type=int, default=0)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("verify", help="run the acceptance checks")
    p.add_argument("--only", type=_csv(str), help="subset of check ids, e.g. 1,5,9")
    return parser


def cmd_init_model(args) -> int:
    cfg = _config_from(args)
    weights = load_or_init_model(cfg)
    save_weights(args.out, model_to_tensors(weights), args.dtype)
    print(f"wrote {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _config_from(args)
    weights = load_or_init_model(cfg)
    sched = schedule_for(cfg)
    calib_set = None if cfg.method == "svd" else make_calib_set(weights.config, cfg.calib_size, cfg.calib_seed)
    params, scales = calibrate(weights, cfg.method, cfg.rank, calib_set=calib_set, sched=sched, seed=cfg.calib_seed)
    save_weights(args.out, calib_to_tensors(params, scales))
    print(f"wrote {args.out} ({cfg.method}, rank {cfg.rank}, {len(params.layers)} layers)")
    return 0


def _emit(rep, finals, args) -> None:
    out = Path(args.out_dir)
    paths = report.emit(rep, out, figures=not args.no_figures)
    if finals is not None:
        save_weights(out / "latents.icw", final_latents_array(finals))
    for name, path in paths.items():
        print(f"{name}: {path}")


def cmd_sample(args) -> int:
    cfg = _config_from(args)
    rep, finals = sample(cfg)
    _emit(rep, finals, args)
    return 0


def cmd_bench(args) -> int:
    cfg = _config_from(args)
    rep, _ = bench(cfg, modes=args.modes, ranks=args.ranks, periods=args.periods, methods=args.methods,
                   threads=args.threads)
    _emit(rep, None, args)
    for row in report.rows(rep):
        print(",".join(str(row[c]) for c in report.CSV_COLUMNS))
    return 0


def cmd_estimate(args) -> int:
    if args.preset:
        arch = PRESETS[args.preset]()
    else:
        if None in (args.depth, args.hidden, args.heads, args.tokens):
            raise UsageError("estimate needs --preset or all of --depth --hidden --heads --tokens")
        arch = ArchSpec(args.depth, args.hidden, args.heads, args.tokens, args.mlp_ratio,
                        args.cfg, args.overhead)
    total = estimate_macs(arch, args.steps, args.mode, args.period, args.rank)
    if args.json:
        print(json.dumps({"arch": arch.to_dict(), "steps": args.steps, "mode": args.mode,
                          "period": args.period, "rank": args.rank, "macs": total}, sort_keys=True))
    else:
        print(f"{total} MACs ({total / 1e12:.2f} T)")
    return 0


def cmd_verify(args) -> int:
    results = []
    for key in args.only or checks.CHECKS:
        if key not in checks.CHECKS:
            raise UsageError(f"unknown check id {key!r}")
        res = checks.CHECKS[key]()
        print(res.line(), flush=True)
        results.append(res)
    failed = [r.key for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


COMMANDS = {
    "init-model": cmd_init_model,
    "calibrate": cmd_calibrate,
    "sample": cmd_sample,
    "bench": cmd_bench,
    "estimate": cmd_estimate,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
