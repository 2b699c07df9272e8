"""Multiply-accumulate accounting: the runtime ledger and the analytic cost model."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass

from .caching import fora_plan

KINDS = ("linear_full", "linear_increment", "attention_nonlinear", "overhead")
BLOCK_KINDS = ("linear_full", "linear_increment", "attention_nonlinear")


class MacLedger:
    """Exact integer MAC counts keyed by (step, layer, kind).

    ``layer`` is a LayerId for block layers or a free-form string for
    non-block work such as the output head.
    """

    def __init__(self):
        self.entries: dict[tuple, int] = defaultdict(int)
        self.step = None

    def charge(self, layer, kind: str, macs: int) -> None:
        if kind not in KINDS:
            raise ValueError(f"unknown MAC kind {kind!r}")
        self.entries[(self.step, layer, kind)] += int(macs)

    def total(self, kinds=None, step=None) -> int:
        kinds = KINDS if kinds is None else kinds
        return sum(
            v for (s, _, k), v in self.entries.items()
            if k in kinds and (step is None or s == step)
        )

    def block_total(self, step=None) -> int:
        return self.total(BLOCK_KINDS, step)

    def by_kind(self) -> dict[str, int]:
        return {k: self.total((k,)) for k in KINDS}

    def merge(self, other: "MacLedger") -> None:
        for key in sorted(other.entries, key=repr):
            self.entries[key] += other.entries[key]


@dataclass(frozen=True)
class ArchSpec:
    depth: int
    hidden: int
    heads: int
    tokens: int
    mlp_ratio: int = 4
    cfg_enabled: bool = False
    overhead_macs_per_forward: int = 0

    def __post_init__(self):
        for name in ("depth", "hidden", "heads", "tokens", "mlp_ratio"):
            if getattr(self, name) < 1:
                raise ValueError(f"ArchSpec.{name} must be positive")
        if self.overhead_macs_per_forward < 0:
            raise ValueError("overhead must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def linear_channels(hidden: int, mlp_ratio: int = 4) -> dict[str, tuple[int, int]]:
    """(C_i, C_o) of each linear slot in a block."""
    d, m = hidden, mlp_ratio * hidden
    return {
        "qkv": (d, 3 * d),
        "attn_proj": (d, d),
        "ffn_fc1": (d, m),
        "ffn_fc2": (m, d),
    }


def block_linear_macs(arch: ArchSpec) -> int:
    n = arch.tokens
    return sum(n * ci * co for ci, co in linear_channels(arch.hidden, arch.mlp_ratio).values())


def attention_macs(arch: ArchSpec) -> int:
    # Q K^T and A V over all heads
    return 2 * arch.tokens * arch.tokens * arch.hidden


def block_increment_macs(arch: ArchSpec, rank: int) -> int:
    n = arch.tokens
    return sum(n * (ci + co) * rank for ci, co in linear_channels(arch.hidden, arch.mlp_ratio).values())


def forward_block_macs(arch: ArchSpec, mode: str, gather: bool, rank: int = 0) -> int:
    """Block-layer MACs of one forward pass of one sample (no cfg doubling)."""
    if gather or mode == "nocache":
        return arch.depth * (block_linear_macs(arch) + attention_macs(arch))
    if mode == "naive":
        return 0
    if mode == "calibrated":
        return arch.depth * (block_increment_macs(arch, rank) + attention_macs(arch))
    raise ValueError(f"unknown mode {mode!r}")


def estimate_macs(arch: ArchSpec, steps: int, mode: str = "nocache", p: int = 1, r: int = 0,
                  *, block_only: bool = False) -> int:
    """Total MACs of a sampling run under a FORA plan of period ``p``.

    With a square layout the calibrated cached forward costs
    ``L * (16 * N * d * r + 2 * N^2 * d)``; the full forward costs
    ``L * (12 * N * d^2 + 2 * N^2 * d)``. The per-forward overhead is charged on
    every visited step regardless of mode.
    """
    if mode == "nocache":
        p = 1
    plan = fora_plan(steps, 1, p)
    per_branch = 0
    for i in range(steps):
        per_branch += forward_block_macs(arch, mode, bool(plan.gather[i, 0]), r)
        if not block_only:
            per_branch += arch.overhead_macs_per_forward
    return (2 if arch.cfg_enabled else 1) * per_branch


# DiT-XL/2 at 256x256: 28 blocks, width 1152, 16 heads, 16x16 latent patches.
DIT_XL2_SHAPE = dict(depth=28, hidden=1152, heads=16, tokens=256, mlp_ratio=4)
# Reference row used to fit the per-forward overhead: cfg on, 40 DDIM steps, 9.49T MACs.
DIT_XL2_FIT_ROW = (40, 9.49e12)


def fit_overhead(shape: dict, steps: int, total_macs: float, cfg: bool = True) -> int:
    """Per-forward overhead that makes a no-cache run of ``steps`` cost ``total_macs``."""
    arch = ArchSpec(**shape, cfg_enabled=cfg)
    forwards = steps * (2 if cfg else 1)
    return round(total_macs / forwards) - arch.depth * (block_linear_macs(arch) + attention_macs(arch))


def dit_xl2() -> ArchSpec:
    overhead = fit_overhead(DIT_XL2_SHAPE, *DIT_XL2_FIT_ROW)
    return ArchSpec(**DIT_XL2_SHAPE, cfg_enabled=True, overhead_macs_per_forward=overhead)


PRESETS = {"dit-xl2": dit_xl2}
