"""Gather/scatter cache plans and the per-layer execution modes.

A plan is two boolean ``steps x layers`` matrices. On a gather step a layer is
computed in full and its input and output are stored. On a scatter step the
stored output is either reused verbatim (``naive``) or corrected by a low-rank
increment ``wa @ wb @ (x_now - x_cached)`` (``calibrated``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import matmul

MODES = ("nocache", "naive", "calibrated")


class CacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class CachePlan:
    gather: np.ndarray  # bool, (steps, layers)

    def __post_init__(self):
        g = np.asarray(self.gather, dtype=bool)
        if g.ndim != 2:
            raise ValueError("gather matrix must be 2-D")
        if g.shape[0] and not g[0].all():
            raise ValueError("the first step must gather every layer")
        object.__setattr__(self, "gather", g)

    @property
    def scatter(self) -> np.ndarray:
        return ~self.gather

    @property
    def n_steps(self) -> int:
        return self.gather.shape[0]

    @property
    def n_layers(self) -> int:
        return self.gather.shape[1]


def fora_plan(n_steps: int, n_layers: int, p: int) -> CachePlan:
    """Gather at 1-based step positions i with (i - 1) % p == 0; scatter elsewhere."""
    if p < 1:
        raise ValueError("period must be >= 1")
    rows = (np.arange(n_steps) % p) == 0
    return CachePlan(np.repeat(rows[:, None], n_layers, axis=1))


@dataclass
class CacheSlot:
    x: np.ndarray
    y: np.ndarray
    step: int


@dataclass
class LayerCache:
    slots: dict = field(default_factory=dict)

    def store(self, layer, x, y, step) -> None:
        self.slots[layer] = CacheSlot(x.copy(), y.copy(), step)

    def get(self, layer, step):
        slot = self.slots.get(layer)
        if slot is None:
            raise CacheError(f"scatter from empty cache: layer {layer.name} at step {step}")
        return slot

    def valid(self, layer) -> bool:
        return layer in self.slots


class ExecutionContext:
    """Per-trajectory dispatch state: mode, plan, caches, calibration and ledger.

    Holds one ``LayerCache`` per guidance branch so conditional and
    unconditional passes never read each other's activations.
    """

    def __init__(self, weights, mode: str = "nocache", plan: CachePlan | None = None,
                 calib=None, ledger=None):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        if mode != "nocache" and plan is None:
            raise ValueError(f"mode {mode!r} needs a cache plan")
        layers = weights.config.layer_ids()
        if plan is not None and plan.n_layers != len(layers):
            raise ValueError(f"plan has {plan.n_layers} layer columns, model has {len(layers)}")
        if mode == "calibrated":
            if calib is None:
                raise ValueError("calibrated mode needs calibration parameters")
            missing = [l.name for l in layers if l not in calib.layers]
            if missing:
                raise ValueError(f"calibration missing layers: {', '.join(missing)}")
        self.weights = weights
        self.mode = mode
        self.plan = plan
        self.calib = calib
        self.ledger = ledger
        self.caches: dict[str, LayerCache] = {}
        self.step = 0
        self.branch = "cond"

    def begin(self, step: int, branch: str = "cond") -> None:
        if self.plan is not None and not 0 <= step < self.plan.n_steps:
            raise ValueError(f"step {step} outside plan with {self.plan.n_steps} rows")
        self.step = step
        self.branch = branch
        if self.ledger is not None:
            self.ledger.step = step

    @property
    def cache(self) -> LayerCache:
        return self.caches.setdefault(self.branch, LayerCache())

    def gathers(self, layer) -> bool:
        if self.mode == "nocache":
            return True
        return bool(self.plan.gather[self.step, layer.index])

    def reuses(self, layer) -> bool:
        """True when the layer's output is the stored one and its input is not needed."""
        return self.mode == "naive" and not self.gathers(layer)


def run_layer(ctx: ExecutionContext, layer, x_now, report: bool = False):
    """Evaluate one linear layer under the context's mode.

    With ``report=True`` returns ``(y, computed_in_full)``.
    """
    lin = ctx.weights.linear(layer)
    if ctx.gathers(layer):
        y = matmul(x_now, lin.weight.T, ctx.ledger, layer, "linear_full") + lin.bias
        if ctx.mode != "nocache":
            ctx.cache.store(layer, x_now, y, ctx.step)
        return (y, True) if report else y

    slot = ctx.cache.get(layer, ctx.step)
    if ctx.mode == "naive":
        y = slot.y.copy()
    else:
        factors = ctx.calib.layers[layer]
        y = slot.y.copy()
        if factors.rank > 0:
            # bias cancels in F(x_now) - F(x_cached)
            low = matmul(x_now - slot.x, factors.wb.T, ctx.ledger, layer, "linear_increment")
            y = y + matmul(low, factors.wa.T, ctx.ledger, layer, "linear_increment")
    return (y, False) if report else y


@dataclass
class Trajectory:
    step_indices: tuple[int, ...]
    latents: list  # z_T followed by the latent after every step
    eps: list  # guided noise prediction at every step

    @property
    def final(self) -> np.ndarray:
        return self.latents[-1]


def run_trajectory(weights, sched, run, ctx: ExecutionContext, z_T, cond: int, rng=None) -> Trajectory:
    """Full reverse loop from ``z_T`` under ``ctx``; returns every latent and prediction."""
    from .model import forward
    from .samplers import ddim_step, ddpm_step

    if ctx.plan is not None and ctx.plan.n_steps != run.n_steps:
        raise ValueError(f"plan has {ctx.plan.n_steps} rows for a {run.n_steps}-step run")
    z = np.array(z_T, dtype=np.float64)
    latents, eps_all = [z], []
    null = weights.config.null_class
    for pos, t in enumerate(run.step_indices):
        ctx.begin(pos, "cond")
        eps, _ = forward(weights, z, t, cond, ctx)
        if run.cfg:
            ctx.begin(pos, "uncond")
            eps_u, _ = forward(weights, z, t, null, ctx)
            eps = eps_u + run.guidance_scale * (eps - eps_u)
        if run.kind == "ddim":
            z = ddim_step(z, eps, t, run.prev_of(pos), sched)
        else:
            z = ddpm_step(z, eps, t, sched, rng)
        latents.append(z)
        eps_all.append(eps)
    return Trajectory(tuple(run.step_indices), latents, eps_all)


def single_step_error_probe(weights, layer, x_s, x_m, factors):
    """Error of one calibrated reuse, measured directly and predicted as (W - wa wb) dx.

    ``factors`` is a pair ``(wa, wb)`` or any object with ``wa``/``wb``.
    """
    wa, wb = factors if isinstance(factors, tuple) else (factors.wa, factors.wb)
    lin = weights.linear(layer)
    dx = x_m - x_s
    cached = lin(x_s)
    approx = cached + (dx @ wb.T) @ wa.T
    measured = lin(x_m) - approx
    predicted = dx @ (lin.weight - wa @ wb).T
    return measured, predicted
