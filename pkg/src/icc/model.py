"""Toy diffusion transformer used as the noise predictor.

Pre-LN blocks of multi-head self-attention and a GELU MLP, conditioned by
additive timestep and class embeddings. Every linear layer goes through a
single call site so an execution context can serve it from a cache.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .rng import Rng

SLOTS = ("qkv", "attn_proj", "ffn_fc1", "ffn_fc2")
LN_EPS = 1e-6
GELU_C = math.sqrt(2.0 / math.pi)
GELU_K = 0.044715


class LayerId(NamedTuple):
    block: int
    slot: str

    @property
    def index(self) -> int:
        return 4 * self.block + SLOTS.index(self.slot)

    @property
    def name(self) -> str:
        return f"blocks.{self.block}.{self.slot}"

    @classmethod
    def parse(cls, name: str) -> "LayerId":
        _, block, slot = name.split(".")
        if slot not in SLOTS:
            raise ValueError(f"unknown slot in {name!r}")
        return cls(int(block), slot)


class NonFiniteActivation(FloatingPointError):
    def __init__(self, layer):
        self.layer = layer
        super().__init__(f"non-finite activation at {getattr(layer, 'name', layer)}")


@dataclass(frozen=True)
class ModelConfig:
    depth: int
    hidden: int
    heads: int
    tokens: int
    mlp_ratio: int = 4
    cond_classes: int = 10
    embed_scale: float = 1.0

    def __post_init__(self):
        for name in ("depth", "hidden", "heads", "tokens", "mlp_ratio", "cond_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"ModelConfig.{name} must be >= 1")
        if self.hidden % self.heads:
            raise ValueError("hidden must be divisible by heads")

    def layer_ids(self) -> list[LayerId]:
        return [LayerId(b, s) for b in range(self.depth) for s in SLOTS]

    def channels(self, slot: str) -> tuple[int, int]:
        """(C_i, C_o) of a slot."""
        d, m = self.hidden, self.mlp_ratio * self.hidden
        return {"qkv": (d, 3 * d), "attn_proj": (d, d), "ffn_fc1": (d, m), "ffn_fc2": (m, d)}[slot]

    @property
    def null_class(self) -> int:
        return self.cond_classes


@dataclass
class Linear:
    weight: np.ndarray  # (C_o, C_i)
    bias: np.ndarray  # (C_o,)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight.T + self.bias


@dataclass
class BlockWeights:
    linears: dict[str, Linear]
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray


@dataclass
class ModelWeights:
    config: ModelConfig
    blocks: list[BlockWeights]
    head: Linear
    class_embed: np.ndarray  # (cond_classes + 1, d); last row is the null class

    def linear(self, layer: LayerId) -> Linear:
        return self.blocks[layer.block].linears[layer.slot]


def init_weights(config: ModelConfig, seed: int) -> ModelWeights:
    """Gaussian weights with variance 1/C_i, zero biases, unit LN gains."""
    rng = Rng(seed)
    d = config.hidden
    blocks = []
    for _ in range(config.depth):
        linears = {}
        for slot in SLOTS:
            ci, co = config.channels(slot)
            linears[slot] = Linear(rng.normal((co, ci)) / math.sqrt(ci), np.zeros(co))
        blocks.append(BlockWeights(linears, np.ones(d), np.zeros(d), np.ones(d), np.zeros(d)))
    head = Linear(rng.normal((d, d)) / math.sqrt(d), np.zeros(d))
    class_embed = rng.normal((config.cond_classes + 1, d))
    return ModelWeights(config, blocks, head, class_embed)


def timestep_embedding(t: int, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    args = t * freqs
    emb = np.concatenate([np.sin(args), np.cos(args)])
    if dim % 2:
        emb = np.concatenate([emb, [0.0]])
    return emb


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * gain + bias


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(GELU_C * (x + GELU_K * x**3)))


def softmax(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def attention(qkv: np.ndarray, heads: int) -> tuple[np.ndarray, np.ndarray]:
    """Softmax attention over a fused (N, 3d) projection; returns (output, probabilities)."""
    n, three_d = qkv.shape
    d = three_d // 3
    dh = d // heads
    q, k, v = (qkv[:, i * d:(i + 1) * d].reshape(n, heads, dh).transpose(1, 0, 2) for i in range(3))
    probs = softmax(q @ k.transpose(0, 2, 1) / math.sqrt(dh))
    out = (probs @ v).transpose(1, 0, 2).reshape(n, d)
    return out, probs


def embed(weights: ModelWeights, z_t: np.ndarray, t: int, cond: int) -> np.ndarray:
    cfg = weights.config
    e = timestep_embedding(t, cfg.hidden) + weights.class_embed[cond]
    return z_t + cfg.embed_scale * e


@dataclass
class TapRecord:
    """Input/output of every linear layer computed in full during one forward."""

    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    def record(self, layer, x, y) -> None:
        self.inputs[layer] = x
        self.outputs[layer] = y

    def __contains__(self, layer) -> bool:
        return layer in self.inputs


def forward(weights: ModelWeights, z_t: np.ndarray, t: int, cond: int, ctx=None):
    """Predict the noise in ``z_t``.

    Returns ``(eps_hat, taps)``. With ``ctx`` (a caching ExecutionContext) the
    linear layers are evaluated under its mode; without it every layer runs in
    full and nothing is charged.
    """
    from .caching import run_layer

    cfg = weights.config
    z_t = np.asarray(z_t, dtype=np.float64)
    if z_t.shape != (cfg.tokens, cfg.hidden):
        raise ValueError(f"z_t has shape {z_t.shape}, expected {(cfg.tokens, cfg.hidden)}")
    if not np.all(np.isfinite(z_t)):
        raise ValueError("z_t must be finite")
    taps = TapRecord()
    ledger = None if ctx is None else ctx.ledger

    def lin(layer: LayerId, x):
        if ctx is None:
            y = weights.linear(layer)(x)
            computed = True
        else:
            y, computed = run_layer(ctx, layer, x, report=True)
        if not np.all(np.isfinite(y)):
            raise NonFiniteActivation(layer)
        if computed:
            taps.record(layer, x, y)
        return y

    def reuses(layer):
        return ctx is not None and ctx.reuses(layer)

    x = embed(weights, z_t, t, cond)
    n, d = x.shape
    for b, blk in enumerate(weights.blocks):
        qkv_id, proj_id = LayerId(b, "qkv"), LayerId(b, "attn_proj")
        fc1_id, fc2_id = LayerId(b, "ffn_fc1"), LayerId(b, "ffn_fc2")

        h = layer_norm(x, blk.ln1_gain, blk.ln1_bias)
        if reuses(proj_id):
            if not reuses(qkv_id):
                lin(qkv_id, h)
            x = x + lin(proj_id, None)
        else:
            qkv = lin(qkv_id, h)
            attn, _ = attention(qkv, cfg.heads)
            if ledger is not None:
                ledger.charge(f"blocks.{b}.attention", "attention_nonlinear", 2 * n * n * d)
            x = x + lin(proj_id, attn)

        h = layer_norm(x, blk.ln2_gain, blk.ln2_bias)
        if reuses(fc2_id):
            if not reuses(fc1_id):
                lin(fc1_id, h)
            x = x + lin(fc2_id, None)
        else:
            x = x + lin(fc2_id, gelu(lin(fc1_id, h)))

    if ledger is not None:
        ledger.charge("head", "overhead", n * d * d)
    eps_hat = weights.head(x)
    if not np.all(np.isfinite(eps_hat)):
        raise NonFiniteActivation("head")
    return eps_hat, taps
