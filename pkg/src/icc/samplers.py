"""Noise schedules, forward noising and DDPM / DDIM reverse updates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep constants, stored 1-indexed: entry ``t`` lives at index ``t - 1``."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    @property
    def T(self) -> int:
        return int(self.beta.shape[0])

    def check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")

    def abar(self, t: int) -> float:
        """Cumulative product at ``t``; ``abar(0) == 1``."""
        if t == 0:
            return 1.0
        self.check_t(t)
        return float(self.alpha_bar[t - 1])


def make_linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 2:
        raise ValueError("schedule needs T >= 2")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"invalid beta range ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.empty(T)
    acc = 1.0
    for i, a in enumerate(alpha):
        acc *= a
        alpha_bar[i] = acc
    # posterior std; sigma_1 = 0 since alpha_bar_0 = 1
    prev = np.concatenate(([1.0], alpha_bar[:-1]))
    sigma = np.sqrt(beta * (1.0 - prev) / (1.0 - alpha_bar))
    return NoiseSchedule(beta, alpha, alpha_bar, sigma)


def forward_noising(z0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    sched.check_t(t)
    ab = sched.abar(t)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def ddpm_step(z_t: np.ndarray, eps_hat: np.ndarray, t: int, sched: NoiseSchedule, rng=None) -> np.ndarray:
    sched.check_t(t)
    a = float(sched.alpha[t - 1])
    ab = float(sched.alpha_bar[t - 1])
    mean = (z_t - (1.0 - a) / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)
    sigma = float(sched.sigma[t - 1])
    if sigma == 0.0 or rng is None:
        return mean
    return mean + sigma * rng.normal(z_t.shape)


def ddim_step(z_t: np.ndarray, eps_hat: np.ndarray, t: int, t_prev: int, sched: NoiseSchedule) -> np.ndarray:
    """Deterministic (eta = 0) DDIM update from ``t`` to ``t_prev``."""
    if not t > t_prev >= 0:
        raise ValueError(f"DDIM needs t > t_prev >= 0, got {t} -> {t_prev}")
    ab = sched.abar(t)
    ab_prev = sched.abar(t_prev)
    z0_hat = (z_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
    return np.sqrt(ab_prev) * z0_hat + np.sqrt(1.0 - ab_prev) * eps_hat


def make_step_indices(T: int, n_steps: int) -> list[int]:
    """Descending visited timesteps ``round(T - k (T - 1) / (n - 1))``, ending at 1.

    Halves round up, so T=1000, n=4 gives [1000, 667, 334, 1].
    """
    if not 1 <= n_steps <= T:
        raise ValueError(f"need 1 <= n_steps <= T, got n_steps={n_steps}, T={T}")
    if n_steps == 1:
        return [1]
    out = []
    for k in range(n_steps):
        num = (T - 1) * k
        # exact integer round-half-up of T - num / (n - 1)
        q, rem = divmod(num, n_steps - 1)
        lower = T - q - (1 if rem else 0)
        out.append(lower + (1 if rem and 2 * rem <= n_steps - 1 else 0))
    return out


@dataclass(frozen=True)
class SamplerRun:
    kind: str
    step_indices: tuple[int, ...]
    guidance_scale: float | None = None

    def __post_init__(self):
        if self.kind not in ("ddpm", "ddim"):
            raise ValueError(f"unknown sampler {self.kind!r}")
        idx = list(self.step_indices)
        if not idx or idx[-1] != 1 or any(a <= b for a, b in zip(idx, idx[1:])):
            raise ValueError("step_indices must be strictly decreasing and end at 1")
        if self.kind == "ddpm" and idx != list(range(idx[0], 0, -1)):
            raise ValueError("DDPM runs visit every timestep; use DDIM for respaced runs")

    @property
    def n_steps(self) -> int:
        return len(self.step_indices)

    @property
    def cfg(self) -> bool:
        return self.guidance_scale is not None

    @classmethod
    def make(cls, kind: str, T: int, n_steps: int, guidance_scale: float | None = None) -> "SamplerRun":
        return cls(kind, tuple(make_step_indices(T, n_steps)), guidance_scale)

    def prev_of(self, pos: int) -> int:
        return self.step_indices[pos + 1] if pos + 1 < len(self.step_indices) else 0
