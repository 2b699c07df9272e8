import numpy as np
import pytest
from hypothesis import given, strategies as st

from icc.rng import Rng
from icc.samplers import (
    NoiseSchedule, SamplerRun, ddim_step, ddpm_step, forward_noising, make_linear_schedule, make_step_indices,
)


def test_two_step_schedule_values():
    s = make_linear_schedule(2, 0.1, 0.1)
    assert np.allclose(s.alpha_bar, [0.9, 0.81], atol=1e-15)
    assert s.sigma[0] == 0.0


def test_schedule_against_cumprod():
    s = make_linear_schedule(1000)
    beta = np.linspace(1e-4, 0.02, 1000)
    assert np.max(np.abs(s.alpha_bar - np.cumprod(1 - beta))) < 1e-12
    assert np.all(np.diff(s.alpha_bar) < 0) and np.all((s.alpha_bar > 0) & (s.alpha_bar < 1))
    prev = np.concatenate(([1.0], s.alpha_bar[:-1]))
    assert np.allclose(s.sigma ** 2, (1 - prev) / (1 - s.alpha_bar) * beta, rtol=1e-12)


@pytest.mark.parametrize("args", [(1,), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)])
def test_schedule_rejects_bad_inputs(args):
    with pytest.raises(ValueError):
        make_linear_schedule(*args)


def test_forward_noising_basic(sched50):
    z0 = Rng(0).normal((4, 3))
    assert np.allclose(forward_noising(z0, 1, np.zeros_like(z0), sched50), np.sqrt(sched50.alpha_bar[0]) * z0)
    with pytest.raises(ValueError):
        forward_noising(z0, 0, z0, sched50)
    with pytest.raises(ValueError):
        forward_noising(z0, 51, z0, sched50)


def test_forward_noising_matches_iterated_single_steps(sched50):
    # z_t = sqrt(a_t) z_{t-1} + sqrt(1 - a_t) e_t, iterated with fresh noise
    t, z0, n = 10, 1.5, 100_000
    rng = Rng(1)
    z = np.full(n, z0)
    for k in range(1, t + 1):
        a = sched50.alpha[k - 1]
        z = np.sqrt(a) * z + np.sqrt(1 - a) * rng.normal(n)
    ab = sched50.abar(t)
    assert abs(z.mean() - np.sqrt(ab) * z0) < 0.01 * np.sqrt(ab) * z0
    assert abs(z.var() - (1 - ab)) < 0.01 * (1 - ab) * 5  # 5 sigma of the variance estimator
    closed = forward_noising(np.full(n, z0), t, Rng(2).normal(n), sched50)
    assert abs(closed.var() - z.var()) < 0.05 * (1 - ab)


def test_ddpm_final_step_reduces_to_rescale(sched50):
    z = Rng(3).normal((2, 2))
    assert np.allclose(ddpm_step(z, np.zeros_like(z), 1, sched50), z / np.sqrt(sched50.alpha[0]))


def test_ddpm_exact_denoiser_recovers_z0():
    sched = make_linear_schedule(10)
    rng = Rng(4)
    z0 = rng.normal((3, 5))
    z = forward_noising(z0, 10, rng.normal((3, 5)), sched)
    for t in range(10, 0, -1):
        # the noise actually present in z_t given z0
        eps = (z - np.sqrt(sched.abar(t)) * z0) / np.sqrt(1 - sched.abar(t))
        z = ddpm_step(z, eps, t, sched)
    assert np.max(np.abs(z - z0)) < 1e-6


def test_ddpm_noise_variance(sched50):
    t, n = 25, 100_000
    z = np.zeros(n)
    mean = ddpm_step(z, np.zeros(n), t, sched50)
    draws = ddpm_step(z, np.zeros(n), t, sched50, Rng(5))
    var = np.var(draws - mean)
    assert abs(var - sched50.sigma[t - 1] ** 2) < 0.01 * sched50.sigma[t - 1] ** 2


def test_ddim_equal_alpha_bar_is_fixed_point():
    ab = np.array([0.9, 0.9, 0.5])
    s = NoiseSchedule(1 - ab, 1 - ab, ab, np.zeros(3))
    z, e = Rng(6).normal((3, 3)), Rng(7).normal((3, 3))
    assert np.allclose(ddim_step(z, e, 2, 1, s), z, atol=1e-14)


@pytest.mark.parametrize("t", [1, 7, 30, 50])
def test_ddim_inverts_forward_noising(sched50, t):
    rng = Rng(t)
    z0, eps = rng.normal((4, 4)), rng.normal((4, 4))
    z_t = forward_noising(z0, t, eps, sched50)
    assert np.max(np.abs(ddim_step(z_t, eps, t, 0, sched50) - z0)) < 1e-9


def test_ddim_telescopes_under_constant_eps(sched50):
    rng = Rng(8)
    z, eps = rng.normal((4, 4)), rng.normal((4, 4))
    fine = z
    for t in range(40, 10, -1):
        fine = ddim_step(fine, eps, t, t - 1, sched50)
    coarse = ddim_step(ddim_step(z, eps, 40, 25, sched50), eps, 25, 10, sched50)
    assert np.max(np.abs(fine - coarse)) < 1e-9


def test_ddim_rejects_bad_order(sched50):
    z = np.zeros((1, 1))
    with pytest.raises(ValueError):
        ddim_step(z, z, 5, 5, sched50)


def test_step_indices_examples():
    assert make_step_indices(1000, 4) == [1000, 667, 334, 1]
    assert make_step_indices(50, 50) == list(range(50, 0, -1))
    assert make_step_indices(50, 1) == [1]
    assert make_step_indices(50, 2) == [50, 1]
    with pytest.raises(ValueError):
        make_step_indices(10, 11)
    with pytest.raises(ValueError):
        make_step_indices(10, 0)


@given(T=st.integers(2, 1000), data=st.data())
def test_step_indices_invariants(T, data):
    n = data.draw(st.integers(2, T))
    idx = make_step_indices(T, n)
    assert len(idx) == n and idx[0] == T and idx[-1] == 1
    assert all(a > b for a, b in zip(idx, idx[1:]))
    # round-half-up oracle in exact rationals
    from fractions import Fraction
    assert idx == [int(Fraction(T) - Fraction(k * (T - 1), n - 1) + Fraction(1, 2)) for k in range(n)]


def test_sampler_run():
    run = SamplerRun.make("ddim", 50, 20, 1.5)
    assert run.cfg and run.n_steps == 20 and run.prev_of(19) == 0 and run.prev_of(0) == run.step_indices[1]
    with pytest.raises(ValueError):
        SamplerRun.make("ddpm", 50, 20)
    with pytest.raises(ValueError):
        SamplerRun("euler", (1,))
    assert SamplerRun.make("ddpm", 10, 10).step_indices == tuple(range(10, 0, -1))
