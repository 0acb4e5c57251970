import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relitanim.diffusion import (
    GaussianOracleSpec,
    NoiseSchedule,
    analytic_eps,
    ddim_sample,
    default_step_indices,
    forward_diffuse,
    invert_diffuse,
    make_schedule,
    mc_cfg,
    oracle_denoiser,
)

SCHED = make_schedule()
SHAPE = (2, 3, 3, 4)


def test_schedule_examples():
    assert np.allclose(make_schedule(2, 0.1, 0.1).alpha_bars, [0.9, 0.81], atol=1e-15)
    assert np.array_equal(make_schedule(1, 0.5, 0.5).alpha_bars, [0.5])
    for args in [(2, 0.1, 1.0), (0, 0.1, 0.1), (10001, 0.1, 0.1), (2, 0.2, 0.1), (2, 0.0, 0.1)]:
        with pytest.raises(ValueError):
            make_schedule(*args)


def test_schedule_invariants():
    ab = SCHED.alpha_bars
    assert SCHED.T_steps == 1000
    assert np.all(np.diff(ab) < 0) and np.all((ab > 0) & (ab < 1))
    prod = 1.0
    for t in range(SCHED.T_steps):
        prod *= 1.0 - SCHED.betas[t]
        assert abs(prod - ab[t]) <= 1e-12
    back = NoiseSchedule.from_dict(json.loads(SCHED.to_json()))
    assert np.array_equal(back.alpha_bars, SCHED.alpha_bars)


def test_forward_matches_scalar_loop():
    sched = make_schedule(2, 0.1, 0.1)  # alpha_bar[1] = 0.81
    rng = np.random.default_rng(0)
    z0, eps = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    out = forward_diffuse(z0, 1, eps, sched)
    for i in range(3):
        for j in range(4):
            assert abs(out[i, j] - (0.9 * z0[i, j] + np.sqrt(0.19) * eps[i, j])) <= 1e-12


def test_forward_degenerate_cases():
    sched = make_schedule(10, 1e-12, 1e-12)
    z0, eps = np.ones(5), np.full(5, 3.0)
    assert np.allclose(forward_diffuse(z0, 0, eps, sched), z0, atol=1e-5)
    out = forward_diffuse(np.zeros(5), 500, eps, SCHED)
    assert np.array_equal(out, np.sqrt(1 - SCHED.alpha_bars[500]) * eps)


def test_forward_errors():
    with pytest.raises(ValueError):
        forward_diffuse(np.zeros(3), 0, np.zeros(4), SCHED)
    with pytest.raises(IndexError):
        forward_diffuse(np.zeros(3), 1000, np.zeros(3), SCHED)


@settings(max_examples=30, deadline=None)
@given(t=st.integers(0, 999), seed=st.integers(0, 2**16))
def test_inversion_recovers_z0(t, seed):
    rng = np.random.default_rng(seed)
    z0, eps = rng.standard_normal(SHAPE), rng.standard_normal(SHAPE)
    assert np.max(np.abs(invert_diffuse(forward_diffuse(z0, t, eps, SCHED), t, eps, SCHED) - z0)) <= 1e-9


def test_variance_preserved():
    rng = np.random.default_rng(1)
    z0, eps = rng.standard_normal(10_000), rng.standard_normal(10_000)
    for t in range(0, 1000, 37):
        assert abs(forward_diffuse(z0, t, eps, SCHED).var() - 1) < 0.05


def test_mc_cfg_examples():
    rng = np.random.default_rng(2)
    e1, e2 = rng.standard_normal(SHAPE), rng.standard_normal(SHAPE)
    assert np.array_equal(mc_cfg(e1, e2, 1.0), e2)
    assert np.array_equal(mc_cfg(e1, e2, 0.0), e1)
    assert np.array_equal(mc_cfg(np.zeros(SHAPE), e2, 4.5), 4.5 * e2)
    assert np.array_equal(mc_cfg(e1, e1, 3.0), e1)
    with pytest.raises(ValueError):
        mc_cfg(e1, e2[:1], 2.0)


@settings(max_examples=50, deadline=None)
@given(omega=st.floats(0, 20), seed=st.integers(0, 1000))
def test_mc_cfg_affine(omega, seed):
    rng = np.random.default_rng(seed)
    e1, e2 = rng.standard_normal(8), rng.standard_normal(8)
    lhs = mc_cfg(e1, e2, omega) - mc_cfg(e1, e2, 0.0)
    assert np.max(np.abs(lhs - omega * (e2 - e1))) <= 1e-14 * max(1.0, omega) * 8


def test_analytic_eps_cases():
    mu = np.random.default_rng(3).standard_normal(SHAPE)
    spec = GaussianOracleSpec(lambda c: mu, 0.0)
    t = 400
    ab = SCHED.alpha_bars[t]
    z = np.random.default_rng(4).standard_normal(SHAPE)
    assert np.allclose(analytic_eps(z, t, spec, None, SCHED), (z - np.sqrt(ab) * mu) / np.sqrt(1 - ab), atol=1e-12)
    assert np.max(np.abs(analytic_eps(np.sqrt(ab) * mu, t, spec, None, SCHED))) <= 1e-15
    with pytest.raises(ValueError):
        GaussianOracleSpec(lambda c: mu, -1.0)


def test_analytic_eps_matches_numerical_posterior():
    # one pixel, x0 ~ N(mu, 1), abar = 0.5: E[eps | z] by quadrature over x0
    sched = make_schedule(1, 0.5, 0.5)
    mu, z = 0.7, -0.4
    ab = 0.5
    x = np.linspace(mu - 12, mu + 12, 200_001)
    prior = np.exp(-0.5 * (x - mu) ** 2)
    like = np.exp(-0.5 * (z - np.sqrt(ab) * x) ** 2 / (1 - ab))
    post = prior * like
    eps_given_x = (z - np.sqrt(ab) * x) / np.sqrt(1 - ab)
    want = np.sum(post * eps_given_x) / np.sum(post)
    got = analytic_eps(np.array([z]), 0, GaussianOracleSpec(lambda c: np.array([mu]), 1.0), None, sched)
    assert abs(got[0] - want) <= 1e-8


def test_default_steps():
    steps = default_step_indices(SCHED)
    assert len(steps) == 25 and steps[0] == 999 and steps[-1] == 0
    assert np.all(np.diff(steps) < 0)


@pytest.mark.parametrize("seed", range(5))
def test_sampling_returns_mean(seed):
    mu = np.random.default_rng(10).standard_normal(SHAPE)
    den = oracle_denoiser(GaussianOracleSpec(lambda c: mu, 0.0), SCHED)
    out = ddim_sample(den, SCHED, SHAPE, "a", "a", omega=1.0, seed=seed)
    assert np.max(np.abs(out - mu)) <= 1e-5


def test_sampling_seed_independent():
    mu = np.random.default_rng(10).standard_normal(SHAPE)
    den = oracle_denoiser(GaussianOracleSpec(lambda c: mu, 0.0), SCHED)
    outs = [ddim_sample(den, SCHED, SHAPE, "a", "a", omega=4.5, seed=s) for s in range(5)]
    assert max(np.max(np.abs(o - outs[0])) for o in outs) < 1e-6


def test_guided_sampling_closed_form_and_monotone():
    rng = np.random.default_rng(11)
    a, b = rng.standard_normal(SHAPE), rng.standard_normal(SHAPE)
    den = oracle_denoiser(GaussianOracleSpec(lambda c: {"c1": a, "c2": b}[c], 0.0), SCHED)
    proj = []
    for omega in (0.0, 1.0, 2.0, 4.5, 8.0):
        out = ddim_sample(den, SCHED, SHAPE, "c1", "c2", omega=omega, seed=3)
        assert np.max(np.abs(out - (a + omega * (b - a)))) <= 1e-4
        proj.append(np.sum((out - a) * (b - a)))
    assert np.all(np.diff(proj) > 0)


def test_single_condition_equivalence():
    mu = {"x": np.full(SHAPE, 0.3), "y": np.zeros(SHAPE)}
    den = oracle_denoiser(GaussianOracleSpec(lambda c: mu[c], 0.5), SCHED)
    same = ddim_sample(den, SCHED, SHAPE, "x", "x", omega=1.0, seed=9)
    # at omega = 1 the first condition drops out entirely
    other = ddim_sample(den, SCHED, SHAPE, "y", "x", omega=1.0, seed=9)
    assert np.array_equal(same, other)


def test_two_step_hand_computation():
    sched = make_schedule(4, 0.1, 0.3)
    ab = sched.alpha_bars
    mu, s0 = 0.25, 0.8
    spec = GaussianOracleSpec(lambda c: np.array([mu]), s0)
    out = ddim_sample(oracle_denoiser(spec, sched), sched, (1,), None, None, omega=1.0, step_indices=[3, 1], seed=5)
    z = np.random.default_rng(5).standard_normal(1)[0]
    for t, nxt in ((3, 1), (1, None)):
        e = np.sqrt(1 - ab[t]) * (z - np.sqrt(ab[t]) * mu) / (ab[t] * s0**2 + 1 - ab[t])
        x0 = (z - np.sqrt(1 - ab[t]) * e) / np.sqrt(ab[t])
        if nxt is not None:
            z = np.sqrt(ab[nxt]) * x0 + np.sqrt(1 - ab[nxt]) * e
    assert abs(out[0] - x0) <= 1e-12


@pytest.mark.parametrize("steps", [[10, 20], [5, 5], [], [1000, 3]])
def test_bad_step_indices(steps):
    den = oracle_denoiser(GaussianOracleSpec(lambda c: np.zeros(1)), SCHED)
    with pytest.raises((ValueError, IndexError)):
        ddim_sample(den, SCHED, (1,), None, None, step_indices=steps)
