"""Noise schedule, forward diffusion, two-condition guidance and DDIM sampling.

Timesteps are 0-based indices into the schedule tables. Latents are
``(frames, h, w, c)`` float64 arrays.

The Gaussian oracle is the exact MMSE noise predictor when the data for a
condition is distributed as N(mu(cond), sigma0^2 I). With sigma0 = 0 the
predictor inverts the forward process exactly, so deterministic DDIM returns
mu (or its guided extrapolation) regardless of the starting noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Callable, Protocol

import numpy as np

DEFAULT_T_STEPS = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02
DEFAULT_SAMPLING_STEPS = 25
DEFAULT_OMEGA = 4.5


class Denoiser(Protocol):
    def __call__(self, z_t: np.ndarray, t: int, condition: Any) -> np.ndarray: ...


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T_steps(self) -> int:
        return len(self.betas)

    def to_dict(self) -> dict:
        return {
            "T_steps": self.T_steps,
            "betas": self.betas.tolist(),
            "alpha_bars": self.alpha_bars.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> NoiseSchedule:
        betas = np.asarray(data["betas"], dtype=np.float64)
        return cls(betas, np.asarray(data["alpha_bars"], dtype=np.float64))


def make_schedule(
    T_steps: int = DEFAULT_T_STEPS,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Linear beta schedule with cumulative alpha products."""
    if not (1 <= T_steps <= 10000):
        raise ValueError(f"T_steps must be in [1, 10000], got {T_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start, beta_end, T_steps)
    alpha_bars = np.cumprod(1.0 - betas)
    betas.setflags(write=False)
    alpha_bars.setflags(write=False)
    return NoiseSchedule(betas, alpha_bars)


def _check_t(schedule: NoiseSchedule, t: int) -> None:
    if not (0 <= t < schedule.T_steps):
        raise IndexError(f"timestep {t} outside [0, {schedule.T_steps})")


def _same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def forward_diffuse(z0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps."""
    _same_shape(z0, eps, "forward_diffuse")
    _check_t(schedule, t)
    ab = schedule.alpha_bars[t]
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def invert_diffuse(z_t: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Recover z0 from z_t given the exact noise."""
    _same_shape(z_t, eps, "invert_diffuse")
    _check_t(schedule, t)
    ab = schedule.alpha_bars[t]
    return (z_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)


def mc_cfg(eps_c1: np.ndarray, eps_c2: np.ndarray, omega: float) -> np.ndarray:
    """Two-condition guidance: omega * (eps_c2 - eps_c1) + eps_c1.

    omega = 0 and omega = 1 return the respective inputs bit-exactly.
    """
    _same_shape(eps_c1, eps_c2, "mc_cfg")
    if omega == 1.0:
        return np.array(eps_c2, dtype=np.float64, copy=True)
    return omega * (eps_c2 - eps_c1) + eps_c1


@dataclass(frozen=True)
class GaussianOracleSpec:
    """Per-condition Gaussian data model N(mu(condition), sigma0^2 I)."""

    mu: Callable[[Any], np.ndarray]
    sigma0: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.sigma0) and self.sigma0 >= 0):
            raise ValueError("sigma0 must be finite and non-negative")


def analytic_eps(
    z_t: np.ndarray, t: int, spec: GaussianOracleSpec, condition: Any, schedule: NoiseSchedule
) -> np.ndarray:
    """MMSE noise prediction for Gaussian data.

    eps* = sqrt(1 - abar) (z_t - sqrt(abar) mu) / (abar sigma0^2 + 1 - abar)
    """
    _check_t(schedule, t)
    ab = schedule.alpha_bars[t]
    mu = np.asarray(spec.mu(condition), dtype=np.float64)
    _same_shape(np.asarray(z_t), mu, "analytic_eps")
    return np.sqrt(1.0 - ab) * (z_t - np.sqrt(ab) * mu) / (ab * spec.sigma0**2 + 1.0 - ab)


def oracle_denoiser(spec: GaussianOracleSpec, schedule: NoiseSchedule) -> Denoiser:
    def denoise(z_t, t, condition):
        return analytic_eps(z_t, t, spec, condition, schedule)

    return denoise


def default_step_indices(schedule: NoiseSchedule, steps: int = DEFAULT_SAMPLING_STEPS) -> np.ndarray:
    """``steps`` evenly spaced, strictly decreasing indices from T-1 down to 0."""
    if steps < 1:
        raise ValueError("need at least one sampling step")
    if steps > schedule.T_steps:
        raise ValueError("more sampling steps than schedule timesteps")
    if steps == 1:
        return np.array([schedule.T_steps - 1])
    return np.unique(np.linspace(schedule.T_steps - 1, 0, steps).round().astype(np.int64))[::-1].copy()


def ddim_sample(
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    shape: tuple[int, ...],
    c1: Any,
    c2: Any,
    omega: float = DEFAULT_OMEGA,
    step_indices=None,
    seed: int = 0,
) -> np.ndarray:
    """Deterministic (eta = 0) DDIM with two-condition guidance at every step.

    Noise is drawn once from ``seed``. Returns the clean-sample prediction at
    the last step index.
    """
    if step_indices is None:
        step_indices = default_step_indices(schedule)
    steps = [int(t) for t in np.asarray(step_indices).ravel()]
    if not steps:
        raise ValueError("empty step schedule")
    if any(b >= a for a, b in zip(steps, steps[1:])):
        raise ValueError("step indices must be strictly decreasing")
    for t in steps:
        _check_t(schedule, t)

    z = np.random.default_rng(seed).standard_normal(shape)
    x0 = z
    for i, t in enumerate(steps):
        ab = schedule.alpha_bars[t]
        eps = mc_cfg(denoiser(z, t, c1), denoiser(z, t, c2), omega)
        x0 = (z - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
        if i + 1 < len(steps):
            ab_next = schedule.alpha_bars[steps[i + 1]]
            z = np.sqrt(ab_next) * x0 + np.sqrt(1.0 - ab_next) * eps
    return x0
