"""Noise schedule, forward diffusion, consistency mapping, and few-step sampling.

The denoiser is passed in as a callable `(z_t, t, cond, control, capture)
-> (prediction, taps)` so this module stays independent of any concrete
backbone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import Rng, TAG_SAMPLING, gaussian


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative noise coefficients plus consistency-boundary scaling."""

    T: int
    alpha_bar: np.ndarray  # length T+1, alpha_bar[0] == 1, strictly decreasing
    sigma_data: float
    t_scale: float


def build_schedule(T: int) -> NoiseSchedule:
    """Linear-beta schedule (1e-4 to 0.02) with boundary coefficients."""
    if T < 1:
        raise ValueError(f"build_schedule: T must be >= 1, got {T}")
    betas = np.linspace(1e-4, 0.02, T, dtype=np.float64)
    alpha_bar = np.empty(T + 1, dtype=np.float64)
    alpha_bar[0] = 1.0
    alpha_bar[1:] = np.cumprod(1.0 - betas)
    return NoiseSchedule(T=T, alpha_bar=alpha_bar, sigma_data=0.5, t_scale=T / 10.0)


def add_noise(z: np.ndarray, schedule: NoiseSchedule, t: int, eps: np.ndarray) -> np.ndarray:
    """Forward-diffuse a latent: sqrt(a_bar_t) * z + sqrt(1 - a_bar_t) * eps."""
    if not 0 <= t <= schedule.T:
        raise ValueError(f"add_noise: t={t} outside [0, {schedule.T}]")
    if eps.shape != z.shape:
        raise ValueError(f"add_noise: eps shape {eps.shape} != latent shape {z.shape}")
    a = schedule.alpha_bar[t]
    out = math.sqrt(a) * z.astype(np.float64) + math.sqrt(1.0 - a) * eps.astype(np.float64)
    return out.astype(np.float32)


def boundary_coeffs(schedule: NoiseSchedule, t: int) -> tuple[float, float]:
    """Skip/output blend weights; exactly (1, 0) at t = 0."""
    if not 0 <= t <= schedule.T:
        raise ValueError(f"boundary_coeffs: t={t} outside [0, {schedule.T}]")
    t_hat = t / schedule.t_scale
    var = schedule.sigma_data**2
    c_skip = var / (t_hat**2 + var)
    c_out = t_hat / math.sqrt(t_hat**2 + var)
    return c_skip, c_out


def consistency_apply_traced(denoiser, schedule, z_t, t, cond=None, control=None, capture=False):
    """Consistency blend plus the denoiser's feature taps (None unless captured)."""
    c_skip, c_out = boundary_coeffs(schedule, t)
    if c_out == 0.0:
        # Boundary condition: the clean point is a fixed point, bit-exactly.
        return z_t.copy(), None
    pred, taps = denoiser(z_t, t, cond, control, capture)
    out = c_skip * z_t.astype(np.float64) + c_out * pred.astype(np.float64)
    return out.astype(np.float32), taps


def consistency_apply(denoiser, schedule, z_t, t, cond=None, control=None) -> np.ndarray:
    """Map a noisy latent toward the clean sample: c_skip*z_t + c_out*F(z_t, t)."""
    out, _ = consistency_apply_traced(denoiser, schedule, z_t, t, cond, control)
    return out


def lcm_timesteps(schedule: NoiseSchedule, n: int) -> list[int]:
    """n sampling timesteps, evenly spaced from T-1 downward, all positive.

    Entry j is round-half-up((T-1) * (n-j) / n) for j = 0..n-1; collisions
    from rounding are pushed down to keep the sequence strictly decreasing.
    """
    if not 1 <= n <= schedule.T:
        raise ValueError(f"lcm_timesteps: n={n} outside [1, {schedule.T}]")
    top = schedule.T - 1
    ts = [int(math.floor(top * (n - j) / n + 0.5)) for j in range(n)]
    for j in range(1, n):
        if ts[j] >= ts[j - 1]:
            ts[j] = ts[j - 1] - 1
    if ts[-1] < 1:
        raise ValueError(f"lcm_timesteps: n={n} leaves no positive step for T={schedule.T}")
    return ts


def lcm_sample_traced(denoiser, schedule, seed, cond, n_steps, control=None, capture_final=False):
    """Few-step sampling loop; also returns the final step's feature taps.

    Starts from seed-derived Gaussian noise, maps to a clean estimate at each
    timestep, and re-noises the estimate to the next timestep with fresh
    Gaussian noise from the same stream. The stream is consumed identically
    for every control mode. The denoiser callable must expose the grid shape
    it operates on as a `latent_shape` attribute.
    """
    ts = lcm_timesteps(schedule, n_steps)
    rng = Rng.for_purpose(seed, TAG_SAMPLING)
    z = gaussian(rng, denoiser.latent_shape)
    z0_hat = z
    taps = None
    for i, t in enumerate(ts):
        last = i + 1 == len(ts)
        z0_hat, taps = consistency_apply_traced(
            denoiser, schedule, z, t, cond, control, capture=capture_final and last
        )
        if not last:
            eps = gaussian(rng, z0_hat.shape)
            z = add_noise(z0_hat, schedule, ts[i + 1], eps)
    return z0_hat, taps


def lcm_sample(denoiser, schedule, seed, cond, n_steps, control=None) -> np.ndarray:
    """Few-step stochastic sampler; deterministic per (seed, cond, control, n_steps)."""
    out, _ = lcm_sample_traced(denoiser, schedule, seed, cond, n_steps, control)
    return out
