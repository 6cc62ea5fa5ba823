"""End-to-end flow: style extraction, stylized sampling, metrics, and probes.

Metrics are toy analogs: style_score compares feature moments against the
extracted statistics, content_score compares a stylized latent against the
same-seed unstylized baseline.  Only orderings and directions are claimed,
never absolute values.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .denoiser import (
    BoundDenoiser,
    DenoiserWeights,
    config_fingerprint,
    embed_prompt,
    forward,
)
from .diffusion import NoiseSchedule, add_noise, lcm_sample, lcm_sample_traced
from .numerics import Rng, TAG_NOISE_PROBE, TAG_STYLE_EXTRACT, gaussian, moments, pca_top3
from .style_attention import AttentionControl, StyleStatistics

CONTROL_ORDER = ("none", "direct_replace", "direct_add", "msa", "nmsa")

DEFAULT_PROBE_TIMESTEPS = (0, 100, 200, 300, 400, 500)


@dataclass
class GenerationRequest:
    prompt: str
    style_stats: StyleStatistics | None
    steps: int = 6
    control: AttentionControl = field(default_factory=AttentionControl)
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.control.mode != "none" and self.style_stats is None:
            raise ValueError(f"control {self.control.mode!r} requires style statistics")


@dataclass
class MetricsRow:
    control: str
    lam: float
    seed: int
    style_score: float
    content_score: float
    runtime_ms: float


def extract_style_statistics(
    weights: DenoiserWeights,
    schedule: NoiseSchedule,
    style_latent: np.ndarray,
    t: int = 200,
    prompt: str = "",
    seed: int = 0,
) -> StyleStatistics:
    """Noise the style latent to t, run one captured pass, keep K/V and moments."""
    cfg = weights.config
    if style_latent.shape != cfg.latent_shape:
        raise ValueError(
            f"style latent shape {style_latent.shape} != config {cfg.latent_shape}"
        )
    rng = Rng.for_purpose(seed, TAG_STYLE_EXTRACT)
    eps = gaussian(rng, style_latent.shape)
    z_t = add_noise(style_latent, schedule, t, eps)
    cond = embed_prompt(prompt, weights)
    _, taps = forward(weights, z_t, t, cond, capture=True)
    mus, sigmas = [], []
    for f in taps.features:
        mu, sigma = moments(f)
        mus.append(mu)
        sigmas.append(sigma)
    return StyleStatistics(
        keys=taps.keys,
        values=taps.values,
        mu=mus,
        sigma=sigmas,
        timestep=t,
        fingerprint=config_fingerprint(cfg),
    )


def generate_traced(
    weights: DenoiserWeights, schedule: NoiseSchedule, req: GenerationRequest
):
    """Sample a latent and also return the final step's feature taps."""
    den = BoundDenoiser(weights, req.style_stats)
    cond = embed_prompt(req.prompt, weights)
    return lcm_sample_traced(
        den, schedule, req.seed, cond, req.steps, req.control, capture_final=True
    )


def generate(
    weights: DenoiserWeights, schedule: NoiseSchedule, req: GenerationRequest
) -> np.ndarray:
    den = BoundDenoiser(weights, req.style_stats)
    cond = embed_prompt(req.prompt, weights)
    return lcm_sample(den, schedule, req.seed, cond, req.steps, req.control)


def style_score(gen_taps, style: StyleStatistics) -> float:
    """Negative mean over layers of the mean-squared moment distance; 0 is best."""
    if len(gen_taps.features) != style.layers:
        raise ValueError(
            f"taps cover {len(gen_taps.features)} layers, statistics {style.layers}"
        )
    total = 0.0
    for f, mu_s, sigma_s in zip(gen_taps.features, style.mu, style.sigma):
        mu_g, sigma_g = moments(f)
        if mu_g.shape != mu_s.shape:
            raise ValueError(
                f"feature width {mu_g.shape} != statistics width {mu_s.shape}"
            )
        d = mu_g.size
        dm = np.square(mu_g.astype(np.float64) - mu_s.astype(np.float64)).sum()
        ds = np.square(sigma_g.astype(np.float64) - sigma_s.astype(np.float64)).sum()
        total += (dm + ds) / d
    return -total / len(gen_taps.features)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    a64 = a.ravel().astype(np.float64)
    b64 = b.ravel().astype(np.float64)
    na = math.sqrt(float(a64 @ a64))
    nb = math.sqrt(float(b64 @ b64))
    if na == 0.0 or nb == 0.0:
        return 1.0 if na == nb else 0.0
    return float(min(1.0, max(-1.0, (a64 @ b64) / (na * nb))))


def content_score(z_gen: np.ndarray, z_baseline: np.ndarray) -> float:
    """Cosine similarity to the same-seed unstylized latent, in [-1, 1]."""
    if z_gen.shape != z_baseline.shape:
        raise ValueError(f"shape mismatch {z_gen.shape} vs {z_baseline.shape}")
    return _cosine(z_gen, z_baseline)


def probe_noise_similarity(
    weights: DenoiserWeights,
    schedule: NoiseSchedule,
    style_latent: np.ndarray,
    t_list=None,
    seeds=(0,),
) -> list[tuple[int, float]]:
    """Feature similarity of clean vs t-noised passes, averaged over seeds.

    One noise draw per seed is shared across all probed timesteps, so each
    seed contributes a paired comparison along the t axis.
    """
    ts = list(t_list) if t_list is not None else list(DEFAULT_PROBE_TIMESTEPS)
    for t in ts:
        if not 0 <= t <= schedule.T:
            raise ValueError(f"probe timestep {t} outside [0, {schedule.T}]")
    seeds = list(seeds)
    if not seeds:
        raise ValueError("probe requires at least one seed")
    cond = embed_prompt("", weights)
    _, clean_taps = forward(weights, style_latent, 0, cond, capture=True)
    clean_vec = np.concatenate([f.ravel() for f in clean_taps.features])
    sums = [0.0] * len(ts)
    for seed in seeds:
        eps = gaussian(Rng.for_purpose(seed, TAG_NOISE_PROBE), style_latent.shape)
        for i, t in enumerate(ts):
            z_t = add_noise(style_latent, schedule, t, eps)
            _, taps = forward(weights, z_t, t, cond, capture=True)
            vec = np.concatenate([f.ravel() for f in taps.features])
            sums[i] += _cosine(clean_vec, vec)
    return [(t, s / len(seeds)) for t, s in zip(ts, sums)]


def ablate(
    weights: DenoiserWeights,
    schedule: NoiseSchedule,
    prompt: str,
    style_latent: np.ndarray,
    seeds,
    steps: int = 6,
    lam: float = 1.0,
    extract_t: int = 200,
    extract_seed: int = 0,
) -> list[MetricsRow]:
    """Run every control for every seed; rows come out in (control, seed) order."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("ablate requires at least one seed")
    stats = extract_style_statistics(
        weights, schedule, style_latent, extract_t, prompt, extract_seed
    )
    baselines = {}
    for seed in seeds:
        req = GenerationRequest(prompt, stats, steps, AttentionControl("none", lam), seed)
        t0 = time.perf_counter()
        z, taps = generate_traced(weights, schedule, req)
        baselines[seed] = (z, taps, (time.perf_counter() - t0) * 1000.0)

    rows = []
    for mode in CONTROL_ORDER:
        control = AttentionControl(mode, lam)
        for seed in seeds:
            if mode == "none":
                z, taps, runtime_ms = baselines[seed]
            else:
                req = GenerationRequest(prompt, stats, steps, control, seed)
                t0 = time.perf_counter()
                z, taps = generate_traced(weights, schedule, req)
                runtime_ms = (time.perf_counter() - t0) * 1000.0
            rows.append(
                MetricsRow(
                    control=mode,
                    lam=lam,
                    seed=seed,
                    style_score=style_score(taps, stats),
                    content_score=content_score(z, baselines[seed][0]),
                    runtime_ms=runtime_ms,
                )
            )
    return rows


def pca_feature_image(taps, layer: int, grid_hw: tuple[int, int] | None = None) -> np.ndarray:
    """Top-3 principal components of one layer's features as an image grid.

    Components are min-max normalized to [0, 1]; a zero-range component maps
    to constant 0.  Without grid_hw the token count must be a perfect square.
    """
    if not 0 <= layer < len(taps.features):
        raise ValueError(f"layer {layer} out of range 0..{len(taps.features) - 1}")
    comp = pca_top3(taps.features[layer])
    tokens = comp.shape[0]
    if grid_hw is None:
        side = math.isqrt(tokens)
        if side * side != tokens:
            raise ValueError(f"token count {tokens} is not square; pass grid_hw")
        grid_hw = (side, side)
    h, w = grid_hw
    if h * w != tokens:
        raise ValueError(f"grid {h}x{w} does not hold {tokens} tokens")
    out = np.zeros((tokens, 3), dtype=np.float32)
    for c in range(3):
        col = comp[:, c].astype(np.float64)
        lo, hi = col.min(), col.max()
        if hi > lo:
            out[:, c] = ((col - lo) / (hi - lo)).astype(np.float32)
    return out.reshape(h, w, 3)
