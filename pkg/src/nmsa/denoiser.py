"""Toy transformer denoiser with feature taps and attention-control hooks.

Latent grids are flattened to tokens, conditioned additively on timestep and
prompt embeddings, and pushed through pre-norm transformer layers whose
self-attention block is the injection site for style statistics.  Weights are
random but fully determined by (seed, config); nothing here trains.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .numerics import Rng, TAG_WEIGHTS, fnv1a64, gaussian, matmul
from .style_attention import AttentionControl, StyleStatistics, apply_control

LN_EPS = 1e-5

_CONTROL_NONE = AttentionControl("none")


@dataclass(frozen=True)
class DenoiserConfig:
    grid_h: int = 16
    grid_w: int = 16
    channels: int = 4
    model_dim: int = 64
    heads: int = 4
    layers: int = 4
    vocab_slots: int = 4096

    def __post_init__(self):
        for name in ("grid_h", "grid_w", "channels", "model_dim", "heads", "layers", "vocab_slots"):
            if getattr(self, name) < 1:
                raise ValueError(f"config field {name} must be positive")
        if self.model_dim % self.heads:
            raise ValueError(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}"
            )

    @property
    def tokens(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.grid_h, self.grid_w, self.channels)


def config_fingerprint(config: DenoiserConfig) -> int:
    """64-bit hash of the seven config fields, embedded in artifacts on disk."""
    packed = struct.pack(
        "<7I",
        config.grid_h,
        config.grid_w,
        config.channels,
        config.model_dim,
        config.heads,
        config.layers,
        config.vocab_slots,
    )
    return fnv1a64(packed)


@dataclass
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    mlp1: np.ndarray
    mlp2: np.ndarray
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray


@dataclass
class DenoiserWeights:
    config: DenoiserConfig
    seed: int
    input_proj: np.ndarray  # channels x model_dim
    layers: list[LayerWeights]
    output_proj: np.ndarray  # model_dim x channels
    embedding: np.ndarray  # vocab_slots x model_dim


def init_weights(seed: int, config: DenoiserConfig) -> DenoiserWeights:
    """Draw every matrix from one seed-derived stream, scaled by 1/sqrt(fan_in).

    Draw order is part of the artifact contract: input projection, then per
    layer wq, wk, wv, wo, mlp1, mlp2, then output projection, then the prompt
    embedding table.  Matrices are laid out [fan_in, fan_out]; norm gains and
    biases are constant ones/zeros and consume no randomness.
    """
    rng = Rng.for_purpose(seed, TAG_WEIGHTS)

    def mat(fan_in: int, fan_out: int) -> np.ndarray:
        scale = np.float32(1.0 / math.sqrt(fan_in))
        return gaussian(rng, (fan_in, fan_out)) * scale

    d = config.model_dim
    hidden = 4 * d
    input_proj = mat(config.channels, d)
    layers = []
    for _ in range(config.layers):
        layers.append(
            LayerWeights(
                wq=mat(d, d),
                wk=mat(d, d),
                wv=mat(d, d),
                wo=mat(d, d),
                mlp1=mat(d, hidden),
                mlp2=mat(hidden, d),
                ln1_gain=np.ones(d, dtype=np.float32),
                ln1_bias=np.zeros(d, dtype=np.float32),
                ln2_gain=np.ones(d, dtype=np.float32),
                ln2_bias=np.zeros(d, dtype=np.float32),
            )
        )
    output_proj = mat(d, config.channels)
    embedding = mat(config.vocab_slots, d)
    return DenoiserWeights(
        config=config,
        seed=seed,
        input_proj=input_proj,
        layers=layers,
        output_proj=output_proj,
        embedding=embedding,
    )


def embed_prompt(text: str, weights: DenoiserWeights) -> np.ndarray:
    """Mean of FNV-1a-hashed token slots; empty prompt maps to zeros."""
    tokens = text.lower().split()
    d = weights.config.model_dim
    if not tokens:
        return np.zeros(d, dtype=np.float32)
    slots = [fnv1a64(tok.encode("utf-8")) % weights.config.vocab_slots for tok in tokens]
    rows = weights.embedding[slots].astype(np.float64)
    return rows.mean(axis=0).astype(np.float32)


def embed_timestep(t: int, model_dim: int) -> np.ndarray:
    """Sinusoidal embedding, frequencies geometric from 1 down to 1/10000."""
    if t < 0:
        raise ValueError(f"timestep must be non-negative, got {t}")
    half = (model_dim + 1) // 2
    if half > 1:
        exponent = np.arange(half, dtype=np.float64) / (half - 1)
    else:
        exponent = np.zeros(1)
    angles = float(t) * 10000.0 ** (-exponent)
    out = np.empty(2 * half, dtype=np.float64)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out[:model_dim].astype(np.float32)


@dataclass
class FeatureTaps:
    """Per-layer intermediates captured during a forward pass."""

    features: list[np.ndarray]  # f_l fed to Q/K/V, post-norm (post-AdaIN for nmsa)
    keys: list[np.ndarray]  # heads x tokens x head_dim
    values: list[np.ndarray]
    residuals: list[np.ndarray]  # block outputs after the MLP residual
    weights: list[np.ndarray] | None  # attention rows, plain path debug only


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    x64 = x.astype(np.float64)
    mu = x64.mean(axis=1, keepdims=True)
    var = np.square(x64 - mu).mean(axis=1, keepdims=True)
    return ((x64 - mu) / np.sqrt(var + LN_EPS) * gain + bias).astype(np.float32)


def _gelu(x: np.ndarray) -> np.ndarray:
    x64 = x.astype(np.float64)
    inner = 0.7978845608028654 * (x64 + 0.044715 * x64 * x64 * x64)
    return (0.5 * x64 * (1.0 + np.tanh(inner))).astype(np.float32)


def forward(
    weights: DenoiserWeights,
    z_t: np.ndarray,
    t: int,
    prompt_emb: np.ndarray,
    control: AttentionControl | None = None,
    style: StyleStatistics | None = None,
    capture: bool = False,
    inject_layers: set[int] | None = None,
) -> tuple[np.ndarray, FeatureTaps | None]:
    """One denoiser evaluation; pure in all arguments.

    inject_layers restricts style injection to a layer subset; other layers
    fall back to plain self-attention.
    """
    cfg = weights.config
    if control is None:
        control = _CONTROL_NONE
    if control.mode != "none":
        if style is None:
            raise ValueError("forward: style statistics required for this control")
        if style.layers != cfg.layers:
            raise ValueError(
                f"forward: style statistics cover {style.layers} layers, config has {cfg.layers}"
            )
    if z_t.shape != cfg.latent_shape:
        raise ValueError(f"forward: latent shape {z_t.shape} != {cfg.latent_shape}")

    x = matmul(z_t.reshape(cfg.tokens, cfg.channels).astype(np.float32), weights.input_proj)
    x = x + embed_timestep(t, cfg.model_dim) + prompt_emb.astype(np.float32)

    taps = FeatureTaps([], [], [], [], [] if capture else None) if capture else None
    for l, lw in enumerate(weights.layers):
        h = _layer_norm(x, lw.ln1_gain, lw.ln1_bias)
        active = inject_layers is None or l in inject_layers
        eff = control if active else _CONTROL_NONE
        res = apply_control(
            eff, l, h, (lw.wq, lw.wk, lw.wv), cfg.heads, style, capture_weights=capture
        )
        x = x + matmul(res.output, lw.wo)
        h2 = _layer_norm(x, lw.ln2_gain, lw.ln2_bias)
        x = x + matmul(_gelu(matmul(h2, lw.mlp1)), lw.mlp2)
        if taps is not None:
            taps.features.append(res.features)
            taps.keys.append(res.keys)
            taps.values.append(res.values)
            taps.residuals.append(x.copy())
            if res.weights is not None:
                taps.weights.append(res.weights)

    pred = matmul(x, weights.output_proj).reshape(cfg.latent_shape)
    if taps is not None and not taps.weights:
        taps.weights = None
    return pred, taps


class BoundDenoiser:
    """Adapter matching the sampler's callable contract, with style bound in."""

    def __init__(
        self,
        weights: DenoiserWeights,
        style: StyleStatistics | None = None,
        inject_layers: set[int] | None = None,
    ):
        self.weights = weights
        self.style = style
        self.inject_layers = inject_layers

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return self.weights.config.latent_shape

    def __call__(self, z_t, t, cond, control, capture):
        return forward(
            self.weights,
            z_t,
            t,
            cond,
            control,
            self.style,
            capture,
            self.inject_layers,
        )
