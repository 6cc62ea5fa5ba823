"""Style-statistics container, AdaIN, and the attention-control mechanisms.

Four injection mechanisms share one surface: direct replacement of keys and
values, weighted addition of two separate attention passes, a joint-softmax
mixture over concatenated style and content score blocks, and the same
mixture preceded by AdaIN re-normalization of the content features (NMSA).
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .numerics import SIGMA_FLOOR, moments, online_mixed_attention

MODES = ("none", "direct_replace", "direct_add", "msa", "nmsa")

STATS_MAGIC = b"NMSA"
STATS_VERSION = 1


@dataclass(frozen=True)
class AttentionControl:
    """Injection mechanism selector with its style weight."""

    mode: str = "nmsa"
    lam: float = 1.0  # ignored for "none" and "direct_replace"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown attention-control mode {self.mode!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")


@dataclass
class StyleStatistics:
    """Per-layer key/value tensors and feature moments captured from a style latent."""

    keys: list[np.ndarray]  # per layer: heads x tokens x head_dim
    values: list[np.ndarray]
    mu: list[np.ndarray]  # per layer: model_dim
    sigma: list[np.ndarray]  # per layer: model_dim, floored at SIGMA_FLOOR
    timestep: int
    fingerprint: int
    style_id: str = ""

    def __post_init__(self):
        n = len(self.keys)
        if not (len(self.values) == len(self.mu) == len(self.sigma) == n):
            raise ValueError("style statistics: per-layer lists disagree on layer count")

    @property
    def layers(self) -> int:
        return len(self.keys)


def split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    """tokens x dim -> heads x tokens x head_dim."""
    tokens, dim = x.shape
    return x.reshape(tokens, heads, dim // heads).transpose(1, 0, 2)


def merge_heads(x: np.ndarray) -> np.ndarray:
    """heads x tokens x head_dim -> tokens x dim."""
    heads, tokens, head_dim = x.shape
    return np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(tokens, heads * head_dim)


def plain_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, return_weights: bool = False):
    """softmax(q k^T / sqrt(d)) v for one head."""
    q64 = np.asarray(q, dtype=np.float64)
    k64 = np.asarray(k, dtype=np.float64)
    v64 = np.asarray(v, dtype=np.float64)
    if q64.shape[1] != k64.shape[1] or k64.shape[0] != v64.shape[0]:
        raise ValueError(
            f"plain_attention: inconsistent shapes q={q64.shape} k={k64.shape} v={v64.shape}"
        )
    s = q64 @ k64.T
    s /= math.sqrt(q64.shape[1])
    s -= s.max(axis=1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=1, keepdims=True)
    out = (s @ v64).astype(np.float32)
    if return_weights:
        return out, s.astype(np.float32)
    return out


def direct_replace(q_c: np.ndarray, k_s: np.ndarray, v_s: np.ndarray) -> np.ndarray:
    """Content queries attend over style keys/values only."""
    return plain_attention(q_c, k_s, v_s)


def direct_add(q_c, k_c, v_c, k_s, v_s, lam: float) -> np.ndarray:
    """lam * A(q, k_s, v_s) + A(q, k_c, v_c), two independent softmaxes."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"direct_add: lambda must be in [0, 1], got {lam}")
    return lam * plain_attention(q_c, k_s, v_s) + plain_attention(q_c, k_c, v_c)


def mixed_attention(q_c, k_c, v_c, k_s, v_s, lam: float) -> np.ndarray:
    """Joint softmax over the lam-scaled style score block and the content block.

    Inter-class and intra-class scores normalize as a whole, so style keys
    keep their exp(0) share even at lam = 0 (unlike direct_add).
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixed_attention: lambda must be in [0, 1], got {lam}")
    return online_mixed_attention(q_c, [(k_s, v_s, lam), (k_c, v_c, 1.0)])


def adain(f_c: np.ndarray, mu_s: np.ndarray, sigma_s: np.ndarray) -> np.ndarray:
    """Re-normalize features per channel to the target style moments."""
    if np.any(np.asarray(sigma_s) < SIGMA_FLOOR):
        raise ValueError(f"adain: target sigma below floor {SIGMA_FLOOR}")
    mu_c, sigma_c = moments(f_c)
    f64 = np.asarray(f_c, dtype=np.float64)
    out = np.asarray(sigma_s, np.float64) * (f64 - mu_c) / sigma_c + np.asarray(mu_s, np.float64)
    return out.astype(np.float32)


@dataclass
class ControlResult:
    """One layer's attention output plus the intermediates worth capturing."""

    output: np.ndarray  # tokens x model_dim, before the output projection
    features: np.ndarray  # features actually projected to Q/K/V (post-AdaIN for nmsa)
    keys: np.ndarray  # heads x tokens x head_dim, content side
    values: np.ndarray
    weights: np.ndarray | None = None  # heads x tokens x keys, plain path only


def apply_control(
    control: AttentionControl,
    layer_index: int,
    f_c: np.ndarray,
    qkv: tuple[np.ndarray, np.ndarray, np.ndarray],
    heads: int,
    style: StyleStatistics | None,
    capture_weights: bool = False,
) -> ControlResult:
    """Project features to per-head Q/K/V and run the selected mechanism."""
    if control is None:
        control = AttentionControl("none")
    if control.mode != "none" and style is None:
        raise ValueError(f"apply_control: mode {control.mode!r} requires style statistics")
    f = f_c
    if control.mode == "nmsa":
        f = adain(f_c, style.mu[layer_index], style.sigma[layer_index])
    wq, wk, wv = qkv
    q = split_heads((f.astype(np.float64) @ wq.astype(np.float64)).astype(np.float32), heads)
    k = split_heads((f.astype(np.float64) @ wk.astype(np.float64)).astype(np.float32), heads)
    v = split_heads((f.astype(np.float64) @ wv.astype(np.float64)).astype(np.float32), heads)

    if control.mode != "none":
        k_s = style.keys[layer_index]
        v_s = style.values[layer_index]
        if k_s.shape[0] != heads or k_s.shape[2] != q.shape[2]:
            raise ValueError(
                f"apply_control: style stats shape {k_s.shape} does not match "
                f"{heads} heads with head_dim {q.shape[2]}"
            )

    out_heads = []
    weights = [] if capture_weights and control.mode == "none" else None
    for h in range(heads):
        if control.mode == "none":
            if weights is not None:
                o, w = plain_attention(q[h], k[h], v[h], return_weights=True)
                weights.append(w)
            else:
                o = plain_attention(q[h], k[h], v[h])
        elif control.mode == "direct_replace":
            o = direct_replace(q[h], k_s[h], v_s[h])
        elif control.mode == "direct_add":
            o = direct_add(q[h], k[h], v[h], k_s[h], v_s[h], control.lam)
        else:  # msa / nmsa share the joint-softmax mixture
            o = mixed_attention(q[h], k[h], v[h], k_s[h], v_s[h], control.lam)
        out_heads.append(o)

    return ControlResult(
        output=merge_heads(np.stack(out_heads)),
        features=f,
        keys=k,
        values=v,
        weights=np.stack(weights) if weights else None,
    )


def stats_to_bytes(stats: StyleStatistics) -> bytes:
    """Serialize statistics to the little-endian "NMSA" container."""
    parts = [
        STATS_MAGIC,
        struct.pack("<I", STATS_VERSION),
        struct.pack("<Q", stats.fingerprint),
        struct.pack("<I", stats.timestep),
        struct.pack("<I", stats.layers),
    ]
    for k, v, mu, sigma in zip(stats.keys, stats.values, stats.mu, stats.sigma):
        heads, tokens, head_dim = k.shape
        parts.append(struct.pack("<3I", heads, tokens, head_dim))
        parts.append(np.ascontiguousarray(k, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(v, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(mu, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(sigma, dtype="<f4").tobytes())
    return b"".join(parts)


def stats_from_bytes(data: bytes) -> StyleStatistics:
    """Parse the "NMSA" container; round-trips stats_to_bytes bit-exactly."""
    if data[:4] != STATS_MAGIC:
        raise ValueError("style statistics: bad magic")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != STATS_VERSION:
        raise ValueError(f"style statistics: unsupported version {version}")
    (fingerprint,) = struct.unpack_from("<Q", data, 8)
    timestep, layer_count = struct.unpack_from("<2I", data, 16)
    off = 24
    keys, values, mus, sigmas = [], [], [], []

    def take(count):
        nonlocal off
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).copy()
        off += 4 * count
        return arr

    for _ in range(layer_count):
        heads, tokens, head_dim = struct.unpack_from("<3I", data, off)
        off += 12
        keys.append(take(heads * tokens * head_dim).reshape(heads, tokens, head_dim))
        values.append(take(heads * tokens * head_dim).reshape(heads, tokens, head_dim))
        mus.append(take(heads * head_dim))
        sigmas.append(take(heads * head_dim))
    if off != len(data):
        raise ValueError("style statistics: trailing bytes in container")
    return StyleStatistics(
        keys=keys, values=values, mu=mus, sigma=sigmas,
        timestep=timestep, fingerprint=fingerprint,
    )


def save_statistics(stats: StyleStatistics, path: str) -> None:
    """Write the container atomically (temp file, then rename)."""
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(stats_to_bytes(stats))
    os.replace(tmp, path)


def load_statistics(path: str) -> StyleStatistics:
    with open(path, "rb") as fh:
        return stats_from_bytes(fh.read())
