"""Training-free stylized generation on a toy consistency-model sampler."""

from .cli import RunConfig, parse_config, run
from .denoiser import (
    BoundDenoiser,
    DenoiserConfig,
    DenoiserWeights,
    FeatureTaps,
    config_fingerprint,
    embed_prompt,
    embed_timestep,
    forward,
    init_weights,
)
from .diffusion import (
    NoiseSchedule,
    add_noise,
    boundary_coeffs,
    build_schedule,
    consistency_apply,
    lcm_sample,
    lcm_timesteps,
)
from .imageio import (
    box_average,
    decode_latent,
    load_style_image,
    read_image,
    read_ppm,
    write_image,
    write_ppm,
)
from .numerics import Rng, fnv1a64, gaussian, moments, online_mixed_attention, pca_top3
from .pipeline import (
    CONTROL_ORDER,
    GenerationRequest,
    MetricsRow,
    ablate,
    content_score,
    extract_style_statistics,
    generate,
    generate_traced,
    pca_feature_image,
    probe_noise_similarity,
    style_score,
)
from .style_attention import (
    AttentionControl,
    StyleStatistics,
    adain,
    direct_add,
    direct_replace,
    load_statistics,
    mixed_attention,
    plain_attention,
    save_statistics,
    stats_from_bytes,
    stats_to_bytes,
)

__all__ = [
    "AttentionControl",
    "BoundDenoiser",
    "CONTROL_ORDER",
    "DenoiserConfig",
    "DenoiserWeights",
    "FeatureTaps",
    "GenerationRequest",
    "MetricsRow",
    "NoiseSchedule",
    "Rng",
    "RunConfig",
    "StyleStatistics",
    "ablate",
    "adain",
    "add_noise",
    "boundary_coeffs",
    "box_average",
    "build_schedule",
    "config_fingerprint",
    "consistency_apply",
    "content_score",
    "decode_latent",
    "direct_add",
    "direct_replace",
    "embed_prompt",
    "embed_timestep",
    "extract_style_statistics",
    "fnv1a64",
    "forward",
    "gaussian",
    "generate",
    "generate_traced",
    "init_weights",
    "lcm_sample",
    "lcm_timesteps",
    "load_statistics",
    "load_style_image",
    "mixed_attention",
    "moments",
    "online_mixed_attention",
    "parse_config",
    "pca_feature_image",
    "pca_top3",
    "plain_attention",
    "probe_noise_similarity",
    "read_image",
    "read_ppm",
    "run",
    "save_statistics",
    "stats_from_bytes",
    "stats_to_bytes",
    "style_score",
    "write_image",
    "write_ppm",
]
