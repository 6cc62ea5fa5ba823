"""Command-line harness: config file, subcommands, CSV and image artifacts.

Every artifact is deterministic given config, flags, and seeds; CSV runtime
columns are the single exception.  Stats files and CSVs carry the config
fingerprint so mismatched artifacts fail loudly instead of silently.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from .denoiser import (
    DenoiserConfig,
    config_fingerprint,
    embed_prompt,
    forward,
    init_weights,
)
from .diffusion import add_noise, build_schedule
from .imageio import (
    atomic_write_bytes,
    decode_latent,
    load_style_image,
    write_image,
)
from .numerics import Rng, TAG_STYLE_EXTRACT, gaussian
from .pipeline import (
    DEFAULT_PROBE_TIMESTEPS,
    AttentionControl,
    GenerationRequest,
    ablate,
    content_score,
    extract_style_statistics,
    generate,
    generate_traced,
    pca_feature_image,
    probe_noise_similarity,
    style_score,
)
from .style_attention import MODES, STATS_MAGIC, load_statistics, save_statistics

PROBE_STEP_COUNTS = (1, 2, 4, 6, 8)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    model_seed: int = 0
    grid_h: int = 16
    grid_w: int = 16
    channels: int = 4
    model_dim: int = 64
    heads: int = 4
    layers: int = 4
    vocab_slots: int = 4096
    timesteps: int = 1000
    steps: int = 6
    control: str = "nmsa"
    lam: float = 1.0
    extract_t: int = 200
    output_dir: str = "."
    image_format: str = "ppm"

    def __post_init__(self):
        positive = (
            "grid_h", "grid_w", "channels", "model_dim", "heads", "layers",
            "vocab_slots", "timesteps", "steps",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.model_seed < 0:
            raise ConfigError(f"model_seed must be >= 0, got {self.model_seed}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must be in [0, 1], got {self.lam}")
        if not 0 <= self.extract_t <= self.timesteps:
            raise ConfigError(
                f"extract_t must be in [0, {self.timesteps}], got {self.extract_t}"
            )
        if self.control not in MODES:
            raise ConfigError(f"control must be one of {MODES}, got {self.control!r}")
        if self.image_format not in ("ppm", "png"):
            raise ConfigError(f"image_format must be ppm or png, got {self.image_format!r}")


# config file key -> (attribute, parser)
_CONFIG_KEYS = {
    "model_seed": ("model_seed", int),
    "grid_h": ("grid_h", int),
    "grid_w": ("grid_w", int),
    "channels": ("channels", int),
    "model_dim": ("model_dim", int),
    "heads": ("heads", int),
    "layers": ("layers", int),
    "vocab_slots": ("vocab_slots", int),
    "timesteps": ("timesteps", int),
    "steps": ("steps", int),
    "control": ("control", str),
    "lambda": ("lam", float),
    "extract_t": ("extract_t", int),
    "output_dir": ("output_dir", str),
    "image_format": ("image_format", str),
}


def parse_config(path: str) -> RunConfig:
    """Line-oriented `key = value` with `#` comments; unknown keys are errors."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    values = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        attr, cast = _CONFIG_KEYS[key]
        try:
            values[attr] = cast(value)
        except ValueError:
            raise ConfigError(
                f"{path}:{lineno}: invalid {cast.__name__} for {key}: {value!r}"
            ) from None
    return RunConfig(**values)


def _denoiser_config(cfg: RunConfig) -> DenoiserConfig:
    return DenoiserConfig(
        grid_h=cfg.grid_h,
        grid_w=cfg.grid_w,
        channels=cfg.channels,
        model_dim=cfg.model_dim,
        heads=cfg.heads,
        layers=cfg.layers,
        vocab_slots=cfg.vocab_slots,
    )


def _setup(cfg: RunConfig):
    dcfg = _denoiser_config(cfg)
    return dcfg, init_weights(cfg.model_seed, dcfg), build_schedule(cfg.timesteps)


def _is_stats_file(path: str) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4) == STATS_MAGIC


def _style_latent(path: str, cfg: RunConfig) -> np.ndarray:
    if _is_stats_file(path):
        raise ValueError(f"{path} is a statistics file; this command needs a style image")
    return load_style_image(path, cfg.grid_h, cfg.grid_w, cfg.channels)


def _load_style(path: str, cfg: RunConfig, dcfg: DenoiserConfig, weights, schedule):
    """Statistics file, or style image with an implicit extraction pass."""
    if _is_stats_file(path):
        stats = load_statistics(path)
        want = config_fingerprint(dcfg)
        if stats.fingerprint != want:
            raise ValueError(
                f"{path} was extracted under config 0x{stats.fingerprint:016x}, "
                f"current config is 0x{want:016x}"
            )
        return stats
    latent = load_style_image(path, cfg.grid_h, cfg.grid_w, cfg.channels)
    return extract_style_statistics(
        weights, schedule, latent, cfg.extract_t, seed=cfg.model_seed
    )


def _out_path(explicit: str | None, cfg: RunConfig, default_name: str) -> str:
    if explicit:
        return explicit
    os.makedirs(cfg.output_dir, exist_ok=True)
    return os.path.join(cfg.output_dir, default_name)


def _image_fmt(path: str, cfg: RunConfig) -> str:
    if path.endswith(".png"):
        return "png"
    if path.endswith(".ppm"):
        return "ppm"
    return cfg.image_format


def _write_csv(path: str, fingerprint: int, meta: str, header: str, rows) -> None:
    head = f"# fingerprint=0x{fingerprint:016x}"
    if meta:
        head += f" {meta}"
    atomic_write_bytes(path, ("\n".join([head, header, *rows]) + "\n").encode())


def cmd_extract(args, cfg: RunConfig) -> int:
    dcfg, weights, schedule = _setup(cfg)
    latent = _style_latent(args.style, cfg)
    t = args.t if args.t is not None else cfg.extract_t
    stats = extract_style_statistics(weights, schedule, latent, t, seed=cfg.model_seed)
    stats.style_id = os.path.basename(args.style)
    stem = os.path.splitext(os.path.basename(args.style))[0]
    out = _out_path(args.output, cfg, f"{stem}.nmsa")
    save_statistics(stats, out)
    print(out)
    return 0


def cmd_generate(args, cfg: RunConfig) -> int:
    dcfg, weights, schedule = _setup(cfg)
    stats = _load_style(args.style, cfg, dcfg, weights, schedule)
    control = AttentionControl(
        args.control if args.control else cfg.control,
        args.lam if args.lam is not None else cfg.lam,
    )
    steps = args.steps if args.steps is not None else cfg.steps
    req = GenerationRequest(args.prompt, stats, steps, control, args.seed)
    z = generate(weights, schedule, req)
    write_image(decode_latent(z), args.output, _image_fmt(args.output, cfg))
    print(args.output)
    return 0


def cmd_ablate(args, cfg: RunConfig) -> int:
    dcfg, weights, schedule = _setup(cfg)
    latent = _style_latent(args.style, cfg)
    rows = ablate(
        weights,
        schedule,
        args.prompt,
        latent,
        seeds=range(args.seeds),
        steps=cfg.steps,
        lam=cfg.lam,
        extract_t=cfg.extract_t,
        extract_seed=cfg.model_seed,
    )
    out = _out_path(args.output, cfg, "metrics.csv")
    _write_csv(
        out,
        config_fingerprint(dcfg),
        f"seeds={args.seeds}",
        "control,lambda,seed,style_score,content_score,runtime_ms",
        [
            f"{r.control},{r.lam:.6f},{r.seed},{r.style_score:.6f},"
            f"{r.content_score:.6f},{r.runtime_ms:.3f}"
            for r in rows
        ],
    )
    print(out)
    return 0


def cmd_probe_timesteps(args, cfg: RunConfig) -> int:
    dcfg, weights, schedule = _setup(cfg)
    latent = _style_latent(args.style, cfg)
    seeds = list(range(args.seeds))
    sims = dict(probe_noise_similarity(weights, schedule, latent, DEFAULT_PROBE_TIMESTEPS, seeds))
    control = AttentionControl(cfg.control, cfg.lam)
    baselines = {}
    for seed in seeds:
        req = GenerationRequest(args.prompt, None, cfg.steps, AttentionControl("none"), seed)
        baselines[seed] = generate(weights, schedule, req)
    rows = []
    for t in DEFAULT_PROBE_TIMESTEPS:
        stats = extract_style_statistics(
            weights, schedule, latent, t, args.prompt, cfg.model_seed
        )
        s_sum = c_sum = 0.0
        for seed in seeds:
            req = GenerationRequest(args.prompt, stats, cfg.steps, control, seed)
            z, taps = generate_traced(weights, schedule, req)
            s_sum += style_score(taps, stats)
            c_sum += content_score(z, baselines[seed])
        rows.append(
            f"{t},{sims[t]:.6f},{s_sum / len(seeds):.6f},{c_sum / len(seeds):.6f}"
        )
    out = _out_path(args.output, cfg, "probe_timesteps.csv")
    _write_csv(
        out,
        config_fingerprint(dcfg),
        f"seeds={args.seeds}",
        "t,feature_similarity,style_score,content_score",
        rows,
    )
    print(out)
    return 0


def cmd_probe_steps(args, cfg: RunConfig) -> int:
    dcfg, weights, schedule = _setup(cfg)
    stats = _load_style(args.style, cfg, dcfg, weights, schedule)
    control = AttentionControl(cfg.control, cfg.lam)
    seeds = list(range(args.seeds))
    rows = []
    for n in PROBE_STEP_COUNTS:
        s_sum = c_sum = r_sum = 0.0
        for seed in seeds:
            base = generate(
                weights, schedule,
                GenerationRequest(args.prompt, None, n, AttentionControl("none"), seed),
            )
            req = GenerationRequest(args.prompt, stats, n, control, seed)
            t0 = time.perf_counter()
            z, taps = generate_traced(weights, schedule, req)
            r_sum += (time.perf_counter() - t0) * 1000.0
            s_sum += style_score(taps, stats)
            c_sum += content_score(z, base)
        k = len(seeds)
        rows.append(f"{n},{s_sum / k:.6f},{c_sum / k:.6f},{r_sum / k:.3f}")
    out = _out_path(args.output, cfg, "probe_steps.csv")
    _write_csv(
        out,
        config_fingerprint(dcfg),
        f"seeds={args.seeds}",
        "steps,style_score,content_score,runtime_ms",
        rows,
    )
    print(out)
    return 0


def cmd_pca_viz(args, cfg: RunConfig) -> int:
    dcfg, weights, schedule = _setup(cfg)
    latent = _style_latent(args.style, cfg)
    t = args.t if args.t is not None else cfg.extract_t
    eps = gaussian(Rng.for_purpose(cfg.model_seed, TAG_STYLE_EXTRACT), latent.shape)
    z_t = add_noise(latent, schedule, t, eps)
    _, taps = forward(weights, z_t, t, embed_prompt("", weights), capture=True)
    layer = args.layer if args.layer is not None else len(taps.features) - 1
    img = pca_feature_image(taps, layer)
    buf = np.clip(np.floor(img.astype(np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)
    out = _out_path(args.output, cfg, "pca.ppm")
    write_image(buf, out, _image_fmt(out, cfg))
    print(out)
    return 0


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="nmsa", description="Stylized few-step latent generation.")
    parser.add_argument("--config", default=None, help="path to a key = value config file")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p):
        p.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)

    p = sub.add_parser("extract", help="capture style statistics from an image")
    p.add_argument("style")
    p.add_argument("-t", type=int, default=None, help="extraction timestep")
    p.add_argument("-o", "--output", default=None)
    common(p)

    p = sub.add_parser("generate", help="sample a stylized image")
    p.add_argument("-p", "--prompt", required=True)
    p.add_argument("-s", "--style", required=True, help="stats file or style image")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--control", choices=MODES, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    common(p)

    p = sub.add_parser("ablate", help="score every control over a seed batch")
    p.add_argument("-p", "--prompt", required=True)
    p.add_argument("-s", "--style", required=True, help="style image")
    p.add_argument("--seeds", type=int, required=True)
    p.add_argument("-o", "--output", default=None)
    common(p)

    p = sub.add_parser("probe-timesteps", help="extraction timestep sweep")
    p.add_argument("-p", "--prompt", default="")
    p.add_argument("-s", "--style", required=True, help="style image")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("-o", "--output", default=None)
    common(p)

    p = sub.add_parser("probe-steps", help="sampling step count sweep")
    p.add_argument("-p", "--prompt", required=True)
    p.add_argument("-s", "--style", required=True, help="stats file or style image")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("-o", "--output", default=None)
    common(p)

    p = sub.add_parser("pca-viz", help="top-3 PCA image of captured features")
    p.add_argument("-s", "--style", required=True, help="style image")
    p.add_argument("-t", type=int, default=None, help="capture timestep")
    p.add_argument("--layer", type=int, default=None)
    p.add_argument("-o", "--output", default=None)
    common(p)

    return parser


_COMMANDS = {
    "extract": cmd_extract,
    "generate": cmd_generate,
    "ablate": cmd_ablate,
    "probe-timesteps": cmd_probe_timesteps,
    "probe-steps": cmd_probe_steps,
    "pca-viz": cmd_pca_viz,
}


def run(argv) -> int:
    """Exit codes: 0 success, 1 usage, 2 runtime failure."""
    parser = _build_parser()
    try:
        args = parser.parse_args(list(argv))
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help exits instead of returning
        return 0 if exc.code in (0, None) else 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        config_path = getattr(args, "config", None)
        cfg = parse_config(config_path) if config_path else RunConfig()
        env_seed = os.environ.get("NMSA_SEED")
        if env_seed is not None:
            try:
                seed = int(env_seed)
            except ValueError:
                raise ConfigError(f"NMSA_SEED must be an integer, got {env_seed!r}") from None
            cfg = dataclasses.replace(cfg, model_seed=seed)
        return _COMMANDS[args.command](args, cfg)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))
