"""Image I/O and the fixed affine pixel/latent map standing in for a VAE.

PPM P6 is the canonical format: hand-rolled, bit-exact, dependency-free.
PNG support is a convenience routed through Pillow.  All writes go to a
temp file first and rename into place so a failure never leaves a torn file.
"""

from __future__ import annotations

import math
import os

import numpy as np
from PIL import Image

LUMA = (0.299, 0.587, 0.114)


def read_ppm(data: bytes) -> np.ndarray:
    """Parse binary P6 bytes to an h x w x 3 uint8 buffer."""
    if data[:2] != b"P6":
        raise ValueError("not a P6 PPM file")
    pos = 2
    fields = []

    def skip_ws(p):
        while p < len(data):
            if data[p : p + 1].isspace():
                p += 1
            elif data[p : p + 1] == b"#":
                while p < len(data) and data[p : p + 1] != b"\n":
                    p += 1
            else:
                break
        return p

    while len(fields) < 3:
        pos = skip_ws(pos)
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PPM header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"unsupported PPM maxval {maxval}")
    need = w * h * 3
    raw = data[pos : pos + need]
    if len(raw) != need:
        raise ValueError("truncated PPM pixel data")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).copy()


def atomic_write_bytes(path: str, payload: bytes) -> None:
    tmp = f"{path}.tmp-{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_ppm(buffer: np.ndarray, path: str) -> None:
    """Write `P6\\n<w> <h>\\n255\\n` + raw RGB, atomically."""
    h, w, c = buffer.shape
    if c != 3 or buffer.dtype != np.uint8:
        raise ValueError("write_ppm expects an h x w x 3 uint8 buffer")
    atomic_write_bytes(path, b"P6\n%d %d\n255\n" % (w, h) + buffer.tobytes())


def write_png(buffer: np.ndarray, path: str) -> None:
    tmp = f"{path}.tmp-{os.getpid()}"
    try:
        Image.fromarray(buffer, "RGB").save(tmp, format="PNG")
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_image(path: str) -> np.ndarray:
    """Load a P6 PPM or RGB PNG as an h x w x 3 uint8 buffer."""
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head[:2] == b"P6":
        with open(path, "rb") as fh:
            return read_ppm(fh.read())
    if head == b"\x89PNG\r\n\x1a\n":
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    raise ValueError(f"unsupported image format in {path}")


def write_image(buffer: np.ndarray, path: str, fmt: str) -> None:
    if fmt == "ppm":
        write_ppm(buffer, path)
    elif fmt == "png":
        write_png(buffer, path)
    else:
        raise ValueError(f"unsupported image format {fmt!r}")


def box_average(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Average input pixels per output cell; degenerates to pick-nearest upscaling."""
    h, w = img.shape[:2]
    out = np.empty((out_h, out_w) + img.shape[2:], dtype=np.float64)
    for i in range(out_h):
        r0 = (i * h) // out_h
        r1 = max(r0 + 1, ((i + 1) * h) // out_h)
        for j in range(out_w):
            c0 = (j * w) // out_w
            c1 = max(c0 + 1, ((j + 1) * w) // out_w)
            out[i, j] = img[r0:r1, c0:c1].mean(axis=(0, 1))
    return out


def load_style_image(path: str, grid_h: int, grid_w: int, channels: int) -> np.ndarray:
    """Resize by box averaging, then map pixels affinely into latent channels.

    RGB fills the first three channels scaled to [-1, 1]; any further
    channels carry the luminance under the same affine map.
    """
    img = read_image(path).astype(np.float64)
    small = box_average(img, grid_h, grid_w)
    z = np.empty((grid_h, grid_w, channels), dtype=np.float64)
    n_rgb = min(3, channels)
    z[:, :, :n_rgb] = small[:, :, :n_rgb] * (2.0 / 255.0) - 1.0
    if channels > 3:
        lum = LUMA[0] * small[:, :, 0] + LUMA[1] * small[:, :, 1] + LUMA[2] * small[:, :, 2]
        z[:, :, 3:] = (lum * (2.0 / 255.0) - 1.0)[:, :, None]
    return z.astype(np.float32)


def decode_latent(z: np.ndarray) -> np.ndarray:
    """Inverse affine map: first three channels from [-1, 1] to RGB bytes."""
    h, w, c = z.shape
    if c >= 3:
        rgb = z[:, :, :3].astype(np.float64)
    else:
        rgb = np.repeat(z[:, :, :1].astype(np.float64), 3, axis=2)
    v = (rgb + 1.0) * 0.5 * 255.0
    v = np.clip(np.floor(v + 0.5), 0.0, 255.0)  # round half up
    return v.astype(np.uint8)
