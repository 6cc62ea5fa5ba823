"""Dense float32 tensor primitives for the stylized-generation engine.

Storage is 32-bit row-major everywhere; arithmetic runs in 64-bit and is
rounded back to 32-bit on the way out. Randomness comes from a splitmix64
counter stream paired with Box-Muller, so any two builds of this engine
reproduce each other's streams bit-for-bit given the same seed.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

SIGMA_FLOOR = 1e-5


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & MASK64
    return h


# Sub-seed tags: independent streams are derived as Rng(seed ^ tag), one tag
# per purpose, each tag the FNV-1a hash of its purpose name.
TAG_WEIGHTS = fnv1a64(b"weights")
TAG_SAMPLING = fnv1a64(b"sampling")
TAG_STYLE_EXTRACT = fnv1a64(b"style-extract")
TAG_NOISE_PROBE = fnv1a64(b"noise-probe")
_TAG_PCA_START = fnv1a64(b"pca-start")


def _splitmix_output(z: np.ndarray) -> np.ndarray:
    """Finalizer of splitmix64, vectorized over uint64 counters."""
    # the multiplies wrap mod 2**64 by design; silence the scalar-overflow warning
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class Rng:
    """splitmix64 stream with one cached Gaussian for Box-Muller pairing.

    The state is a plain 64-bit counter, so a block of n draws can be
    produced vectorized and matches n sequential draws exactly.
    """

    def __init__(self, seed: int):
        self.state = seed & MASK64
        self.cache: float | None = None

    @classmethod
    def for_purpose(cls, seed: int, tag: int) -> "Rng":
        """Derive the stream for one purpose: seed XOR purpose tag."""
        return cls((seed & MASK64) ^ tag)

    def next_u64(self) -> int:
        self.state = (self.state + _SPLITMIX_GAMMA) & MASK64
        return int(_splitmix_output(np.uint64(self.state)))

    def uniform(self) -> float:
        """Uniform draw in [0, 1) with 53 bits of resolution."""
        return (self.next_u64() >> 11) * 2.0**-53

    def _u64_block(self, n: int) -> np.ndarray:
        counters = np.uint64(self.state) + np.uint64(_SPLITMIX_GAMMA) * np.arange(
            1, n + 1, dtype=np.uint64
        )
        self.state = (self.state + n * _SPLITMIX_GAMMA) & MASK64
        return _splitmix_output(counters)

    def gaussian_block(self, n: int) -> np.ndarray:
        """n standard normal draws (float64), honoring the pair cache."""
        out = np.empty(n, dtype=np.float64)
        filled = 0
        if self.cache is not None and n > 0:
            out[0] = self.cache
            self.cache = None
            filled = 1
        pairs = (n - filled + 1) // 2
        if pairs:
            words = self._u64_block(2 * pairs)
            u1 = (words[0::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53
            u2 = (words[1::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53
            r = np.sqrt(-2.0 * np.log1p(-u1))  # 1-u1 in (0,1], log is finite
            theta = (2.0 * np.pi) * u2
            z = np.empty(2 * pairs, dtype=np.float64)
            z[0::2] = r * np.cos(theta)
            z[1::2] = r * np.sin(theta)
            take = n - filled
            out[filled:] = z[:take]
            if take < 2 * pairs:
                self.cache = float(z[-1])
        return out


def gaussian(rng: Rng, shape) -> np.ndarray:
    """Tensor of standard normal float32 samples, row-major fill order."""
    shape = (shape,) if isinstance(shape, int) else tuple(shape)
    n = int(np.prod(shape)) if shape else 1
    return rng.gaussian_block(n).astype(np.float32).reshape(shape)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product, accumulated in float64 and rounded to float32."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with row-max subtraction; rows sum to 1."""
    s = np.asarray(m, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] < 1:
        raise ValueError(f"softmax_rows: expected r x c matrix, got {s.shape}")
    s = s - s.max(axis=1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=1, keepdims=True)
    return s.astype(np.float32)


def moments(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel population mean and std of a tokens x channels tensor.

    The std is floored at SIGMA_FLOOR so constant channels stay divisible.
    """
    f = np.asarray(f)
    if f.ndim != 2 or f.shape[0] < 1:
        raise ValueError(f"moments: expected tokens x channels tensor, got {f.shape}")
    f64 = f.astype(np.float64)
    mu = f64.mean(axis=0)
    sigma = np.sqrt(np.mean((f64 - mu) ** 2, axis=0))
    sigma = np.maximum(sigma, SIGMA_FLOOR)
    return mu.astype(np.float32), sigma.astype(np.float32)


def top_eigenvectors(
    sym: np.ndarray, k: int, iters: int = 100, tol: float = 1e-6
) -> np.ndarray:
    """Top-k eigenvectors of a symmetric matrix by power iteration.

    Deflates after each component and re-orthogonalizes every iterate
    against the components already found. Each vector's sign is fixed so
    its largest-magnitude entry is positive; ties resolve to the first
    index. Returns an n x k matrix of unit columns.
    """
    a = np.asarray(sym, dtype=np.float64).copy()
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"top_eigenvectors: expected square matrix, got {a.shape}")
    start_rng = Rng.for_purpose(0, _TAG_PCA_START)
    vecs = np.zeros((n, k), dtype=np.float64)
    for j in range(k):
        v = start_rng.gaussian_block(n)
        v /= np.linalg.norm(v)
        for _ in range(iters):
            w = a @ v
            if j:
                w -= vecs[:, :j] @ (vecs[:, :j].T @ w)
            norm = np.linalg.norm(w)
            if norm <= tol:
                break  # deflated matrix is (numerically) zero along v
            w /= norm
            if np.linalg.norm(w - v) < tol:
                v = w
                break
            v = w
        peak = int(np.argmax(np.abs(v)))
        if v[peak] < 0:
            v = -v
        vecs[:, j] = v
        lam = float(v @ (a @ v))
        a -= lam * np.outer(v, v)
    return vecs


def pca_top3(f: np.ndarray) -> np.ndarray:
    """Project tokens onto the top-3 principal axes of their covariance."""
    f = np.asarray(f)
    if f.ndim != 2 or f.shape[0] < 4 or f.shape[1] < 3:
        raise ValueError(f"pca_top3: need at least 4 tokens and 3 channels, got {f.shape}")
    x = f.astype(np.float64)
    x = x - x.mean(axis=0)
    cov = (x.T @ x) / x.shape[0]
    vecs = top_eigenvectors(cov, 3)
    return (x @ vecs).astype(np.float32)


def online_mixed_attention(
    q: np.ndarray, blocks: list[tuple[np.ndarray, np.ndarray, float]]
) -> np.ndarray:
    """Blockwise attention fused through a single online-softmax pass.

    Equivalent to scaling each score block by its coefficient, concatenating
    all blocks, row-softmaxing, and multiplying by the stacked values, but
    never materializes the concatenation: each block folds into a running
    row-max, accumulator, and normalizer.
    """
    if not blocks:
        raise ValueError("online_mixed_attention: empty block list")
    q64 = np.asarray(q, dtype=np.float64)
    if q64.ndim != 2:
        raise ValueError(f"online_mixed_attention: query must be 2-D, got {q64.shape}")
    t, d = q64.shape
    v_dim = np.asarray(blocks[0][1]).shape[1]
    inv_sqrt_d = 1.0 / math.sqrt(d)
    run_max = np.full(t, -np.inf)
    acc = np.zeros((t, v_dim), dtype=np.float64)
    denom = np.zeros(t, dtype=np.float64)
    for k, v, scale in blocks:
        k64 = np.asarray(k, dtype=np.float64)
        v64 = np.asarray(v, dtype=np.float64)
        if k64.shape[1] != d or v64.shape != (k64.shape[0], v_dim):
            raise ValueError(
                f"online_mixed_attention: block shapes {k64.shape}/{v64.shape} "
                f"inconsistent with query {q64.shape}"
            )
        s = q64 @ k64.T
        s *= scale * inv_sqrt_d
        new_max = np.maximum(run_max, s.max(axis=1))
        s -= new_max[:, None]
        np.exp(s, out=s)
        corr = np.exp(run_max - new_max)  # zero on the first block
        acc *= corr[:, None]
        acc += s @ v64
        denom *= corr
        denom += s.sum(axis=1)
        run_max = new_max
    return (acc / denom[:, None]).astype(np.float32)
