"""Independent reference implementations used as test oracles.

Everything here is written the dense, obvious way so the package kernels
have something genuinely separate to agree with.  No package imports.
"""

import numpy as np


def naive_mixed_attention(q, blocks):
    """Concatenate every scaled score block, one softmax, one dense matmul."""
    q64 = q.astype(np.float64)
    scale = 1.0 / np.sqrt(q.shape[1])
    scores = np.concatenate(
        [lam * (q64 @ k.astype(np.float64).T) * scale for k, v, lam in blocks],
        axis=1,
    )
    scores = scores - scores.max(axis=1, keepdims=True)
    w = np.exp(scores)
    w = w / w.sum(axis=1, keepdims=True)
    v_all = np.concatenate([v.astype(np.float64) for k, v, lam in blocks], axis=0)
    return (w @ v_all).astype(np.float32)


def naive_attention(q, k, v):
    """Plain softmax(q k^T / sqrt(d)) v, one dense pass in float64."""
    q64 = q.astype(np.float64)
    k64 = k.astype(np.float64)
    scores = q64 @ k64.T / np.sqrt(q.shape[1])
    scores = scores - scores.max(axis=1, keepdims=True)
    w = np.exp(scores)
    w = w / w.sum(axis=1, keepdims=True)
    return (w @ v.astype(np.float64)).astype(np.float32)


def pixel_loop_box_average(img, out_h, out_w):
    """Per-cell box filter written as explicit pixel loops."""
    h, w = img.shape[:2]
    out = np.zeros((out_h, out_w, img.shape[2]), dtype=np.float64)
    for i in range(out_h):
        for j in range(out_w):
            r0 = (i * h) // out_h
            r1 = max(r0 + 1, ((i + 1) * h) // out_h)
            c0 = (j * w) // out_w
            c1 = max(c0 + 1, ((j + 1) * w) // out_w)
            acc = np.zeros(img.shape[2], dtype=np.float64)
            count = 0
            for r in range(r0, r1):
                for c in range(c0, c1):
                    acc += img[r, c]
                    count += 1
            out[i, j] = acc / count
    return out
