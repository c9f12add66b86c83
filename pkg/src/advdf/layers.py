"""Neural-net layer primitives with exact hand-written backward passes.

Layout is channels-last throughout: 2-D activations are (B, H, W, C) and
1-D activations are (B, L, C), so convolutions reduce to im2col + one BLAS
matmul. Tie-breaking in max pooling and max-feature-map routes the gradient
to the first (lowest-index) maximizer.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


# ---------------------------------------------------------------------------
# 2-D convolution, stride 1, zero padding. Weights: (Cin * kh * kw, Cout).


def conv2d_fwd(x, w_mat, b, kernel=(3, 3), pad=1):
    B, H, W, Cin = x.shape
    kh, kw = kernel
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    Ho, Wo = H + 2 * pad - kh + 1, W + 2 * pad - kw + 1
    # windows: (B, Ho, Wo, Cin, kh, kw) -> cols flattened in (Cin, kh, kw) order
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    cols = np.ascontiguousarray(windows).reshape(B * Ho * Wo, Cin * kh * kw)
    y = (cols @ w_mat + b).reshape(B, Ho, Wo, -1)
    return y, (cols, x.shape, kernel, pad)


def conv2d_bwd(g, w_mat, cache):
    cols, x_shape, (kh, kw), pad = cache
    B, H, W, Cin = x_shape
    Cout = g.shape[-1]
    g2 = g.reshape(-1, Cout)
    gw = cols.T @ g2
    gb = g2.sum(axis=0)
    gcols = (g2 @ w_mat.T).reshape(B, g.shape[1], g.shape[2], Cin, kh, kw)
    gxp = np.zeros((B, H + 2 * pad, W + 2 * pad, Cin))
    Ho, Wo = g.shape[1], g.shape[2]
    for di in range(kh):
        for dj in range(kw):
            gxp[:, di: di + Ho, dj: dj + Wo, :] += gcols[:, :, :, :, di, dj]
    gx = gxp[:, pad: pad + H, pad: pad + W, :] if pad else gxp
    return gx, gw, gb


# ---------------------------------------------------------------------------
# 1-D strided convolution, no padding. Weights: (Cin * K, Cout).


def conv1d_out_length(n: int, kernel: int, stride: int) -> int:
    if n < kernel:
        raise ValueError(f"input length {n} shorter than kernel {kernel}")
    return (n - kernel) // stride + 1


def conv1d_fwd(x, w_mat, b, kernel, stride):
    B, L, Cin = x.shape
    Lo = conv1d_out_length(L, kernel, stride)
    windows = sliding_window_view(x, kernel, axis=1)[:, :: stride]  # (B, Lo, Cin, K)
    cols = np.ascontiguousarray(windows).reshape(B * Lo, Cin * kernel)
    y = (cols @ w_mat + b).reshape(B, Lo, -1)
    return y, (cols, x.shape, kernel, stride)


def conv1d_bwd(g, w_mat, cache):
    cols, (B, L, Cin), kernel, stride = cache
    Lo, Cout = g.shape[1], g.shape[2]
    g2 = g.reshape(-1, Cout)
    gw = cols.T @ g2
    gb = g2.sum(axis=0)
    gcols = (g2 @ w_mat.T).reshape(B, Lo, Cin, kernel)
    gx = _col2im_1d(gcols, L, stride)
    return gx, gw, gb


def _col2im_1d(gcols, n: int, stride: int) -> np.ndarray:
    """Adjoint of strided window extraction, vectorized over hop-aligned chunks.

    Window position k of frame t lands at sample stride*t + k; splitting k as
    c*stride + r maps chunk c of every frame onto rows t+c of the signal
    viewed as (n_rows, stride) blocks.
    """
    B, Lo, Cin, K = gcols.shape
    n_rows = -(-n // stride) + -(-K // stride)
    buf = np.zeros((B, n_rows, stride, Cin))
    for c in range(-(-K // stride)):
        chunk = gcols[:, :, :, c * stride: (c + 1) * stride]  # (B, Lo, Cin, <=stride)
        buf[:, c: c + Lo, : chunk.shape[3], :] += chunk.transpose(0, 1, 3, 2)
    return buf.reshape(B, -1, Cin)[:, :n, :]


# ---------------------------------------------------------------------------
# Nonlinearities and pooling


def mfm_fwd(x):
    """Max-feature-map over adjacent channel pairs; halves the channel count."""
    a = x[..., 0::2]
    b = x[..., 1::2]
    take_a = a >= b  # ties go to the lower channel index
    return np.where(take_a, a, b), take_a


def mfm_bwd(g, take_a):
    out = np.zeros(g.shape[:-1] + (2 * g.shape[-1],))
    out[..., 0::2] = np.where(take_a, g, 0.0)
    out[..., 1::2] = np.where(take_a, 0.0, g)
    return out


def maxpool2_fwd(x):
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""
    B, H, W, C = x.shape
    Ho, Wo = H // 2, W // 2
    blocks = x[:, : 2 * Ho, : 2 * Wo, :].reshape(B, Ho, 2, Wo, 2, C)
    quads = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(B, Ho, Wo, C, 4)
    idx = np.argmax(quads, axis=-1)  # first maximizer wins ties
    y = np.take_along_axis(quads, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def maxpool2_bwd(g, cache):
    idx, (B, H, W, C) = cache
    Ho, Wo = H // 2, W // 2
    gquads = np.zeros((B, Ho, Wo, C, 4))
    np.put_along_axis(gquads, idx[..., None], g[..., None], axis=-1)
    gx = np.zeros((B, H, W, C))
    gx[:, : 2 * Ho, : 2 * Wo, :] = (
        gquads.reshape(B, Ho, Wo, C, 2, 2)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(B, 2 * Ho, 2 * Wo, C)
    )
    return gx


def relu_fwd(x):
    return np.maximum(x, 0.0), x > 0


def relu_bwd(g, mask):
    return np.where(mask, g, 0.0)


def gap_fwd(x, axes):
    """Global average pool over the given spatial axes."""
    size = 1
    for ax in axes:
        size *= x.shape[ax]
    return x.mean(axis=axes), (x.shape, axes, size)


def gap_bwd(g, cache):
    shape, axes, size = cache
    expanded = np.expand_dims(g, axes)
    return np.broadcast_to(expanded / size, shape).copy()


def affine_fwd(x, w, b):
    return x @ w + b, x


def affine_bwd(g, w, x):
    return g @ w.T, x.T @ g, g.sum(axis=0)
