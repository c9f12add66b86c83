"""Fused numba kernels for the hot paths.

Two kernel families live here:

* fused conv3x3 + max-feature-map + 2x2-maxpool blocks for SpecNetLite. The
  full-resolution conv activation of the first block is ~130 MB per batch in
  float64; fusing the block avoids ever materializing it.
* sparse triangular-filterbank application. Each filter touches only a
  handful of FFT bins, so a gather/scatter kernel beats the dense matmul.

All kernels are numerically equivalent to the reference numpy routines in
layers.py / features.py (asserted by tests) and replicate their tie-breaking
exactly: MFM ties go to the lower channel, pool ties to the first position
in row-major order. Parallel reductions are ordered so results stay
bit-reproducible.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(parallel=True, cache=True)
def _block_fwd(xp, w3, b):
    """xp: padded (B, H+2, W+2, Cin); w3: (Cin, 3, 3, Cout); b: (Cout,).

    Per output row pair, the conv activations are computed into a small
    row buffer (SIMD over the channel axis) and reduced by MFM + 2x2 pool.
    Winner codes are pos * 2 + pair_member, pos row-major in the window.
    """
    B, Hp, Wp, Cin = xp.shape
    Cout = w3.shape[3]
    H, W = Hp - 2, Wp - 2
    Ho, Wo = H // 2, W // 2
    Cp = Cout // 2
    y = np.empty((B, Ho, Wo, Cp))
    winner = np.empty((B, Ho, Wo, Cp), dtype=np.uint8)
    for bh in prange(B * Ho):
        bb = bh // Ho
        h2 = bh % Ho
        rows = np.empty((2, W, Cout))
        for rr in range(2):
            h = 2 * h2 + rr
            for w in range(W):
                rows[rr, w, :] = b
            for c in range(Cin):
                for di in range(3):
                    for dj in range(3):
                        wt = w3[c, di, dj]
                        for w in range(W):
                            x = xp[bb, h + di, w + dj, c]
                            for o in range(Cout):
                                rows[rr, w, o] += x * wt[o]
        for w2 in range(Wo):
            for oc in range(Cp):
                best = -np.inf
                code = np.uint8(0)
                for pos in range(4):
                    rr = pos >> 1
                    w = 2 * w2 + (pos & 1)
                    for member in range(2):
                        v = rows[rr, w, 2 * oc + member]
                        # strict > keeps the first maximizer: earlier pool
                        # position, then lower channel within the pair
                        if v > best:
                            best = v
                            code = np.uint8(pos * 2 + member)
                y[bb, h2, w2, oc] = best
                winner[bb, h2, w2, oc] = code
    return y, winner


@njit(parallel=True, cache=True)
def _block_bwd(g, winner, xp, w3):
    """Backward of the fused block; returns (gxp, gw, gb).

    Batch items run in parallel; weight-gradient partials are reduced in
    fixed batch order afterwards for bit-reproducibility.
    """
    B, Ho, Wo, Cp = g.shape
    _, Hp, Wp, Cin = xp.shape
    Cout = w3.shape[3]
    gxp = np.zeros(xp.shape)
    gw_part = np.zeros((B, Cin, 3, 3, Cout))
    gb_part = np.zeros((B, Cout))
    for bb in prange(B):
        for h2 in range(Ho):
            for w2 in range(Wo):
                for oc in range(Cp):
                    gv = g[bb, h2, w2, oc]
                    if gv == 0.0:
                        continue
                    code = winner[bb, h2, w2, oc]
                    pos = code >> 1
                    o = 2 * oc + (code & 1)
                    h = 2 * h2 + (pos >> 1)
                    w = 2 * w2 + (pos & 1)
                    gb_part[bb, o] += gv
                    for c in range(Cin):
                        for di in range(3):
                            for dj in range(3):
                                gw_part[bb, c, di, dj, o] += gv * xp[bb, h + di, w + dj, c]
                                gxp[bb, h + di, w + dj, c] += gv * w3[c, di, dj, o]
    gw = np.zeros((Cin, 3, 3, Cout))
    gb = np.zeros(Cout)
    for bb in range(B):
        gw += gw_part[bb]
        gb += gb_part[bb]
    return gxp, gw, gb


def block_fwd(x, w_mat, bias):
    """Fused conv/MFM/pool on (B, H, W, Cin); weights as (Cin*9, Cout)."""
    Cin = x.shape[3]
    Cout = w_mat.shape[1]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    w3 = np.ascontiguousarray(w_mat.reshape(Cin, 3, 3, Cout))
    y, winner = _block_fwd(xp, w3, np.ascontiguousarray(bias))
    return y, (xp, w3, winner)


def block_bwd(g, cache):
    xp, w3, winner = cache
    gxp, gw, gb = _block_bwd(np.ascontiguousarray(g), winner, xp, w3)
    gx = gxp[:, 1:-1, 1:-1, :]
    return gx, gw.reshape(-1, gw.shape[3]), gb


# ---------------------------------------------------------------------------
# Sparse triangular filterbank


@njit(parallel=True, cache=True)
def _fb_fwd(power, starts, widths, weights):
    R, K = power.shape
    F = starts.shape[0]
    out = np.zeros((R, F))
    for r in prange(R):
        for i in range(F):
            acc = 0.0
            s = starts[i]
            for j in range(widths[i]):
                acc += power[r, s + j] * weights[i, j]
            out[r, i] = acc
    return out


@njit(parallel=True, cache=True)
def _fb_vjp(g, starts, widths, weights, n_bins):
    R, F = g.shape
    out = np.zeros((R, n_bins))
    for r in prange(R):
        for i in range(F):
            gv = g[r, i]
            if gv == 0.0:
                continue
            s = starts[i]
            for j in range(widths[i]):
                out[r, s + j] += gv * weights[i, j]
    return out


class SparseFilterbank:
    """Row-compressed view of a (n_bins, n_filters) triangular filter matrix."""

    def __init__(self, B: np.ndarray):
        self.n_bins, self.n_filters = B.shape
        starts = []
        widths = []
        for i in range(self.n_filters):
            nz = np.nonzero(B[:, i])[0]
            if nz.size:
                starts.append(int(nz[0]))
                widths.append(int(nz[-1] - nz[0] + 1))
            else:
                starts.append(0)
                widths.append(0)
        self.starts = np.asarray(starts, dtype=np.int64)
        self.widths = np.asarray(widths, dtype=np.int64)
        max_w = max(1, int(self.widths.max()))
        self.weights = np.zeros((self.n_filters, max_w))
        for i in range(self.n_filters):
            if self.widths[i]:
                self.weights[i, : self.widths[i]] = B[self.starts[i]: self.starts[i] + self.widths[i], i]

    def apply_power(self, power: np.ndarray) -> np.ndarray:
        """(..., n_bins) power spectrum -> (..., n_filters) energies."""
        lead = power.shape[:-1]
        flat = np.ascontiguousarray(power.reshape(-1, self.n_bins))
        out = _fb_fwd(flat, self.starts, self.widths, self.weights)
        return out.reshape(lead + (self.n_filters,))

    def vjp_power(self, g: np.ndarray) -> np.ndarray:
        """Adjoint: (..., n_filters) cotangent -> (..., n_bins) on the power."""
        lead = g.shape[:-1]
        flat = np.ascontiguousarray(g.reshape(-1, self.n_filters))
        out = _fb_vjp(flat, self.starts, self.widths, self.weights, self.n_bins)
        return out.reshape(lead + (self.n_bins,))
