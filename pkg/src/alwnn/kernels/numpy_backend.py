"""Vectorized numpy implementations of the convolution hot kernels.

All functions take pre-padded, C-contiguous inputs; padding and bias live in
the autodiff layer so both backends stay interchangeable.
"""

import numpy as np

NAME = "numpy"


def dwconv1d_fwd(xp, w):
    """xp (N,C,Lp), w (C,K) -> (N,C,Lp-K+1); per-channel correlation."""
    N, C, Lp = xp.shape
    _, K = w.shape
    Lo = Lp - K + 1
    out = xp[:, :, 0:Lo] * w[:, 0][None, :, None]
    for k in range(1, K):
        out += xp[:, :, k:k + Lo] * w[:, k][None, :, None]
    return out


def dwconv1d_bwd(xp, w, g):
    """Gradients w.r.t. the padded input and the weights."""
    N, C, Lp = xp.shape
    _, K = w.shape
    Lo = Lp - K + 1
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    for k in range(K):
        dxp[:, :, k:k + Lo] += g * w[:, k][None, :, None]
        dw[:, k] = np.einsum("ncl,ncl->c", xp[:, :, k:k + Lo], g, optimize=True)
    return dxp, dw


def stemconv_fwd(xp, w):
    """xp (N,2,Lp), w (O,2,K) -> (N,O,Lp-K+1); both rows collapse per filter."""
    N, R, Lp = xp.shape
    O, _, K = w.shape
    Lo = Lp - K + 1
    cols = np.lib.stride_tricks.sliding_window_view(xp, K, axis=2)  # (N,2,Lo,K)
    cols = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(N * Lo, R * K)
    y = cols @ w.reshape(O, R * K).T
    return np.ascontiguousarray(y.reshape(N, Lo, O).transpose(0, 2, 1))


def stemconv_bwd(xp, w, g):
    N, R, Lp = xp.shape
    O, _, K = w.shape
    Lo = Lp - K + 1
    cols = np.lib.stride_tricks.sliding_window_view(xp, K, axis=2)
    cols = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(N * Lo, R * K)
    gcols = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(N * Lo, O)
    dw = (gcols.T @ cols).reshape(O, R, K)
    dcols = (gcols @ w.reshape(O, R * K)).reshape(N, Lo, R, K)
    dxp = np.zeros_like(xp)
    for r in range(R):
        for k in range(K):
            dxp[:, r, k:k + Lo] += dcols[:, :, r, k]
    return dxp, dw
