"""Numpy building blocks with hand-derived reverse-mode gradients.

Every forward returns (output, cache); the matching backward consumes the
upstream gradient plus that cache. Feature maps are channels-last NHWC so
the im2col convolution reduces to one tall GEMM, and every layer keeps the
caller's float dtype: the whole network runs in float64 for
finite-difference checks and float32 for training.
"""

from __future__ import annotations

import numpy as np

GN_EPS = 1e-5


# ---------------------------------------------------------------------------
# 3x3 same-padding convolution (stride 1), one (N*H*W, 9C) @ (9C, O) GEMM


def _w_mat(w: np.ndarray) -> np.ndarray:
    # (O, C, 3, 3) -> (9C, O) with rows ordered (di, dj, c)
    o, c = w.shape[:2]
    return np.ascontiguousarray(w.transpose(2, 3, 1, 0).reshape(9 * c, o))


def conv3x3_fwd(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    n, h, wd, c = x.shape
    o = w.shape[0]
    xp = np.empty((n, h + 2, wd + 2, c), dtype=x.dtype)
    xp[:, 0] = 0.0
    xp[:, -1] = 0.0
    xp[:, :, 0] = 0.0
    xp[:, :, -1] = 0.0
    xp[:, 1:-1, 1:-1, :] = x
    cols = np.empty((n, h, wd, 3, 3, c), dtype=x.dtype)
    for di in range(3):
        for dj in range(3):
            cols[:, :, :, di, dj, :] = xp[:, di:di + h, dj:dj + wd, :]
    cols = cols.reshape(n * h * wd, 9 * c)
    y = (cols @ _w_mat(w)).reshape(n, h, wd, o)
    y += b
    return y, (x.shape, cols, w)


def conv3x3_bwd(dy: np.ndarray, cache):
    (n, h, wd, c), cols, w = cache
    o = w.shape[0]
    dyf = dy.reshape(n * h * wd, o)
    db = dyf.sum(axis=0)
    dw = (cols.T @ dyf).reshape(3, 3, c, o).transpose(3, 2, 0, 1)
    dcols = (dyf @ _w_mat(w).T).reshape(n, h, wd, 3, 3, c)
    dxp = np.zeros((n, h + 2, wd + 2, c), dtype=dy.dtype)
    for di in range(3):
        for dj in range(3):
            dxp[:, di:di + h, dj:dj + wd, :] += dcols[:, :, :, di, dj, :]
    return dxp[:, 1:-1, 1:-1, :], np.ascontiguousarray(dw), db


def conv1x1_fwd(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    n, h, wd, c = x.shape
    y = (x.reshape(-1, c) @ w.T).reshape(n, h, wd, -1)
    y += b
    return y, (x, w)


def conv1x1_bwd(dy: np.ndarray, cache):
    x, w = cache
    n, h, wd, c = x.shape
    dyf = dy.reshape(-1, w.shape[0])
    xf = x.reshape(-1, c)
    db = dyf.sum(axis=0)
    dw = dyf.T @ xf
    dx = (dyf @ w).reshape(x.shape)
    return dx, dw, db


# ---------------------------------------------------------------------------
# group normalization


def _group_mean(x2d: np.ndarray, n: int, groups: int) -> np.ndarray:
    # (N, HW, C) -> per-(sample, group) mean, expanded back to channels
    c = x2d.shape[2]
    per_ch = x2d.sum(axis=1)                       # (N, C), contiguous reduce
    m = x2d.shape[1] * (c // groups)
    g = per_ch.reshape(n, groups, c // groups).sum(axis=2) / m  # (N, G)
    return np.repeat(g, c // groups, axis=1)       # (N, C)


def group_norm_fwd(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                   groups: int):
    n, h, w, c = x.shape
    assert c % groups == 0, "channel count must be divisible by groups"
    xr = x.reshape(n, h * w, c)
    mu = _group_mean(xr, n, groups)                # (N, C)
    d = xr - mu[:, None, :]
    var = _group_mean(d * d, n, groups)
    inv = 1.0 / np.sqrt(var + np.asarray(GN_EPS, dtype=x.dtype))  # (N, C)
    xhat = (d * inv[:, None, :]).reshape(n, h, w, c)
    y = xhat * gamma + beta
    return y, (xhat, inv, gamma, groups)


def group_norm_bwd(dy: np.ndarray, cache):
    xhat, inv, gamma, groups = cache
    n, h, w, c = dy.shape
    dgamma = (dy * xhat).sum(axis=(0, 1, 2))
    dbeta = dy.sum(axis=(0, 1, 2))
    dxh = (dy * gamma).reshape(n, h * w, c)
    xh = xhat.reshape(n, h * w, c)
    mean_dxh = _group_mean(dxh, n, groups)
    mean_dxh_xh = _group_mean(dxh * xh, n, groups)
    dx = inv[:, None, :] * (dxh - mean_dxh[:, None, :]
                            - xh * mean_dxh_xh[:, None, :])
    return dx.reshape(n, h, w, c), dgamma, dbeta


# ---------------------------------------------------------------------------
# SiLU activation


def silu_fwd(x: np.ndarray):
    s = _sigmoid(x)
    return x * s, (x, s)


def silu_bwd(dy: np.ndarray, cache):
    x, s = cache
    return dy * (s * (1.0 + x * (1.0 - s)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp may overflow to inf for very negative x; 1/(1+inf) = 0 is the
    # correct limit, so just silence the warning
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# resampling


def avgpool2_fwd(x: np.ndarray):
    n, h, w, c = x.shape
    y = x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))
    return y, x.shape


def avgpool2_bwd(dy: np.ndarray, shape):
    n, h, w, c = shape
    dx = np.empty(shape, dtype=dy.dtype)
    dx.reshape(n, h // 2, 2, w // 2, 2, c)[...] = \
        (dy / 4.0)[:, :, None, :, None, :]
    return dx


def upsample2_fwd(x: np.ndarray):
    y = np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)
    return y, x.shape


def upsample2_bwd(dy: np.ndarray, shape):
    n, h, w, c = shape
    return dy.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4))


# ---------------------------------------------------------------------------
# dense layer


def linear_fwd(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w.T + b, (x, w)


def linear_bwd(dy: np.ndarray, cache):
    x, w = cache
    return dy @ w, dy.T @ x, dy.sum(axis=0)
