"""Fused layers with hand-written backward passes: convolution, softmax,
the LSTM cell and dropout."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _node, _sigmoid, as_tensor, getitem


def _im2col(xp, k, H, W):
    # xp: [N, H+k-1, W+k-1, C] -> [N*H*W, k*k*C] ordered (dr, dc, ci)
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # [N, H, W, C, k, k]
    N, C = xp.shape[0], xp.shape[3]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(N * H * W, k * k * C)


def conv2d(x, kernels, bias):
    """Same-padded 2-D convolution (cross-correlation) with zero fill.

    ``x`` is ``[H, W, C_in]`` or ``[N, H, W, C_in]``, ``kernels`` is
    ``[k, k, C_in, C_out]`` with odd ``k`` and ``bias`` is ``[C_out]``.
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    if kernels.ndim != 4 or kernels.shape[0] != kernels.shape[1] or kernels.shape[0] % 2 == 0:
        raise ShapeError(f"conv2d: kernels must be [k, k, C_in, C_out] with odd k, got {kernels.shape}")
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4 or xd.shape[-1] != kernels.shape[2]:
        raise ShapeError(f"conv2d: input {x.shape} does not match kernels {kernels.shape}")
    if bias.shape != (kernels.shape[3],):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match kernels {kernels.shape}")
    k, _, C, F = kernels.shape
    N, H, W, _ = xd.shape
    r = k // 2
    xp = np.pad(xd, ((0, 0), (r, r), (r, r), (0, 0)))
    cols = _im2col(xp, k, H, W)
    wmat = kernels.data.reshape(k * k * C, F)
    out = (cols @ wmat + bias.data).reshape(N, H, W, F)

    def backward(g):
        g2 = g.reshape(N * H * W, F)
        if kernels.requires_grad:
            kernels._accumulate((cols.T @ g2).reshape(k, k, C, F))
        if bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))
        if x.requires_grad:
            # transpose of a same-padded conv: same-padded conv of g with the flipped kernel
            gp = np.pad(g.reshape(N, H, W, F), ((0, 0), (r, r), (r, r), (0, 0)))
            wflip = kernels.data[::-1, ::-1].transpose(0, 1, 3, 2).reshape(k * k * F, C)
            dx = (_im2col(gp, k, H, W) @ wflip).reshape(N, H, W, C)
            x._accumulate(dx[0] if single else dx)

    return _node(out[0] if single else out, (x, kernels, bias), backward)


def softmax(scores, axis=-1):
    """Numerically stable softmax along ``axis``."""
    scores = as_tensor(scores)
    if np.isnan(scores.data).any():
        raise FloatingPointError("softmax: NaN in scores")
    z = scores.data - scores.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        scores._accumulate(p * (g - (g * p).sum(axis=axis, keepdims=True)))

    return _node(p, (scores,), backward)


def lstm_cell(x, h_prev, c_prev, W, U, b):
    """One forget-gate LSTM step; returns a single ``[..., 2H]`` tensor ``[h; c]``.

    Gate blocks in ``W``/``U``/``b`` are ordered input, forget, output, candidate.
    """
    x, h_prev, c_prev = as_tensor(x), as_tensor(h_prev), as_tensor(c_prev)
    W, U, b = as_tensor(W), as_tensor(U), as_tensor(b)
    H = U.shape[0]
    if W.shape != (x.shape[-1], 4 * H) or U.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ShapeError(
            f"lstm_step: x {x.shape}, W {W.shape}, U {U.shape}, b {b.shape} (hidden {H})")
    if h_prev.shape[-1] != H or c_prev.shape != h_prev.shape:
        raise ShapeError(f"lstm_step: state shapes {h_prev.shape}/{c_prev.shape}, hidden {H}")
    z = x.data @ W.data + h_prev.data @ U.data + b.data
    s = _sigmoid(z[..., :3 * H])
    i, f, o = s[..., :H], s[..., H:2 * H], s[..., 2 * H:]
    gc = np.tanh(z[..., 3 * H:])
    c = f * c_prev.data + i * gc
    tc = np.tanh(c)
    h = o * tc

    def backward(g):
        dh, dc = g[..., :H], g[..., H:]
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * gc * i * (1.0 - i),
            dc * c_prev.data * f * (1.0 - f),
            dh * tc * o * (1.0 - o),
            dc * i * (1.0 - gc * gc),
        ], axis=-1)
        if c_prev.requires_grad:
            c_prev._accumulate(dc * f)
        if h_prev.requires_grad:
            h_prev._accumulate(dz @ U.data.T)
        if x.requires_grad:
            x._accumulate(dz @ W.data.T)
        dz2 = dz.reshape(-1, 4 * H)
        if W.requires_grad:
            W._accumulate(x.data.reshape(-1, x.shape[-1]).T @ dz2)
        if U.requires_grad:
            U._accumulate(h_prev.data.reshape(-1, H).T @ dz2)
        if b.requires_grad:
            b._accumulate(dz2.sum(axis=0))

    return _node(np.concatenate([h, c], axis=-1), (x, h_prev, c_prev, W, U, b), backward)


def lstm_step(x, h_prev, c_prev, params):
    """Advance an LSTM by one step; ``params`` is ``(W, U, b)``. Returns ``(h, c)``."""
    W, U, b = params
    H = U.shape[0]
    hc = lstm_cell(x, h_prev, c_prev, W, U, b)
    return getitem(hc, (Ellipsis, slice(0, H))), getitem(hc, (Ellipsis, slice(H, 2 * H)))


def dropout_mask(shape, rate, rng, dtype=np.float64):
    """Inverted-dropout mask: kept entries are scaled by ``1 / (1 - rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / (1.0 - rate)


def dropout(x, rate, training, rng=None, mask=None):
    """Inverted dropout; identity at inference or when ``rate`` is 0.

    Pass a precomputed ``mask`` to reuse one mask across time steps.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if mask is None:
        mask = dropout_mask(x.shape, rate, rng, x.dtype)
    return x * Tensor(mask, requires_grad=False)
