"""Differentiable layer primitives built on :mod:`tripleqa.numerics.tensor`."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, concat, make_result, matmul, sigmoid, stack, take_rows, tanh


class ShapeError(ValueError):
    pass


# -- convolution ------------------------------------------------------------
def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``x`` (C×H×W or B×C×H×W) with ``weight`` (O×C×k×k).

    Output spatial size is ``floor((H + 2*padding - k) / stride) + 1``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects input C×H×W or B×C×H×W and O×C×k×k weights, got {x.shape}, {weight.shape}")
    B, C, H, W = xd.shape
    O, Cw, kh, kw = weight.shape
    if C != Cw:
        raise ShapeError(f"conv2d: input has {C} channels but weights expect {Cw} (weights {weight.shape})")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    if kh > H + 2 * padding or kw > W + 2 * padding:
        raise ShapeError(f"conv2d: kernel {kh}×{kw} larger than padded input {H + 2 * padding}×{W + 2 * padding}")

    p = padding
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2], win.shape[3]
    # im2col: one row per output position, kept for the weight gradient
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    wmat = weight.data.reshape(O, C * kh * kw)
    out = cols @ wmat.T
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data
    out = np.ascontiguousarray(out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2))

    def backward(g):
        gd = g[None] if squeeze else g
        gflat = gd.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        if weight.requires_grad:
            weight.accumulate((gflat.T @ cols).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate(gflat.sum(axis=0))
        if x.requires_grad:
            dwin = (gflat @ wmat).reshape(B, Ho, Wo, C, kh, kw)
            dxp = np.zeros(xp.shape, dtype=xd.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += dwin[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
            dx = dxp[:, :, p : p + H, p : p + W] if p else dxp
            x.accumulate(dx[0] if squeeze else dx)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out[0] if squeeze else out, parents, backward, "conv2d")


def conv1d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D convolution along the sequence axis of a channels-last input.

    ``x`` is B×L×D and ``weight`` is O×D×k; the result is B×L'×O with
    ``L' = floor((L + 2*padding - k) / stride) + 1``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"conv1d expects B×L×D input and O×D×k weights, got {x.shape}, {weight.shape}")
    B, L, D = x.shape
    O, Dw, k = weight.shape
    if D != Dw:
        raise ShapeError(f"conv1d: input has {D} features but weights expect {Dw}")
    if k > L + 2 * padding:
        raise ShapeError(f"conv1d: kernel {k} longer than padded input {L + 2 * padding}")
    p = padding
    xp = np.pad(x.data, ((0, 0), (p, p), (0, 0))) if p else x.data
    win = sliding_window_view(xp, k, axis=1)[:, ::stride]  # (B, Lo, D, k)
    Lo = win.shape[1]
    out = np.tensordot(win, weight.data, axes=([2, 3], [1, 2]))
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data

    def backward(g):
        if weight.requires_grad:
            weight.accumulate(np.tensordot(g, win, axes=([0, 1], [0, 1])))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 1)))
        if x.requires_grad:
            dwin = np.tensordot(g, weight.data, axes=([2], [0]))  # (B, Lo, D, k)
            dxp = np.zeros(xp.shape, dtype=x.dtype)
            for i in range(k):
                dxp[:, i : i + stride * Lo : stride] += dwin[..., i]
            x.accumulate(dxp[:, p : p + L] if p else dxp)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward, "conv1d")


def maxpool2d(x, window: int = 2) -> Tensor:
    """Non-overlapping max pooling over the last two axes.

    Trailing rows/columns that do not fill a window are dropped.  The
    gradient goes to the first maximal element of each window in row-major
    order.
    """
    x = as_tensor(x)
    H, W = x.shape[-2:]
    if H < window or W < window:
        raise ShapeError(f"maxpool2d: input {H}×{W} smaller than window {window}")
    Ho, Wo = H // window, W // window
    lead = x.shape[:-2]
    cropped = x.data[..., : Ho * window, : Wo * window]
    blocks = cropped.reshape(*lead, Ho, window, Wo, window)
    blocks = np.moveaxis(blocks, -3, -2).reshape(*lead, Ho, Wo, window * window)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        onehot = np.zeros(blocks.shape, dtype=x.dtype)
        np.put_along_axis(onehot, arg[..., None], g[..., None], axis=-1)
        dx_blocks = np.moveaxis(onehot.reshape(*lead, Ho, Wo, window, window), -2, -3)
        dx = np.zeros(x.shape, dtype=x.dtype)
        dx[..., : Ho * window, : Wo * window] = dx_blocks.reshape(*lead, Ho * window, Wo * window)
        x.accumulate(dx)

    return make_result(out, (x,), backward, "maxpool2d")


# -- normalization and regularization ----------------------------------------
def batchnorm2d(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization of a B×C×H×W input.

    In training mode the running statistics are updated in place with
    ``momentum`` (unbiased variance, as is conventional).
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d expects B×C×H×W input, got {x.shape}")
    B, C, H, W = x.shape
    n = B * H * W
    axes = (0, 2, 3)
    g_ = gamma.data.reshape(1, C, 1, 1)
    b_ = beta.data.reshape(1, C, 1, 1)

    if training:
        if n < 2:
            raise ValueError(f"batchnorm2d in training mode needs B*H*W >= 2 (got {n}); variance is undefined")
        mu = x.data.mean(axis=axes, keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv_std
        running_mean *= 1 - momentum
        running_mean += momentum * mu.reshape(C)
        running_var *= 1 - momentum
        running_var += momentum * var.reshape(C) * (n / (n - 1))
    else:
        mu = running_mean.reshape(1, C, 1, 1).astype(x.dtype)
        inv_std = (1.0 / np.sqrt(running_var.reshape(1, C, 1, 1) + eps)).astype(x.dtype)
        xhat = (x.data - mu) * inv_std
    out = xhat * g_ + b_

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=axes))
        if x.requires_grad:
            dxhat = g * g_
            if training:
                dx = (
                    dxhat
                    - dxhat.mean(axis=axes, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)
                ) * inv_std
            else:
                dx = dxhat * inv_std
            x.accumulate(dx)

    return make_result(out, (x, gamma, beta), backward, "batchnorm2d")


def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-p)``."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1 - p)

    def backward(g):
        x.accumulate(g * mask)

    return make_result(x.data * mask, (x,), backward, "dropout")


# -- softmax family ----------------------------------------------------------
def _softmax(z: np.ndarray, axis: int, mask: np.ndarray | None) -> np.ndarray:
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``; positions where ``mask`` is False get exactly 0."""
    x = as_tensor(x)
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("softmax: every position along the axis is masked")
    probs = _softmax(x.data, axis, mask)

    def backward(g):
        x.accumulate(probs * (g - (g * probs).sum(axis=axis, keepdims=True)))

    return make_result(probs, (x,), backward, "softmax")


def softmax_cross_entropy(logits, target) -> tuple[Tensor, np.ndarray]:
    """Mean negative log-likelihood of ``target`` under ``softmax(logits)``.

    ``logits`` is N or B×N; ``target`` an index or a length-B index array.
    Returns the scalar loss and the probabilities.
    """
    logits = as_tensor(logits)
    single = logits.ndim == 1
    z = logits.data[None] if single else logits.data
    t = np.atleast_1d(np.asarray(target, dtype=np.int64))
    B, N = z.shape
    if N < 1 or t.shape != (B,):
        raise ValueError(f"softmax_cross_entropy: need one target per row of {logits.shape}, got {t.shape}")
    if (t < 0).any() or (t >= N).any():
        raise IndexError(f"softmax_cross_entropy: target {t.tolist()} out of range for {N} classes")
    shifted = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - logsumexp
    probs = np.exp(log_probs)
    rows = np.arange(B)
    loss = -log_probs[rows, t].mean()

    def backward(g):
        d = probs.copy()
        d[rows, t] -= 1
        d *= g / B
        logits.accumulate(d[0] if single else d)

    out = make_result(np.asarray(loss, dtype=z.dtype), (logits,), backward, "softmax_xent")
    return out, probs[0] if single else probs


def binary_cross_entropy(probs, labels, clip: float = 1e-7) -> Tensor:
    """Mean binary cross-entropy between probabilities and {0,1} labels."""
    probs = as_tensor(probs)
    y = np.asarray(labels, dtype=probs.dtype)
    if y.shape != probs.shape:
        raise ShapeError(f"binary_cross_entropy: labels {y.shape} vs probabilities {probs.shape}")
    p = np.clip(probs.data, clip, 1 - clip)
    loss = -(y * np.log(p) + (1 - y) * np.log(1 - p)).mean()
    inside = (probs.data > clip) & (probs.data < 1 - clip)

    def backward(g):
        d = (p - y) / (p * (1 - p)) / y.size
        probs.accumulate(g * d * inside)

    return make_result(np.asarray(loss, dtype=probs.dtype), (probs,), backward, "bce")


# -- recurrent ---------------------------------------------------------------
def lstm_sequence(
    x,
    w_ih,
    w_hh,
    b,
    mask: np.ndarray | None = None,
    reverse: bool = False,
) -> tuple[Tensor, Tensor, Tensor]:
    """Run an LSTM over a batch of padded sequences.

    ``x`` is B×T×D (or T×D), ``w_ih`` D×4H, ``w_hh`` H×4H and ``b`` 4H, with
    gates ordered input, forget, cell, output.  ``mask`` (B×T, True on real
    steps) freezes the state on padding, so the returned final state is the
    state after each sequence's last real step.  With ``reverse=True`` each
    sequence is processed from its last real step back to its first; the
    outputs are returned aligned with the input positions.

    Returns ``(outputs B×T×H, h_final B×H, c_final B×H)``.
    """
    x = as_tensor(x)
    single = x.ndim == 2
    if single:
        x = x.reshape(1, *x.shape)
    B, T, D = x.shape
    if T == 0:
        raise ValueError("lstm_sequence: empty sequence")
    if w_ih.shape[0] != D:
        raise ShapeError(f"lstm_sequence: input dimension {D} does not match weights {w_ih.shape}")
    H = w_hh.shape[0]
    mask = np.ones((B, T), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    lengths = mask.sum(axis=1)
    if (lengths == 0).any():
        raise ValueError("lstm_sequence: a sequence in the batch has no real steps")

    if reverse:
        # Reverse each sequence within its own length; padding stays at the end.
        t_idx = np.arange(T)[None, :]
        src = np.where(t_idx < lengths[:, None], lengths[:, None] - 1 - t_idx, t_idx)
        x = _gather_time(x, src)

    proj = matmul(x.reshape(B * T, D), w_ih).reshape(B, T, 4 * H) + b
    h = Tensor(np.zeros((B, H), dtype=x.dtype))
    c = Tensor(np.zeros((B, H), dtype=x.dtype))
    outputs = []
    for t in range(T):
        gates = proj[:, t] + matmul(h, w_hh)
        i = sigmoid(gates[:, 0:H])
        f = sigmoid(gates[:, H : 2 * H])
        g = tanh(gates[:, 2 * H : 3 * H])
        o = sigmoid(gates[:, 3 * H : 4 * H])
        c_new = f * c + i * g
        h_new = o * tanh(c_new)
        m = mask[:, t : t + 1]
        if m.all():
            c, h = c_new, h_new
        else:
            keep = m.astype(x.dtype)
            c = c_new * keep + c * (1 - keep)
            h = h_new * keep + h * (1 - keep)
        outputs.append(h)
    out = stack(outputs, axis=1)
    if reverse:
        out = _gather_time(out, src)  # the within-length reversal is its own inverse
    if single:
        return out.reshape(T, H), h.reshape(H), c.reshape(H)
    return out, h, c


def _gather_time(x: Tensor, src: np.ndarray) -> Tensor:
    B = x.shape[0]
    return x[np.arange(B)[:, None], src]


def bidirectional_lstm(x, fwd_params, bwd_params, mask=None) -> Tensor:
    """Concatenate forward and backward LSTM outputs per step (B×T×2H)."""
    out_f, _, _ = lstm_sequence(x, *fwd_params, mask=mask)
    out_b, _, _ = lstm_sequence(x, *bwd_params, mask=mask, reverse=True)
    return concat([out_f, out_b], axis=-1)


def embedding(table, indices) -> Tensor:
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
        raise IndexError(f"embedding index out of range [0, {table.shape[0]})")
    return take_rows(table, indices)
