"""Layer primitives with hand-written backward passes.

Inputs are batched: vectors are ``(B, k)``, sequences/feature maps are
``(B, C, W)``. Unbatched inputs are promoted to a batch of one and the
output is squeezed back.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, _make, _sigmoid, as_tensor, concat

TRAIN = "train"
EVAL = "eval"
BN_EPS = 1e-8
BN_MOMENTUM = 0.1


def _check_mode(mode: str) -> None:
    if mode not in (TRAIN, EVAL):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for ``x`` of shape (k,) or (B, k)."""
    x = as_tensor(x)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"dense: input {x.shape} does not match weights {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"dense: bias {bias.shape} does not match weights {weight.shape}")
    out = x @ _transpose(weight)
    return out if bias is None else out + bias


def _transpose(t: Tensor) -> Tensor:
    def backward(g):
        t._accumulate(g.T)

    return _make(t.data.T, (t,), backward)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    # derivative at exactly 0 follows the positive branch
    x = as_tensor(x)
    positive = x.data >= 0
    out = np.where(positive, x.data, slope * x.data)

    def backward(g):
        x._accumulate(np.where(positive, g, slope * g))

    return _make(out, (x,), backward)


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout. Identity in eval mode or when ``p == 0``."""
    _check_mode(mode)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    if mode == EVAL or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * keep


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Valid cross-correlation, stride 1, no padding.

    ``x`` is (C_in, W) or (B, C_in, W); ``kernels`` is (C_out, C_in, K).
    """
    x = as_tensor(x)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise ShapeError(f"conv1d expects (C, W) or (B, C, W), got {x.shape}")
    c_out, c_in, k = kernels.shape
    batch, channels, width = xd.shape
    if channels != c_in:
        raise ShapeError(f"conv1d: {channels} input channels, kernels expect {c_in}")
    if width < k:
        raise ShapeError(f"conv1d: width {width} shorter than kernel {k}")
    w_out = width - k + 1
    # cols[b, t, c*k + j] = x[b, c, t + j]; one matmul per sample keeps rows independent
    cols = np.stack([xd[:, :, j:j + w_out] for j in range(k)], axis=-1)
    cols = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(batch, w_out, c_in * k)
    kflat = kernels.data.reshape(c_out, c_in * k)
    out = (np.matmul(cols, kflat.T) + bias.data).transpose(0, 2, 1)
    if squeeze:
        out = out[0]

    def backward(g):
        g3 = g[None] if squeeze else g
        g2 = g3.transpose(0, 2, 1).reshape(batch * w_out, c_out)
        if kernels.requires_grad:
            kernels._accumulate((g2.T @ cols.reshape(batch * w_out, c_in * k)).reshape(kernels.shape))
        if bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ kflat).reshape(batch, w_out, c_in, k)
            dx = np.zeros_like(xd)
            for j in range(k):
                dx[:, :, j:j + w_out] += dcols[..., j].transpose(0, 2, 1)
            x._accumulate(dx[0] if squeeze else dx)

    return _make(np.ascontiguousarray(out), (x, kernels, bias), backward)


def maxpool1d(x: Tensor, kernel: int = 2, stride: int = 2) -> Tensor:
    """Per-channel max over non-overlapping windows; trailing remainder dropped."""
    if kernel != stride:
        raise ValueError("only non-overlapping pooling (kernel == stride) is supported")
    x = as_tensor(x)
    width = x.shape[-1]
    if width < kernel:
        raise ShapeError(f"maxpool1d: width {width} shorter than kernel {kernel}")
    w_out = width // kernel
    lead = x.shape[:-1]
    windows = x.data[..., :w_out * kernel].reshape(*lead, w_out, kernel)
    arg = windows.argmax(axis=-1)  # first index on ties
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros(windows.shape)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        dx = np.zeros_like(x.data)
        dx[..., :w_out * kernel] = gw.reshape(*lead, w_out * kernel)
        x._accumulate(dx)

    return _make(out, (x,), backward)


class BatchNormState:
    """Running statistics for one batch-norm layer (not trained by gradient)."""

    def __init__(self, num_features: int, momentum: float = BN_MOMENTUM):
        self.mean = np.zeros(num_features)
        self.var = np.ones(num_features)
        self.momentum = momentum


def batchnorm1d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, mode: str) -> Tensor:
    """Per-feature standardization followed by scale and shift.

    ``x`` is (B, C) or (B, C, W). Statistics are taken over every axis
    except the feature axis, so a single feature map of width W >= 2 is a
    valid training batch.
    """
    _check_mode(mode)
    x = as_tensor(x)
    if x.ndim not in (2, 3):
        raise ShapeError(f"batchnorm1d expects (B, C) or (B, C, W), got {x.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2)
    shape = (1, -1) if x.ndim == 2 else (1, -1, 1)
    count = x.data.size // x.shape[1]
    g_ = gamma.data.reshape(shape)
    b_ = beta.data.reshape(shape)

    if mode == TRAIN:
        if count < 2:
            raise ValueError("batchnorm1d in train mode needs at least 2 values per feature")
        mean = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        m = state.momentum
        state.mean = (1.0 - m) * state.mean + m * mean.reshape(-1)
        state.var = (1.0 - m) * state.var + m * var.reshape(-1)
    else:
        mean = state.mean.reshape(shape)
        var = state.var.reshape(shape)
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x.data - mean) * inv_std
    out = g_ * xhat + b_

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            dxhat = g * g_
            if mode == TRAIN:
                dx = inv_std / count * (
                    count * dxhat
                    - dxhat.sum(axis=axes, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
                )
            else:
                dx = dxhat * inv_std
            x._accumulate(dx)

    return _make(out, (x, gamma, beta), backward)


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, weight: Tensor, bias: Tensor):
    """One LSTM step; returns ``(h, c)``.

    ``weight`` is (4H, H + I) acting on ``[h_prev; x]``, gate blocks ordered
    input, forget, output, candidate.
    """
    x, h_prev, c_prev = as_tensor(x), as_tensor(h_prev), as_tensor(c_prev)
    squeeze = x.ndim == 1
    xd = x.data[None] if squeeze else x.data
    hd = h_prev.data.reshape(xd.shape[0], -1) if squeeze else h_prev.data
    cd = c_prev.data.reshape(xd.shape[0], -1) if squeeze else c_prev.data
    hidden = hd.shape[1]
    if weight.shape != (4 * hidden, hidden + xd.shape[1]) or bias.shape != (4 * hidden,):
        raise ShapeError(
            f"lstm_cell: weight {weight.shape}/bias {bias.shape} do not fit "
            f"hidden {hidden} and input {xd.shape[1]}"
        )
    if cd.shape != hd.shape or hd.shape[0] != xd.shape[0]:
        raise ShapeError("lstm_cell: state shapes do not match the input batch")
    hx = np.concatenate([hd, xd], axis=1)
    # per-row products so a sample's output does not depend on its batch
    z = np.matmul(hx[:, None, :], weight.data.T)[:, 0, :] + bias.data
    i = _sigmoid(z[:, :hidden])
    f = _sigmoid(z[:, hidden:2 * hidden])
    o = _sigmoid(z[:, 2 * hidden:3 * hidden])
    cand = np.tanh(z[:, 3 * hidden:])
    c = f * cd + i * cand
    tc = np.tanh(c)
    h = o * tc
    packed = np.concatenate([h, c], axis=1)

    def backward(g):
        dh, dc = g[:, :hidden], g[:, hidden:]
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dc * cand * i * (1.0 - i),
                dc * cd * f * (1.0 - f),
                dh * tc * o * (1.0 - o),
                dc * i * (1.0 - cand * cand),
            ],
            axis=1,
        )
        if weight.requires_grad:
            weight._accumulate(dz.T @ hx)
        if bias.requires_grad:
            bias._accumulate(dz.sum(axis=0))
        dhx = dz @ weight.data
        if h_prev.requires_grad:
            dhp = dhx[:, :hidden]
            h_prev._accumulate(dhp.reshape(h_prev.shape))
        if x.requires_grad:
            dx = dhx[:, hidden:]
            x._accumulate(dx[0] if squeeze else dx)
        if c_prev.requires_grad:
            dcp = dc * f
            c_prev._accumulate(dcp.reshape(c_prev.shape))

    node = _make(packed, (x, h_prev, c_prev, weight, bias), backward)
    if squeeze:
        return node[0, :hidden], node[0, hidden:]
    return node[:, :hidden], node[:, hidden:]


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    return x.reshape(x.shape[0], -1)


__all__ = [
    "TRAIN",
    "EVAL",
    "BatchNormState",
    "batchnorm1d",
    "concat",
    "conv1d",
    "dense",
    "dropout",
    "flatten",
    "leaky_relu",
    "lstm_cell",
    "maxpool1d",
]
