"""Network operations built on the tensor engine.

Convolution is im2col + one matmul. Batch norm keeps running statistics for
inference. Losses fuse their numerics (log-sum-exp for cross-entropy) and the
two resampling ops are realised as matrix products with row-stochastic
interpolation matrices, which keeps them differentiable for free.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import NonFiniteError, ShapeError, Tensor, _check_finite


class ConfigError(ValueError):
    """A configuration value makes the requested computation impossible."""


# ---------------------------------------------------------------------------
# linear
# ---------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x[N,Cin] @ weight[Cin,Cout] + bias[Cout]."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"linear needs 2-D operands, got x{x.shape}, w{weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"linear shape mismatch: x{x.shape} is incompatible with weight{weight.shape}"
        )
    out = x @ weight
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeError(
                f"linear bias{bias.shape} does not match weight{weight.shape}"
            )
        out = out + bias
    return out


# ---------------------------------------------------------------------------
# 2-D convolution (cross-correlation)
# ---------------------------------------------------------------------------

def _reflect_index(n: int, pad: int) -> np.ndarray:
    # index map implementing edge-mirrored padding without repeating the border
    idx = np.arange(-pad, n + pad)
    period = 2 * n - 2 if n > 1 else 1
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def conv2d(
    x: Tensor,
    kernel: Tensor,
    stride: int = 1,
    pad: int = 0,
    pad_mode: str = "zeros",
) -> Tensor:
    """Cross-correlate x[B,C,H,W] with kernel[Cout,C,k,k].

    Output spatial dims are (H + 2*pad - k) / stride + 1 and must be exact
    integers. ``pad_mode`` is "zeros" or "reflect".
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d needs 4-D operands, got x{x.shape}, k{kernel.shape}")
    b, c, h, w = x.shape
    cout, cin, kh, kw = kernel.shape
    if kh != kw or kh not in (1, 3):
        raise ConfigError(f"conv2d supports square kernels of size 1 or 3, got {kh}x{kw}")
    if cin != c:
        raise ShapeError(f"conv2d channel mismatch: x{x.shape} vs kernel{kernel.shape}")
    if (h + 2 * pad - kh) % stride != 0 or (w + 2 * pad - kw) % stride != 0:
        raise ConfigError(
            f"conv2d output dims are not integers for input {h}x{w}, "
            f"kernel {kh}, stride {stride}, pad {pad}"
        )
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1

    if pad == 0:
        xp = x.data
        row_map = col_map = None
    elif pad_mode == "zeros":
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        row_map = col_map = None
    elif pad_mode == "reflect":
        row_map = _reflect_index(h, pad)
        col_map = _reflect_index(w, pad)
        xp = x.data[:, :, row_map[:, None], col_map[None, :]]
    else:
        raise ConfigError(f"unknown pad_mode {pad_mode!r}")

    # im2col: one strided slice per kernel tap
    cols = np.empty((b, c, kh * kw, ho, wo), dtype=np.float64)
    for u in range(kh):
        for v in range(kw):
            cols[:, :, u * kw + v] = xp[
                :, :, u : u + stride * (ho - 1) + 1 : stride,
                v : v + stride * (wo - 1) + 1 : stride,
            ]
    cols2 = cols.transpose(0, 3, 4, 1, 2).reshape(b * ho * wo, c * kh * kw)
    k2 = kernel.data.reshape(cout, c * kh * kw)
    out_data = (cols2 @ k2.T).reshape(b, ho, wo, cout).transpose(0, 3, 1, 2)

    out = Tensor._result(np.ascontiguousarray(out_data), (x, kernel), "conv2d")
    if out.requires_grad:
        def backward(g, x=x, kernel=kernel, cols2=cols2, k2=k2,
                     dims=(b, c, h, w, cout, kh, kw, ho, wo, stride, pad),
                     maps=(row_map, col_map), mode=pad_mode):
            b_, c_, h_, w_, cout_, kh_, kw_, ho_, wo_, s_, p_ = dims
            g2 = g.transpose(0, 2, 3, 1).reshape(b_ * ho_ * wo_, cout_)
            if kernel.requires_grad:
                kernel._accumulate((g2.T @ cols2).reshape(kernel.shape))
            if x.requires_grad:
                dcols2 = g2 @ k2
                dcols = dcols2.reshape(b_, ho_, wo_, c_, kh_ * kw_).transpose(0, 3, 4, 1, 2)
                dxp = np.zeros((b_, c_, h_ + 2 * p_, w_ + 2 * p_), dtype=np.float64)
                for u in range(kh_):
                    for v in range(kw_):
                        dxp[
                            :, :, u : u + s_ * (ho_ - 1) + 1 : s_,
                            v : v + s_ * (wo_ - 1) + 1 : s_,
                        ] += dcols[:, :, u * kw_ + v]
                if p_ == 0:
                    dx = dxp
                elif mode == "zeros":
                    dx = dxp[:, :, p_ : p_ + h_, p_ : p_ + w_]
                else:
                    rm, cm = maps
                    dx = np.zeros((b_, c_, h_, w_), dtype=np.float64)
                    np.add.at(dx, (slice(None), slice(None), rm[:, None], cm[None, :]), dxp)
                x._accumulate(dx)
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# batch normalisation
# ---------------------------------------------------------------------------

class BatchNormState:
    """Running statistics plus learned per-channel affine parameters."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        if eps <= 0:
            raise ConfigError("batch norm eps must be positive")
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Per-channel normalisation of x[B,C,H,W].

    Training mode normalises by batch statistics (biased variance) and blends
    them into the running stats with ``momentum``; inference mode uses the
    running stats.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects B,C,H,W input, got {x.shape}")
    b, c, h, w = x.shape
    if b * h * w == 0:
        raise ShapeError("batch_norm on an empty batch")
    if c != state.gamma.shape[0]:
        raise ShapeError(
            f"batch_norm channel mismatch: input has {c}, state has {state.gamma.shape[0]}"
        )

    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mean
        state.running_var = (1.0 - m) * state.running_var + m * var
    else:
        mean = state.running_mean
        var = state.running_var

    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = xhat * state.gamma.data[None, :, None, None] + state.beta.data[None, :, None, None]

    out = Tensor._result(y, (x, state.gamma, state.beta), "batch_norm")
    if out.requires_grad:
        def backward(g, x=x, st=state, xhat=xhat, inv_std=inv_std, train=training):
            axes = (0, 2, 3)
            if st.gamma.requires_grad:
                st.gamma._accumulate((g * xhat).sum(axis=axes))
            if st.beta.requires_grad:
                st.beta._accumulate(g.sum(axis=axes))
            if x.requires_grad:
                gam = st.gamma.data[None, :, None, None]
                istd = inv_std[None, :, None, None]
                if train:
                    n = x.shape[0] * x.shape[2] * x.shape[3]
                    dxhat = g * gam
                    mean_dxhat = dxhat.mean(axis=axes, keepdims=True)
                    mean_dxhat_xhat = (dxhat * xhat).mean(axis=axes, keepdims=True)
                    dx = istd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
                else:
                    dx = g * gam * istd
                x._accumulate(dx)
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    return (diff * diff).mean()


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-softmax of the true class; labels are class indices."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects B,c logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.intp)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"cross_entropy labels shape {labels.shape} != ({b},)")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ValueError(f"label out of range [0,{c}): {labels}")

    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    picked = z[np.arange(b), labels]
    loss_val = float((lse - picked).mean())

    out = Tensor._result(np.asarray(loss_val), (logits,), "cross_entropy")
    if out.requires_grad:
        probs = np.exp(z - zmax)
        probs /= probs.sum(axis=1, keepdims=True)
        def backward(g, logits=logits, probs=probs, labels=labels, b=b):
            grad = probs.copy()
            grad[np.arange(b), labels] -= 1.0
            logits._accumulate(g * grad / b)
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def _area_matrix(n_out: int, n_in: int) -> np.ndarray:
    # row i holds the fractional overlap of output cell i with each input cell
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        j0, j1 = int(math.floor(lo)), int(math.ceil(hi))
        for j in range(j0, min(j1, n_in)):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                m[i, j] = overlap / scale
    return m


def _nearest_matrix(n_out: int, n_in: int) -> np.ndarray:
    src = np.minimum((np.arange(n_out) * n_in) // n_out, n_in - 1)
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), src] = 1.0
    return m


def resample2d(x: Tensor, out_h: int, out_w: int, mode: str = "area") -> Tensor:
    """Resize the trailing two axes of a 2-D or 4-D tensor.

    "area" averages the covered input cells (exact block means when the sizes
    divide); "nearest" replicates. Both are convex, so values stay inside the
    input range.
    """
    if out_h <= 0 or out_w <= 0:
        raise ConfigError(f"resample2d target dims must be positive, got {out_h}x{out_w}")
    if x.ndim not in (2, 4):
        raise ShapeError(f"resample2d expects 2-D or 4-D input, got {x.shape}")
    h, w = x.shape[-2], x.shape[-1]
    make = _area_matrix if mode == "area" else _nearest_matrix if mode == "nearest" else None
    if make is None:
        raise ConfigError(f"unknown resample mode {mode!r}")
    rh = make(out_h, h)
    rw = make(out_w, w)

    if x.ndim == 2:
        y = rh @ x.data @ rw.T
    else:
        y = np.einsum("ih,bchw,jw->bcij", rh, x.data, rw, optimize=True)
    out = Tensor._result(y, (x,), "resample2d")
    if out.requires_grad:
        def backward(g, x=x, rh=rh, rw=rw):
            if x.ndim == 2:
                x._accumulate(rh.T @ g @ rw)
            else:
                x._accumulate(np.einsum("ih,bcij,jw->bchw", rh, g, rw, optimize=True))
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# Gaussian blur
# ---------------------------------------------------------------------------

def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalised 1-D Gaussian taps with radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ConfigError(f"gaussian blur sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _blur_matrix(n: int, kernel: np.ndarray) -> np.ndarray:
    # banded convolution matrix with reflect padding folded into the band
    radius = (len(kernel) - 1) // 2
    m = np.zeros((n, n))
    period = 2 * n - 2 if n > 1 else 1
    for i in range(n):
        for t, wgt in enumerate(kernel):
            j = i + t - radius
            j = abs(j) % period
            if j >= n:
                j = period - j
            m[i, j] += wgt
    return m


def gaussian_blur2d(x: Tensor, sigma: float) -> Tensor:
    """Separable Gaussian blur of an H,W map with reflected borders."""
    if x.ndim != 2:
        raise ShapeError(f"gaussian_blur2d expects an H,W map, got {x.shape}")
    kernel = gaussian_kernel1d(sigma)
    bh = Tensor(_blur_matrix(x.shape[0], kernel))
    bw = Tensor(_blur_matrix(x.shape[1], kernel))
    return bh @ x @ bw.T


def gaussian_blur2d_array(x: np.ndarray, sigma: float) -> np.ndarray:
    """Plain-array blur for data generation."""
    return gaussian_blur2d(Tensor(x), sigma).data
