"""Network primitives with hand-written forward and backward passes.

Convolution runs as im2col plus a float32 GEMM; its input gradient is the
full correlation of the (stride-dilated) output gradient with spatially
flipped kernels, so both directions stay GEMM-bound. Every op preserves the
dtype of its inputs: production code feeds float32, the gradient-check
harness feeds float64 through the identical code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import blas

from .errors import ArgumentError, DataError, NumericError, ShapeError
from .tensor import pad_spatial


@dataclass
class ConvParams:
    """Kernel weights (out_channels, in_channels, kh, kw) and per-output bias."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError(f"conv weights must be 4-D, got {self.weights.shape}")
        if min(self.weights.shape) < 1:
            raise ShapeError(f"conv weights dims must be >= 1, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} kernels"
            )


@dataclass
class BNParams:
    """Per-channel scale/shift plus running statistics for inference."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        c = self.gamma.shape[0]
        for name in ("beta", "running_mean", "running_var"):
            if getattr(self, name).shape != (c,):
                raise ShapeError(f"BN {name} must have shape ({c},)")
        if self.eps <= 0:
            raise ArgumentError("BN eps must be > 0")
        if not 0 < self.momentum <= 1:
            raise ArgumentError("BN momentum must be in (0, 1]")
        if np.any(self.running_var < 0):
            raise ArgumentError("BN running_var must be >= 0")


def bn_params(channels: int, eps: float = 1e-5, momentum: float = 0.1) -> BNParams:
    return BNParams(
        gamma=np.ones(channels, dtype=np.float32),
        beta=np.zeros(channels, dtype=np.float32),
        running_mean=np.zeros(channels, dtype=np.float32),
        running_var=np.ones(channels, dtype=np.float32),
        eps=eps,
        momentum=momentum,
    )


def _im2col(xpad: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Gather sliding windows into a (c*kh*kw, n*out_h*out_w) matrix.

    Row order is (channel, ki, kj) flattened C-style; this is the fixed
    accumulation order of the convolution sum.
    """
    n, c = xpad.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(xpad, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    out_h, out_w = win.shape[2], win.shape[3]
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, n * out_h * out_w)


# above this input size the im2col gather spills cache and the
# tap-offset path (one accumulating GEMM per kernel tap) is faster
_SHIFT_MIN_BYTES = 2_500_000


def _gemm_acc(a: np.ndarray, b: np.ndarray, c: np.ndarray):
    """c += a @ b in place via BLAS for C-order 2-D arrays of one dtype.

    Computed as c.T = b.T a.T + c.T: the transposes of C-order arrays are
    Fortran-order views, so nothing is copied.
    """
    gemm = blas.get_blas_funcs("gemm", (c,))
    gemm(1.0, b.T, a.T, 1.0, c.T, overwrite_c=True)


def _conv_taps_flat(xf: np.ndarray, taps: np.ndarray, acc: np.ndarray, wp: int):
    """Accumulate every kernel tap of a channels-last convolution.

    xf and acc are (n*h*w, channels) flat views of same-spatial-size
    arrays; tap (i, j) is the contiguous row range of xf at offset
    i*wp + j, so each tap is one zero-copy accumulating GEMM. Terms that
    wrap across a row or sample boundary land in rows the caller crops
    (forward) or multiply zero padding (backward), so they never reach
    valid output. Taps accumulate in fixed (i, j) order.
    """
    kh, kw = taps.shape[:2]
    rows = xf.shape[0]
    for i in range(kh):
        for j in range(kw):
            off = i * wp + j
            length = rows - off
            if off == 0:
                _gemm_acc(xf, taps[i, j], acc)
            elif length > 0:
                _gemm_acc(xf[off:], taps[i, j], acc[:length])


@dataclass
class ConvCache:
    x: np.ndarray
    params: ConvParams
    stride: int
    pad: int
    out_shape: tuple


def conv2d_forward(x: np.ndarray, p: ConvParams, stride: int = 1, pad: int = 0):
    """Cross-correlate x with p.weights plus bias; returns (y, cache)."""
    k, c_in, kh, kw = p.weights.shape
    if x.ndim != 4 or x.shape[1] != c_in:
        raise ShapeError(f"conv expects {c_in} input channels, got {x.shape}")
    if stride < 1:
        raise ArgumentError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise ArgumentError(f"pad must be >= 0, got {pad}")
    n = x.shape[0]
    xpad = pad_spatial(x, pad, pad) if pad else x
    hp, wp = xpad.shape[2], xpad.shape[3]
    if hp < kh or wp < kw:
        raise ShapeError(f"kernel ({kh}, {kw}) exceeds padded input ({hp}, {wp})")
    out_h = (hp - kh) // stride + 1
    out_w = (wp - kw) // stride + 1

    if stride == 1 and xpad.nbytes > _SHIFT_MIN_BYTES:
        dtype = np.promote_types(x.dtype, p.weights.dtype)
        xh = np.ascontiguousarray(xpad.transpose(0, 2, 3, 1), dtype=dtype)
        taps = np.ascontiguousarray(p.weights.transpose(2, 3, 1, 0), dtype=dtype)
        acc = np.zeros((n * hp * wp, k), dtype=dtype)
        _conv_taps_flat(xh.reshape(-1, c_in), taps, acc, wp)
        y = acc.reshape(n, hp, wp, k)[:, :out_h, :out_w, :] + p.bias.astype(dtype)
        y = np.ascontiguousarray(y.transpose(0, 3, 1, 2))
    else:
        col = _im2col(xpad, kh, kw, stride)
        y = p.weights.reshape(k, -1) @ col
        y += p.bias[:, None]
        y = np.ascontiguousarray(y.reshape(k, n, out_h, out_w).transpose(1, 0, 2, 3))
    return y, ConvCache(x, p, stride, pad, y.shape)


def conv2d_backward(grad_y: np.ndarray, cache: ConvCache):
    """Gradients of the sum-weighted loss w.r.t. input, weights, bias."""
    if grad_y.shape != cache.out_shape:
        raise ShapeError(f"grad shape {grad_y.shape} != forward output {cache.out_shape}")
    x, p, stride, pad = cache.x, cache.params, cache.stride, cache.pad
    k, c_in, kh, kw = p.weights.shape
    n = x.shape[0]
    out_h, out_w = grad_y.shape[2], grad_y.shape[3]

    grad_b = grad_y.sum(axis=(0, 2, 3))
    xpad = pad_spatial(x, pad, pad) if pad else x
    hp, wp = xpad.shape[2], xpad.shape[3]

    if stride == 1 and xpad.nbytes > _SHIFT_MIN_BYTES:
        dtype = np.promote_types(x.dtype, grad_y.dtype)
        rows = n * hp * wp
        xh = np.ascontiguousarray(xpad.transpose(0, 2, 3, 1), dtype=dtype)
        xf = xh.reshape(rows, c_in)
        # grad_y zero-padded to the padded-input spatial size, so tap
        # offsets line up with xf rows and wrapped terms multiply zeros
        gyp = np.zeros((n, hp, wp, k), dtype=dtype)
        gyp[:, :out_h, :out_w, :] = grad_y.transpose(0, 2, 3, 1)
        gyf = gyp.reshape(rows, k)
        grad_w = np.empty(p.weights.shape, dtype=dtype)
        for i in range(kh):
            for j in range(kw):
                off = i * wp + j
                grad_w[:, :, i, j] = gyf[: rows - off].T @ xf[off:]
        # input grad: same taps applied with negative offsets
        gxf = np.zeros((rows, c_in), dtype=dtype)
        taps = np.ascontiguousarray(p.weights.transpose(2, 3, 0, 1), dtype=dtype)
        for i in range(kh):
            for j in range(kw):
                off = i * wp + j
                if off == 0:
                    _gemm_acc(gyf, taps[i, j], gxf)
                else:
                    _gemm_acc(gyf[: rows - off], taps[i, j], gxf[off:])
        gxpad = gxf.reshape(n, hp, wp, c_in).transpose(0, 3, 1, 2)
        if pad:
            grad_x = np.ascontiguousarray(gxpad[:, :, pad:-pad, pad:-pad])
        else:
            grad_x = np.ascontiguousarray(gxpad)
        return grad_x, grad_w, grad_b

    gy_mat = grad_y.transpose(1, 0, 2, 3).reshape(k, -1)
    col = _im2col(xpad, kh, kw, stride)
    grad_w = (gy_mat @ col.T).reshape(p.weights.shape)

    # input gradient: dilate grad by the stride, then full-correlate with
    # spatially flipped kernels (in/out channel roles swapped)
    if stride == 1:
        gyd = grad_y
    else:
        gyd = np.zeros(
            (n, k, (out_h - 1) * stride + 1, (out_w - 1) * stride + 1), dtype=grad_y.dtype
        )
        gyd[:, :, ::stride, ::stride] = grad_y
    gypad = pad_spatial(gyd, kh - 1, kw - 1)
    colg = _im2col(gypad, kh, kw, 1)
    wflip = p.weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c_in, -1)
    gh = gyd.shape[2] + kh - 1
    gw_ = gyd.shape[3] + kw - 1
    gpart = (wflip @ colg).reshape(c_in, n, gh, gw_).transpose(1, 0, 2, 3)

    if (gh, gw_) == (hp, wp):
        gxpad = gpart
    else:
        # rows/cols past the last window position receive zero gradient
        gxpad = np.zeros_like(xpad)
        gxpad[:, :, :gh, :gw_] = gpart
    if pad:
        grad_x = np.ascontiguousarray(gxpad[:, :, pad:-pad, pad:-pad])
    else:
        grad_x = np.ascontiguousarray(gxpad)
    return grad_x, grad_w, grad_b


@dataclass
class ReluCache:
    mask: np.ndarray


def relu_forward(z: np.ndarray):
    """y = max(0, z)."""
    return np.maximum(z, 0), ReluCache(z > 0)


def relu_backward(grad_y: np.ndarray, cache: ReluCache):
    if grad_y.shape != cache.mask.shape:
        raise ShapeError(f"grad shape {grad_y.shape} != forward {cache.mask.shape}")
    return grad_y * cache.mask


@dataclass
class PoolCache:
    in_shape: tuple
    k: int
    stride: int
    argmax: np.ndarray  # flat window index of the max, row-major scan order
    fast: bool
    dtype: np.dtype


def maxpool2d_forward(x: np.ndarray, k: int, stride: int):
    """Max over k-by-k windows; ties resolved to the first position in
    row-major window scan order."""
    if k < 1 or stride < 1:
        raise ArgumentError(f"pool k and stride must be >= 1, got k={k} stride={stride}")
    n, c, h, w = x.shape
    if h < k or w < k:
        raise ShapeError(f"pool window {k} exceeds input ({h}, {w})")
    out_h = (h - k) // stride + 1
    out_w = (w - k) // stride + 1
    fast = k == stride and h % k == 0 and w % k == 0
    if fast:
        win = x.reshape(n, c, out_h, k, out_w, k).transpose(0, 1, 2, 4, 3, 5)
        win = win.reshape(n, c, out_h, out_w, k * k)
    else:
        win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
        win = win[:, :, ::stride, ::stride].reshape(n, c, out_h, out_w, k * k)
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, PoolCache((n, c, h, w), k, stride, idx, fast, x.dtype)


def maxpool2d_backward(grad_y: np.ndarray, cache: PoolCache):
    n, c, h, w = cache.in_shape
    k, stride = cache.k, cache.stride
    out_h, out_w = cache.argmax.shape[2], cache.argmax.shape[3]
    if grad_y.shape != cache.argmax.shape:
        raise ShapeError(f"grad shape {grad_y.shape} != pooled shape {cache.argmax.shape}")
    if cache.fast:
        gwin = np.zeros((n, c, out_h, out_w, k * k), dtype=grad_y.dtype)
        np.put_along_axis(gwin, cache.argmax[..., None], grad_y[..., None], axis=-1)
        gwin = gwin.reshape(n, c, out_h, out_w, k, k).transpose(0, 1, 2, 4, 3, 5)
        return np.ascontiguousarray(gwin.reshape(n, c, h, w))
    # overlapping windows: scatter-add each grad to its argmax position
    grad_x = np.zeros(cache.in_shape, dtype=grad_y.dtype)
    ni, ci, pi, qi = np.indices(cache.argmax.shape)
    rows = pi * stride + cache.argmax // k
    cols = qi * stride + cache.argmax % k
    np.add.at(grad_x, (ni, ci, rows, cols), grad_y)
    return grad_x


@dataclass
class BNCache:
    xhat: np.ndarray
    inv_std: np.ndarray  # per-channel 1/sqrt(var + eps)
    params: BNParams
    training: bool


def batchnorm_forward(x: np.ndarray, p: BNParams, training: bool):
    """Per-channel standardization over (n, h, w) with learned scale/shift.

    Training mode uses batch statistics (biased variance) and updates the
    running estimates in place: running = (1 - momentum)*running + momentum*batch.
    Inference mode normalizes by the running statistics.
    """
    c = p.gamma.shape[0]
    if x.ndim != 4 or x.shape[1] != c:
        raise ShapeError(f"BN expects {c} channels, got {x.shape}")
    if training:
        if x.shape[0] * x.shape[2] * x.shape[3] < 2:
            raise ArgumentError("BN training mode needs n*h*w >= 2")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        p.running_mean[:] = ((1.0 - p.momentum) * p.running_mean + p.momentum * mean).astype(
            np.float32
        )
        p.running_var[:] = ((1.0 - p.momentum) * p.running_var + p.momentum * var).astype(
            np.float32
        )
    else:
        mean = p.running_mean.astype(x.dtype)
        var = p.running_var.astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + p.eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = p.gamma[None, :, None, None] * xhat + p.beta[None, :, None, None]
    return y, BNCache(xhat, inv_std, p, training)


def batchnorm_backward(grad_y: np.ndarray, cache: BNCache):
    xhat, inv_std, p = cache.xhat, cache.inv_std, cache.params
    if grad_y.shape != xhat.shape:
        raise ShapeError(f"grad shape {grad_y.shape} != forward {xhat.shape}")
    grad_beta = grad_y.sum(axis=(0, 2, 3))
    grad_gamma = (grad_y * xhat).sum(axis=(0, 2, 3))
    g = grad_y * p.gamma[None, :, None, None]
    if not cache.training:
        return g * inv_std[None, :, None, None], grad_gamma, grad_beta
    m = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
    sum_g = g.sum(axis=(0, 2, 3), keepdims=True)
    sum_gx = (g * xhat).sum(axis=(0, 2, 3), keepdims=True)
    grad_x = (inv_std[None, :, None, None] / m) * (m * g - sum_g - xhat * sum_gx)
    return grad_x, grad_gamma, grad_beta


@dataclass
class UpsampleCache:
    in_shape: tuple


def upsample2x_forward(x: np.ndarray):
    """Nearest-neighbor 2x spatial upsampling."""
    y = x.repeat(2, axis=2).repeat(2, axis=3)
    return y, UpsampleCache(x.shape)


def upsample2x_backward(grad_y: np.ndarray, cache: UpsampleCache):
    n, c, h, w = cache.in_shape
    if grad_y.shape != (n, c, 2 * h, 2 * w):
        raise ShapeError(f"grad shape {grad_y.shape} != upsampled {(n, c, 2*h, 2*w)}")
    return grad_y.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))


def softmax_channels(x: np.ndarray) -> np.ndarray:
    """Per-pixel distribution over channels, max-shifted for stability."""
    if x.ndim != 4 or x.shape[1] < 1:
        raise ShapeError(f"softmax expects (n, c, h, w) with c >= 1, got {x.shape}")
    if not np.isfinite(x).all():
        raise NumericError("softmax input contains non-finite values")
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean per-pixel cross-entropy of softmaxed logits against class labels.

    Returns (loss, grad_logits) with grad = (softmax - onehot) / pixel_count,
    i.e. the gradient of the mean loss.
    """
    if logits.ndim != 4:
        raise ShapeError(f"logits must be (n, c, h, w), got {logits.shape}")
    n, c, h, w = logits.shape
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels shape {labels.shape} != {(n, h, w)}")
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"label outside [0, {c}): range {labels.min()}..{labels.max()}")
    idx = labels.astype(np.int64)[:, None, :, :]
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    npix = n * h * w
    loss = -float(np.take_along_axis(logp, idx, axis=1).sum()) / npix
    grad = np.exp(logp)
    np.put_along_axis(grad, idx, np.take_along_axis(grad, idx, axis=1) - 1.0, axis=1)
    grad /= npix
    return loss, grad
