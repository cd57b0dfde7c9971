"""Layer catalogue: specs, forward passes and their exact backward passes.

All activations are float64 arrays of shape (n, c, h, w). Each forward
returns (output, aux) where aux carries whatever the backward pass needs
beyond the layer input; backwards are hand-derived adjoints, verified
against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import as_strided

BN_EPS = 1e-5
BN_MOMENTUM = 0.9  # running = momentum * running + (1 - momentum) * batch


class LayerError(ValueError):
    """Structural or runtime failure attributed to one layer."""

    def __init__(self, index: int, kind: str, message: str):
        self.index = index
        self.kind = kind
        super().__init__(f"layer {index} ({kind}): {message}")


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: int = 1
    pad: int = 0
    kind: str = field(default="conv", init=False, repr=False)


@dataclass(frozen=True)
class BatchNorm:
    kind: str = field(default="batch-norm", init=False, repr=False)


@dataclass(frozen=True)
class Relu:
    kind: str = field(default="relu", init=False, repr=False)


@dataclass(frozen=True)
class MaxPool:
    window: int = 2
    stride: int = 2
    kind: str = field(default="max-pool", init=False, repr=False)


@dataclass(frozen=True)
class AvgPool:
    window: int = 2  # 0 pools the whole spatial extent (global)
    stride: int = 2
    kind: str = field(default="avg-pool", init=False, repr=False)


@dataclass(frozen=True)
class Dense:
    out_features: int
    kind: str = field(default="dense", init=False, repr=False)


@dataclass(frozen=True)
class UpsampleBilinear:
    scale: int = 2
    match_input: bool = False  # resize to the network input h, w instead of x scale
    kind: str = field(default="upsample-bilinear", init=False, repr=False)


@dataclass(frozen=True)
class ResidualAdd:
    source: int  # index of an earlier layer with the same output shape
    kind: str = field(default="residual-add", init=False, repr=False)


LayerSpec = Conv | BatchNorm | Relu | MaxPool | AvgPool | Dense | UpsampleBilinear | ResidualAdd


# ---------------------------------------------------------------- conv

def conv_out_hw(h: int, w: int, spec: Conv) -> tuple[int, int]:
    kh, kw = spec.kernel
    oh = (h + 2 * spec.pad - kh) // spec.stride + 1
    ow = (w + 2 * spec.pad - kw) // spec.stride + 1
    return oh, ow


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(n, c, h, w) -> (n, oh, ow, c, kh, kw) sliding-window view."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    sn, sc, sh, sw = x.strides
    return as_strided(
        x,
        shape=(n, oh, ow, c, kh, kw),
        strides=(sn, sh * stride, sw * stride, sc, sh, sw),
    )


def _scatter_windows(dwin: np.ndarray, x_shape: tuple, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of _windows: scatter-add window gradients back onto the input."""
    n, c, h, w = x_shape
    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        # windows are the pixels themselves, no overlap to accumulate
        return np.ascontiguousarray(dwin[:, :, :, :, 0, 0].transpose(0, 3, 1, 2))
    hp, wp = h + 2 * pad, w + 2 * pad
    oh, ow = dwin.shape[1], dwin.shape[2]
    dxp = np.zeros((n, c, hp, wp), dtype=dwin.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dwin[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    if pad:
        return dxp[:, :, pad : pad + h, pad : pad + w]
    return dxp


def _nhwc(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


def _gather_nhwc(xt: np.ndarray, kh: int, kw: int, ph: int, pw: int, out=None):
    """Stride-1 patch matrix from a channels-last tensor: (n*oh*ow, kh*kw*c).

    Channels-last keeps each gathered run contiguous, which is what makes
    this layout worth the transposes on either side. `out` recycles a patch
    buffer from an earlier identically-shaped call.
    """
    if ph or pw:
        xt = np.pad(xt, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    n, hp, wp, c = xt.shape
    oh, ow = hp - kh + 1, wp - kw + 1
    if kh == 1 and kw == 1:
        return xt.reshape(n * oh * ow, c), oh, ow
    sn, sh, sw, sc = xt.strides
    win = as_strided(xt, (n, oh, ow, kh, kw, c), (sn, sh, sw, sh, sw, sc))
    if out is not None and out.size >= win.size:
        buf = out.ravel()[: win.size].reshape(win.shape)
        np.copyto(buf, win)
    else:
        buf = np.ascontiguousarray(win)
    return buf.reshape(n * oh * ow, kh * kw * c), oh, ow


def _kernel_mat(w: np.ndarray) -> np.ndarray:
    # (oc, c, kh, kw) -> (oc, kh*kw*c), matching the channels-last patch order
    return np.ascontiguousarray(w.transpose(0, 2, 3, 1)).reshape(w.shape[0], -1)


def conv_forward(spec: Conv, x: np.ndarray, w: np.ndarray, b: np.ndarray,
                 cols_out=None, keep_cols: bool = False):
    """Returns (output, cols). cols is the patch matrix when keep_cols is set
    (handed back to conv_backward to skip the re-gather) and None otherwise;
    1x1 stride-1 convs never build one."""
    kh, kw = spec.kernel
    oc = spec.out_channels
    n = x.shape[0]
    if kh == 1 and kw == 1 and spec.stride == 1 and spec.pad == 0:
        # pointwise: batched channel contraction, stays channels-first
        out = np.matmul(w[:, :, 0, 0], x.reshape(n, x.shape[1], -1))
        out += b[:, None]
        return out.reshape(n, oc, x.shape[2], x.shape[3]), None
    if spec.stride == 1 and spec.pad <= min(kh, kw) - 1:
        cols, oh, ow = _gather_nhwc(_nhwc(x), kh, kw, spec.pad, spec.pad, out=cols_out)
        out = cols @ _kernel_mat(w).T
    else:
        win = _windows(x, kh, kw, spec.stride, spec.pad)
        oh, ow = win.shape[1:3]
        if cols_out is not None and cols_out.size >= win.size:
            buf = cols_out.ravel()[: win.size].reshape(win.shape)
            np.copyto(buf, win)
        else:
            buf = np.ascontiguousarray(win)
        cols = buf.reshape(n * oh * ow, -1)
        out = cols @ w.reshape(oc, -1).T
    out += b
    # transposed view; ufunc consumers handle the strides without a copy
    out = out.reshape(n, oh, ow, oc).transpose(0, 3, 1, 2)
    return out, (cols if keep_cols else None)


def conv_backward(spec: Conv, x: np.ndarray, w: np.ndarray, dout: np.ndarray,
                  cols=None, need_dx: bool = True):
    kh, kw = spec.kernel
    oc = spec.out_channels
    n, c, h, wdt = x.shape
    if kh == 1 and kw == 1 and spec.stride == 1 and spec.pad == 0:
        dm = np.ascontiguousarray(dout.reshape(n, oc, -1))
        xr = x.reshape(n, c, -1)
        dw = np.matmul(dm, xr.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        db = dm.sum(axis=(0, 2))
        if not need_dx:
            return None, dw, db
        dx = np.matmul(w[:, :, 0, 0].T, dm).reshape(x.shape)
        return dx, dw, db
    if spec.stride == 1 and spec.pad <= min(kh, kw) - 1:
        dt = _nhwc(dout)
        dm = dt.reshape(-1, oc)
        if cols is None:
            cols, _, _ = _gather_nhwc(_nhwc(x), kh, kw, spec.pad, spec.pad)
        dw = np.ascontiguousarray((dm.T @ cols).reshape(oc, kh, kw, c).transpose(0, 3, 1, 2))
        db = dm.sum(axis=0)
        if not need_dx:
            return None, dw, db
        # the input gradient is itself a stride-1 correlation: flip the
        # kernel spatially, swap its channel axes, pad out to full overlap
        wrot = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        dcols, _, _ = _gather_nhwc(dt, kh, kw, kh - 1 - spec.pad, kw - 1 - spec.pad)
        dx = (dcols @ _kernel_mat(wrot).T).reshape(n, h, wdt, c).transpose(0, 3, 1, 2)
        return dx, dw, db
    if cols is None:
        win = _windows(x, kh, kw, spec.stride, spec.pad)
        cols = np.ascontiguousarray(win).reshape(n * win.shape[1] * win.shape[2], -1)
    oh, ow = conv_out_hw(h, wdt, spec)
    dout_mat = dout.transpose(0, 2, 3, 1).reshape(-1, oc)
    dw = (dout_mat.T @ cols).reshape(w.shape)
    db = dout_mat.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = dout_mat @ w.reshape(oc, -1)
    dwin = dcols.reshape(n, oh, ow, c, kh, kw)
    dx = _scatter_windows(dwin, x.shape, kh, kw, spec.stride, spec.pad)
    return dx, dw, db


# ---------------------------------------------------------------- batch norm

def batchnorm_forward(x: np.ndarray, gamma, beta, running_mean, running_var, train: bool):
    if train:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.sum(axis=(0, 2, 3)) / m
        sq = np.einsum("nchw,nchw->c", x, x, optimize=True)
        # biased variance, matching the eval-time normalizer; clamp guards the
        # sum-of-squares cancellation on near-constant channels
        var = np.maximum(sq / m - mean * mean, 0.0)
    else:
        mean, var = running_mean, running_var
    invstd = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean[None, :, None, None]) * invstd[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    aux = (mean, var, invstd, xhat) if train else None
    return out, aux


def batchnorm_running_update(mean, var, running_mean, running_var):
    new_mean = BN_MOMENTUM * running_mean + (1.0 - BN_MOMENTUM) * mean
    new_var = BN_MOMENTUM * running_var + (1.0 - BN_MOMENTUM) * var
    return new_mean, new_var


def batchnorm_backward(gamma, aux, dout: np.ndarray):
    _, _, invstd, xhat = aux
    m = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
    dgamma = np.einsum("nchw,nchw->c", dout, xhat, optimize=True)
    dbeta = dout.sum(axis=(0, 2, 3))
    # batch-stat backward with gamma factored out of both correction sums:
    # dx = gamma * invstd * (dout - dbeta/m - xhat * dgamma/m)
    dx = dout - (dbeta / m)[None, :, None, None]
    dx -= xhat * (dgamma / m)[None, :, None, None]
    dx *= (gamma * invstd)[None, :, None, None]
    return dx, dgamma, dbeta


# ---------------------------------------------------------------- relu

def relu_forward(x: np.ndarray):
    return np.maximum(x, 0.0), None


def relu_backward(out: np.ndarray, dout: np.ndarray):
    return dout * (out > 0.0)


# ---------------------------------------------------------------- pooling

def pool_out_hw(h: int, w: int, window: int, stride: int) -> tuple[int, int]:
    if window == 0:
        return 1, 1
    return (h - window) // stride + 1, (w - window) // stride + 1


def _pool_windows(x: np.ndarray, window: int, stride: int):
    n, c, h, w = x.shape
    oh, ow = pool_out_hw(h, w, window, stride)
    sn, sc, sh, sw = x.strides
    return as_strided(
        x,
        shape=(n, c, oh, ow, window, window),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
    ), oh, ow


def maxpool_forward(spec: MaxPool, x: np.ndarray):
    if spec.window == 2 and spec.stride == 2 and x.shape[2] % 2 == 0 and x.shape[3] % 2 == 0:
        a, b = x[:, :, ::2, ::2], x[:, :, ::2, 1::2]
        c, d = x[:, :, 1::2, ::2], x[:, :, 1::2, 1::2]
        out = np.maximum(np.maximum(a, b), np.maximum(c, d))
        return out, ("eq", x, out)
    win, oh, ow = _pool_windows(x, spec.window, spec.stride)
    flat = win.reshape(*win.shape[:4], -1)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), ("arg", arg)


def maxpool_backward(spec: MaxPool, x_shape: tuple, aux, dout: np.ndarray):
    if aux[0] == "eq":
        # recover the winner by comparison; ties go to the first window slot
        # in (i, j) order, matching what argmax would have picked
        _, x, out = aux
        dx = np.zeros(x_shape, dtype=dout.dtype)
        taken = np.zeros(dout.shape, dtype=bool)
        for i in (0, 1):
            for j in (0, 1):
                m = np.equal(x[:, :, i::2, j::2], out)
                m &= ~taken
                dx[:, :, i::2, j::2] = dout * m
                taken |= m
        return dx
    arg = aux[1]
    n, c, h, w = x_shape
    _, _, oh, ow = dout.shape
    k = spec.window
    di, dj = np.unravel_index(arg, (k, k))
    oi = np.arange(oh)[None, None, :, None] * spec.stride + di
    oj = np.arange(ow)[None, None, None, :] * spec.stride + dj
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    flat = ((ni * c + ci) * h + oi) * w + oj
    dx = np.bincount(flat.ravel(), weights=np.ascontiguousarray(dout).ravel(), minlength=n * c * h * w)
    return dx.reshape(x_shape)


def avgpool_forward(spec: AvgPool, x: np.ndarray):
    if spec.window == 0:
        out = x.mean(axis=(2, 3), keepdims=True)
        return out, None
    win, oh, ow = _pool_windows(x, spec.window, spec.stride)
    out = win.mean(axis=(4, 5))
    return np.ascontiguousarray(out), None


def avgpool_backward(spec: AvgPool, x_shape: tuple, dout: np.ndarray):
    n, c, h, w = x_shape
    if spec.window == 0:
        return np.broadcast_to(dout / (h * w), x_shape).copy()
    k, s = spec.window, spec.stride
    oh, ow = pool_out_hw(h, w, k, s)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    share = dout / (k * k)
    for i in range(k):
        for j in range(k):
            dx[:, :, i : i + s * oh : s, j : j + s * ow : s] += share
    return dx


# ---------------------------------------------------------------- dense

def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    n = x.shape[0]
    flat = x.reshape(n, -1)
    out = flat @ w.T + b
    return out.reshape(n, -1, 1, 1), None


def dense_backward(x: np.ndarray, w: np.ndarray, dout: np.ndarray):
    n = x.shape[0]
    g = dout.reshape(n, -1)
    flat = x.reshape(n, -1)
    dw = g.T @ flat
    db = g.sum(axis=0)
    dx = (g @ w).reshape(x.shape)
    return dx, dw, db


# ---------------------------------------------------------------- bilinear resize

def resample_matrix(src: int, dst: int) -> np.ndarray:
    """1-d bilinear interpolation matrix (dst x src), half-pixel centers."""
    m = np.zeros((dst, src))
    if src == 1:
        m[:, 0] = 1.0
        return m
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, src - 1.0)
    i0 = np.minimum(pos.astype(int), src - 2)
    t = pos - i0
    m[np.arange(dst), i0] = 1.0 - t
    m[np.arange(dst), i0 + 1] = t
    return m


def upsample_forward(x: np.ndarray, out_h: int, out_w: int):
    n, c, h, w = x.shape
    rh = resample_matrix(h, out_h)
    rw = resample_matrix(w, out_w)
    out = rh @ x @ rw.T  # broadcasts over (n, c)
    return out, (rh, rw)


def upsample_backward(aux, dout: np.ndarray):
    rh, rw = aux
    return rh.T @ dout @ rw
