"""Dense 4-D tensor type and forward numerical kernels.

Every operation here works on ``Tensor`` values: contiguous float32 numpy
arrays in (batch, channels, height, width) layout, width fastest. All
functions are pure and deterministic, so they are safe to call from multiple
threads at once; heavy contractions are lowered onto BLAS through
``np.tensordot``, which is reduction-order stable for a fixed build.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

# A Tensor is a 4-D float32 ndarray, (N, C, H, W).
Tensor = np.ndarray

DTYPE = np.float32


def tensor(data, shape=None) -> Tensor:
    """Coerce array-like data into a contiguous float32 NCHW tensor."""
    arr = np.ascontiguousarray(data, dtype=DTYPE)
    if shape is not None:
        arr = arr.reshape(shape)
    if arr.ndim != 4:
        raise ShapeError(f"tensor must be 4-D (N,C,H,W), got ndim={arr.ndim}")
    return arr


def check_tensor(x, name="tensor"):
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        raise ShapeError(f"{name} must be a 4-D ndarray (N,C,H,W), got "
                         f"{type(x).__name__} with shape {getattr(x, 'shape', None)}")
    if x.dtype != DTYPE:
        raise ShapeError(f"{name} must be float32, got {x.dtype}")


@dataclass
class ConvWeights:
    """Kernel (out_channels, in_channels, kh, kw) plus mandatory bias (out_channels,).

    Only square 1x1 / 3x3 kernels at stride 1 exist in this network family.
    """
    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.kernel = np.ascontiguousarray(self.kernel, dtype=DTYPE)
        self.bias = np.ascontiguousarray(self.bias, dtype=DTYPE)
        if self.kernel.ndim != 4:
            raise ShapeError(f"conv kernel must be 4-D, got shape {self.kernel.shape}")
        kh, kw = self.kernel.shape[2:]
        if kh != kw or kh not in (1, 3):
            raise ShapeError(f"conv kernel must be square 1x1 or 3x3, got {kh}x{kw}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match "
                             f"{self.kernel.shape[0]} output channels")

    @property
    def out_channels(self):
        return self.kernel.shape[0]

    @property
    def in_channels(self):
        return self.kernel.shape[1]

    @property
    def ksize(self):
        return self.kernel.shape[2]


def _correlate(x: Tensor, kernel: np.ndarray, padding: int) -> Tensor:
    """Bias-free stride-1 correlation, one BLAS contraction."""
    k = kernel.shape[2]
    if k == 1:
        # (Cout,Cin) . (N,Cin,H,W) over Cin
        y = np.tensordot(kernel[:, :, 0, 0], x, axes=([1], [1]))
    else:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (N,Cin,H,W,k,k)
        y = np.tensordot(kernel, win, axes=([1, 2, 3], [1, 4, 5]))  # (Cout,N,H,W)
    return np.ascontiguousarray(np.moveaxis(y, 0, 1), dtype=DTYPE)


def conv2d(x: Tensor, w: ConvWeights, padding: int | None = None) -> Tensor:
    """Stride-1 cross-correlation with zero padding and bias.

    ``padding`` defaults to (and must equal) k//2, i.e. 1 for 3x3 and 0 for
    1x1, so spatial size is preserved.
    """
    check_tensor(x, "conv2d input")
    k = w.ksize
    if padding is None:
        padding = k // 2
    if padding != k // 2:
        raise ShapeError(f"conv2d: padding must be {k // 2} for a {k}x{k} kernel, got {padding}")
    if x.shape[1] != w.in_channels:
        raise ShapeError(
            f"conv2d: input has {x.shape[1]} channels, kernel expects {w.in_channels}",
            expected=w.in_channels, actual=x.shape[1])
    y = _correlate(x, w.kernel, padding)
    y += w.bias.reshape(1, -1, 1, 1)
    return y


def conv2d_input_grad(g: Tensor, kernel: np.ndarray, padding: int) -> Tensor:
    """Gradient of conv2d w.r.t. its input.

    For same-size stride-1 convolution this is the correlation of the
    upstream gradient with the spatially flipped, channel-transposed kernel.
    """
    kt = np.ascontiguousarray(kernel.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    return _correlate(g, kt, padding)


def conv2d_kernel_grad(x: Tensor, g: Tensor, k: int, padding: int) -> np.ndarray:
    """Gradient of conv2d w.r.t. its kernel."""
    if k == 1:
        dk = np.tensordot(g, x, axes=([0, 2, 3], [0, 2, 3]))  # (Cout,Cin)
        return np.ascontiguousarray(dk[:, :, None, None], dtype=DTYPE)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (N,Cin,H,W,k,k)
    dk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # (Cout,Cin,k,k)
    return np.ascontiguousarray(dk, dtype=DTYPE)


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    """Elementwise max(v, slope*v) for slope in (0,1)."""
    if not 0.0 < slope < 1.0:
        raise ShapeError(f"leaky_relu slope must lie in (0,1), got {slope}")
    return np.where(x > 0, x, DTYPE(slope) * x)


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, DTYPE(0))


def sigmoid(x: Tensor) -> Tensor:
    # overflow-safe split form: exp of a non-positive argument only
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(DTYPE)


def add(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"add: shapes differ {x.shape} vs {y.shape}",
                         expected=x.shape, actual=y.shape)
    return x + y


def scale_channels(x: Tensor, a: Tensor) -> Tensor:
    """Per-channel broadcast multiply; ``a`` has shape (N, C, 1, 1)."""
    if a.ndim != 4 or a.shape[2:] != (1, 1) or a.shape[:2] != x.shape[:2]:
        raise ShapeError(f"scale_channels: scale shape {a.shape} does not match "
                         f"input (N,C)={x.shape[:2]}")
    return x * a


def concat_channels(parts) -> Tensor:
    """Stack tensors along the channel axis, preserving part order."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_channels: need at least one part")
    ref = parts[0]
    for p in parts[1:]:
        if p.shape[0] != ref.shape[0] or p.shape[2:] != ref.shape[2:]:
            raise ShapeError(f"concat_channels: incompatible shapes "
                             f"{ref.shape} vs {p.shape}")
    return np.ascontiguousarray(np.concatenate(parts, axis=1))


def pixel_shuffle(x: Tensor, s: int) -> Tensor:
    """Rearrange s^2 channel groups into an s-times larger spatial grid.

    output(n, c, h*s+dy, w*s+dx) = input(n, c*s*s + dy*s + dx, h, w)
    """
    if s < 1:
        raise ShapeError(f"pixel_shuffle factor must be >= 1, got {s}")
    n, c, h, wd = x.shape
    if c % (s * s) != 0:
        raise ShapeError(f"pixel_shuffle: {c} channels not divisible by s^2={s * s}")
    if s == 1:
        return x
    co = c // (s * s)
    y = x.reshape(n, co, s, s, h, wd)
    y = y.transpose(0, 1, 4, 2, 5, 3)  # (N,Co,H,dy,W,dx)
    return np.ascontiguousarray(y.reshape(n, co, h * s, wd * s))


def pixel_unshuffle(x: Tensor, s: int) -> Tensor:
    """Inverse index permutation of :func:`pixel_shuffle`."""
    n, c, h, wd = x.shape
    if h % s != 0 or wd % s != 0:
        raise ShapeError(f"pixel_unshuffle: spatial dims {h}x{wd} not divisible by {s}")
    if s == 1:
        return x
    y = x.reshape(n, c, h // s, s, wd // s, s)
    y = y.transpose(0, 1, 3, 5, 2, 4)  # (N,C,dy,dx,H/s,W/s)
    return np.ascontiguousarray(y.reshape(n, c * s * s, h // s, wd // s))


def global_contrast_pool(x: Tensor) -> Tensor:
    """Per-channel population standard deviation plus mean, shape (N,C,1,1)."""
    check_tensor(x, "global_contrast_pool input")
    mean = x.mean(axis=(2, 3), keepdims=True, dtype=np.float64)
    var = np.square(x - mean).mean(axis=(2, 3), keepdims=True, dtype=np.float64)
    return (np.sqrt(var) + mean).astype(DTYPE)


def _cubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic interpolation kernel."""
    t = np.abs(t)
    out = np.zeros_like(t)
    near = t <= 1.0
    far = (t > 1.0) & (t < 2.0)
    out[near] = (a + 2.0) * t[near] ** 3 - (a + 3.0) * t[near] ** 2 + 1.0
    out[far] = a * t[far] ** 3 - 5.0 * a * t[far] ** 2 + 8.0 * a * t[far] - 4.0 * a
    return out


def bicubic_filter_taps(s: int):
    """1-D tap offsets and normalized weights for an s-fold bicubic reduction.

    For downsampling the kernel is widened by the factor s (anti-aliased),
    giving the same fixed filter at every output site:
    source center of output pixel d is d*s + (s-1)/2.
    """
    base = (s - 1) / 2.0
    lo = math.floor(base - 2.0 * s) + 1
    hi = math.ceil(base + 2.0 * s) - 1
    offsets = np.arange(lo, hi + 1)
    weights = _cubic_kernel((offsets - base) / s) / s
    weights = weights / weights.sum()
    return offsets, weights


def _downsample_axis(x: np.ndarray, s: int, axis: int) -> np.ndarray:
    offsets, weights = bicubic_filter_taps(s)
    length = x.shape[axis]
    out_len = length // s
    pad_lo = max(0, -int(offsets[0]))
    pad_hi = max(0, int(offsets[-1]) - (s - 1))
    pad_spec = [(0, 0)] * x.ndim
    pad_spec[axis] = (pad_lo, pad_hi)
    xp = np.pad(x, pad_spec, mode="edge")
    acc = np.zeros(x.shape[:axis] + (out_len,) + x.shape[axis + 1:], dtype=np.float64)
    for t, wgt in zip(offsets, weights):
        start = pad_lo + int(t)
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(start, start + out_len * s, s)
        acc += wgt * xp[tuple(sl)]
    return acc


def bicubic_downsample(x: Tensor, s: int) -> Tensor:
    """Separable bicubic (a=-0.5) reduction by an integer factor with edge
    clamping; output clamped to [0,1]."""
    check_tensor(x, "bicubic_downsample input")
    if s < 1:
        raise ShapeError(f"bicubic_downsample factor must be >= 1, got {s}")
    if s == 1:
        return x.copy()
    n, c, h, wd = x.shape
    if h % s != 0 or wd % s != 0:
        raise ShapeError(f"bicubic_downsample: dims {h}x{wd} not divisible by {s}")
    y = _downsample_axis(x.astype(np.float64), s, axis=2)
    y = _downsample_axis(y, s, axis=3)
    return np.clip(y, 0.0, 1.0).astype(DTYPE)
