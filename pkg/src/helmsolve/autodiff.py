"""A small reverse-mode autodiff engine over numpy arrays.

Real and complex dtypes share one ``Tensor`` type.  For a complex tensor
the stored gradient follows the convention

    grad = dL/d(real part) + i * dL/d(imag part)

for a real-valued loss L, so a plain gradient-descent step on the raw
storage is correct for real and complex parameters alike.  Holomorphic ops
therefore backpropagate ``conj(f'(x)) * g``; the Fourier transforms come
out as ``N * ifft`` / ``fft / N``.

Ops are module-level functions building the graph; ``Tensor`` carries the
usual ``data`` / ``grad`` / ``requires_grad`` triple plus the parent
closure.  Backward passes accumulate into ``grad`` and never overwrite.
"""
from __future__ import annotations

import contextlib

import numpy as np

from .errors import DimensionError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction (inference mode) inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "version")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.version = 0

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def bump_version(self):
        """Mark an in-place data update (invalidates caches keyed on version)."""
        self.version += 1

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, seed: np.ndarray | None = None):
        """Reverse accumulation from this node; seeds with ones by default."""
        if seed is None:
            seed = np.ones_like(self.data)
        topo: list[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        _accumulate(self, np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # light operator sugar; heavy ops are module functions
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _accumulate(t: Tensor, g: np.ndarray):
    if not (t.requires_grad or t._backward is not None):
        return
    g = _unbroadcast(g, t.data.shape)
    if np.iscomplexobj(g) and not np.iscomplexobj(t.data):
        g = g.real
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g.astype(t.data.dtype, copy=False)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ts) in enumerate(zip(g.shape, shape)) if ts == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._backward is not None for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
        out.requires_grad = False
    return out


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _make(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        _accumulate(a, g * np.conj(b.data))
        _accumulate(b, g * np.conj(a.data))

    return _make(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data / b.data

    def backward(g):
        _accumulate(a, g * np.conj(1.0 / b.data))
        _accumulate(b, g * np.conj(-a.data / b.data**2))

    return _make(out_data, (a, b), backward)


def conj(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        _accumulate(a, np.conj(g))

    return _make(np.conj(a.data), (a,), backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape))
        else:
            g_exp = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g_exp, a.data.shape))

    return _make(out_data, (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size

    def backward(g):
        _accumulate(a, np.broadcast_to(g / n, a.data.shape))

    return _make(a.data.mean(), (a,), backward)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), overflow-safe; derivative is the logistic function."""
    a = _as_tensor(a)
    out_data = np.logaddexp(np.zeros((), dtype=a.data.dtype), a.data)

    def backward(g):
        sig = 0.5 * (1.0 + np.tanh(0.5 * a.data))
        _accumulate(a, g * sig)

    return _make(out_data, (a,), backward)


# ------------------------------------------------------------ shape plumbing


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.data.shape

    def backward(g):
        _accumulate(a, g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward)


def pad_channels(a: Tensor, channels: int) -> Tensor:
    """Zero-pad axis 1 (channels) of an NCHW tensor up to `channels`."""
    a = _as_tensor(a)
    c = a.data.shape[1]
    if channels < c:
        raise DimensionError(f"cannot pad {c} channels down to {channels}")
    width = [(0, 0)] * a.data.ndim
    width[1] = (0, channels - c)

    def backward(g):
        _accumulate(a, g[:, :c])

    return _make(np.pad(a.data, width), (a,), backward)


def pad2d_to(a: Tensor, height: int, width: int) -> Tensor:
    """Zero-pad the last two axes at the high end up to (height, width)."""
    a = _as_tensor(a)
    h, w = a.data.shape[-2:]
    if height < h or width < w:
        raise DimensionError(f"cannot pad {(h, w)} down to {(height, width)}")
    pad = [(0, 0)] * (a.data.ndim - 2) + [(0, height - h), (0, width - w)]

    def backward(g):
        _accumulate(a, g[..., :h, :w])

    return _make(np.pad(a.data, pad), (a,), backward)


def crop2d(a: Tensor, height: int, width: int, offset: tuple[int, int] = (0, 0)) -> Tensor:
    a = _as_tensor(a)
    oy, ox = offset
    full = a.data.shape

    def backward(g):
        gp = np.zeros(full, dtype=g.dtype)
        gp[..., oy : oy + height, ox : ox + width] = g
        _accumulate(a, gp)

    return _make(
        np.ascontiguousarray(a.data[..., oy : oy + height, ox : ox + width]),
        (a,),
        backward,
    )


def ifftshift2(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        _accumulate(a, np.fft.fftshift(g, axes=(-2, -1)))

    return _make(np.fft.ifftshift(a.data, axes=(-2, -1)), (a,), backward)


def place_kernel_corners(a: Tensor, size: tuple[int, int]) -> Tensor:
    """Embed a (..., 3, 3) kernel circulantly: centre to (0, 0), wrap the rest."""
    a = _as_tensor(a)
    h, w = size
    if h < 3 or w < 3:
        raise DimensionError(f"target {size} too small for a 3x3 kernel")
    rows = np.array([h - 1, 0, 1])
    cols = np.array([w - 1, 0, 1])
    out_data = np.zeros(a.data.shape[:-2] + (h, w), dtype=a.data.dtype)
    out_data[..., rows[:, None], cols[None, :]] = a.data

    def backward(g):
        _accumulate(a, g[..., rows[:, None], cols[None, :]])

    return _make(out_data, (a,), backward)


# ------------------------------------------------------------------- complex


def pack_complex(a: Tensor) -> Tensor:
    """Pair real channels (2i, 2i+1) of an NCHW tensor into complex channel i."""
    a = _as_tensor(a)
    if a.data.shape[1] % 2:
        raise DimensionError(f"need an even channel count, got {a.data.shape[1]}")
    ctype = np.complex64 if a.data.dtype == np.float32 else np.complex128
    out_data = (a.data[:, 0::2] + 1j * a.data[:, 1::2]).astype(ctype)

    def backward(g):
        gr = np.empty(a.data.shape, dtype=a.data.dtype)
        gr[:, 0::2] = g.real
        gr[:, 1::2] = g.imag
        _accumulate(a, gr)

    return _make(out_data, (a,), backward)


def unpack_complex(a: Tensor) -> Tensor:
    """Split complex channels back into interleaved (real, imag) pairs."""
    a = _as_tensor(a)
    rtype = np.float32 if a.data.dtype == np.complex64 else np.float64
    n, c = a.data.shape[:2]
    out_data = np.empty((n, 2 * c) + a.data.shape[2:], dtype=rtype)
    out_data[:, 0::2] = a.data.real
    out_data[:, 1::2] = a.data.imag

    def backward(g):
        _accumulate(a, g[:, 0::2] + 1j * g[:, 1::2])

    return _make(out_data, (a,), backward)


def fft2(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    ctype = np.complex64 if a.data.dtype in (np.float32, np.complex64) else np.complex128
    out_data = np.fft.fft2(a.data, axes=(-2, -1)).astype(ctype)
    n = a.data.shape[-2] * a.data.shape[-1]

    def backward(g):
        _accumulate(a, n * np.fft.ifft2(g, axes=(-2, -1)).astype(ctype))

    return _make(out_data, (a,), backward)


def ifft2(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    ctype = np.complex64 if a.data.dtype in (np.float32, np.complex64) else np.complex128
    out_data = np.fft.ifft2(a.data, axes=(-2, -1)).astype(ctype)
    n = a.data.shape[-2] * a.data.shape[-1]

    def backward(g):
        _accumulate(a, np.fft.fft2(g, axes=(-2, -1)).astype(ctype) / n)

    return _make(out_data, (a,), backward)


# ------------------------------------------------------------- convolutions


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    v = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return v[:, :, ::stride, ::stride]


def _corr(x: np.ndarray, w: np.ndarray, stride: int, pad: int, groups: int) -> np.ndarray:
    n, ci, _, _ = x.shape
    co, cig, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = _windows(xp, kh, kw, stride)
    _, _, ho, wo, _, _ = win.shape
    if groups == 1:
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
            n * ho * wo, ci * kh * kw
        )
        out = cols @ w.reshape(co, -1).T
        return np.ascontiguousarray(out.reshape(n, ho, wo, co).transpose(0, 3, 1, 2))
    if groups == ci and cig == 1 and co == ci:
        return np.einsum("nchwuv,cuv->nchw", win, w[:, 0], optimize=True)
    raise DimensionError(f"unsupported group count {groups} for {ci}->{co} channels")


def _corr_wgrad(
    x: np.ndarray, gy: np.ndarray, stride: int, pad: int, groups: int, kh: int, kw: int
) -> np.ndarray:
    n, ci, _, _ = x.shape
    co = gy.shape[1]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = _windows(xp, kh, kw, stride)
    ho, wo = gy.shape[2:]
    win = win[:, :, :ho, :wo]
    if groups == 1:
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
            n * ho * wo, ci * kh * kw
        )
        g = np.ascontiguousarray(gy.transpose(1, 0, 2, 3)).reshape(co, n * ho * wo)
        return (g @ cols).reshape(co, ci, kh, kw)
    return np.einsum("nchwuv,nchw->cuv", win, gy, optimize=True)[:, None]


def _corr_t(
    y: np.ndarray,
    w: np.ndarray,
    stride: int,
    pad: int,
    out_hw: tuple[int, int],
    groups: int,
) -> np.ndarray:
    # Adjoint of _corr with respect to x: zero-dilate y, pad, and correlate
    # with the flipped kernel (channel roles swapped).
    n, co, ho, wo = y.shape
    _, cig, kh, kw = w.shape
    hh, ww = out_hw
    hd, wd = (ho - 1) * stride + 1, (wo - 1) * stride + 1
    qlo = kh - 1 - pad
    qhi_h, qhi_w = hh + pad - hd, ww + pad - wd
    if qlo < 0 or qhi_h < 0 or qhi_w < 0:
        raise DimensionError(
            f"transposed correlation target {out_hw} inconsistent with input "
            f"{(ho, wo)} at stride {stride}, pad {pad}"
        )
    buf = np.zeros((n, co, qlo + hd + qhi_h, qlo + wd + qhi_w), dtype=y.dtype)
    buf[:, :, qlo : qlo + hd : stride, qlo : qlo + wd : stride] = y
    wf = w[:, :, ::-1, ::-1]
    if groups == 1:
        wt = np.ascontiguousarray(wf.transpose(1, 0, 2, 3))
        return _corr(buf, wt, 1, 0, 1)
    return _corr(buf, wf, 1, 0, groups)


def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    pad: int | None = None,
    groups: int = 1,
) -> Tensor:
    """Cross-correlation in NCHW layout with exact gradients for x, w, bias.

    ``pad`` defaults to (k - 1) // 2 (size-preserving at stride 1); at
    stride 2 even inputs halve exactly.  ``groups = channels`` selects the
    depthwise variant.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    co, cig, kh, kw = w.data.shape
    if pad is None:
        pad = (kh - 1) // 2
    ci = x.data.shape[1]
    if cig * groups != ci or co % groups:
        raise DimensionError(
            f"kernel {w.data.shape} incompatible with {ci} input channels, {groups} groups"
        )
    out_data = _corr(x.data, w.data, stride, pad, groups)
    if bias is not None:
        out_data += bias.data.reshape(1, -1, 1, 1)
    in_hw = x.data.shape[2:]
    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        _accumulate(x, _corr_t(g, w.data, stride, pad, in_hw, groups))
        _accumulate(w, _corr_wgrad(x.data, g, stride, pad, groups, kh, kw))
        if bias is not None:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))

    return _make(out_data, parents, backward)


def conv_transpose2d(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: int = 2,
    pad: int = 1,
    out_hw: tuple[int, int] | None = None,
) -> Tensor:
    """Transposed convolution; weight layout (c_in, c_out, kh, kw).

    ``out_hw`` defaults to stride times the input size (PyTorch's
    ``output_padding = stride - 1`` convention for 3x3, pad 1).
    """
    x, w = _as_tensor(x), _as_tensor(w)
    ci, co, kh, kw = w.data.shape
    if x.data.shape[1] != ci:
        raise DimensionError(f"kernel {w.data.shape} incompatible with input {x.data.shape}")
    h, wdt = x.data.shape[2:]
    if out_hw is None:
        out_hw = (stride * h, stride * wdt)
    out_data = _corr_t(x.data, w.data, stride, pad, out_hw, 1)
    if bias is not None:
        out_data += bias.data.reshape(1, -1, 1, 1)
    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        _accumulate(x, _corr(g, w.data, stride, pad, 1)[..., :h, :wdt])
        _accumulate(w, _corr_wgrad(g, x.data, stride, pad, 1, kh, kw))
        if bias is not None:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))

    return _make(out_data, parents, backward)


# ------------------------------------------------------------ normalisation


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalisation over (N, H, W).

    Training mode normalises with batch statistics and updates the running
    buffers in place (unbiased variance, momentum convention
    ``new = (1 - m) * old + m * batch``); inference mode uses the buffers.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.data.shape[1] != gamma.data.shape[0]:
        raise DimensionError(
            f"batchnorm channels {gamma.data.shape[0]} do not match input {x.data.shape}"
        )
    axes = (0, 2, 3)
    if training:
        m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        inv = 1.0 / np.sqrt(var + eps)
        xh = (x.data - mean.reshape(1, -1, 1, 1)) * inv.reshape(1, -1, 1, 1)
        unbiased = var * (m / max(m - 1, 1))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased

        def backward(g):
            dgamma = (g * xh).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            dxh = g * gamma.data.reshape(1, -1, 1, 1)
            s1 = dxh.sum(axis=axes).reshape(1, -1, 1, 1)
            s2 = (dxh * xh).sum(axis=axes).reshape(1, -1, 1, 1)
            dx = inv.reshape(1, -1, 1, 1) * (dxh - s1 / m - xh * s2 / m)
            _accumulate(x, dx.astype(x.data.dtype, copy=False))
            _accumulate(gamma, dgamma)
            _accumulate(beta, dbeta)

        out_data = gamma.data.reshape(1, -1, 1, 1) * xh + beta.data.reshape(1, -1, 1, 1)
        return _make(out_data, (x, gamma, beta), backward)

    inv = 1.0 / np.sqrt(running_var + eps)
    scale = (gamma.data * inv).reshape(1, -1, 1, 1)
    out_data = scale * (x.data - running_mean.reshape(1, -1, 1, 1)) + beta.data.reshape(
        1, -1, 1, 1
    )
    xh_inf = (x.data - running_mean.reshape(1, -1, 1, 1)) * inv.reshape(1, -1, 1, 1)

    def backward_inf(g):
        _accumulate(x, g * scale)
        _accumulate(gamma, (g * xh_inf).sum(axis=axes))
        _accumulate(beta, g.sum(axis=axes))

    return _make(out_data, (x, gamma, beta), backward_inf)


# -------------------------------------------------------------- resampling


def downsample2_mean(x: Tensor) -> Tensor:
    """Fixed factor-2 downsampling: 2x2 block averaging (constants exact)."""
    x = _as_tensor(x)
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise DimensionError(f"factor-2 downsampling needs even sizes, got {(h, w)}")
    out_data = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(g):
        _accumulate(x, np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25)

    return _make(out_data, (x,), backward)


def _up1(a: np.ndarray, axis: int) -> np.ndarray:
    lo = np.concatenate([a.take([0], axis), a.take(range(a.shape[axis] - 1), axis)], axis)
    hi = np.concatenate([a.take(range(1, a.shape[axis]), axis), a.take([-1], axis)], axis)
    even = 0.75 * a + 0.25 * lo
    odd = 0.75 * a + 0.25 * hi
    out = np.stack([even, odd], axis=axis + 1)
    shape = list(a.shape)
    shape[axis] *= 2
    return out.reshape(shape)


def _up1_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    n2 = g.shape[axis]
    shape = list(g.shape)
    shape[axis] = n2 // 2
    gp = g.reshape(shape[:axis] + [n2 // 2, 2] + shape[axis + 1 :])
    ge = gp.take(0, axis=axis + 1)
    go = gp.take(1, axis=axis + 1)
    out = 0.75 * (ge + go)
    # 0.25-weight neighbours: even taps the left neighbour, odd the right.
    sl_lo = [slice(None)] * out.ndim
    sl_lo[axis] = slice(0, shape[axis] - 1)
    sl_hi = [slice(None)] * out.ndim
    sl_hi[axis] = slice(1, shape[axis])
    out[tuple(sl_lo)] += 0.25 * ge[tuple(sl_hi)]
    out[tuple(sl_hi)] += 0.25 * go[tuple(sl_lo)]
    first = [slice(None)] * out.ndim
    first[axis] = slice(0, 1)
    last = [slice(None)] * out.ndim
    last[axis] = slice(shape[axis] - 1, shape[axis])
    out[tuple(first)] += 0.25 * ge[tuple(first)]
    out[tuple(last)] += 0.25 * go[tuple(last)]
    return out


def upsample2_bilinear(x: Tensor) -> Tensor:
    """Fixed factor-2 bilinear upsampling with replicated edges.

    Along each axis, output 2i is 0.75 x[i] + 0.25 x[i-1] and output 2i+1
    is 0.75 x[i] + 0.25 x[i+1]; constants map to constants everywhere.
    """
    x = _as_tensor(x)
    out_data = _up1(_up1(x.data, 2), 3)

    def backward(g):
        _accumulate(x, _up1_adjoint(_up1_adjoint(g, 3), 2))

    return _make(out_data, (x,), backward)


def bilinear_resample(x: Tensor, factor: int) -> Tensor:
    """Non-learnable factor-2 resampling; `factor` is 2 (up) or -2 (down)."""
    if factor == 2:
        return upsample2_bilinear(x)
    if factor == -2:
        return downsample2_mean(x)
    raise DimensionError(f"only factor-2 resampling is supported, got {factor}")
