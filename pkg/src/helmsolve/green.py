"""Spectral inverse of a learnable compact kernel (the implicit layer).

Rather than convolving feature maps with a 3x3 kernel, this layer divides
by it in Fourier space, giving a global receptive field from a 9-complex-
parameter operator per channel.  The kernel's lattice response (discrete
Green's function) is built once per kernel/size and applied per channel as
a spectral multiplication; gradients flow through the whole construction,
including the regularised spectral division.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError

#: Regularisation added to |spectrum|^2 in the inversion.
SPECTRUM_EPS = 1e-5

_delta_spectra: dict[tuple[int, int], np.ndarray] = {}


def laplacian_plus_i_kernel(channels: int, dtype=np.complex64) -> np.ndarray:
    """Stacked 3x3 kernels L + iI: the 5-point operator stencil plus i at centre."""
    k = np.array(
        [[0, -1, 0], [-1, 4 + 1j, -1], [0, -1, 0]],
        dtype=dtype,
    )
    return np.broadcast_to(k, (channels, 3, 3)).copy()


def pad_kernel_corners(kernel, size: tuple[int, int]):
    """Circulant embedding: kernel centre at (0, 0), neighbours wrapped.

    Accepts and returns either plain arrays or Tensors; the entry sum is
    preserved by construction.
    """
    if isinstance(kernel, Tensor):
        return ad.place_kernel_corners(kernel, size)
    return ad.place_kernel_corners(Tensor(np.asarray(kernel)), size).data


def _delta_spectrum(shape: tuple[int, int], dtype) -> np.ndarray:
    # FFT of a unit point source at the centre of the padded grid; fixed per
    # size, so compute once and cache.
    key = shape
    if key not in _delta_spectra:
        delta = np.zeros(shape)
        delta[shape[0] // 2, shape[1] // 2] = 1.0
        _delta_spectra[key] = np.fft.fft2(delta)
    return _delta_spectra[key].astype(dtype)


def green_function(kernel, coarse_size: tuple[int, int], eps: float = SPECTRUM_EPS):
    """Spectrum of the kernel's regularised lattice inverse.

    The Green's function is sampled on a grid twice the coarse feature-map
    size per axis.  The spectral division uses the least-squares form
    ``conj(S) / (S conj(S) + eps)`` against a centred point source, carried
    out on a grid zero-padded to three times the Green's grid to suppress
    wrap-around, then cropped back and re-anchored at the origin.  Returns
    the (channels, 2h, 2w) spectrum; differentiable in the kernel weights.
    """
    h, w = coarse_size
    if h < 3 or w < 3:
        raise DimensionError(f"coarse size {coarse_size} too small")
    was_tensor = isinstance(kernel, Tensor)
    k = kernel if was_tensor else Tensor(np.asarray(kernel))
    if k.data.shape[-2:] != (3, 3):
        raise DimensionError(f"kernel must be 3x3 per channel, got {k.data.shape}")
    gh, gw = 2 * h, 2 * w
    bh, bw = 3 * gh, 3 * gw
    k_pad = ad.place_kernel_corners(k, (bh, bw))
    spectrum = ad.fft2(k_pad)
    denom = ad.add(ad.mul(spectrum, ad.conj(spectrum)), eps)
    delta_hat = _delta_spectrum((bh, bw), spectrum.dtype)
    response_hat = ad.mul(ad.div(ad.conj(spectrum), denom), Tensor(delta_hat))
    response = ad.ifft2(response_hat)
    centred = ad.crop2d(response, gh, gw, offset=(bh // 2 - gh // 2, bw // 2 - gw // 2))
    spectrum_out = ad.fft2(ad.ifftshift2(centred))
    return spectrum_out if was_tensor else spectrum_out.data


def implicit_apply(x, spectrum):
    """Per-channel spectral convolution with a precomputed Green's spectrum.

    ``x`` is (batch, channels, h, w) complex; the spectrum is
    (channels, 2h, 2w).  The input is zero-padded to the spectrum size,
    multiplied in Fourier space and cropped back; linear in ``x`` and
    differentiable in both arguments.
    """
    was_tensor = isinstance(x, Tensor)
    xt = x if was_tensor else Tensor(np.asarray(x))
    st = spectrum if isinstance(spectrum, Tensor) else Tensor(np.asarray(spectrum))
    n, c, h, w = xt.data.shape
    sc, sh, sw = st.data.shape
    if sc != c:
        raise DimensionError(f"{c} input channels vs {sc} kernel channels")
    if (sh, sw) != (2 * h, 2 * w):
        raise DimensionError(
            f"spectrum {st.data.shape[-2:]} is not twice the input size {(h, w)}"
        )
    padded = ad.pad2d_to(xt, sh, sw)
    out = ad.ifft2(ad.mul(ad.fft2(padded), st))
    out = ad.crop2d(out, h, w)
    return out if was_tensor else out.data


def circular_conv(kernel: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Oracle-style circular convolution of x with a (per-channel) 3x3 kernel.

    Used by tests and sanity checks: multiplication by the circulant built
    from ``pad_kernel_corners`` on x's own grid.
    """
    kp = pad_kernel_corners(np.asarray(kernel), x.shape[-2:])
    return np.fft.ifft2(np.fft.fft2(kp, axes=(-2, -1)) * np.fft.fft2(x, axes=(-2, -1)), axes=(-2, -1))


class ImplicitKernel:
    """Trainable per-channel 3x3 complex kernels with a cached spectrum.

    The spectrum cache is only consulted when gradients are disabled (the
    cache would otherwise leak stale graph nodes); it is invalidated when
    the weights' version stamp or the target size changes.
    """

    def __init__(self, channels: int, dtype=np.complex64, weights: np.ndarray | None = None):
        if weights is None:
            weights = laplacian_plus_i_kernel(channels, dtype)
        self.weights = Tensor(np.asarray(weights, dtype=dtype), requires_grad=True)
        self._cache = None
        self._cache_key = None

    @property
    def channels(self) -> int:
        return self.weights.data.shape[0]

    def spectrum(self, coarse_size: tuple[int, int]) -> Tensor:
        if ad.grad_enabled():
            return green_function(self.weights, tuple(coarse_size))
        key = (tuple(coarse_size), self.weights.version)
        if self._cache_key != key:
            self._cache = green_function(self.weights, tuple(coarse_size))
            self._cache_key = key
        return self._cache

    def __call__(self, x: Tensor) -> Tensor:
        return implicit_apply(x, self.spectrum(x.data.shape[-2:]))
