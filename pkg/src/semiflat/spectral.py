"""Spectral and finite-difference derivatives on periodic grids.

All fields live on uniform periodic grids; spectral differentiation is exact
for band-limited data, the 4th-order central stencil is the fallback scheme.
"""
from __future__ import annotations

import os

import numpy as np
import scipy.fft

# worker threads for the FFT backend; each 1D transform is independent, so
# the result does not depend on the thread count
_WORKERS = int(os.environ.get("SEMIFLAT_THREADS", os.cpu_count() or 1))


def grid_coords(n: int, period: float = 1.0) -> np.ndarray:
    """Sample points 0, h, ..., period - h with h = period / n."""
    return np.arange(n) * (period / n)


def freq_factors(n: int, period: float = 1.0) -> np.ndarray:
    """Multipliers 2*pi*i*k for the spectral first derivative."""
    return 2j * np.pi * np.fft.fftfreq(n, d=period / n)


def deriv(field: np.ndarray, axis: int, period: float = 1.0, order: int = 1) -> np.ndarray:
    """Spectral derivative of a periodic field along one axis."""
    n = field.shape[axis]
    fac = freq_factors(n, period) ** order
    shape = [1] * field.ndim
    shape[axis] = n
    fhat = scipy.fft.fft(field, axis=axis, workers=_WORKERS)
    fhat *= fac.reshape(shape)
    out = scipy.fft.ifft(fhat, axis=axis, workers=_WORKERS, overwrite_x=True)
    if np.isrealobj(field):
        return out.real
    return out


def deriv_fd4(field: np.ndarray, axis: int, period: float = 1.0) -> np.ndarray:
    """4th-order central first derivative with periodic wrap-around."""
    n = field.shape[axis]
    h = period / n
    f1 = np.roll(field, -1, axis=axis)
    f2 = np.roll(field, -2, axis=axis)
    b1 = np.roll(field, 1, axis=axis)
    b2 = np.roll(field, 2, axis=axis)
    return (8.0 * (f1 - b1) - (f2 - b2)) / (12.0 * h)


def mean_over(field: np.ndarray, axes) -> np.ndarray:
    """Mean over the given axes, keeping dims for broadcasting."""
    return field.mean(axis=tuple(axes), keepdims=True)


def remove_mean(field: np.ndarray, axes) -> np.ndarray:
    return field - mean_over(field, axes)


def fourier_pad(field: np.ndarray, axis: int, n_new: int) -> np.ndarray:
    """Resample a periodic field to a new grid size by zero-padding modes."""
    n = field.shape[axis]
    if n_new == n:
        return field.copy()
    fhat = np.fft.fft(field, axis=axis)
    fhat = np.fft.fftshift(fhat, axes=axis)
    pad_shape = list(field.shape)
    pad_shape[axis] = n_new
    out = np.zeros(pad_shape, dtype=complex)
    lo_new = (n_new - min(n, n_new)) // 2
    lo_old = (n - min(n, n_new)) // 2
    sl_new = [slice(None)] * field.ndim
    sl_old = [slice(None)] * field.ndim
    sl_new[axis] = slice(lo_new, lo_new + min(n, n_new))
    sl_old[axis] = slice(lo_old, lo_old + min(n, n_new))
    out[tuple(sl_new)] = fhat[tuple(sl_old)]
    out = np.fft.ifftshift(out, axes=axis)
    res = np.fft.ifft(out, axis=axis) * (n_new / n)
    if np.isrealobj(field):
        return res.real
    return res


def band_limited_field(rng, shape, axes, k_max, amplitude=1.0, real=False):
    """Random smooth periodic field with modes |k| <= k_max along `axes`.

    Built in Fourier space so spectral derivatives of the result are exact.
    Axes not listed in `axes` are broadcast (constant).
    """
    mesh = np.meshgrid(
        *[np.fft.fftfreq(shape[a], d=1.0 / shape[a]) for a in axes], indexing="ij"
    )
    mask = np.ones(mesh[0].shape, dtype=bool)
    for m in mesh:
        mask &= np.abs(m) <= k_max
    coeffs = rng.standard_normal(mesh[0].shape) + 1j * rng.standard_normal(mesh[0].shape)
    coeffs *= mask
    bshape = [shape[a] if a in axes else 1 for a in range(len(shape))]
    spec = np.zeros(shape, dtype=complex)
    spec += coeffs.reshape(bshape)
    field = np.fft.ifftn(spec, axes=axes)
    field *= amplitude / max(np.abs(field).max(), 1e-300)
    if real:
        return field.real
    return field
