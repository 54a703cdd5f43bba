"""Fourier helpers for samples on a uniform periodic grid.

All functions take ``M`` samples ``f[j] = f(x0 + j*L/M)`` (no repeated end
point) and the period ``L``.  Trailing axes are carried along.
"""

import numpy as np


def _wavenumbers(m, length):
    return 2.0 * np.pi * np.fft.fftfreq(m, d=length / m)


def deriv(f, length):
    f = np.asarray(f, dtype=float)
    m = f.shape[0]
    k = _wavenumbers(m, length)
    if m % 2 == 0:
        k[m // 2] = 0.0
    fh = np.fft.fft(f, axis=0)
    shape = (m,) + (1,) * (f.ndim - 1)
    return np.real(np.fft.ifft(1j * k.reshape(shape) * fh, axis=0))


def cumint(f, length):
    """Integral of the interpolant from the first grid point to each grid point."""
    f = np.asarray(f, dtype=float)
    m = f.shape[0]
    k = _wavenumbers(m, length)
    fh = np.fft.fft(f, axis=0)
    shape = (m,) + (1,) * (f.ndim - 1)
    mean = fh[0].real / m
    kk = k.copy()
    kk[0] = 1.0
    gh = fh / (1j * kk.reshape(shape))
    gh[0] = 0.0
    if m % 2 == 0:
        gh[m // 2] = 0.0
    g = np.real(np.fft.ifft(gh, axis=0))
    x = np.arange(m) * (length / m)
    return mean * x.reshape(shape) + (g - g[0])


def evaluate(f, x, length, derivative=0):
    """Evaluate the trigonometric interpolant (or its first or second
    derivative) at offsets ``x`` measured from the first grid point.

    For even ``M`` the Nyquist mode is taken as ``c cos(pi M x / L)``, the
    real interpolant through the samples.
    """
    f = np.asarray(f, dtype=float)
    m = f.shape[0]
    c = np.fft.fft(f, axis=0) / m
    k = np.fft.fftfreq(m, d=1.0 / m)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    w = 2.0 * np.pi / length
    phase = np.exp(1j * w * np.outer(x, k)) * (1j * w * k) ** derivative
    if m % 2 == 0:
        nyq = w * m / 2
        arg = nyq * x
        phase[:, m // 2] = [np.cos(arg), -nyq * np.sin(arg), -nyq**2 * np.cos(arg)][derivative]
    return np.real(np.tensordot(phase, c, axes=(1, 0)))


def filter_small(f, level):
    """Zero Fourier modes whose magnitude (relative to M) is below ``level``."""
    f = np.asarray(f, dtype=float)
    m = f.shape[0]
    fh = np.fft.fft(f, axis=0)
    mask = np.abs(fh) / m < level
    mask[0] = False
    fh[mask] = 0.0
    return np.real(np.fft.ifft(fh, axis=0))
