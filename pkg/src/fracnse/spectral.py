"""Periodic-box spectral infrastructure.

Fields are plain float64 arrays: scalars have shape ``(nx, ny, nz)`` and
vectors ``(3, nx, ny, nz)``, indexed ``[component, i, j, k]`` with ``i``
along x.  Fourier coefficients use the full complex FFT with ``forward``
normalization, so the ``k = 0`` coefficient is the mean of the field.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

THREADS_ENV = "FRACNSE_THREADS"

TWO_PI = 2.0 * math.pi


def num_threads() -> int:
    """Worker count from ``FRACNSE_THREADS`` (default: all cores)."""
    value = os.environ.get(THREADS_ENV, "").strip()
    if value:
        try:
            n = int(value)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {value!r}")
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {value!r}")
        return n
    return os.cpu_count() or 1


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on the box ``[0, lx) x [0, ly) x [0, lz)``."""

    nx: int
    ny: int
    nz: int
    lx: float = TWO_PI
    ly: float = TWO_PI
    lz: float = TWO_PI

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            n = getattr(self, name)
            if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
                raise TypeError(f"{name} must be an integer, got {n!r}")
            if n < 4 or n % 2:
                raise ValueError(f"{name} must be an even integer >= 4, got {n}")
        for name in ("lx", "ly", "lz"):
            length = getattr(self, name)
            if not (math.isfinite(length) and length > 0):
                raise ValueError(f"{name} must be a positive finite length, got {length!r}")

    @classmethod
    def cube(cls, n: int, length: float = TWO_PI) -> "Grid":
        return cls(n, n, n, length, length, length)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def lengths(self) -> tuple[float, float, float]:
        return (self.lx, self.ly, self.lz)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (self.lx / self.nx, self.ly / self.ny, self.lz / self.nz)

    @property
    def cell_volume(self) -> float:
        dx, dy, dz = self.spacing
        return dx * dy * dz

    @property
    def volume(self) -> float:
        return self.lx * self.ly * self.lz

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz

    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable coordinate arrays ``x, y, z``."""
        dx, dy, dz = self.spacing
        x = (np.arange(self.nx) * dx).reshape(-1, 1, 1)
        y = (np.arange(self.ny) * dy).reshape(1, -1, 1)
        z = (np.arange(self.nz) * dz).reshape(1, 1, -1)
        return x, y, z

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x, y, z = self.coords()
        return tuple(np.broadcast_to(c, self.shape).copy() for c in (x, y, z))

    @cached_property
    def mode_indices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Integer FFT indices per axis, broadcastable."""
        mx = np.fft.fftfreq(self.nx, 1.0 / self.nx).round().astype(np.int64)
        my = np.fft.fftfreq(self.ny, 1.0 / self.ny).round().astype(np.int64)
        mz = np.fft.fftfreq(self.nz, 1.0 / self.nz).round().astype(np.int64)
        return mx.reshape(-1, 1, 1), my.reshape(1, -1, 1), mz.reshape(1, 1, -1)

    @cached_property
    def k(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Wavevector components ``2 pi m / L`` (Nyquist kept)."""
        mx, my, mz = self.mode_indices
        return (TWO_PI / self.lx * mx, TWO_PI / self.ly * my, TWO_PI / self.lz * mz)

    @cached_property
    def kd(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """First-derivative wavevector: Nyquist component zeroed per axis."""
        return tuple(
            np.where(np.abs(m) == n // 2, 0.0, kc)
            for kc, m, n in zip(self.k, self.mode_indices, self.shape)
        )

    @cached_property
    def k2(self) -> np.ndarray:
        kx, ky, kz = self.k
        return kx**2 + ky**2 + kz**2

    @cached_property
    def kd2(self) -> np.ndarray:
        kx, ky, kz = self.kd
        return kx**2 + ky**2 + kz**2

    @cached_property
    def inv_kd2(self) -> np.ndarray:
        """``1/|kd|^2`` with zero where ``kd`` vanishes."""
        kd2 = self.kd2
        out = np.zeros_like(kd2)
        np.divide(1.0, kd2, out=out, where=kd2 > 0)
        return out

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        mx, my, mz = self.mode_indices
        return (
            (np.abs(mx) <= self.nx // 3)
            & (np.abs(my) <= self.ny // 3)
            & (np.abs(mz) <= self.nz // 3)
        )

    def fractional_symbol(self, beta: float) -> np.ndarray:
        """``|k|^(2 beta)``; at ``beta = 1`` this is exactly ``k2``."""
        if beta == 1.0:
            return self.k2
        return self.k2**beta


def _check_shape(f: np.ndarray, grid: Grid, what: str = "field") -> None:
    if f.shape[-3:] != grid.shape or any(d != 3 for d in f.shape[:-3]):
        raise ValueError(f"{what} shape {f.shape} does not match grid {grid.shape}")


def forward(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Fourier coefficients of a real scalar or vector field."""
    _check_shape(f, grid)
    return sfft.fftn(f, axes=(-3, -2, -1), norm="forward", workers=num_threads())


def inverse(F: np.ndarray, grid: Grid) -> np.ndarray:
    """Real field from (Hermitian) coefficients; the imaginary residue is dropped."""
    _check_shape(F, grid, "spectrum")
    return sfft.ifftn(F, axes=(-3, -2, -1), norm="forward", workers=num_threads()).real


def hermitian_defect(F: np.ndarray) -> float:
    """Max ``|F(-k) - conj(F(k))|`` relative to ``max |F|``."""
    axes = (-3, -2, -1)
    mirrored = np.conj(np.roll(np.flip(F, axes), 1, axes))
    scale = np.abs(F).max()
    if scale == 0:
        return 0.0
    return float(np.abs(F - mirrored).max() / scale)


def fractional_laplacian(F: np.ndarray, grid: Grid, beta: float) -> np.ndarray:
    """Apply ``(-Delta)^beta`` as the multiplier ``|k|^(2 beta)``."""
    if not (0.0 < beta <= 1.0):
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    _check_shape(F, grid, "spectrum")
    return grid.fractional_symbol(beta) * F


def spectral_laplacian(F: np.ndarray, grid: Grid) -> np.ndarray:
    return -grid.k2 * F


def curl_hat(U: np.ndarray, grid: Grid) -> np.ndarray:
    kx, ky, kz = grid.kd
    return np.stack(
        (
            1j * (ky * U[2] - kz * U[1]),
            1j * (kz * U[0] - kx * U[2]),
            1j * (kx * U[1] - ky * U[0]),
        )
    )


def divergence_hat(U: np.ndarray, grid: Grid) -> np.ndarray:
    kx, ky, kz = grid.kd
    return 1j * (kx * U[0] + ky * U[1] + kz * U[2])


def gradient_hat(F: np.ndarray, grid: Grid) -> np.ndarray:
    kx, ky, kz = grid.kd
    return np.stack((1j * kx * F, 1j * ky * F, 1j * kz * F))


def curl(u: np.ndarray, grid: Grid) -> np.ndarray:
    return inverse(curl_hat(forward(u, grid), grid), grid)


def divergence(u: np.ndarray, grid: Grid) -> np.ndarray:
    return inverse(divergence_hat(forward(u, grid), grid), grid)


def gradient(f: np.ndarray, grid: Grid) -> np.ndarray:
    return inverse(gradient_hat(forward(f, grid), grid), grid)


def jacobian(u: np.ndarray, grid: Grid) -> np.ndarray:
    """``J[i, j] = d u_i / d x_j`` as a ``(3, 3, nx, ny, nz)`` array."""
    return inverse(gradient_hat(forward(u, grid), grid).swapaxes(0, 1), grid)


def advective_derivative(u: np.ndarray, w: np.ndarray, grid: Grid) -> np.ndarray:
    """``(u . grad) w``: spectral derivatives of ``w``, products in physical space."""
    _check_shape(u, grid)
    grad_w = jacobian(w, grid)
    return np.einsum("jxyz,ijxyz->ixyz", u, grad_w)


def leray_project_hat(U: np.ndarray, grid: Grid) -> np.ndarray:
    """Remove the gradient part: ``U - kd (kd . U) / |kd|^2``."""
    kx, ky, kz = grid.kd
    kdotu = (kx * U[0] + ky * U[1] + kz * U[2]) * grid.inv_kd2
    return np.stack((U[0] - kx * kdotu, U[1] - ky * kdotu, U[2] - kz * kdotu))


def biot_savart_hat(W: np.ndarray, grid: Grid) -> np.ndarray:
    """``u_hat = i k x w_hat / |k|^2`` with the mean mode annihilated."""
    return curl_hat(W, grid) * grid.inv_kd2


def biot_savart(omega: np.ndarray, grid: Grid) -> np.ndarray:
    """Divergence-free, mean-free velocity whose curl is the solenoidal part of ``omega``."""
    return inverse(biot_savart_hat(forward(omega, grid), grid), grid)


def dealias(F: np.ndarray, grid: Grid) -> np.ndarray:
    """2/3-rule truncation: zero every mode with some ``|index| > n // 3``."""
    return np.where(grid.dealias_mask, F, 0)


def magnitude(f: np.ndarray) -> np.ndarray:
    if f.ndim == 4:
        return np.sqrt(f[0] ** 2 + f[1] ** 2 + f[2] ** 2)
    return np.abs(f)


def lp_norm(f: np.ndarray, grid: Grid, p: float) -> float:
    """Cell-volume weighted L^p norm (vector fields use the pointwise magnitude)."""
    if not p >= 1:
        raise ValueError(f"L^p norm requires p >= 1 or inf, got {p}")
    _check_shape(f, grid)
    mag = magnitude(f)
    if math.isinf(p):
        return float(mag.max())
    return float((np.sum(mag**p) * grid.cell_volume) ** (1.0 / p))


def spectral_l2(F: np.ndarray, grid: Grid) -> float:
    """L^2 norm of a field evaluated from its coefficients (Parseval)."""
    return float(math.sqrt(np.sum(np.abs(F) ** 2) * grid.volume))
