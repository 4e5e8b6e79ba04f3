"""Geometry of the vorticity direction: coherence, depletion kernel, stretching.

Distances between grid points use the periodic minimal image.  Points where
``|w| < eps_mag`` have no direction; they are excluded from every sup and
sum here and carry the value 0.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numba
import numpy as np
import scipy.fft as sfft

from . import spectral as sp
from .spectral import Grid

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the bundled TBB is too old for numba; skip the probe and its warning
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

UNIT_TOL = 1e-9
ALPHA_PREFACTOR = 3.0 / (4.0 * math.pi)
EPS_REL_DEFAULT = 1e-8
R_MAX_FRACTION = 0.45


@dataclass
class DirectionField:
    grid: Grid
    xi: np.ndarray
    mask: np.ndarray
    eps_mag: float


@dataclass(frozen=True)
class CoherenceParams:
    """Search settings for the coherence sup and the stretching quadrature.

    ``eps_mag`` and ``r_max`` default to ``1e-8 * max|w|`` and
    ``0.45 * min(box lengths)``.
    """

    gamma: float = 0.5
    eps_mag: Optional[float] = None
    r_max: Optional[float] = None
    brute_force: bool = False
    line_angle: bool = False

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.eps_mag is not None and not self.eps_mag > 0:
            raise ValueError(f"eps_mag must be positive, got {self.eps_mag}")
        if self.r_max is not None and not self.r_max > 0:
            raise ValueError(f"r_max must be positive, got {self.r_max}")

    def resolve_r_max(self, grid: Grid) -> float:
        half = 0.5 * min(grid.lengths)
        if self.r_max is None:
            return R_MAX_FRACTION * min(grid.lengths)
        if self.r_max > half * (1 + 1e-12):
            raise ValueError(f"r_max = {self.r_max} exceeds half the smallest box length {half}")
        return self.r_max


def direction_field(omega: np.ndarray, grid: Grid, eps_mag: float | None = None) -> DirectionField:
    """``xi = w/|w|`` where ``|w| >= eps_mag``; masked (and zero) elsewhere."""
    mag = sp.magnitude(omega)
    if eps_mag is None:
        eps_mag = max(EPS_REL_DEFAULT * float(mag.max()), np.finfo(float).tiny)
    if not eps_mag > 0:
        raise ValueError(f"eps_mag must be positive, got {eps_mag}")
    mask = (mag >= eps_mag) & (mag > 0)
    safe = np.where(mask, mag, 1.0)
    xi = np.where(mask, omega / safe, 0.0)
    return DirectionField(grid, xi, mask, float(eps_mag))


def _check_unit(*vectors: np.ndarray) -> None:
    for v in vectors:
        norm = np.sqrt(v[0] ** 2 + v[1] ** 2 + v[2] ** 2)
        if np.any(np.abs(norm - 1.0) > UNIT_TOL):
            raise ValueError("expected unit vectors (|e| = 1 within 1e-9)")


def sin_angle(a: np.ndarray, b: np.ndarray, line_angle: bool = False,
              check: bool = True) -> np.ndarray:
    """``|sin phi(a, b)|`` for unit vectors stored along axis 0.

    The default evaluates ``|a x b|``.  ``line_angle`` instead takes the sine
    of the angle between the undirected lines, ``sqrt(1 - (a.b)^2)``; the two
    agree mathematically and differ only in rounding.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if check:
        _check_unit(a, b)
    if line_angle:
        dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
        return np.sqrt(np.maximum(0.0, 1.0 - dot * dot))
    c0 = a[1] * b[2] - a[2] * b[1]
    c1 = a[2] * b[0] - a[0] * b[2]
    c2 = a[0] * b[1] - a[1] * b[0]
    return np.minimum(np.sqrt(c0 * c0 + c1 * c1 + c2 * c2), 1.0)


def kernel_D(e1: np.ndarray, e2: np.ndarray, e3: np.ndarray, check: bool = True) -> np.ndarray:
    """``D(e1, e2, e3) = (e1 . e3) (e1 . (e2 x e3))``."""
    e1, e2, e3 = (np.asarray(e, dtype=float) for e in (e1, e2, e3))
    if check:
        _check_unit(e1, e2, e3)
    c0 = e2[1] * e3[2] - e2[2] * e3[1]
    c1 = e2[2] * e3[0] - e2[0] * e3[2]
    c2 = e2[0] * e3[1] - e2[1] * e3[0]
    return (e1[0] * e3[0] + e1[1] * e3[1] + e1[2] * e3[2]) * (
        e1[0] * c0 + e1[1] * c1 + e1[2] * c2
    )


# --------------------------------------------------------------------------
# offsets


@dataclass(frozen=True)
class OffsetTable:
    """Minimal-image lattice offsets with ``0 < |y| <= r_max``, sorted by ``|y|``."""

    di: np.ndarray
    dj: np.ndarray
    dk: np.ndarray
    r: np.ndarray
    disp: np.ndarray  # (3, n) displacement vectors

    def __len__(self) -> int:
        return self.r.size


@lru_cache(maxsize=32)
def offset_table(grid: Grid, r_max: float) -> OffsetTable:
    dx, dy, dz = grid.spacing
    ranges = [np.arange(-(n // 2) + 1, n // 2 + 1) for n in grid.shape]
    I, J, K = np.meshgrid(*ranges, indexing="ij")
    I, J, K = I.ravel(), J.ravel(), K.ravel()
    yx, yy, yz = I * dx, J * dy, K * dz
    r = np.sqrt(yx * yx + yy * yy + yz * yz)
    keep = (r > 0) & (r <= r_max)
    I, J, K, r = I[keep], J[keep], K[keep], r[keep]
    order = np.lexsort((K, J, I, r))
    I, J, K, r = I[order], J[order], K[order], r[order]
    disp = np.stack((I * dx, J * dy, K * dz))
    return OffsetTable(I, J, K, r, disp)


# --------------------------------------------------------------------------
# coherence rho_gamma


@numba.njit(cache=True, parallel=True)
def _rho_pruned_kernel(xi, mask, targets, di, dj, dk, rg, bound, shell_start, line_angle, out):
    nx, ny, nz = mask.shape
    nofs = di.size
    for t in numba.prange(targets.size):
        p = targets[t]
        i = p // (ny * nz)
        j = (p // nz) % ny
        k = p % nz
        if not mask[i, j, k]:
            out[t] = 0.0
            continue
        a0 = xi[0, i, j, k]
        a1 = xi[1, i, j, k]
        a2 = xi[2, i, j, k]
        m = 0.0
        for o in range(nofs):
            # nothing at or beyond this shell can beat |y|^-gamma
            if shell_start[o] and m >= bound[o]:
                break
            ii = (i + di[o]) % nx
            jj = (j + dj[o]) % ny
            kk = (k + dk[o]) % nz
            if not mask[ii, jj, kk]:
                continue
            b0 = xi[0, ii, jj, kk]
            b1 = xi[1, ii, jj, kk]
            b2 = xi[2, ii, jj, kk]
            if line_angle:
                dot = a0 * b0 + a1 * b1 + a2 * b2
                s = 1.0 - dot * dot
                s = math.sqrt(s) if s > 0.0 else 0.0
            else:
                c0 = a1 * b2 - a2 * b1
                c1 = a2 * b0 - a0 * b2
                c2 = a0 * b1 - a1 * b0
                s = math.sqrt(c0 * c0 + c1 * c1 + c2 * c2)
                if s > 1.0:
                    s = 1.0
            v = s / rg[o]
            if v > m:
                m = v
        out[t] = m


def _pruning_data(table: OffsetTable, gamma: float):
    rg = table.r**gamma
    inv = 1.0 / rg
    # suffix max keeps the bound valid even if pow is not monotone in the last ulp
    bound = np.maximum.accumulate(inv[::-1])[::-1].copy()
    shell_start = np.ones(len(table), dtype=np.bool_)
    shell_start[1:] = table.r[1:] != table.r[:-1]
    return rg, bound, shell_start


def _rho_pruned(xi: DirectionField, params: CoherenceParams, targets: np.ndarray) -> np.ndarray:
    grid = xi.grid
    table = offset_table(grid, params.resolve_r_max(grid))
    rg, bound, shell_start = _pruning_data(table, params.gamma)
    out = np.zeros(targets.size)
    numba.set_num_threads(min(sp.num_threads(), numba.config.NUMBA_NUM_THREADS))
    _rho_pruned_kernel(
        np.ascontiguousarray(xi.xi), np.ascontiguousarray(xi.mask),
        targets.astype(np.int64), table.di, table.dj, table.dk,
        rg, bound, shell_start, params.line_angle, out,
    )
    return out


def _rho_brute(xi: DirectionField, params: CoherenceParams) -> np.ndarray:
    """Exhaustive sup over every offset, whole-field shifts, no early exit."""
    grid = xi.grid
    table = offset_table(grid, params.resolve_r_max(grid))
    rg = table.r**params.gamma
    a = np.where(xi.mask, xi.xi, 0.0)
    rho = np.zeros(grid.shape)
    for o in range(len(table)):
        shift = (-int(table.di[o]), -int(table.dj[o]), -int(table.dk[o]))
        b = np.roll(a, shift, axis=(1, 2, 3))
        nb_ok = np.roll(xi.mask, shift, axis=(0, 1, 2))
        s = sin_angle(a, b, params.line_angle, check=False)
        rho = np.maximum(rho, np.where(nb_ok, s / rg[o], 0.0))
    return np.where(xi.mask, rho, 0.0)


def rho_gamma_field(xi: DirectionField, params: CoherenceParams) -> np.ndarray:
    """``rho(x) = sup_y |sin phi(xi(x+y), xi(x))| / |y|^gamma`` over grid offsets."""
    if params.brute_force:
        return _rho_brute(xi, params)
    targets = np.arange(xi.grid.size)
    return _rho_pruned(xi, params, targets).reshape(xi.grid.shape)


def rho_gamma_points(xi: DirectionField, points: np.ndarray, params: CoherenceParams) -> np.ndarray:
    """``rho_gamma`` at an ``(n, 3)`` array of grid indices."""
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 3) % np.array(xi.grid.shape)
    flat = (pts[:, 0] * xi.grid.ny + pts[:, 1]) * xi.grid.nz + pts[:, 2]
    if params.brute_force:
        return _rho_brute(xi, params).ravel()[flat]
    return _rho_pruned(xi, params, flat)


def rho_gamma_at(xi: DirectionField, point: tuple[int, int, int], params: CoherenceParams) -> float:
    i, j, k = (int(c) % n for c, n in zip(point, xi.grid.shape))
    if params.brute_force:
        return float(_rho_brute(xi, params)[i, j, k])
    flat = np.array([(i * xi.grid.ny + j) * xi.grid.nz + k])
    return float(_rho_pruned(xi, params, flat)[0])


# --------------------------------------------------------------------------
# stretching factor alpha


def alpha_direct(omega: np.ndarray, u: np.ndarray, grid: Grid,
                 eps_mag: float | None = None) -> np.ndarray:
    """``alpha = ((w . grad) u . w) / |w|^2`` from the velocity gradient."""
    stretch = sp.advective_derivative(omega, u, grid)
    num = np.sum(stretch * omega, axis=0)
    mag2 = np.sum(omega * omega, axis=0)
    mask = direction_field(omega, grid, eps_mag).mask
    return np.where(mask, num / np.where(mask, mag2, 1.0), 0.0)


_LEVI_CIVITA = np.zeros((3, 3, 3))
for _a, _b, _c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    _LEVI_CIVITA[_a, _b, _c] = 1.0
    _LEVI_CIVITA[_a, _c, _b] = -1.0


@lru_cache(maxsize=8)
def _alpha_kernel_hat(grid: Grid, r_max: float) -> np.ndarray:
    """FFT of ``yhat_i yhat_j |y|^-3 dV`` on the offset lattice, shape (3, 3, ...)."""
    table = offset_table(grid, r_max)
    yhat = table.disp / table.r
    weight = grid.cell_volume / table.r**3
    K = np.zeros((3, 3) + grid.shape)
    idx = (table.di % grid.nx, table.dj % grid.ny, table.dk % grid.nz)
    for i in range(3):
        for j in range(i, 3):
            K[(i, j) + idx] = yhat[i] * yhat[j] * weight
            K[(j, i) + idx] = K[(i, j) + idx]
    return sfft.fftn(K, axes=(-3, -2, -1), workers=sp.num_threads())


def alpha_integral(omega: np.ndarray, xi: DirectionField, params: CoherenceParams,
                   method: str = "fft") -> np.ndarray:
    """Discrete principal-value quadrature

        alpha(x) = 3/(4 pi) sum_y D(yhat, xi(x+y), xi(x)) |w(x+y)| |y|^-3 dV

    over offsets ``0 < |y| <= r_max`` (self cell omitted).

    ``method="fft"`` expands ``D`` into ``xi_i(x) xi_l(x) eps_jkl`` times the
    correlation of ``yhat_i yhat_j |y|^-3`` with ``w_k``, evaluated by FFT;
    ``method="direct"`` sums offset by offset.
    """
    grid = xi.grid
    r_max = params.resolve_r_max(grid)
    a = np.where(xi.mask, xi.xi, 0.0)
    w = np.where(xi.mask, omega, 0.0)
    if method == "direct":
        return _alpha_direct_sum(a, w, xi.mask, grid, r_max)
    if method != "fft":
        raise ValueError(f"unknown method {method!r}")
    Khat = _alpha_kernel_hat(grid, r_max)
    What = sfft.fftn(w, axes=(-3, -2, -1), workers=sp.num_threads())
    # correlation sum_y K(y) w(x+y) = ifft(conj(K_hat) w_hat)
    C = sfft.ifftn(
        np.conj(Khat)[:, :, None] * What[None, None, :],
        axes=(-3, -2, -1), workers=sp.num_threads(),
    ).real  # C[i, j, k] = sum_y K_ij(y) w_k(x+y)
    cross = np.einsum("jkl,ijkxyz,lxyz->ixyz", _LEVI_CIVITA, C, a)
    alpha = ALPHA_PREFACTOR * np.einsum("ixyz,ixyz->xyz", a, cross)
    return np.where(xi.mask, alpha, 0.0)


def _alpha_direct_sum(a, w, mask, grid: Grid, r_max: float) -> np.ndarray:
    table = offset_table(grid, r_max)
    mag = sp.magnitude(w)
    total = np.zeros(grid.shape)
    cell = grid.cell_volume
    for o in range(len(table)):
        shift = (-int(table.di[o]), -int(table.dj[o]), -int(table.dk[o]))
        b = np.roll(a, shift, axis=(1, 2, 3))
        mb = np.roll(mag, shift, axis=(0, 1, 2))
        e1 = (table.disp[:, o] / table.r[o]).reshape(3, 1, 1, 1)
        D = kernel_D(e1, b, a, check=False)
        total += D * mb * (cell / table.r[o] ** 3)
    return np.where(mask, ALPHA_PREFACTOR * total, 0.0)


# --------------------------------------------------------------------------
# depletion bound


@dataclass
class DepletionReport:
    samples: int
    max_violation: float
    max_abs_D: float

    @property
    def ok(self) -> bool:
        return self.max_violation <= 1e-12 and self.max_abs_D <= 1.0 + 1e-12


def random_unit_vectors(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal((3, n))
    return v / np.sqrt(np.sum(v * v, axis=0))


def depletion_bound_monte_carlo(samples: int = 10**6, seed: int = 0,
                                chunk: int = 200_000) -> DepletionReport:
    """Check ``|D(e1, e2, e3)| <= |sin phi(e2, e3)|`` on random unit triples."""
    rng = np.random.default_rng(seed)
    worst, worst_D, done = -np.inf, 0.0, 0
    while done < samples:
        n = min(chunk, samples - done)
        e1, e2, e3 = (random_unit_vectors(rng, n) for _ in range(3))
        D = np.abs(kernel_D(e1, e2, e3, check=False))
        s = sin_angle(e2, e3, check=False)
        worst = max(worst, float((D - s).max()))
        worst_D = max(worst_D, float(D.max()))
        done += n
    return DepletionReport(samples, worst, worst_D)


def depletion_bound_check(xi: DirectionField, params: CoherenceParams,
                          max_offsets: int | None = None, seed: int = 0) -> DepletionReport:
    """Check the depletion bound on every masked-in pair ``(x, x + y)`` of a field.

    ``max_offsets`` subsamples the offset table with a seeded generator.
    """
    grid = xi.grid
    table = offset_table(grid, params.resolve_r_max(grid))
    order = np.arange(len(table))
    if max_offsets is not None and max_offsets < len(table):
        order = np.sort(np.random.default_rng(seed).choice(order, max_offsets, replace=False))
    a = np.where(xi.mask, xi.xi, 0.0)
    worst, worst_D, count = -np.inf, 0.0, 0
    for o in order:
        shift = (-int(table.di[o]), -int(table.dj[o]), -int(table.dk[o]))
        b = np.roll(a, shift, axis=(1, 2, 3))
        ok = xi.mask & np.roll(xi.mask, shift, axis=(0, 1, 2))
        if not ok.any():
            continue
        e1 = (table.disp[:, o] / table.r[o]).reshape(3, 1, 1, 1)
        D = np.abs(kernel_D(e1, b, a, check=False))[ok]
        s = sin_angle(b, a, params.line_angle, check=False)[ok]
        worst = max(worst, float((D - s).max()))
        worst_D = max(worst_D, float(D.max()))
        count += int(ok.sum())
    return DepletionReport(count, worst if count else 0.0, worst_D)
