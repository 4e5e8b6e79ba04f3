"""Built-in property audits run by ``fracnse verify``.

Each audit returns an ``AuditResult``; the default sizes are small enough
for a quick self-check, and the acceptance tests call the same functions
with their full sample counts.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import spectral as sp
from .balance import positivity_gap, positivity_holds
from .dynamics import RandomSpectrum, SimParams, SimState, SingleModeBeltrami, step
from .geometry import (
    CoherenceParams,
    DirectionField,
    alpha_direct,
    alpha_integral,
    depletion_bound_monte_carlo,
    direction_field,
    random_unit_vectors,
    rho_gamma_field,
)
from .spectral import Grid


@dataclass
class AuditResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.2f} s)"


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> AuditResult:
    start = time.perf_counter()
    passed, detail = fn()
    return AuditResult(name, bool(passed), detail, time.perf_counter() - start)


def smooth_random_field(grid: Grid, seed: int) -> np.ndarray:
    """Seeded band-limited solenoidal field with a seed-dependent spectral slope."""
    rng = np.random.default_rng(10_000 + seed)
    return RandomSpectrum(seed=seed, slope=float(rng.uniform(0.0, 3.0)),
                          amplitude=float(rng.uniform(0.5, 2.0)), k_peak=int(rng.integers(2, 5))).generate(grid)


def positivity_audit(n: int = 16, fields: int = 4, ps: Sequence[float] = (2, 4, 6),
                     betas: Sequence[float] = (0.3, 0.5, 0.75, 1.0)) -> AuditResult:
    def run():
        grid = Grid.cube(n)
        violations, worst = 0, np.inf
        for seed in range(fields):
            omega = smooth_random_field(grid, seed)
            for p in ps:
                for beta in betas:
                    lhs, rhs = positivity_gap(omega, grid, p, beta)
                    violations += not positivity_holds(lhs, rhs)
                    worst = min(worst, (lhs - rhs) / (1.0 + abs(lhs)))
        total = fields * len(ps) * len(betas)
        return violations == 0, f"{violations} violations in {total} cases, min relative gap {worst:.3e}"
    return _timed("positivity bound", run)


def depletion_audit(samples: int = 100_000, seed: int = 0) -> AuditResult:
    def run():
        rep = depletion_bound_monte_carlo(samples, seed)
        return rep.ok, f"{rep.samples} triples, max violation {rep.max_violation:.3e}"
    return _timed("depletion bound", run)


def random_direction_field(grid: Grid, seed: int) -> DirectionField:
    """Unit vectors: white noise for even seeds, smooth fields for odd ones.

    About five percent of points are masked out.
    """
    rng = np.random.default_rng(seed)
    if seed % 2 == 0:
        xi = random_unit_vectors(rng, grid.size).reshape((3,) + grid.shape)
    else:
        w = smooth_random_field(grid, seed)
        xi = w / np.maximum(sp.magnitude(w), 1e-300)
    mask = rng.uniform(size=grid.shape) > 0.05
    return DirectionField(grid, np.where(mask, xi, 0.0), mask, 0.0)


def rho_oracle_audit(n: int = 12, fields: int = 6,
                     gammas: Sequence[float] = (0.25, 0.5, 1.0)) -> AuditResult:
    def run():
        grid = Grid.cube(n)
        mismatches = 0
        for seed in range(fields):
            xi = random_direction_field(grid, seed)
            for gamma in gammas:
                fast = rho_gamma_field(xi, CoherenceParams(gamma=gamma))
                slow = rho_gamma_field(xi, CoherenceParams(gamma=gamma, brute_force=True))
                mismatches += int(np.count_nonzero(fast != slow))
        return mismatches == 0, f"{fields * len(gammas)} fields at {n}^3, {mismatches} differing points"
    return _timed("rho_gamma pruned vs brute force", run)


def abc_field(grid: Grid, A: float = 1.0, B: float = 0.8, C: float = 0.6) -> np.ndarray:
    """Arnold-Beltrami-Childress field, a curl eigenfield with eigenvalue 1 on the 2 pi box."""
    x, y, z = grid.coords()
    return np.stack([
        np.broadcast_to(A * np.sin(z) + C * np.cos(y), grid.shape),
        np.broadcast_to(B * np.sin(x) + A * np.cos(z), grid.shape),
        np.broadcast_to(C * np.sin(y) + B * np.cos(x), grid.shape),
    ])


def beltrami_trajectory_error(n: int, beta: float, steps: int = 100, dt: float = 0.01,
                              kind: str = "abc") -> float:
    """Max over steps of ``||w_full - w_diffusion||_inf`` from Beltrami data.

    ``kind`` is ``"abc"`` or ``"single"`` (one Fourier mode along x).
    """
    grid = Grid.cube(n)
    omega0 = abc_field(grid) if kind == "abc" else SingleModeBeltrami().generate(grid)
    full = SimState.from_vorticity(omega0, grid)
    lin = SimState.from_vorticity(omega0, grid)
    p_full = SimParams(beta=beta, dt=dt, t_end=steps * dt)
    p_lin = SimParams(beta=beta, dt=dt, t_end=steps * dt, nonlinear=False)
    worst = 0.0
    for _ in range(steps):
        full = step(full, p_full)
        lin = step(lin, p_lin)
        worst = max(worst, float(np.abs(full.vorticity() - lin.vorticity()).max()))
    return worst


def beltrami_audit(n: int = 16, steps: int = 100,
                   betas: Sequence[float] = (0.5, 0.75, 1.0)) -> AuditResult:
    def run():
        errs = [beltrami_trajectory_error(n, beta, steps, kind=kind)
                for beta in betas for kind in ("abc", "single")]
        return max(errs) < 1e-8, f"max deviation {max(errs):.3e} over {steps} steps"
    return _timed("Beltrami cancellation", run)


def run_all() -> list[AuditResult]:
    return [positivity_audit(), depletion_audit(), rho_oracle_audit(), beltrami_audit()]


def gaussian_vortex_blob(grid: Grid, sigma: float) -> np.ndarray:
    """Solenoidal vorticity ``curl A`` of a Gaussian-enveloped potential centred in the box."""
    x, y, z = grid.mesh()
    X, Y, Z = (c - 0.5 * L for c, L in zip((x, y, z), grid.lengths))
    phi = np.exp(-(X**2 + Y**2 + Z**2) / (2.0 * sigma**2))
    A = np.stack([phi * (1.0 + Y / sigma), phi * (Z / sigma), phi * (X / sigma + 0.5)])
    return sp.curl(A, grid)


@dataclass
class AlphaAgreement:
    correlation: float
    relative_l2: float
    points: int


def alpha_agreement(omega: np.ndarray, grid: Grid, r_max: float | None = None) -> AlphaAgreement:
    """Pointwise correlation and relative L2 gap of the quadrature against ``alpha_direct``."""
    params = CoherenceParams(r_max=r_max)
    xi = direction_field(omega, grid)
    exact = alpha_direct(omega, sp.biot_savart(omega, grid), grid)
    quad = alpha_integral(omega, xi, params)
    m = xi.mask
    corr = float(np.corrcoef(exact[m], quad[m])[0, 1])
    rel = float(np.sqrt(np.sum((quad - exact)[m] ** 2) / np.sum(exact[m] ** 2)))
    return AlphaAgreement(corr, rel, int(m.sum()))
