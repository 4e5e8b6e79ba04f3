"""Analytic diagnostics: L^p norms, the hybrid coherence functional, the
Gronwall envelope, the L^q(L^p) criterion, the positivity and Sobolev audits,
and the scaling auditor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import spectral as sp
from .dynamics import rescale_solution
from .geometry import (
    CoherenceParams,
    DirectionField,
    direction_field,
    rho_gamma_field,
    rho_gamma_points,
)
from .spectral import Grid

LITERAL = "literal"
CONSISTENT = "consistent"
VARIANTS = (LITERAL, CONSISTENT)


@dataclass(frozen=True)
class BalanceParams:
    """Exponents of the hybrid functional ``int (int (rho_gamma |w|^a)^p1 dx)^(2/p1) dt``.

    ``variant`` selects which scaling constraint ``constraint_residual``
    reports by default: ``"literal"`` is ``p1 (gamma + 2a) - 3 = beta p1``,
    ``"consistent"`` is ``p1 (gamma + 2 beta a) - 3 = beta p1``.  Neither is
    enforced.
    """

    p: float
    gamma: float
    a: float
    p1: float
    beta: float
    variant: str = LITERAL
    chen_q: float = math.inf

    def __post_init__(self):
        if not (0.0 < self.beta <= 1.0):
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if not self.p > 3.0 / self.beta:
            raise ValueError(f"p must exceed 3/beta = {3.0 / self.beta}, got {self.p}")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not self.a > 0:
            raise ValueError(f"a must be positive, got {self.a}")
        if not self.p1 >= 1:
            raise ValueError(f"p1 must be >= 1, got {self.p1}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not self.chen_q >= 1:
            raise ValueError(f"chen_q must be >= 1 or inf, got {self.chen_q}")

    @property
    def embed_exponent(self) -> float:
        return 3.0 * self.p / (3.0 - 2.0 * self.beta)

    def constraint_residual(self, variant: str | None = None) -> float:
        variant = variant or self.variant
        weight = self.a if variant == LITERAL else self.beta * self.a
        return self.p1 * (self.gamma + 2.0 * weight) - 3.0 - self.beta * self.p1

    @staticmethod
    def solve_p1(gamma: float, a: float, beta: float, variant: str = CONSISTENT) -> float:
        """``p1`` that zeroes the chosen constraint for given ``gamma, a, beta``."""
        weight = a if variant == LITERAL else beta * a
        denom = gamma + 2.0 * weight - beta
        if denom <= 0:
            raise ValueError("no positive p1 satisfies the constraint for these exponents")
        return 3.0 / denom


@dataclass
class DiagnosticsRow:
    t: float
    lp_p: float
    lp_embed: float
    hybrid: float
    hybrid_cum: float
    gronwall_rhs: float
    alpha_pairing: float
    diffusion_lhs: float
    diffusion_rhs: float
    gronwall_fit_c: float = 0.0
    chen_margin: float = math.nan


# --------------------------------------------------------------------------
# the hybrid functional


def _coherence_for(params: BalanceParams, coherence: CoherenceParams | None) -> CoherenceParams:
    if coherence is None:
        return CoherenceParams(gamma=params.gamma)
    return replace(coherence, gamma=params.gamma)


def hybrid_density(omega: np.ndarray, xi: DirectionField, params: BalanceParams,
                   coherence: CoherenceParams | None = None) -> np.ndarray:
    """Pointwise ``rho_gamma |w|^a``."""
    rho = rho_gamma_field(xi, _coherence_for(params, coherence))
    return rho * sp.magnitude(omega) ** params.a


def hybrid_integrand(omega: np.ndarray, xi: DirectionField, params: BalanceParams,
                     coherence: CoherenceParams | None = None) -> float:
    """One time slice of the functional: ``|| rho_gamma |w|^a ||_{L^p1}^2``."""
    density = hybrid_density(omega, xi, params, coherence)
    return sp.lp_norm(density, xi.grid, params.p1) ** 2


def _check_ordered(rows: Sequence[DiagnosticsRow]) -> None:
    ts = [r.t for r in rows]
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise ValueError("diagnostics rows must be ordered in time")


def hybrid_functional(rows: Sequence[DiagnosticsRow]) -> float:
    """Trapezoidal time integral of the ``hybrid`` column."""
    _check_ordered(rows)
    total = 0.0
    for prev, cur in zip(rows, rows[1:]):
        total += 0.5 * (cur.t - prev.t) * (prev.hybrid + cur.hybrid)
    return total


# --------------------------------------------------------------------------
# Gronwall envelope


def gronwall_envelope(rows: Sequence[DiagnosticsRow], c: float, p: float) -> list[float]:
    """``||w_0||_p^p exp(c * hybrid_cum(t))`` per row."""
    if not rows:
        raise ValueError("need at least one diagnostics row")
    base = rows[0].lp_p ** p
    return [base * math.exp(c * r.hybrid_cum) for r in rows]


def fit_gronwall_constant(rows: Sequence[DiagnosticsRow], p: float,
                          growth_tol: float = 1e-12) -> float:
    """Smallest ``c >= 0`` with ``||w(t)||_p^p`` under the envelope at every row.

    Returns ``inf`` when the norm grows (beyond ``growth_tol`` in log) while
    ``hybrid_cum`` is still zero: no finite constant fits.
    """
    if not rows:
        raise ValueError("need at least one diagnostics row")
    _check_ordered(rows)
    base = rows[0].lp_p
    if base == 0:
        return 0.0 if all(r.lp_p == 0 for r in rows) else math.inf
    c = 0.0
    for r in rows:
        growth = p * math.log(r.lp_p / base) if r.lp_p > 0 else -math.inf
        if r.hybrid_cum > 0:
            c = max(c, growth / r.hybrid_cum)
        elif growth > growth_tol:
            return math.inf
    return c


# --------------------------------------------------------------------------
# L^q(0, T; L^p) criterion


def chen_margin(p: float, q: float, beta: float) -> float:
    """``beta - 3/(2p) - beta/q``."""
    return beta - 1.5 / p - (0.0 if math.isinf(q) else beta / q)


def chen_criterion(p: float, q: float, beta: float, check_range: bool = True) -> tuple[bool, float]:
    """Whether ``w in L^q(0,T; L^p)`` with this ``(p, q)`` satisfies the criterion.

    Requires ``p > 3/beta`` unless ``check_range`` is off.  At ``q = inf`` the
    inequality must hold strictly.
    """
    if not (0.0 < beta <= 1.0):
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    if check_range and not p > 3.0 / beta:
        raise ValueError(f"criterion needs p > 3/beta = {3.0 / beta}, got p = {p}")
    if not q >= 1:
        raise ValueError(f"q must be >= 1 or inf, got {q}")
    margin = chen_margin(p, q, beta)
    satisfied = margin > 0 if math.isinf(q) else margin >= 0
    return satisfied, margin


# --------------------------------------------------------------------------
# proof-step audits


def positivity_gap(omega: np.ndarray, grid: Grid, p: float, beta: float) -> tuple[float, float]:
    """Both sides of the positivity bound

        int (-Delta)^beta w . w |w|^(p-2)  >=  (2/p) int |(-Delta)^(beta/2) |w|^(p/2)|^2
    """
    if p < 2:
        raise ValueError(f"positivity audit needs p >= 2, got {p}")
    W = sp.forward(omega, grid)
    Lw = sp.inverse(sp.fractional_laplacian(W, grid, beta), grid)
    mag = sp.magnitude(omega)
    lhs = float(np.sum(np.sum(Lw * omega, axis=0) * mag ** (p - 2.0)) * grid.cell_volume)
    G = sp.forward(mag ** (p / 2.0), grid)
    rhs = (2.0 / p) * float(np.sum(grid.fractional_symbol(beta) * np.abs(G) ** 2) * grid.volume)
    return lhs, rhs


def positivity_holds(lhs: float, rhs: float) -> bool:
    return lhs >= rhs - 1e-10 * (1.0 + abs(lhs))


def sobolev_ratio_audit(omega: np.ndarray, grid: Grid, p: float, beta: float) -> float:
    """``||(-Delta)^(beta/2) g||_2^2 / ||g - mean g||_{6/(3-2 beta)}^2`` with ``g = |w|^(p/2)``.

    Returns ``nan`` when the denominator vanishes (e.g. ``w = 0``).
    """
    if p < 2:
        raise ValueError(f"Sobolev audit needs p >= 2, got {p}")
    g = sp.magnitude(omega) ** (p / 2.0)
    G = sp.forward(g, grid)
    lhs = float(np.sum(grid.fractional_symbol(beta) * np.abs(G) ** 2) * grid.volume)
    q = 6.0 / (3.0 - 2.0 * beta)
    rhs = sp.lp_norm(g - g.mean(), grid, q) ** 2
    if rhs == 0:
        return math.nan
    return lhs / rhs


def stretching_pairing(omega: np.ndarray, u: np.ndarray, grid: Grid, p: float) -> float:
    """``int (w . grad) u . w |w|^(p-2) dx`` (points with ``w = 0`` contribute 0)."""
    stretch = np.sum(sp.advective_derivative(omega, u, grid) * omega, axis=0)
    mag = sp.magnitude(omega)
    nonzero = mag > 0
    weight = np.where(nonzero, np.where(nonzero, mag, 1.0) ** (p - 2.0), 0.0)
    return float(np.sum(stretch * weight) * grid.cell_volume)


# --------------------------------------------------------------------------
# scaling


def spatial_scaling_exponent(params: BalanceParams) -> float:
    """Power of ``lam`` picked up by ``(int (rho |w|^a)^p1 dx)^(2/p1)`` under the rescaling."""
    return (2.0 / params.p1) * (params.p1 * (params.gamma + 2.0 * params.beta * params.a) - 3.0)


def scaling_audit(params: BalanceParams) -> float:
    """Net power of ``lam`` acquired by the full space-time functional."""
    return spatial_scaling_exponent(params) - 2.0 * params.beta


@dataclass
class ScalingAudit:
    lam: float
    value_base: float
    value_rescaled: float
    ratio: float
    observed_exponent: float
    symbolic_exponent: float

    @property
    def relative_error(self) -> float:
        if self.symbolic_exponent == 0:
            return abs(self.observed_exponent)
        return abs(self.observed_exponent - self.symbolic_exponent) / abs(self.symbolic_exponent)


def scaling_audit_numeric(omega: np.ndarray, grid: Grid, lam: int, params: BalanceParams,
                          coherence: CoherenceParams | None = None) -> ScalingAudit:
    """Measure the spatial scaling exponent on a snapshot.

    The rescaled field ``lam^(2 beta) w(lam x)`` is ``L/lam``-periodic; its
    functional is taken over one period cell (the image of the base box), and
    the coherence search radius shrinks by ``lam`` with it.
    """
    if not (float(lam).is_integer() and lam >= 2):
        raise ValueError(f"numeric scaling audit needs an integer lambda >= 2, got {lam}")
    lam = int(lam)
    if any(n % lam for n in grid.shape):
        raise ValueError(f"grid sizes must be divisible by lambda = {lam}")
    coh = _coherence_for(params, coherence)

    xi = direction_field(omega, grid, coh.eps_mag)
    base = hybrid_integrand(omega, xi, params, coh)

    scaled = rescale_solution(omega, grid, lam, params.beta)
    eps = None if coh.eps_mag is None else coh.eps_mag * lam ** (2.0 * params.beta)
    coh_scaled = replace(coh, r_max=coh.resolve_r_max(grid) / lam, eps_mag=eps)
    xi_scaled = direction_field(scaled, grid, coh_scaled.eps_mag)
    # one period cell of the rescaled field suffices
    cell = np.stack(
        np.meshgrid(*(np.arange(n // lam) for n in grid.shape), indexing="ij"), axis=-1
    ).reshape(-1, 3)
    rho = rho_gamma_points(xi_scaled, cell, coh_scaled)
    mag = sp.magnitude(scaled)[cell[:, 0], cell[:, 1], cell[:, 2]]
    cell_integral = float(np.sum((rho * mag**params.a) ** params.p1) * grid.cell_volume)
    rescaled = cell_integral ** (2.0 / params.p1)

    ratio = rescaled / base if base > 0 else math.nan
    observed = math.log(ratio) / math.log(lam) if ratio > 0 else math.nan
    return ScalingAudit(lam, base, rescaled, ratio, observed, spatial_scaling_exponent(params))


# --------------------------------------------------------------------------
# per-snapshot rows


def diagnostics_row(omega: np.ndarray, grid: Grid, t: float, params: BalanceParams,
                    coherence: CoherenceParams | None = None) -> DiagnosticsRow:
    """Snapshot quantities; the cumulative columns are left at zero."""
    coh = _coherence_for(params, coherence)
    u = sp.biot_savart(omega, grid)
    xi = direction_field(omega, grid, coh.eps_mag)
    lp_p = sp.lp_norm(omega, grid, params.p)
    hybrid = hybrid_integrand(omega, xi, params, coh)
    lhs, rhs = positivity_gap(omega, grid, params.p, params.beta)
    return DiagnosticsRow(
        t=t,
        lp_p=lp_p,
        lp_embed=sp.lp_norm(omega, grid, params.embed_exponent),
        hybrid=hybrid,
        hybrid_cum=0.0,
        gronwall_rhs=hybrid * lp_p**params.p,
        alpha_pairing=stretching_pairing(omega, u, grid, params.p),
        diffusion_lhs=lhs,
        diffusion_rhs=rhs,
        chen_margin=chen_margin(params.p, params.chen_q, params.beta),
    )


@dataclass
class DiagnosticsRecorder:
    """Run-loop sink accumulating ``DiagnosticsRow`` history."""

    grid: Grid
    params: BalanceParams
    coherence: CoherenceParams | None = None
    rows: list[DiagnosticsRow] = field(default_factory=list)

    def __call__(self, state) -> None:
        row = diagnostics_row(state.vorticity(), self.grid, state.t, self.params, self.coherence)
        if self.rows:
            prev = self.rows[-1]
            row.hybrid_cum = prev.hybrid_cum + 0.5 * (row.t - prev.t) * (prev.hybrid + row.hybrid)
        self.rows.append(row)
        row.gronwall_fit_c = fit_gronwall_constant(self.rows, self.params.p)
