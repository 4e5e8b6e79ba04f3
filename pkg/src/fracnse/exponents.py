"""The exponent system behind the hybrid criterion.

Ten parameters ``(p, a, b, gamma, p1, p2, p3, s, alpha_i, alpha_p)`` tied by
eight equations:

    E1  a + b = p
    E2  1/p1 + 1/p2 + 1/p3 = 1
    E3  1/p2 + 1 = (3 - gamma)/3 + 1/s
    E4  1/s = alpha_p/p + (1 - alpha_p) theta
    E5  1/(b p3) = alpha_i/p + (1 - alpha_i) theta
    E6  2 (alpha_p + b alpha_i) = p
    E7  2 ((1 - alpha_p) + b (1 - alpha_i)) = p
    E8  p1 (gamma + 2a) - 3 = beta p1          (literal)
        p1 (gamma + 2 beta a) - 3 = beta p1    (consistent)

with ``theta = (3 - 2 beta) / (3p)``.  Elimination gives ``b = p - 1``,
``a = 1``, ``1/s + 1/p3 = (3 - beta)/3`` and, from E2 and E3,
``gamma = 3/p1 - beta``.  The consistent E8 reproduces that last relation,
so one equation is dependent and three parameters stay free; the literal E8
contradicts it unless ``beta = 1``.

Closed forms are evaluated in ``fractions.Fraction`` so that solved vectors
carry no rounding beyond the final conversion.
"""
from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import least_squares

LITERAL = "literal"
CONSISTENT = "consistent"
VARIANTS = (LITERAL, CONSISTENT)

NAMES = ("p", "a", "b", "gamma", "p1", "p2", "p3", "s", "alpha_i", "alpha_p")
RESIDUAL_TOL = 1e-12
RANK_TOL = 1e-8
CERT_STARTS = 64
# infeasibility margin below which the certificate is treated as a zero
CERT_TOL = 1e-8


@dataclass(frozen=True)
class ExponentVector:
    p: float
    a: float
    b: float
    gamma: float
    p1: float
    p2: float
    p3: float
    s: float
    alpha_i: float
    alpha_p: float

    def as_array(self) -> np.ndarray:
        return np.array([float(v) for v in astuple(self)])

    @classmethod
    def from_array(cls, x: Sequence[float]) -> "ExponentVector":
        return cls(*(float(v) for v in x))

    def to_float(self) -> "ExponentVector":
        return ExponentVector.from_array(astuple(self))


@dataclass(frozen=True)
class ConstraintSet:
    beta: float
    variant: str = CONSISTENT

    def __post_init__(self):
        if not (0.0 < float(self.beta) <= 1.0):
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


@dataclass(frozen=True)
class Certificate:
    """Outcome of the bounded multistart least-squares search."""

    min_max_residual: float
    best: ExponentVector
    starts: int
    seeds: tuple[int, int]

    @property
    def infeasible(self) -> bool:
        return self.min_max_residual > CERT_TOL


@dataclass(frozen=True)
class Infeasible:
    cs: ConstraintSet
    reason: str
    certificate: Certificate | None = None

    @property
    def margin(self) -> float:
        return math.nan if self.certificate is None else self.certificate.min_max_residual


# --------------------------------------------------------------------------
# residuals


def residuals(v: ExponentVector, cs: ConstraintSet) -> list:
    """Signed residuals E1..E8.  Exact for ``Fraction`` inputs."""
    p, a, b, gamma, p1, p2, p3, s, al, ap = astuple(v)
    beta = cs.beta
    if isinstance(p, Fraction):
        beta = _frac(beta)
    theta = (3 - 2 * beta) / (3 * p)
    weight = a if cs.variant == LITERAL else beta * a
    return [
        a + b - p,
        1 / p1 + 1 / p2 + 1 / p3 - 1,
        1 / p2 + 1 - (3 - gamma) / 3 - 1 / s,
        1 / s - (ap / p + (1 - ap) * theta),
        1 / (b * p3) - (al / p + (1 - al) * theta),
        2 * (ap + b * al) - p,
        2 * ((1 - ap) + b * (1 - al)) - p,
        p1 * (gamma + 2 * weight) - 3 - beta * p1,
    ]


def max_residual(v: ExponentVector, cs: ConstraintSet) -> float:
    return max(abs(float(r)) for r in residuals(v, cs))


# --------------------------------------------------------------------------
# validity


def _in_closed(x, lo, hi, tol=RESIDUAL_TOL) -> bool:
    return lo - tol * max(1.0, abs(float(lo))) <= x <= hi + tol * max(1.0, abs(float(hi)))


def validity(v: ExponentVector, beta: float) -> dict[str, tuple[bool, str]]:
    """Range checks; each flag maps to ``(ok, bound description)``."""
    f = v.to_float()
    hi = 3.0 * f.p / (3.0 - 2.0 * beta)
    bp3 = f.b * f.p3
    tol = RESIDUAL_TOL
    checks = {
        "p1": (f.p1 >= 1 - tol, "p1 >= 1"),
        "p2": (f.p2 >= 1 - tol, "p2 >= 1"),
        "p3": (f.p3 >= 1 - tol, "p3 >= 1"),
        "s": (f.s >= 1 - tol, "s >= 1"),
        "alpha_i": (_in_closed(f.alpha_i, 0.0, 1.0), "alpha_i in [0, 1]"),
        "alpha_p": (_in_closed(f.alpha_p, 0.0, 1.0), "alpha_p in [0, 1]"),
        "gamma": (0.0 < f.gamma <= 1.0 + tol, "gamma in (0, 1]"),
        "a": (f.a > 0, "a > 0"),
        "b": (f.b > 0, "b > 0"),
        "p": (f.p > 3.0 / beta, f"p > 3/beta = {3.0 / beta:g}"),
        "s_interp": (_in_closed(f.s, f.p, hi), f"s in [p, 3p/(3-2beta)] = [{f.p:g}, {hi:g}]"),
        "bp3_interp": (_in_closed(bp3, f.p, hi), f"b*p3 in [p, 3p/(3-2beta)] = [{f.p:g}, {hi:g}]"),
        "gamma_young": (f.gamma < 3.0, "gamma < 3"),
    }
    return checks


def is_valid(v: ExponentVector, beta: float) -> bool:
    return all(ok for ok, _ in validity(v, beta).values())


def failed_flags(v: ExponentVector, beta: float) -> list[str]:
    return [msg for ok, msg in validity(v, beta).values() if not ok]


# --------------------------------------------------------------------------
# closed-form solve


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float) and not math.isfinite(x):
        raise ValueError(f"non-finite parameter {x}")
    return Fraction(x)


def gamma_closed_form(p1, beta, variant: str):
    """``gamma`` from E8 with ``a = 1``."""
    if variant == LITERAL:
        return beta - 2 + 3 / p1
    return 3 / p1 - beta


def admissible_sigma(p, p1, beta, variant: str = CONSISTENT) -> tuple[Fraction, Fraction]:
    """Interval ``[lo, hi]`` of ``1/s`` keeping every derived exponent in range.

    All the admissibility constraints are linear in ``sigma = 1/s`` once
    ``p, p1, beta`` are fixed.  The ``p2`` bound is strict at ``lo``.
    """
    p, p1, beta = _frac(p), _frac(p1), _frac(beta)
    gamma = gamma_closed_form(p1, beta, variant)
    b = p - 1
    theta = (3 - 2 * beta) / (3 * p)
    total = (3 - beta) / 3
    lo = max(theta, total - b / p, gamma / 3)
    hi = min(1 / p, total - b * theta, Fraction(1))
    return lo, hi


def default_s(p, p1, beta, variant: str = CONSISTENT) -> Fraction:
    """Midpoint of the admissible ``s`` interval.

    When no ``s`` keeps every derived exponent in range, the midpoint of the
    interpolation interval ``[p, 3p/(3 - 2 beta)]`` is used instead and the
    validity flags report what fails.
    """
    lo, hi = admissible_sigma(p, p1, beta, variant)
    if lo < hi and lo > 0:
        return (1 / lo + 1 / hi) / 2
    p, beta = _frac(p), _frac(beta)
    return (p + 3 * p / (3 - 2 * beta)) / 2


def _check_free(p, p1, s, beta) -> None:
    if not p > 3 / beta:
        raise ValueError(f"p must exceed 3/beta = {float(3 / beta):g}, got {float(p):g}")
    if not p1 >= 1:
        raise ValueError(f"p1 must be >= 1, got {float(p1):g}")
    if s is not None:
        hi = 3 * p / (3 - 2 * beta)
        if not (s >= 1 and p <= s <= hi):
            raise ValueError(
                f"s must lie in [p, 3p/(3-2beta)] = [{float(p):g}, {float(hi):g}], got {float(s):g}"
            )


def solve_family(free: dict, cs: ConstraintSet, exact: bool = False,
                 certify: bool = True) -> ExponentVector | Infeasible:
    """Solve for the remaining exponents given ``p``, ``p1`` and optionally ``s``.

    ``s`` defaults to the midpoint of its admissible interval.  Under the
    literal variant with ``beta != 1`` the system is contradictory; the
    result is then ``Infeasible`` carrying a least-squares certificate
    (skipped when ``certify`` is off).
    """
    unknown = set(free) - {"p", "p1", "s"}
    if unknown:
        raise ValueError(f"free parameters are p, p1 and s; got {sorted(unknown)}")
    if "p" not in free or "p1" not in free:
        raise ValueError("free must specify p and p1")
    beta = _frac(cs.beta)
    p, p1 = _frac(free["p"]), _frac(free["p1"])
    s = free.get("s")
    s = None if s is None else _frac(s)
    _check_free(p, p1, s, beta)

    if cs.variant == LITERAL and beta != 1:
        cert = infeasibility_certificate(cs) if certify else None
        return Infeasible(
            cs,
            f"E1-E7 force 1/s + 1/p3 = (3-beta)/3 while the literal E8 forces "
            f"(beta+1)/3; these differ at beta = {float(beta):g}",
            cert,
        )

    if s is None:
        s = default_s(p, p1, beta, cs.variant)
    a = Fraction(1)
    b = p - 1
    gamma = gamma_closed_form(p1, beta, cs.variant)
    theta = (3 - 2 * beta) / (3 * p)
    scale = 3 * p / (2 * beta)
    inv_p3 = (3 - beta) / 3 - 1 / s
    inv_p2 = 1 / s - gamma / 3
    if inv_p3 == 0 or inv_p2 == 0:
        raise ValueError("degenerate choice: p2 or p3 would be infinite")
    p3 = 1 / inv_p3
    p2 = 1 / inv_p2
    alpha_p = (1 / s - theta) * scale
    alpha_i = (1 / (b * p3) - theta) * scale
    v = ExponentVector(p, a, b, gamma, p1, p2, p3, s, alpha_i, alpha_p)
    return v if exact else v.to_float()


# --------------------------------------------------------------------------
# infeasibility certificate


def _bounds(beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Search box in ``(p, a, b, gamma, 1/p1, 1/p2, 1/p3, 1/s, alpha_i, alpha_p)``."""
    p_lo = 3.0 / beta
    p_hi = p_lo + 30.0
    lo = np.array([p_lo, 1e-6, 1e-6, 1e-6, 1e-3, 1e-3, 1e-3, 1e-3, 0.0, 0.0])
    hi = np.array([p_hi, p_hi, p_hi, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0])
    return lo, hi


def _from_search(x: np.ndarray) -> ExponentVector:
    p, a, b, g, q1, q2, q3, sig, al, ap = x
    return ExponentVector(p, a, b, g, 1 / q1, 1 / q2, 1 / q3, 1 / sig, al, ap)


@lru_cache(maxsize=64)
def _certificate(beta: float, variant: str, starts: int, seed0: int) -> Certificate:
    cs = ConstraintSet(beta, variant)
    lo, hi = _bounds(beta)

    def fun(x):
        return np.array(residuals(_from_search(x), cs), dtype=float)

    best_val, best_x = math.inf, None
    for seed in range(seed0, seed0 + starts):
        rng = np.random.default_rng(seed)
        x0 = lo + (hi - lo) * rng.uniform(0.05, 0.95, size=lo.size)
        res = least_squares(fun, x0, bounds=(lo, hi), xtol=1e-12, ftol=1e-12, gtol=1e-12,
                            max_nfev=400)
        val = float(np.max(np.abs(fun(res.x))))
        if val < best_val:
            best_val, best_x = val, res.x
    return Certificate(best_val, _from_search(best_x), starts, (seed0, seed0 + starts - 1))


def infeasibility_certificate(cs: ConstraintSet, starts: int = CERT_STARTS,
                              seed: int = 0) -> Certificate:
    """Smallest max-residual found by ``starts`` bounded least-squares runs.

    Seeds ``seed, ..., seed + starts - 1`` draw the start points uniformly in
    the search box: ``p in [3/beta, 3/beta + 30]``, ``a, b`` in
    ``(0, p_max]``, ``gamma`` and ``alpha_i, alpha_p`` in the unit interval,
    and the reciprocals of ``p1, p2, p3, s`` in ``[1e-3, 1]``.
    """
    return _certificate(float(cs.beta), cs.variant, starts, seed)


# --------------------------------------------------------------------------
# rank audit


@dataclass
class RankReport:
    rank: int | None
    family_dim: int | None
    consistent: bool | None  # family_dim agrees with the claimed two
    stable: bool | None
    ranks: list[int]
    singular_values: list[list[float]]
    certificate: Certificate | None = None
    claimed_dim: int = 2

    @property
    def feasible(self) -> bool:
        return self.rank is not None

    def summary(self) -> str:
        if not self.feasible:
            return (f"no feasible point; certificate min max-residual "
                    f"{self.certificate.min_max_residual:.3e}")
        verdict = "agrees with" if self.consistent else "disagrees with"
        return (f"rank {self.rank}, family dimension {self.family_dim} "
                f"({verdict} the claimed {self.claimed_dim}); stable={self.stable}")


def jacobian(v: ExponentVector, cs: ConstraintSet, rel_step: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian of the residuals (8 x 10)."""
    x = v.as_array()
    J = np.empty((8, x.size))
    for j in range(x.size):
        h = rel_step * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        rp = np.array(residuals(ExponentVector.from_array(xp), cs), dtype=float)
        rm = np.array(residuals(ExponentVector.from_array(xm), cs), dtype=float)
        J[:, j] = (rp - rm) / (2 * h)
    return J


def sample_solutions(cs: ConstraintSet, samples: int, seed: int = 0) -> list[ExponentVector]:
    """Valid solved vectors at random ``(p, p1, s)`` choices."""
    rng = np.random.default_rng(seed)
    beta = float(cs.beta)
    out: list[ExponentVector] = []
    attempts = 0
    while len(out) < samples and attempts < 200 * samples:
        attempts += 1
        p = 3.0 / beta + rng.uniform(0.1, 6.0)
        p1 = rng.uniform(1.0, 6.0)
        try:
            lo, hi = admissible_sigma(p, p1, beta, cs.variant)
        except ZeroDivisionError:
            continue
        if not (0 < lo < hi):
            continue
        sigma = float(lo) + (float(hi) - float(lo)) * rng.uniform(0.1, 0.9)
        try:
            v = solve_family({"p": p, "p1": p1, "s": 1.0 / sigma}, cs, certify=False)
        except ValueError:
            continue
        if isinstance(v, ExponentVector):
            out.append(v)
    return out


def rank_audit(cs: ConstraintSet, samples: int = 8, seed: int = 0) -> RankReport:
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    if cs.variant == LITERAL and float(cs.beta) != 1.0:
        return RankReport(None, None, None, None, [], [], infeasibility_certificate(cs))
    points = sample_solutions(cs, samples, seed)
    if not points:
        return RankReport(None, None, None, None, [], [], infeasibility_certificate(cs))
    ranks, svals = [], []
    for v in points:
        sv = np.linalg.svd(jacobian(v, cs), compute_uv=False)
        ranks.append(int(np.sum(sv > RANK_TOL)))
        svals.append(sv.tolist())
    rank = ranks[0]
    family_dim = len(NAMES) - rank
    return RankReport(rank, family_dim, family_dim == 2, len(set(ranks)) == 1, ranks, svals)


# --------------------------------------------------------------------------
# sweep


def symbolic_scaling_exponent(gamma: float, a: float, p1: float, beta: float) -> float:
    """Net exponent of the hybrid functional under the intrinsic rescaling."""
    return (2.0 / p1) * (p1 * (gamma + 2.0 * beta * a) - 3.0) - 2.0 * beta


SWEEP_COLUMNS = ("variant", "beta", "p", "p1", "s", "feasible", "valid", "gamma", "a", "b",
                 "p2", "p3", "alpha_i", "alpha_p", "max_residual", "scaling_exponent",
                 "margin", "failed")


def sweep(variant: str, betas: Iterable[float], free_grid: Iterable[dict]) -> list[dict]:
    """One row per ``(beta, free choice)``.

    ``gamma`` is always the E8 closed form with ``a = 1``; for infeasible
    rows the remaining columns are NaN and ``margin`` carries the
    certificate's minimal max-residual.
    """
    betas = list(betas)
    free_grid = list(free_grid)
    if not betas or not free_grid:
        raise ValueError("sweep grids must be nonempty")
    rows = []
    for beta in betas:
        cs = ConstraintSet(beta, variant)
        for free in free_grid:
            row = dict.fromkeys(SWEEP_COLUMNS, math.nan)
            row.update(variant=variant, beta=float(beta), p=float(free["p"]),
                       p1=float(free["p1"]), failed="")
            row["gamma"] = float(gamma_closed_form(_frac(free["p1"]), _frac(beta), variant))
            row["scaling_exponent"] = symbolic_scaling_exponent(row["gamma"], 1.0, row["p1"], beta)
            try:
                v = solve_family(free, cs)
            except ValueError as exc:
                row.update(feasible=False, valid=False, failed=str(exc))
                rows.append(row)
                continue
            if isinstance(v, Infeasible):
                row.update(feasible=False, valid=False, margin=v.margin, failed="infeasible")
            else:
                failed = failed_flags(v, beta)
                row.update({f.name: getattr(v, f.name) for f in fields(v)})
                row.update(feasible=True, valid=not failed, max_residual=max_residual(v, cs),
                           margin=0.0, failed="; ".join(failed))
            rows.append(row)
    return rows
