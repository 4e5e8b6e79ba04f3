import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fracnse import spectral as sp
from fracnse.audits import alpha_agreement, gaussian_vortex_blob, random_direction_field
from fracnse.dynamics import SingleModeBeltrami
from fracnse.geometry import (
    CoherenceParams,
    DirectionField,
    alpha_direct,
    alpha_integral,
    depletion_bound_check,
    depletion_bound_monte_carlo,
    direction_field,
    kernel_D,
    offset_table,
    rho_gamma_at,
    rho_gamma_field,
    rho_gamma_points,
    sin_angle,
)
from fracnse.spectral import Grid

from conftest import solenoidal_field

X, Y, Z = np.eye(3)


def constant_xi(grid, v=(0.0, 0.0, 1.0)):
    xi = np.broadcast_to(np.asarray(v, float).reshape(3, 1, 1, 1), (3,) + grid.shape).copy()
    return DirectionField(grid, xi, np.ones(grid.shape, bool), 1e-12)


unit_vectors = st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: 0.1 < np.linalg.norm(v)).map(
    lambda v: np.asarray(v) / np.linalg.norm(v))


class TestDirectionField:
    def test_constant(self, grid16):
        w = np.zeros((3,) + grid16.shape)
        w[2] = 2.5
        d = direction_field(w, grid16, 1e-3)
        assert d.mask.all() and np.array_equal(d.xi[2], np.ones(grid16.shape)) and not d.xi[:2].any()

    def test_zero_fully_masked(self, grid16):
        d = direction_field(np.zeros((3,) + grid16.shape), grid16)
        assert not d.mask.any() and not d.xi.any()

    def test_mask_is_threshold(self, grid16):
        w = solenoidal_field(grid16, 1)
        eps = 0.5
        d = direction_field(w, grid16, eps)
        assert np.array_equal(d.mask, sp.magnitude(w) >= eps)
        norms = sp.magnitude(d.xi)[d.mask]
        assert np.abs(norms - 1).max() < 1e-12

    def test_default_eps_is_relative(self, grid16):
        w = solenoidal_field(grid16, 1)
        assert direction_field(w, grid16).eps_mag == pytest.approx(1e-8 * sp.magnitude(w).max())

    def test_rejects_nonpositive_eps(self, grid16):
        with pytest.raises(ValueError):
            direction_field(solenoidal_field(grid16, 1), grid16, 0.0)


class TestSinAngle:
    def test_cases(self):
        assert sin_angle(X, X) == 0.0
        assert sin_angle(X, Y) == 1.0
        assert sin_angle(X, -X) == 0.0

    def test_non_unit_rejected(self):
        with pytest.raises(ValueError):
            sin_angle(X, 2 * Y)

    @given(unit_vectors, unit_vectors)
    def test_symmetric_bounded_and_line_variant(self, a, b):
        s = sin_angle(a, b)
        assert 0.0 <= s <= 1.0
        assert s == sin_angle(b, a)
        assert sin_angle(a, b, line_angle=True) == pytest.approx(s, abs=1e-7)


class TestKernelD:
    def test_examples(self):
        assert kernel_D(X, Z, Z) == 0.0
        assert kernel_D(X, Y, Z) == 0.0
        e1 = np.array([1.0, 0.0, 1.0]) / math.sqrt(2)
        assert kernel_D(e1, Y, Z) == pytest.approx(0.5, abs=1e-15)

    def test_non_unit_rejected(self):
        with pytest.raises(ValueError):
            kernel_D(X, Y, np.array([0.0, 0.0, 1.1]))

    def test_orthogonal_with_e1_equal_e3(self):
        assert abs(kernel_D(Z, X, Z)) <= 1.0

    @given(unit_vectors, unit_vectors, unit_vectors)
    def test_depletion_bound(self, e1, e2, e3):
        assert abs(kernel_D(e1, e2, e3)) <= sin_angle(e2, e3) + 1e-12
        assert abs(kernel_D(e1, e2, e3)) <= 1.0 + 1e-12


class TestOffsets:
    def test_sorted_minimal_image(self):
        g = Grid(8, 8, 8, 8.0, 8.0, 8.0)
        t = offset_table(g, 3.0)
        assert np.all(np.diff(t.r) >= 0) and t.r[0] == 1.0 and t.r[-1] <= 3.0
        assert np.abs(t.di).max() <= 4 and len(t) == len(set(zip(t.di, t.dj, t.dk)))
        assert np.allclose(np.sqrt(np.sum(t.disp**2, axis=0)), t.r)

    def test_r_max_limit(self, grid16):
        with pytest.raises(ValueError):
            CoherenceParams(r_max=4.0).resolve_r_max(grid16)
        assert CoherenceParams().resolve_r_max(grid16) == pytest.approx(0.45 * 2 * math.pi)


class TestRho:
    def test_constant_direction_gives_zero(self, grid16):
        assert not rho_gamma_field(constant_xi(grid16), CoherenceParams()).any()

    @pytest.mark.parametrize("gamma", [0.25, 0.5, 1.0])
    def test_single_flipped_node(self, gamma):
        g = Grid(8, 8, 8, 8.0, 8.0, 8.0)
        d = constant_xi(g)
        d.xi[:, 7, 1, 0] = X  # minimal image offset (-1, 1, 0) from the origin
        params = CoherenceParams(gamma=gamma, r_max=3.5)
        assert rho_gamma_at(d, (0, 0, 0), params) == pytest.approx(math.sqrt(2) ** -gamma, rel=1e-15)
        far = (3, 5, 4)  # offset (4, 4, 4) from the flipped node, beyond r_max
        assert rho_gamma_at(d, far, params) == 0.0

    @pytest.mark.parametrize("seed", range(6))
    @pytest.mark.parametrize("gamma", [0.25, 0.5, 1.0])
    def test_pruned_equals_brute(self, seed, gamma):
        g = Grid(12, 12, 10, lx=5.0)
        xi = random_direction_field(g, seed)
        for line_angle in (False, True):
            fast = rho_gamma_field(xi, CoherenceParams(gamma=gamma, line_angle=line_angle))
            slow = rho_gamma_field(xi, CoherenceParams(gamma=gamma, line_angle=line_angle, brute_force=True))
            assert np.array_equal(fast, slow)

    def test_point_queries_match_field(self, grid16):
        xi = random_direction_field(grid16, 3)
        params = CoherenceParams(gamma=0.5)
        field = rho_gamma_field(xi, params)
        pts = np.array([[0, 0, 0], [5, 15, 2], [-1, 3, 17]])
        expected = [field[0, 0, 0], field[5, 15, 2], field[15, 3, 1]]
        assert rho_gamma_points(xi, pts, params).tolist() == expected
        assert rho_gamma_at(xi, (5, 15, 2), params) == field[5, 15, 2]

    def test_masked_points_are_zero(self, grid16):
        xi = random_direction_field(grid16, 2)
        rho = rho_gamma_field(xi, CoherenceParams())
        assert not rho[~xi.mask].any()

    def test_monotone_in_gamma_on_unit_spacing(self):
        g = Grid(12, 12, 12, 12.0, 12.0, 12.0)
        xi = random_direction_field(g, 5)
        rhos = [rho_gamma_field(xi, CoherenceParams(gamma=gm, r_max=5.0)) for gm in (0.25, 0.5, 0.75, 1.0)]
        assert all(np.all(b <= a) for a, b in zip(rhos, rhos[1:]))

    @pytest.mark.parametrize("lam", [2, 4])
    def test_rescaled_direction_field(self, lam):
        g = Grid.cube(12)
        small = Grid.cube(12, 2 * math.pi / lam)
        xi = random_direction_field(g, 1)
        xi_lam = DirectionField(small, xi.xi, xi.mask, xi.eps_mag)
        gamma = 0.6
        base = rho_gamma_field(xi, CoherenceParams(gamma=gamma, r_max=2.0))
        scaled = rho_gamma_field(xi_lam, CoherenceParams(gamma=gamma, r_max=2.0 / lam))
        assert np.abs(scaled - lam**gamma * base).max() <= 1e-10 * base.max()

    def test_nan_under_mask_is_ignored(self, grid16):
        w = solenoidal_field(grid16, 7)
        clean = direction_field(w, grid16, 0.3)
        poisoned = DirectionField(grid16, clean.xi.copy(), clean.mask, clean.eps_mag)
        poisoned.xi[:, ~clean.mask] = np.nan
        w_bad = w.copy()
        w_bad[:, ~clean.mask] = np.nan
        assert (~clean.mask).sum() > 10
        for brute in (False, True):
            params = CoherenceParams(gamma=0.5, brute_force=brute)
            assert np.array_equal(rho_gamma_field(poisoned, params), rho_gamma_field(clean, params))
        for method in ("fft", "direct"):
            params = CoherenceParams(r_max=1.0)
            a = alpha_integral(w_bad, poisoned, params, method=method)
            assert np.isfinite(a).all()
            assert np.allclose(a, alpha_integral(w, clean, params, method=method), rtol=0, atol=1e-13)


class TestAlpha:
    def test_direct_zero_field(self, grid16):
        z = np.zeros((3,) + grid16.shape)
        assert not alpha_direct(z, z, grid16).any()

    def test_direct_beltrami_has_no_stretching(self, grid16):
        w = SingleModeBeltrami(1.0, 2).generate(grid16)
        alpha = alpha_direct(w, sp.biot_savart(w, grid16), grid16)
        assert np.abs(alpha).max() < 1e-13

    def test_direct_matches_definition(self, grid16):
        w = solenoidal_field(grid16, 3)
        u = sp.biot_savart(w, grid16)
        alpha = alpha_direct(w, u, grid16)
        stretch = np.sum(sp.advective_derivative(w, u, grid16) * w, axis=0)
        assert np.allclose(alpha * np.sum(w * w, axis=0), stretch, atol=1e-12)

    def test_integral_constant_direction_vanishes(self, grid16):
        x, y, _ = grid16.coords()
        w = np.zeros((3,) + grid16.shape)
        w[2] = 2.0 + np.sin(x) * np.cos(y)
        xi = direction_field(w, grid16)
        assert np.abs(alpha_integral(w, xi, CoherenceParams())).max() < 1e-13

    def test_integral_zero(self, grid16):
        w = np.zeros((3,) + grid16.shape)
        assert not alpha_integral(w, direction_field(w, grid16), CoherenceParams()).any()

    def test_fft_route_equals_direct_sum(self):
        g = Grid(12, 12, 12, lx=4.0)
        w = solenoidal_field(g, 9)
        xi = direction_field(w, g)
        params = CoherenceParams(r_max=1.5)
        fast = alpha_integral(w, xi, params)
        slow = alpha_integral(w, xi, params, method="direct")
        assert np.abs(fast - slow).max() <= 1e-12 * np.abs(slow).max()

    def test_unknown_method(self, grid16):
        w = solenoidal_field(grid16, 1)
        with pytest.raises(ValueError):
            alpha_integral(w, direction_field(w, grid16), CoherenceParams(), method="magic")

    def test_blob_agreement_at_32(self):
        g = Grid.cube(32)
        rep = alpha_agreement(gaussian_vortex_blob(g, 0.5), g, 0.45 * g.lx)
        assert rep.correlation > 0.9


class TestDepletion:
    def test_monte_carlo(self):
        rep = depletion_bound_monte_carlo(50_000, seed=3)
        assert rep.ok and rep.samples == 50_000 and rep.max_abs_D <= 1

    def test_equal_directions(self):
        assert kernel_D(Y, X, X) == 0.0 and sin_angle(X, X) == 0.0

    def test_field_check(self, grid16):
        w = solenoidal_field(grid16, 2)
        rep = depletion_bound_check(direction_field(w, grid16), CoherenceParams(r_max=1.5), max_offsets=40)
        assert rep.ok and rep.samples > 0
