import logging
import math

import numpy as np
import pytest

from fracnse import spectral as sp
from fracnse.dynamics import (
    BlowUpSuspected,
    FromSnapshot,
    ManufacturedTaylorGreen,
    RandomSpectrum,
    SimParams,
    SimState,
    SingleModeBeltrami,
    TaylorGreen,
    manufactured_residual,
    nonlinear_hat,
    rescale_solution,
    rescale_velocity,
    run,
    step,
    vorticity_rhs,
)
from fracnse.persist import SnapshotMeta, write_snapshot
from fracnse.spectral import Grid

from conftest import linf, solenoidal_field


def _state(omega, grid):
    return SimState.from_vorticity(omega, grid)


class TestSimParams:
    @pytest.mark.parametrize("kw", [dict(beta=0.0), dict(beta=1.2), dict(dt=0.0), dict(dt=-1.0),
                                    dict(t_end=-1.0), dict(snapshot_every=0)])
    def test_ranges(self, kw):
        base = dict(beta=0.5, dt=0.1, t_end=1.0)
        base.update(kw)
        with pytest.raises(ValueError):
            SimParams(**base)


class TestRightHandSide:
    def test_zero_field(self, grid16):
        params = SimParams(beta=0.7, dt=0.1, t_end=1.0)
        rhs = vorticity_rhs(_state(np.zeros((3,) + grid16.shape), grid16), params)
        assert np.abs(rhs).max() == 0.0

    @pytest.mark.parametrize("beta", [0.3, 0.75, 1.0])
    def test_beltrami_tendency_is_pure_diffusion(self, grid16, beta):
        w = SingleModeBeltrami(1.3, 2).generate(grid16)
        params = SimParams(beta=beta, dt=0.1, t_end=1.0)
        tend = sp.inverse(vorticity_rhs(_state(w, grid16), params), grid16)
        assert linf(tend + 4.0**beta * w) < 1e-12

    def test_taylor_green_nonlinear_term_matches_symbolic(self, grid16):
        sympy = pytest.importorskip("sympy")
        x, y, z = sympy.symbols("x y z")
        U = sympy.Matrix([sympy.sin(x) * sympy.cos(y) * sympy.cos(z),
                          -sympy.cos(x) * sympy.sin(y) * sympy.cos(z), 0])
        X = (x, y, z)
        W = sympy.Matrix([sympy.diff(U[2], y) - sympy.diff(U[1], z),
                          sympy.diff(U[0], z) - sympy.diff(U[2], x),
                          sympy.diff(U[1], x) - sympy.diff(U[0], y)])

        def adv(a, b):
            return sympy.Matrix([sum(a[j] * sympy.diff(b[i], X[j]) for j in range(3)) for i in range(3)])

        expr = sympy.simplify(adv(W, U) - adv(U, W))
        gx, gy, gz = grid16.mesh()
        expected = np.stack([
            np.broadcast_to(sympy.lambdify(X, c, "numpy")(gx, gy, gz), grid16.shape) for c in expr
        ])
        params = SimParams(beta=1.0, dt=0.1, t_end=1.0)
        w = TaylorGreen().generate(grid16)
        got = sp.inverse(nonlinear_hat(sp.forward(w, grid16), grid16, params, 0.0), grid16)
        assert linf(got - expected) < 1e-13

    def test_tendency_is_solenoidal(self, grid16):
        w = solenoidal_field(grid16, 4)
        rhs = vorticity_rhs(_state(w, grid16), SimParams(beta=0.6, dt=0.1, t_end=1.0))
        assert linf(sp.inverse(sp.divergence_hat(rhs, grid16), grid16)) < 1e-9

    def test_non_finite_raises(self, grid16):
        w = solenoidal_field(grid16, 4)
        state = _state(w, grid16)
        state.omega_hat[0, 1, 1, 1] = np.nan
        with pytest.raises(BlowUpSuspected):
            vorticity_rhs(state, SimParams(beta=0.6, dt=0.1, t_end=1.0))

    @pytest.mark.parametrize("beta", [0.5, 1.0])
    def test_linearized_decay_rate(self, grid16, beta):
        eps = 1e-9
        w = TaylorGreen(eps).generate(grid16)
        dt = 1e-3
        s1 = step(_state(w, grid16), SimParams(beta=beta, dt=dt, t_end=1.0))
        rate = -math.log(sp.spectral_l2(s1.omega_hat, grid16) / sp.lp_norm(w, grid16, 2)) / dt
        assert rate == pytest.approx(3.0**beta, abs=1e-6)


class TestStep:
    @pytest.mark.parametrize("beta", [0.25, 0.5, 1.0])
    def test_pure_diffusion_exact(self, grid16, beta):
        w = solenoidal_field(grid16, 5)
        params = SimParams(beta=beta, dt=0.05, t_end=1.0, nonlinear=False)
        s0 = _state(w, grid16)
        s1 = step(s0, params)
        expected = s0.omega_hat * np.exp(-grid16.fractional_symbol(beta) * 0.05)
        assert np.abs(s1.omega_hat - expected).max() < 1e-12 * np.abs(s0.omega_hat).max()

    def test_zero_stays_zero(self, grid16):
        s = _state(np.zeros((3,) + grid16.shape), grid16)
        for _ in range(3):
            s = step(s, SimParams(beta=0.5, dt=0.1, t_end=1.0))
        assert np.abs(s.omega_hat).max() == 0.0

    def test_hermitian_and_solenoidal_after_steps(self, grid16):
        s = _state(solenoidal_field(grid16, 6), grid16)
        params = SimParams(beta=0.8, dt=0.01, t_end=1.0)
        for _ in range(20):
            s = step(s, params)
        assert sp.hermitian_defect(s.omega_hat) < 1e-12
        assert linf(sp.inverse(sp.divergence_hat(s.omega_hat, grid16), grid16)) < 1e-9
        imag = np.fft.ifftn(s.omega_hat, axes=(-3, -2, -1), norm="forward").imag
        assert np.abs(imag).max() < 1e-12

    def test_temporal_order(self, grid16):
        w = TaylorGreen(2.0).generate(grid16)
        T = 0.4

        def solve(dt):
            s = _state(w, grid16)
            params = SimParams(beta=0.75, dt=dt, t_end=T)
            for _ in range(round(T / dt)):
                s = step(s, params)
            return s.vorticity()

        dts = [0.1, 0.05, 0.025]
        ref = solve(dts[-1] / 8)
        errs = [linf(solve(dt) - ref) for dt in dts]
        orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
        assert all(abs(o - 4.0) <= 0.2 for o in orders), orders

    def test_guard_trips(self, grid16):
        s = _state(TaylorGreen(10.0).generate(grid16), grid16)
        with pytest.raises(BlowUpSuspected) as info:
            step(s, SimParams(beta=1.0, dt=0.01, t_end=1.0, blowup_guard=1.0))
        assert info.value.t == pytest.approx(0.01)


class TestInitialConditions:
    @pytest.mark.parametrize("ic", [TaylorGreen(), SingleModeBeltrami(2.0, 3), RandomSpectrum(seed=3)])
    def test_real_solenoidal_mean_free(self, grid16, ic):
        w = ic.generate(grid16)
        assert w.shape == (3,) + grid16.shape and np.isfinite(w).all()
        assert linf(sp.divergence(w, grid16)) < 1e-10
        assert np.abs(w.mean(axis=(1, 2, 3))).max() < 1e-12

    def test_random_spectrum_reproducible_and_scaled(self, grid16):
        a = RandomSpectrum(seed=11, amplitude=2.0).generate(grid16)
        b = RandomSpectrum(seed=11, amplitude=2.0).generate(grid16)
        c = RandomSpectrum(seed=12, amplitude=2.0).generate(grid16)
        assert a.tobytes() == b.tobytes() and not np.array_equal(a, c)
        assert math.sqrt(np.mean(np.sum(a**2, axis=0))) == pytest.approx(2.0, rel=1e-12)

    def test_random_spectrum_k_max(self, grid16):
        W = sp.forward(RandomSpectrum(seed=1, k_max=2.0).generate(grid16), grid16)
        assert np.abs(W[:, np.sqrt(grid16.k2) > 2.0]).max() < 1e-14

    def test_from_snapshot(self, tmp_path, grid16):
        w = solenoidal_field(grid16, 2)
        write_snapshot(tmp_path / "w.fnsv", w, SnapshotMeta(grid16, 0.5, 0.0))
        assert np.array_equal(FromSnapshot(str(tmp_path / "w.fnsv")).generate(grid16), w)
        with pytest.raises(ValueError):
            FromSnapshot(str(tmp_path / "w.fnsv")).generate(Grid.cube(8))


class TestRun:
    def test_zero_length(self, grid16):
        seen = []
        summary = run(SimParams(beta=0.5, dt=0.1, t_end=0.0), TaylorGreen(), grid16, on_diagnostics=seen.append)
        assert summary.steps == 0 and len(seen) == 1
        assert summary.l2_final == pytest.approx(summary.l2_initial, rel=1e-12)

    def test_enstrophy_nonincreasing_at_beta_one(self, grid16):
        norms = []
        run(SimParams(beta=1.0, dt=0.01, t_end=0.5, diagnostics_every=1), TaylorGreen(), grid16,
            on_diagnostics=lambda s: norms.append(sp.spectral_l2(s.omega_hat, grid16)))
        assert len(norms) == 51
        assert all(b <= a * (1 + 1e-10) for a, b in zip(norms, norms[1:]))

    def test_cadences(self, grid16):
        diag, snaps = [], []
        summary = run(SimParams(beta=0.5, dt=0.1, t_end=1.0, diagnostics_every=3, snapshot_every=5),
                      TaylorGreen(), grid16, on_diagnostics=lambda s: diag.append(round(s.t, 9)),
                      on_snapshot=lambda s: snaps.append(round(s.t, 9)))
        assert summary.steps == 10
        assert diag == [0.0, 0.3, 0.6, 0.9, 1.0]
        assert snaps == [0.0, 0.5, 1.0]

    def test_deterministic(self, grid16):
        def once():
            out = []
            run(SimParams(beta=0.7, dt=0.02, t_end=0.2, diagnostics_every=2), RandomSpectrum(seed=5),
                grid16, on_diagnostics=lambda s: out.append(s.omega_hat.tobytes()))
            return out
        assert once() == once()

    def test_solenoidal_throughout(self, grid16):
        worst = []
        run(SimParams(beta=0.6, dt=0.02, t_end=0.4, diagnostics_every=1), RandomSpectrum(seed=8, amplitude=3.0),
            grid16, on_diagnostics=lambda s: worst.append(linf(sp.inverse(sp.divergence_hat(s.omega_hat, grid16), grid16))))
        assert max(worst) < 1e-9

    def test_abort_is_reported(self, grid16):
        summary = run(SimParams(beta=1.0, dt=0.01, t_end=0.1, blowup_guard=1.0), TaylorGreen(10.0), grid16)
        assert summary.aborted and summary.abort_time == pytest.approx(0.01) and summary.steps == 0

    def test_tail_warning(self, caplog):
        g = Grid.cube(8)
        with caplog.at_level(logging.WARNING):
            summary = run(SimParams(beta=0.5, dt=0.01, t_end=0.01), RandomSpectrum(seed=1, k_peak=20, slope=4), g)
        assert summary.tail_fraction > 1e-6
        assert "under-resolved" in caplog.text


class TestManufactured:
    def test_spatial_residual(self, grid16):
        for beta in (0.4, 1.0):
            assert manufactured_residual(grid16, beta, ManufacturedTaylorGreen(steady=False)) < 1e-10

    @pytest.mark.parametrize("beta", [0.5, 1.0])
    def test_steady_residual(self, grid16, beta):
        assert manufactured_residual(grid16, beta, ManufacturedTaylorGreen(), dt=0.01, t_end=1.0) < 1e-8

    def test_refinement_order(self, grid16):
        spec = ManufacturedTaylorGreen(amplitude=1.0, steady=False)
        errs = [manufactured_residual(grid16, 0.6, spec, dt=dt, t_end=1.0) for dt in (0.2, 0.1, 0.05)]
        orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
        assert all(abs(o - 4.0) <= 0.2 for o in orders), orders

    def test_needs_cubic_box(self):
        with pytest.raises(ValueError):
            ManufacturedTaylorGreen().vorticity(Grid(8, 8, 8, lx=1.0), 0.0)


class TestRescale:
    def test_identity(self, grid16):
        w = solenoidal_field(grid16, 1)
        assert np.array_equal(rescale_solution(w, grid16, 1, 0.7), w)

    def test_lambda_two_beta_one(self, grid16):
        w = SingleModeBeltrami(1.0, 1).generate(grid16)
        out = rescale_solution(w, grid16, 2, 1.0)
        assert linf(out - SingleModeBeltrami(4.0, 2).generate(grid16)) < 1e-13

    def test_velocity_exponent(self, grid16):
        u = SingleModeBeltrami(1.0, 1).generate(grid16)
        out = rescale_velocity(u, grid16, 2, 0.75)
        assert linf(out - 2 ** 0.5 * SingleModeBeltrami(1.0, 2).generate(grid16)) < 1e-13

    def test_reciprocal_lambda_round_trip(self, grid16):
        w = RandomSpectrum(seed=2, k_max=3.5).generate(grid16)
        up = rescale_solution(w, grid16, 2, 0.5)
        back = rescale_solution(up, grid16, 0.5, 0.5)
        assert linf(back - w) < 1e-13

    @pytest.mark.parametrize("lam", [1.5, 0.3, -2.0])
    def test_incompatible(self, grid16, lam):
        with pytest.raises(ValueError):
            rescale_solution(solenoidal_field(grid16, 1), grid16, lam, 0.5)

    def test_reciprocal_needs_periodicity(self, grid16):
        with pytest.raises(ValueError, match="periodic"):
            rescale_solution(SingleModeBeltrami(1.0, 1).generate(grid16), grid16, 0.5, 0.5)

    @pytest.mark.parametrize("beta", [0.5, 1.0])
    def test_rescaled_beltrami_trajectory(self, grid16, beta):
        lam, T, n = 2, 0.3, 30
        w0 = SingleModeBeltrami(1.0, 1).generate(grid16)
        # w_lam(x, t) = lam^(2 beta) w(lam x, lam^(2 beta) t)
        stretched = _state(w0, grid16)
        p_long = SimParams(beta=beta, dt=T * lam ** (2 * beta) / n, t_end=T * lam ** (2 * beta))
        direct = _state(rescale_solution(w0, grid16, lam, beta), grid16)
        p_short = SimParams(beta=beta, dt=T / n, t_end=T)
        for _ in range(n):
            stretched = step(stretched, p_long)
            direct = step(direct, p_short)
        predicted = rescale_solution(stretched.vorticity(), grid16, lam, beta)
        assert linf(predicted - direct.vorticity()) < 1e-8
