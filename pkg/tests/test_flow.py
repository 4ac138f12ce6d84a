"""Oracle tests for characteristic tracing, transport, and the witness machinery.

The steady shear (A sin(2 pi x2), 0) has closed-form characteristics, which
gives exact oracles for the integrator, the transport solver, and the
time-invariance of the Lusin witness.  The radial vortex provides symmetry
and round-trip oracles.
"""

import numpy as np
import pytest

from celab.flow import (
    FlowMap,
    check_lusin_bilipschitz,
    flow_diagnostics,
    grid_seeds,
    lusin_witness,
    maximal_function,
    solve_ce,
    trace,
)
from celab.grid import GridField, ball_average, lp_norm, min_image, sample_field
from celab.velocity import (
    RadialVortex,
    SampledSteady,
    SteadyShear,
    ZeroVelocity,
    sampled_divergence,
)

from fieldgen import corner_bump, random_field


def wrapped_dist(a, b, box=1.0):
    return np.linalg.norm(min_image(a - b, box), axis=-1)


class TestVelocityFields:
    def test_zero_velocity(self):
        b = ZeroVelocity()
        pts = np.random.default_rng(0).random((50, 2))
        assert np.all(b.velocity(3.7, pts) == 0.0)

    def test_shear_formula(self):
        b = SteadyShear(amplitude=2.0)
        pts = np.array([[0.1, 0.25], [0.9, 0.0], [0.4, 0.75]])
        vel = b.velocity(0.0, pts)
        expect = np.array([[2.0, 0.0], [0.0, 0.0], [-2.0, 0.0]])
        assert np.allclose(vel, expect, atol=1e-14)

    @pytest.mark.parametrize("b", [SteadyShear(1.3), RadialVortex()])
    def test_sampled_divergence_tiny(self, b):
        assert sampled_divergence(b, 0.0, 128) <= 1e-10

    def test_shear_gradient_magnitude(self):
        b = SteadyShear(amplitude=1.0)
        gm = b.grad_mag_field(0.0, 64)
        x2 = gm.node_coords()[1]
        expect = 2.0 * np.pi * np.abs(np.cos(2.0 * np.pi * x2))
        assert np.allclose(gm.values, expect, atol=1e-9)

    def test_sampled_steady_round_trip(self):
        u1 = random_field(3, n=32, kmax=5)
        u2 = random_field(4, n=32, kmax=5)
        b = SampledSteady(u1, u2)
        s1, s2 = b.sample(0.0, 32)
        assert s1 is u1 and s2 is u2

    def test_sampled_steady_grid_mismatch(self):
        with pytest.raises(ValueError, match="share a grid"):
            SampledSteady(random_field(3, n=32, kmax=5), random_field(3, n=64, kmax=5))


class TestTrace:
    def test_zero_field_identity(self):
        seeds = np.random.default_rng(1).random((200, 2))
        fm = trace(ZeroVelocity(), seeds, 0.0, 5.0)
        assert np.allclose(fm.positions, seeds, atol=1e-15)

    def test_shear_closed_form(self):
        rng = np.random.default_rng(2)
        seeds = rng.random((500, 2))
        t = 1.7
        fm = trace(SteadyShear(1.0), seeds, 0.0, t, ode_tol=1e-6)
        expect = seeds.copy()
        expect[:, 0] += t * np.sin(2.0 * np.pi * seeds[:, 1])
        assert wrapped_dist(fm.positions, np.mod(expect, 1.0)).max() <= 1e-10

    def test_backward_inverts_forward(self):
        rng = np.random.default_rng(3)
        seeds = rng.random((300, 2))
        fwd = trace(SteadyShear(1.0), seeds, 0.0, 1.0, ode_tol=1e-8)
        back = trace(SteadyShear(1.0), fwd.positions, 1.0, 0.0, ode_tol=1e-8)
        assert back.direction == "backward"
        assert wrapped_dist(back.positions, seeds).max() <= 1e-10

    def test_vortex_round_trip(self):
        rng = np.random.default_rng(4)
        seeds = rng.random((400, 2))
        b = RadialVortex()
        fwd = trace(b, seeds, 0.0, 1.0, ode_tol=1e-9)
        back = trace(b, fwd.positions, 1.0, 0.0, ode_tol=1e-9)
        assert wrapped_dist(back.positions, seeds).max() <= 1e-6

    def test_history_recording(self):
        seeds = np.random.default_rng(5).random((50, 2))
        times = np.linspace(0.0, 1.0, 5)
        fm = trace(SteadyShear(1.0), seeds, 0.0, 1.0, record_times=times)
        assert fm.history.shape == (5, 50, 2)
        assert np.allclose(fm.history_times, times)
        assert np.allclose(fm.history[0], np.mod(seeds, 1.0))
        assert np.allclose(fm.history[-1], fm.positions)
        x2 = seeds[:, 1]
        for k, t in enumerate(times):
            expect = np.mod(seeds[:, 0] + t * np.sin(2.0 * np.pi * x2), 1.0)
            assert wrapped_dist(np.stack([fm.history[k, :, 0], x2], axis=1),
                                np.stack([expect, x2], axis=1)).max() <= 1e-10

    def test_record_times_out_of_range(self):
        seeds = np.zeros((3, 2))
        with pytest.raises(ValueError, match="record times"):
            trace(ZeroVelocity(), seeds, 0.0, 1.0, record_times=[2.0])

    def test_bad_seed_shape(self):
        with pytest.raises(ValueError, match="shape"):
            trace(ZeroVelocity(), np.zeros((4, 3)), 0.0, 1.0)

    def test_nonfinite_positions_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            FlowMap(0.0, 1.0, 1.0, 1e-6, np.zeros((1, 2)),
                    np.array([[np.nan, 0.0]]))


class TestSolveCE:
    def test_zero_field_identity(self):
        u0 = random_field(6, n=64, kmax=8)
        ut = solve_ce(ZeroVelocity(), u0, 1.0, ode_tol=1e-6)
        assert np.allclose(ut.values, u0.values, atol=1e-9)

    def test_rotational_symmetry_preserves_radial_data(self):
        n = 128

        def ring(x1, x2):
            r = np.hypot(min_image(x1 - 0.5, 1.0), min_image(x2 - 0.5, 1.0))
            return np.exp(-((r - 0.18) / 0.05) ** 2)

        u0 = GridField.from_function(ring, n)
        ut = solve_ce(RadialVortex(), u0, 1.0, ode_tol=1e-8)
        rel = lp_norm(GridField(ut.values - u0.values, 1.0), 2) / lp_norm(u0, 2)
        assert rel <= 1e-5

    def test_shear_advection_closed_form(self):
        n = 256
        u0 = GridField.from_function(lambda x1, x2: np.cos(2.0 * np.pi * x1), n)
        t = 1.0
        ut = solve_ce(SteadyShear(1.0), u0, t, ode_tol=1e-8)
        x1, x2 = u0.node_coords()
        exact = np.cos(2.0 * np.pi * (x1 - t * np.sin(2.0 * np.pi * x2)))
        err = lp_norm(GridField(ut.values - exact, 1.0), 2)
        assert err <= 1e-4

    def test_norm_conservation_smooth(self):
        n = 256
        u0 = GridField.from_function(lambda x1, x2: np.cos(2.0 * np.pi * x1), n)
        ut = solve_ce(RadialVortex(), u0, 1.0, ode_tol=1e-8)
        for p in (1.0, 2.0):
            drift = abs(lp_norm(ut, p) - lp_norm(u0, p)) / lp_norm(u0, p)
            assert drift <= 0.01
        assert abs(ut.mean - u0.mean) <= 1e-6

    def test_requires_divergence_free(self):
        class Bad(ZeroVelocity):
            divergence_free = False

        with pytest.raises(ValueError, match="divergence-free"):
            solve_ce(Bad(), random_field(0, n=32, kmax=5), 1.0)


class TestMaximalFunction:
    def test_constant(self):
        f = GridField.constant(-2.5, 32)
        mf = maximal_function(f)
        assert np.allclose(mf.values, 2.5, atol=1e-12)

    def test_dominates_absolute_value(self):
        f = random_field(7, n=64, kmax=10)
        mf = maximal_function(f)
        assert np.all(mf.values >= np.abs(f.values) - 1e-12)

    def test_positive_homogeneity(self):
        f = random_field(8, n=64, kmax=10)
        m1 = maximal_function(f)
        m3 = maximal_function(GridField(3.0 * f.values, f.box))
        assert np.allclose(m3.values, 3.0 * m1.values, rtol=1e-12, atol=1e-13)

    def test_bump_far_field_envelope(self):
        n = 128
        f = corner_bump(n, center=(0.3, 0.3), radius=0.05)
        mf = maximal_function(f)
        i = round(0.3 * n)

        def at(dist):
            return mf.values[i + round(dist * n), i]

        ratio = at(0.125) / at(0.25)
        assert 2.5 <= ratio <= 6.0

    def test_l2_boundedness_on_corpus(self):
        ratios = []
        for seed in range(5):
            f = random_field(seed, n=64, kmax=12, mean_zero=False)
            ratios.append(lp_norm(maximal_function(f), 2) / lp_norm(f, 2))
        assert max(ratios) <= 4.0


class TestLusinWitness:
    def test_zero_field_zero_witness(self):
        seeds = np.random.default_rng(9).random((100, 2))
        fm = trace(ZeroVelocity(), seeds, 0.0, 2.0)
        w = lusin_witness(ZeroVelocity(), fm, quad_steps=5, n_grid=32)
        assert np.all(w.g_values == 0.0)

    def test_shear_time_invariance_oracle(self):
        t = 2.0
        seeds = grid_seeds(64)
        b = SteadyShear(1.0)
        fm = trace(b, seeds, 0.0, t, ode_tol=1e-6)
        w = lusin_witness(b, fm, quad_steps=9, n_grid=128, c_d=1.0)
        mgrad = maximal_function(b.grad_mag_field(0.0, 128))
        expect = t * sample_field(mgrad, seeds, method="bilinear")
        assert np.allclose(w.g_values, expect, rtol=1e-10, atol=1e-12)

    def test_witness_linear_in_time(self):
        seeds = grid_seeds(32)
        b = SteadyShear(1.0)
        norms = []
        ts = [0.5, 1.0, 1.5, 2.0]
        for t in ts:
            fm = trace(b, seeds, 0.0, t, ode_tol=1e-6)
            w = lusin_witness(b, fm, quad_steps=5, n_grid=64)
            norms.append(np.sqrt(np.mean(w.g_values**2)))
        base = norms[0] / ts[0]
        assert np.allclose(norms, [base * t for t in ts], rtol=1e-9)

    def test_cd_scales_linearly(self):
        seeds = grid_seeds(16)
        b = SteadyShear(1.0)
        fm = trace(b, seeds, 0.0, 1.0, ode_tol=1e-6)
        w1 = lusin_witness(b, fm, quad_steps=5, n_grid=32, c_d=1.0)
        w2 = lusin_witness(b, fm, quad_steps=5, n_grid=32, c_d=2.0)
        assert np.allclose(w2.g_values, 2.0 * w1.g_values, rtol=1e-14)

    def test_requires_forward_flow(self):
        seeds = np.zeros((4, 2))
        fm = trace(ZeroVelocity(), seeds, 1.0, 0.0)
        with pytest.raises(ValueError, match="forward"):
            lusin_witness(ZeroVelocity(), fm, quad_steps=5, n_grid=32)

    def test_reuses_recorded_history(self):
        seeds = grid_seeds(16)
        b = SteadyShear(1.0)
        times = np.linspace(0.0, 1.0, 5)
        fm = trace(b, seeds, 0.0, 1.0, ode_tol=1e-6, record_times=times)
        w_stored = lusin_witness(b, fm, quad_steps=5, n_grid=32)
        fm_plain = trace(b, seeds, 0.0, 1.0, ode_tol=1e-6)
        w_redo = lusin_witness(b, fm_plain, quad_steps=5, n_grid=32)
        assert np.allclose(w_stored.g_values, w_redo.g_values, rtol=1e-12)


class TestBilipschitz:
    def test_zero_field_all_pass(self):
        seeds = np.random.default_rng(10).random((500, 2))
        fm = trace(ZeroVelocity(), seeds, 0.0, 1.0)
        w = lusin_witness(ZeroVelocity(), fm, quad_steps=5, n_grid=32)
        rep = check_lusin_bilipschitz(fm, w, n_pairs=2000, seed=1)
        assert rep.pass_rate == 1.0
        assert rep.minimal_scale == 0.0

    def test_shear_pass_rate(self):
        seeds = np.random.default_rng(11).random((4000, 2))
        b = SteadyShear(1.0)
        fm = trace(b, seeds, 0.0, 1.0, ode_tol=1e-6)
        w = lusin_witness(b, fm, quad_steps=9, n_grid=128)
        rep = check_lusin_bilipschitz(fm, w, n_pairs=5000, seed=2)
        assert rep.pass_rate >= 0.999

    def test_ensemble_mismatch(self):
        seeds = np.zeros((5, 2))
        fm = trace(ZeroVelocity(), seeds, 0.0, 1.0)
        w = lusin_witness(ZeroVelocity(), fm, quad_steps=3, n_grid=32)
        fm2 = trace(ZeroVelocity(), np.zeros((6, 2)), 0.0, 1.0)
        with pytest.raises(ValueError, match="ensembles"):
            check_lusin_bilipschitz(fm2, w)


class TestDiagnostics:
    def test_shear_lattice_density(self):
        fm = trace(SteadyShear(1.0), grid_seeds(256), 0.0, 1.0, ode_tol=1e-6)
        d = flow_diagnostics(fm, bins=16)
        assert 0.9 <= d.min_density and d.compressibility_L <= 1.1

    def test_vortex_measure_preservation(self):
        fm = trace(RadialVortex(), grid_seeds(512), 0.0, 0.5, ode_tol=1e-6)
        d = flow_diagnostics(fm, bins=8)
        assert 0.9 <= d.min_density and d.compressibility_L <= 1.1

    def test_norm_drift_fields(self):
        u0 = random_field(12, n=64, kmax=8)
        fm = trace(ZeroVelocity(), grid_seeds(64), 0.0, 1.0)
        d = flow_diagnostics(fm, bins=8, u0=u0, u_t=u0)
        assert d.lp_drift == 0.0
        assert d.mean_drift == 0.0
