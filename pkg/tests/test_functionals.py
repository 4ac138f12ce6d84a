"""Two-point functionals: quadrature, log-weighted increments, checkers."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from celab.functionals import (
    HQuadrature,
    PairCheckError,
    SupportPart,
    capped_increment,
    check_interpolation,
    check_key_lemma,
    check_mixing_log_bound,
    default_radius_ladder,
    geometric_mixing_scale,
    grid_offset_increments,
    increment_profile,
    inner_sq_increment,
    log_sobolev,
    log_sobolev_fourier,
    log_weighted_functional,
    log_weighted_functional_grid,
    subadditivity_gap,
    sup_log_increment,
)
from celab.grid import GridField, ball_average, lp_norm, shift
from fieldgen import corner_bump, random_field, smoothed_step


class TestHQuadrature:
    def test_area_matches_annulus(self):
        q = HQuadrature.build(1.0 / 256, 1.0 / 3)
        area = np.pi * (q.r_max**2 - q.r_min**2)
        assert abs(q.area() - area) <= 0.01 * area

    def test_rejects_bad_radii(self):
        with pytest.raises(ValueError):
            HQuadrature.build(0.2, 0.1)

    def test_rejects_too_coarse(self):
        with pytest.raises(ValueError):
            HQuadrature.build(0.01, 0.3, n_shells=4)

    def test_node_layout(self):
        q = HQuadrature.build(0.01, 0.3, n_shells=16, n_angles=8)
        nodes = q.nodes()
        assert nodes.shape == (16 * 8, 2)
        assert np.allclose(np.hypot(nodes[:, 0], nodes[:, 1]), q.node_radii())


class TestInnerSqIncrement:
    def test_zero_offset(self):
        f = random_field(3)
        assert inner_sq_increment(f, (0.0, 0.0)) == 0.0

    def test_cosine_half_period(self):
        # shifting cos(2 pi x1) by 1/2 flips the sign, so the increment is
        # (2 f)^2 integrated: 4 * ||f||_2^2 = 2
        f = GridField.from_function(lambda x, y: np.cos(2 * np.pi * x), 128)
        assert np.isclose(inner_sq_increment(f, (0.5, 0.0)), 2.0, rtol=1e-12)

    def test_matches_real_space_roll(self):
        f = random_field(11, n=64)
        rolled = np.roll(f.values, -16, axis=0)
        direct = np.mean((rolled - f.values) ** 2)
        assert np.isclose(inner_sq_increment(f, (0.25, 0.0)), direct, rtol=1e-11)

    def test_composition_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            f = random_field(rng.integers(1 << 30), n=64)
            h = rng.uniform(-0.4, 0.4, size=2)
            via_shift = lp_norm(GridField(shift(f, h).values - f.values), 2) ** 2
            assert np.isclose(inner_sq_increment(f, h), via_shift, rtol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 1 << 20), st.floats(-0.45, 0.45), st.floats(-0.45, 0.45))
    def test_symmetric_and_nonnegative(self, seed, h1, h2):
        f = random_field(seed, n=32, kmax=8)
        v = inner_sq_increment(f, (h1, h2))
        assert v >= 0.0
        assert np.isclose(v, inner_sq_increment(f, (-h1, -h2)), rtol=1e-10, atol=1e-13)


class TestGridOffsetIncrements:
    def test_matches_single_offsets(self):
        f = random_field(5, n=64)
        table = grid_offset_increments(f)
        for i, j in [(0, 0), (1, 0), (7, 12), (32, 32), (63, 5)]:
            h = (i / 64, j / 64)
            assert np.isclose(table[i, j], inner_sq_increment(f, h),
                              rtol=1e-10, atol=1e-12)

    def test_profile_matches_single_calls(self):
        f = random_field(6, n=64)
        q = HQuadrature.build(1 / 64, 1 / 3, n_shells=12, n_angles=8)
        prof = increment_profile(f, q.nodes())
        singles = [inner_sq_increment(f, h) for h in q.nodes()]
        assert np.allclose(prof, singles, rtol=1e-11, atol=1e-14)


class TestLogSobolev:
    def test_constant_is_zero(self):
        f = GridField.constant(3.7, 64)
        assert log_sobolev(f, 1.5).value == 0.0

    def test_cosine_against_dense_riemann_sum(self):
        # independent oracle: closed-form increment of the single mode summed
        # over a Cartesian offset grid 8x finer than the quadrature's r_min
        n = 256
        f = GridField.from_function(lambda x, y: np.cos(2 * np.pi * x), n)
        result = log_sobolev(f, 1.0)
        fine = 1.0 / (8 * n)
        m = int(result.quadrature.r_max / fine) + 1
        axis = np.arange(-m, m + 1) * fine
        h1, h2 = np.meshgrid(axis, axis, indexing="ij")
        r = np.hypot(h1, h2)
        mask = (r >= result.quadrature.r_min) & (r <= result.quadrature.r_max)
        oracle = np.sum((1.0 - np.cos(2 * np.pi * h1[mask])) / r[mask] ** 2) * fine**2
        assert abs(result.value - oracle) <= 0.02 * oracle

    def test_truncation_converged_for_smooth_field(self):
        # smooth here means gradient energy concentrated at low wavenumbers;
        # the sub-r_min band then carries under 1% of the integral
        f = random_field(9, n=128, kmax=3)
        coarse = log_sobolev(f, 1.5, HQuadrature.build(2 / 128, 1 / 3)).value
        finer = log_sobolev(f, 1.5, HQuadrature.build(1 / 128, 1 / 3)).value
        assert abs(coarse - finer) <= 0.01 * finer

    def test_amplitude_scaling_exact(self):
        f = random_field(21, n=64)
        g = GridField(2.5 * f.values)
        assert np.isclose(log_sobolev(g, 1.5).value,
                          2.5**2 * log_sobolev(f, 1.5).value, rtol=1e-13)

    def test_positive_for_nonconstant(self):
        f = random_field(4, n=64)
        assert log_sobolev(f, 1.0).value > 1e-10 * lp_norm(f, 2) ** 2

    def test_rejects_bad_parameters(self):
        f = random_field(1, n=64)
        with pytest.raises(ValueError, match="r_max"):
            log_sobolev(f, 1.0, HQuadrature.build(1 / 64, 1.5))
        with pytest.raises(ValueError, match="positive"):
            log_sobolev(f, 0.0)
        with pytest.raises(ValueError, match="below the grid spacing"):
            log_sobolev(f, 1.0, HQuadrature.build(1 / 256, 1 / 3))


class TestLogSobolevFourier:
    def test_constant_is_zero(self):
        assert log_sobolev_fourier(GridField.constant(2.0, 64), 2.0) == 0.0

    @pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
    def test_single_mode_closed_form(self, p):
        # sqrt(2) cos(2 pi 16 x1) has unit L^2 mass at physical wavenumber 32 pi
        f = GridField.from_function(
            lambda x, y: np.sqrt(2.0) * np.cos(2 * np.pi * 16 * x), 128)
        assert np.isclose(log_sobolev_fourier(f, p),
                          np.log(2 * np.pi * 16) ** p, rtol=1e-12)

    def test_low_mode_uses_quadratic_weight(self):
        # physical wavenumber 2 pi < 10, so the weight is kappa^2
        f = GridField.from_function(
            lambda x, y: np.sqrt(2.0) * np.cos(2 * np.pi * x), 64)
        assert np.isclose(log_sobolev_fourier(f, 1.0), (2 * np.pi) ** 2, rtol=1e-12)

    @pytest.mark.parametrize("p", [1.0, 2.0])
    def test_two_sided_equivalence_family(self, p):
        ratios = []
        for seed in range(20):
            f = random_field(seed, n=128, kmax=20, mean_zero=True)
            value = log_sobolev(f, p).value
            ratios.append(value / log_sobolev_fourier(f, p))
        assert max(ratios) / min(ratios) <= 50.0


class TestCappedIncrements:
    def test_cap_bounds(self):
        f = random_field(2, n=64)
        h = (0.11, 0.04)
        v = capped_increment(f, h)
        assert v <= inner_sq_increment(f, h) + 1e-12
        assert v <= f.box**2

    def test_sup_log_increment_constant(self):
        assert sup_log_increment(GridField.constant(1.0, 64), 1.5) == 0.0

    def test_step_field_against_dense_scan(self):
        # the field varies only in x1, so scanning axis offsets is a complete
        # dense search: for fixed h1 the weight log(1/|h|)^p peaks at h2=0
        n, p = 256, 1.5
        f = smoothed_step(n)
        value = sup_log_increment(f, p, HQuadrature.build(1 / n, 1 / 3, 48, 8))
        radii = np.arange(1, int(n / 3) + 1) / n
        dense = max(
            np.log(1.0 / r) ** p
            * np.mean(np.minimum(1.0, (np.roll(f.values, -i, axis=0) - f.values) ** 2))
            for i, r in zip(range(1, len(radii) + 1), radii))
        assert abs(value - dense) <= 0.02 * dense

    def test_step_field_closed_form(self):
        # capped increment of a +/-1 step at axis offset r is 2r (two jump
        # strips, integrand capped at 1), so the sup is max_r 2r log(1/r)^p,
        # attained at r = exp(-p) with value 2 exp(-p) p^p
        p = 1.5
        f = smoothed_step(256, width_cells=1.0)
        expected = 2.0 * np.exp(-p) * p**p
        q = HQuadrature.build(1 / 256, 1 / 3, 48, 8)
        assert np.isclose(sup_log_increment(f, p, q), expected, rtol=0.03)

    def test_monotone_in_p_past_unit_log(self):
        # the step maximizer sits at |h| = exp(-p) < 1/e for p > 1, where
        # log(1/|h|) > 1, so raising p can only raise the sup
        f = smoothed_step(128)
        q = HQuadrature.build(1 / 128, 1 / 3, 48, 8)
        vals = [sup_log_increment(f, p, q) for p in (1.2, 1.5, 2.0, 3.0)]
        assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))


class TestMixingScale:
    def test_unmixed_sentinel(self):
        f = GridField.constant(1.0, 64)
        for kappa in (0.1, 0.5, 0.9):
            assert geometric_mixing_scale(f, kappa) is None

    def test_zero_field_returns_smallest_probe(self):
        f = GridField.constant(0.0, 64)
        ladder = default_radius_ladder(f)
        assert geometric_mixing_scale(f, 0.5) == ladder[0]

    def test_square_wave_scale_tracks_period(self):
        def wave(w, n=256):
            return GridField.from_function(
                lambda x, y: np.sign(np.sin(np.pi * x / w)) + 0.0, n)

        eps_coarse = geometric_mixing_scale(wave(1 / 8), 0.5)
        eps_fine = geometric_mixing_scale(wave(1 / 16), 0.5)
        assert eps_fine is not None and eps_coarse is not None
        assert 1.4 <= eps_coarse / eps_fine <= 3.0

    def test_ball_average_oracle(self):
        f = random_field(13, n=64)
        r = 0.13
        avg = ball_average(f, r)
        x = np.arange(64) / 64
        for i, j in [(5, 9), (50, 17)]:
            d1 = (x - x[i] + 0.5) % 1.0 - 0.5
            d2 = (x - x[j] + 0.5) % 1.0 - 0.5
            inside = d1[:, None] ** 2 + d2[None, :] ** 2 <= r**2
            assert np.isclose(avg[i, j], f.values[inside].mean(), atol=1e-12)

    def test_monotone_in_kappa(self):
        f = random_field(17, n=128, mean_zero=True)
        f = GridField(f.values / np.max(np.abs(f.values)))
        scales = []
        for kappa in (0.2, 0.4, 0.6, 0.8):
            s = geometric_mixing_scale(f, kappa)
            scales.append(np.inf if s is None else s)
        assert all(a >= b for a, b in zip(scales, scales[1:]))

    def test_rejects_unnormalized(self):
        f = GridField.constant(2.0, 64)
        with pytest.raises(ValueError, match="rescale"):
            geometric_mixing_scale(f, 0.5)


class TestInterpolation:
    def test_single_mode_terms(self):
        f = GridField.from_function(lambda x, y: np.cos(2 * np.pi * 8 * x), 128)
        rep = check_interpolation(f, gamma=0.5, lam=1 / 200, delta=1.0)
        assert np.isclose(rep.lhs, 0.5, rtol=1e-12)
        assert rep.term_functional > 0 and rep.term_mix > 0
        assert 0 < rep.constant < np.inf

    def test_zero_field_vacuous(self):
        rep = check_interpolation(GridField.constant(0.0, 64), 0.5, 1 / 200, 1.0)
        assert rep.lhs == rep.term_functional == rep.term_mix == 0.0
        assert rep.constant == 1.0

    def test_constant_stable_under_refinement(self):
        # same continuum corpus at two resolutions; the fitted worst-case
        # constant should move by well under 20%
        def worst(n):
            cs = []
            for seed in range(10):
                f = random_field(seed, n=n, kmax=10, mean_zero=True)
                cs.append(check_interpolation(f, 0.5, 1 / 200, 1.0).constant)
            return max(cs)

        c64, c128 = worst(64), worst(128)
        assert abs(c128 - c64) <= 0.2 * c64

    def test_parameter_validation(self):
        f = random_field(1, mean_zero=True)
        with pytest.raises(ValueError):
            check_interpolation(f, 1.0, 1 / 200, 1.0)
        with pytest.raises(ValueError):
            check_interpolation(f, 0.5, 0.5, 1.0)
        with pytest.raises(ValueError):
            check_interpolation(f, 0.5, 1 / 200, 2.0)

    def test_rejects_nonzero_mean(self):
        f = GridField.constant(1.0, 64)
        with pytest.raises(ValueError):
            check_interpolation(f, 0.5, 1 / 200, 1.0)

    def test_mix_log_bound_scale_invariant(self):
        f = random_field(3, n=64, mean_zero=True)
        rep1 = check_mixing_log_bound(f, gamma=-0.5)
        rep2 = check_mixing_log_bound(GridField(100.0 * f.values), gamma=-0.5)
        assert np.isclose(rep1.constant, rep2.constant, rtol=1e-12)

    def test_mix_log_bound_single_mode(self):
        f = GridField.from_function(lambda x, y: np.cos(2 * np.pi * 4 * x), 128)
        rep = check_mixing_log_bound(f, gamma=0.0)
        assert rep.lhs > 0 and rep.functional > 0
        assert np.isfinite(rep.constant)


class TestKeyLemma:
    def test_lipschitz_with_constant_witness(self):
        f = GridField.from_function(lambda x, y: np.cos(2 * np.pi * x), 128)
        g = GridField.constant(0.5 * np.log(2 * np.pi) + 1e-6, 128)
        rep = check_key_lemma(f, g, p=1.5)
        assert rep.max_violation <= 1e-9
        assert rep.lhs > 0 and rep.rhs > 0
        assert np.isclose(rep.ratio, rep.lhs / rep.rhs)

    def test_step_with_zero_witness_fails(self):
        f = smoothed_step(128)
        g = GridField.constant(0.0, 128)
        with pytest.raises(PairCheckError):
            check_key_lemma(f, g, p=1.0)

    def test_zero_field_passes_trivially(self):
        f = GridField.constant(0.0, 64)
        g = GridField.constant(1.0, 64)
        rep = check_key_lemma(f, g, p=2.0)
        assert rep.lhs == 0.0
        assert rep.ratio == 0.0


class TestSubadditivity:
    def _two_bump_parts(self, n=128, amp2=1.0):
        f1 = corner_bump(n, (0.25, 0.25), 0.1)
        f2 = corner_bump(n, (0.75, 0.75), 0.1, amplitude=amp2)
        return [
            SupportPart(f1, (0.05, 0.05), (0.45, 0.45), 0.1),
            SupportPart(f2, (0.55, 0.55), (0.95, 0.95), 0.1),
        ]

    _QUAD = HQuadrature.build(1 / 128, 1 / 3, 32, 16)

    @pytest.mark.parametrize("gamma", [0.5, -0.5])
    def test_two_bumps_hold(self, gamma):
        rep = subadditivity_gap(self._two_bump_parts(), gamma, q=self._QUAD)
        assert rep.holds
        assert rep.lhs >= rep.rhs - 1e-8
        assert len(rep.part_functionals) == 2

    def test_single_part_holds(self):
        rep = subadditivity_gap(self._two_bump_parts()[:1], 0.3, q=self._QUAD)
        assert rep.holds

    def test_zero_parts_hold(self):
        n = 64
        parts = [SupportPart(GridField.constant(0.0, n), (0.0, 0.0),
                             (0.5, 0.5), 0.1)]
        rep = subadditivity_gap(parts, 0.0)
        assert rep.lhs == rep.rhs == 0.0
        assert rep.holds

    def test_overlapping_boxes_rejected(self):
        parts = self._two_bump_parts()
        bad = [parts[0],
               SupportPart(parts[1].field, (0.3, 0.3), (0.8, 0.8), 0.1)]
        with pytest.raises(ValueError, match="overlap"):
            subadditivity_gap(bad, 0.5)

    def test_margin_violation_rejected(self):
        f1 = corner_bump(128, (0.25, 0.25), 0.1)
        parts = [SupportPart(f1, (0.05, 0.05), (0.45, 0.45), 0.3)]
        with pytest.raises(ValueError, match="margin"):
            subadditivity_gap(parts, 0.5)


def test_log_weighted_functional_reuses_profile():
    f = random_field(8, n=64)
    q = HQuadrature.for_grid(f)
    prof = increment_profile(f, q.nodes())
    a = log_weighted_functional(f, 0.0, q, profile=prof)
    b = log_weighted_functional(f, 0.0, q)
    assert np.isclose(a, b, rtol=1e-14)


class TestGridOffsetFunctional:
    def test_constant_field_is_zero(self):
        f = GridField.constant(2.0, 64)
        assert log_weighted_functional_grid(f, 0.5) == 0.0

    def test_quadratic_scaling(self):
        f = random_field(seed=11, n=64, kmax=5)
        g = GridField(3.0 * f.values, f.box)
        assert np.isclose(log_weighted_functional_grid(g, 0.2),
                          9.0 * log_weighted_functional_grid(f, 0.2),
                          rtol=1e-12)

    @pytest.mark.parametrize("delta", [1.0, 0.5])
    def test_matches_manual_offset_sum(self, delta):
        f = random_field(seed=7, n=16, kmax=3)
        r_max = 1.0 / 3.0
        gamma = -0.4
        total = 0.0
        for i in range(16):
            for j in range(16):
                h1 = (i / 16.0) - round(i / 16.0)
                h2 = (j / 16.0) - round(j / 16.0)
                r = np.hypot(h1, h2)
                if r == 0.0 or r > r_max:
                    continue
                inc = inner_sq_increment(f, (i / 16.0, j / 16.0))
                total += inc * f.dx**2 / (r**2 * np.abs(np.log(delta * r)) ** gamma)
        got = log_weighted_functional_grid(f, gamma, r_max=r_max, delta=delta)
        assert np.isclose(got, total, rtol=1e-10)

    @pytest.mark.parametrize("gamma", [0.0, -0.5])
    def test_agrees_with_polar_quadrature(self, gamma):
        f = random_field(seed=3, n=256, kmax=6)
        q = HQuadrature.for_grid(f)
        polar = log_weighted_functional(f, gamma, q)
        grid = log_weighted_functional_grid(f, gamma)
        assert np.isclose(polar, grid, rtol=1e-2)

    def test_rejects_bad_arguments(self):
        f = random_field(seed=1, n=32, kmax=3)
        with pytest.raises(ValueError, match="delta"):
            log_weighted_functional_grid(f, 0.0, delta=1.5)
        with pytest.raises(ValueError, match="half the box"):
            log_weighted_functional_grid(f, 0.0, r_max=0.6)
        wide = GridField(np.zeros((32, 32)), 2.0)
        with pytest.raises(ValueError, match="log weight"):
            log_weighted_functional_grid(wide, 0.0, r_max=1.0, delta=1.0)


class TestSubadditivityGridMethod:
    def _parts(self):
        f1 = corner_bump(128, (0.25, 0.25), 0.1)
        f2 = corner_bump(128, (0.75, 0.75), 0.1)
        return [
            SupportPart(f1, (0.05, 0.05), (0.45, 0.45), 0.1),
            SupportPart(f2, (0.55, 0.55), (0.95, 0.95), 0.1),
        ]

    @pytest.mark.parametrize("gamma", [0.5, -0.5])
    def test_two_bumps_hold(self, gamma):
        rep = subadditivity_gap(self._parts(), gamma, method="grid")
        assert rep.holds
        assert rep.lhs >= rep.rhs - 1e-8

    def test_methods_agree_on_lhs_scale(self):
        pol = subadditivity_gap(self._parts(), 0.0, method="polar")
        grd = subadditivity_gap(self._parts(), 0.0, method="grid")
        assert np.isclose(pol.lhs, grd.lhs, rtol=0.05)

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError, match="method"):
            subadditivity_gap(self._parts(), 0.0, method="fourier")
