import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsqm.errors import DomainError, ShapeError, ValidationError
from nsqm.lattice import (
    LatticeSpec,
    ModeClass,
    WaveField,
    apply_band_matrix,
    band_edge_velocity_bound,
    classify_mode,
    delta_field,
    dispersion,
    evolve_wave,
    group_velocity,
    norm,
    plane_wave,
    project_sector,
    ring_distance,
    sample_function,
    scalar_product,
    spectral_mode,
    wave_number,
)

SPEC512 = LatticeSpec(grid_count=512, step=1.0 / 64)


def direct_laplacian(values, d):
    """Loop-based periodic second difference over the 2M ring sites."""
    ring = list(values[:-1])
    n = len(ring)
    out = [(ring[(j + 1) % n] - 2 * ring[j] + ring[(j - 1) % n]) / d**2 for j in range(n)]
    return np.array(out + out[:1])


class TestSpec:
    def test_scale_is_inverse_step(self):
        assert SPEC512.scale == 64.0

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(grid_count=1, step=0.1),
            dict(grid_count=10, step=0.0),
            dict(grid_count=10, step=0.1, standard_fraction=1.0),
            dict(grid_count=10, step=0.1, mass=-1.0),
        ],
    )
    def test_rejects_bad_parameters(self, kwargs):
        with pytest.raises(ValidationError):
            LatticeSpec(**kwargs)

    def test_from_scale(self):
        spec = LatticeSpec.from_scale(100)
        assert spec.grid_count == 10_000 and spec.step == pytest.approx(0.01)


class TestDispersion:
    def test_zero_mode(self):
        assert dispersion(0, SPEC512) == 0.0

    def test_band_edge_maximum(self):
        assert dispersion(512, SPEC512) == pytest.approx(2 / SPEC512.step, rel=1e-15)

    @pytest.mark.parametrize("n", [100, 150, 200])
    def test_linear_regime_q1(self, n):
        spec = LatticeSpec.from_scale(n)
        assert abs(dispersion(n, spec) / math.pi - 1) < 1e-4

    def test_monotone(self):
        w = dispersion(np.arange(513), SPEC512)
        assert np.all(np.diff(w) >= 0)

    def test_massive(self):
        spec = LatticeSpec(512, 1 / 64, mass=3.0)
        assert dispersion(0, spec) == pytest.approx(3.0)
        w0 = dispersion(100, SPEC512)
        assert dispersion(100, spec) == pytest.approx(math.hypot(3.0, w0))

    @pytest.mark.parametrize("k", [-1, 513, 2.5])
    def test_out_of_range(self, k):
        with pytest.raises(DomainError):
            dispersion(k, SPEC512)

    def test_small_k_linearity(self):
        k = np.arange(1, 512 // 100 + 1)
        ratio = dispersion(k, SPEC512) / wave_number(k, SPEC512)
        assert np.max(np.abs(ratio - 1)) < 1e-3

    def test_wave_number_matches_scale_form(self):
        spec = LatticeSpec.from_scale(30)
        assert wave_number(7, spec) == pytest.approx(7 * math.pi / 30)


class TestGroupVelocity:
    def test_endpoints(self):
        assert group_velocity(0, SPEC512) == 1.0
        assert group_velocity(512, SPEC512) == 0.0

    def test_third(self):
        spec = LatticeSpec(300, 0.1)
        assert group_velocity(100, spec) == pytest.approx(math.sqrt(3) / 2, rel=1e-14)

    @pytest.mark.parametrize("m", [2, 64, 512, 4096])
    def test_strictly_decreasing(self, m):
        v = group_velocity(np.arange(m + 1), LatticeSpec(m, 0.01))
        assert np.all(np.diff(v) < 0)
        assert np.all((v >= 0) & (v <= 1))

    def test_matches_numerical_derivative(self):
        spec = LatticeSpec(4096, 0.01)
        k = np.arange(10, 4000, 97)
        h = 1e-3
        dw = (np.sin((k + h) * np.pi / 8192) - np.sin((k - h) * np.pi / 8192)) * 2 / spec.step / (2 * h)
        dp = np.pi / spec.half_length
        np.testing.assert_allclose(dw / dp, group_velocity(k, spec), rtol=1e-6)

    @pytest.mark.parametrize("m0", [1, 8, 40])
    def test_band_edge_bound(self, m0):
        spec = LatticeSpec(4096, 0.01)
        k = np.arange(4096 - m0, 4097)
        assert np.all(group_velocity(k, spec) <= band_edge_velocity_bound(m0, spec) + 1e-15)

    def test_band_edge_is_first_order(self):
        # v(M - m0) / (pi m0 / 2M) -> 1, so the slowness is linear in m0/M
        spec = LatticeSpec(4096, 0.01)
        for m0 in (4, 16, 64):
            ratio = group_velocity(4096 - m0, spec) / (math.pi * m0 / 8192)
            assert ratio == pytest.approx(1.0, abs=1e-3)


class TestPlaneWave:
    def test_zero_mode_constant(self):
        u = plane_wave(0, SPEC512).values
        np.testing.assert_allclose(u, 1 / math.sqrt(1024), rtol=1e-15)

    def test_orthonormal_direct_sum(self):
        ks = list(range(-511, 513, 37)) + [512, -511, 1, 2]
        fields = {k: plane_wave(k, SPEC512) for k in ks}
        for a in ks:
            for b in ks:
                s = scalar_product(fields[a], fields[b], SPEC512, weighted=False)
                assert abs(s - (1.0 if a == b else 0.0)) < 1e-12

    def test_band_edge_image(self):
        np.testing.assert_allclose(plane_wave(512, SPEC512).values, plane_wave(-512, SPEC512).values)

    def test_periodic_image(self):
        u = plane_wave(77, SPEC512).values
        assert u[-1] == u[0]


class TestBandMatrix:
    def test_constant_is_null(self):
        u = WaveField(np.full(SPEC512.n_points, 2.5 + 1j))
        assert np.all(apply_band_matrix(u, SPEC512).values == 0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        spec = LatticeSpec(20, 0.3)
        vals = rng.normal(size=41) + 1j * rng.normal(size=41)
        vals[-1] = vals[0]
        got = apply_band_matrix(WaveField(vals), spec).values
        np.testing.assert_allclose(got, direct_laplacian(vals, 0.3), rtol=1e-13)

    def test_eigen_residual_all_modes(self):
        for k in range(-511, 513):
            phi = plane_wave(k, SPEC512)
            w2 = dispersion(abs(k), SPEC512) ** 2
            res = apply_band_matrix(phi, SPEC512).values + w2 * phi.values
            if k == 0:
                assert np.max(np.abs(res)) == 0
            else:
                assert np.max(np.abs(res)) < 1e-10 * w2

    def test_linearity(self):
        rng = np.random.default_rng(9)
        u = WaveField(rng.normal(size=1025) + 0j)
        v = WaveField(rng.normal(size=1025) * 1j)
        a, b = 2.0 - 1j, -0.5
        lhs = apply_band_matrix(WaveField(a * u.values + b * v.values), SPEC512).values
        rhs = a * apply_band_matrix(u, SPEC512).values + b * apply_band_matrix(v, SPEC512).values
        np.testing.assert_allclose(lhs, rhs, atol=1e-9 * np.max(np.abs(lhs)))

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            apply_band_matrix(WaveField(np.zeros(10)), SPEC512)


class TestScalarProduct:
    def test_gaussian_normalization(self):
        spec = LatticeSpec(1000, 0.01)
        g = sample_function(lambda x: np.exp(-x**2 / 2) / np.pi**0.25, spec)
        assert scalar_product(g, g, spec) == pytest.approx(1.0, abs=1e-6)

    def test_weighted_modes_orthogonal(self):
        s = scalar_product(plane_wave(3, SPEC512), plane_wave(200, SPEC512), SPEC512)
        assert abs(s) < 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_self_product_real_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        spec = LatticeSpec(16, 0.2)
        u = WaveField(rng.normal(size=33) + 1j * rng.normal(size=33))
        s = scalar_product(u, u, spec)
        assert s.imag == 0 and s.real >= 0

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            scalar_product(WaveField(np.zeros(5)), WaveField(np.zeros(6)), SPEC512)


class TestEvolve:
    def test_identity_at_zero(self):
        u = sample_function(lambda x: np.exp(-x**2), SPEC512)
        np.testing.assert_allclose(evolve_wave(u, 0.0, SPEC512).values, u.values, atol=1e-15)

    @pytest.mark.parametrize("k", [0, 5, -300, 512])
    def test_plane_wave_global_phase(self, k):
        t = 0.37
        phi = plane_wave(k, SPEC512)
        expected = phi.values * np.exp(1j * dispersion(abs(k), SPEC512) * t)
        np.testing.assert_allclose(evolve_wave(phi, t, SPEC512).values, expected, atol=1e-13)

    @pytest.mark.parametrize("t", [0.1, 1.0, 10.0])
    def test_norm_preserved(self, t):
        rng = np.random.default_rng(1)
        vals = rng.normal(size=1025) + 1j * rng.normal(size=1025)
        vals[-1] = vals[0]
        u = WaveField(vals)
        n0 = norm(u, SPEC512)
        assert abs(norm(evolve_wave(u, t, SPEC512), SPEC512) / n0 - 1) < 1e-10

    def test_composition(self):
        u = delta_field(SPEC512)
        a = evolve_wave(evolve_wave(u, 0.3, SPEC512), 1.1, SPEC512).values
        b = evolve_wave(u, 1.4, SPEC512).values
        assert np.max(np.abs(a - b)) < 1e-9

    def test_massive_matches_mode_sum(self):
        spec = LatticeSpec(16, 0.25, mass=1.5)
        u = delta_field(spec)
        t = 0.8
        direct = np.zeros(33, dtype=complex)
        for k in range(-15, 17):
            phi = plane_wave(k, spec)
            c = scalar_product(phi, u, spec, weighted=False)
            direct += c * np.exp(1j * dispersion(abs(k), spec) * t) * phi.values
        np.testing.assert_allclose(evolve_wave(u, t, spec).values, direct, atol=1e-12)


class TestClassify:
    def test_examples(self):
        spec = LatticeSpec(1000, 0.01, standard_fraction=0.1)
        assert classify_mode(0, spec) is ModeClass.STANDARD
        assert classify_mode(99, spec) is ModeClass.STANDARD
        assert classify_mode(100, spec) is ModeClass.NONSTANDARD
        assert classify_mode(1000, spec) is ModeClass.NONSTANDARD

    def test_ceil_boundary(self):
        spec = LatticeSpec(1001, 0.01, standard_fraction=0.1)
        assert classify_mode(math.ceil(100.1), spec) is ModeClass.NONSTANDARD
        assert classify_mode(100, spec) is ModeClass.STANDARD

    def test_spectral_mode(self):
        mode = spectral_mode(512, SPEC512)
        assert mode.classification is ModeClass.NONSTANDARD
        assert mode.omega == pytest.approx(128.0)

    def test_ring_distance(self):
        assert ring_distance(500, -500, SPEC512) == 24

    def test_projection_split(self):
        rng = np.random.default_rng(4)
        vals = rng.normal(size=1025) + 0j
        vals[-1] = vals[0]
        u = WaveField(vals)
        s = project_sector(u, SPEC512, ModeClass.STANDARD).values
        ns = project_sector(u, SPEC512, ModeClass.NONSTANDARD).values
        np.testing.assert_allclose(s + ns, vals, atol=1e-12)
