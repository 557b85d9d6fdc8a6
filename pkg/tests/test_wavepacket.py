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
    delta_field,
    evolve_wave,
    grid_index,
    plane_wave,
    scalar_product,
)
from nsqm.wavepacket import (
    PropagatingPacket,
    SingularityTail,
    bound_ns_field,
    bound_state,
    build_ns_component,
    calibrate_prefactor,
    compose_two_particle,
    delta_evolution_direct,
    expand_in_basis,
    gaussian_field,
    generate_momenta,
    make_tail,
    ns_overlap,
    packet_from_standard,
    sector_weights,
    singularity_weights,
    stationary_mode,
    tail_closed_form,
    tail_norm,
)


class TestDeltaEvolution:
    spec = LatticeSpec.from_scale(20)  # M = 400, d = 1/20

    def test_initial_spike(self):
        val = delta_evolution_direct(self.spec, 0.0, [0.0])[0]
        assert val == pytest.approx(math.sqrt(20), rel=1e-12)

    def test_initial_off_origin(self):
        val = delta_evolution_direct(self.spec, 0.0, [0.5])[0]
        assert abs(val) < 1e-10 * math.sqrt(20)

    def test_symmetric_split(self):
        a, b = delta_evolution_direct(self.spec, 0.3, [0.15, -0.15])
        assert abs(abs(a) - abs(b)) < 1e-10

    def test_prefactor_matches_scale_form(self):
        # with M = N^2 the prefactor sqrt(N)/(2M) is (1/2) N^(-3/2)
        n = self.spec.scale
        assert math.sqrt(n) / (2 * self.spec.grid_count) == pytest.approx(0.5 * n**-1.5)

    def test_matches_fft_evolution(self):
        spec = LatticeSpec(1024, 1 / 64)
        x = np.linspace(-5, 5, 23)
        direct = delta_evolution_direct(spec, 2.0, x)
        fft = evolve_wave(delta_field(spec), 2.0, spec).values[grid_index(x, spec) + 1024]
        np.testing.assert_allclose(direct, fft, atol=1e-12)

    def test_outside_grid(self):
        with pytest.raises(DomainError):
            delta_evolution_direct(self.spec, 1.0, [self.spec.half_length])


class TestTailClosedForm:
    tail = SingularityTail(t=2.0, step=0.01)

    def test_origin_density(self):
        val = tail_closed_form(self.tail, 0.0).value
        assert abs(val) ** 2 == pytest.approx(1 / (math.pi * 2.0), rel=1e-14)

    def test_modulus_ratio(self):
        r = abs(tail_closed_form(self.tail, 1.6).value) / abs(tail_closed_form(self.tail, 0.0).value)
        assert r == pytest.approx((1 - 0.64) ** -0.25, rel=1e-14)
        assert r == pytest.approx(1.290994, abs=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-1.99, 1.99))
    def test_even_modulus(self, x):
        a = tail_closed_form(self.tail, x).value
        b = tail_closed_form(self.tail, -x).value
        assert abs(a) == pytest.approx(abs(b), rel=1e-14)

    @pytest.mark.parametrize("x", [2.0, -2.0, 3.5])
    def test_off_cone(self, x):
        s = tail_closed_form(self.tail, x)
        assert s.value == 0 and not s.in_cone

    def test_velocity_cap(self):
        tail = SingularityTail(t=2.0, step=0.01, v=0.5)
        assert not tail_closed_form(tail, 1.2).in_cone
        assert tail_closed_form(tail, 0.9).in_cone

    def test_stationary_mode_is_band_edge_at_origin(self):
        spec = LatticeSpec(1000, 0.01)
        assert stationary_mode(0.0, 1.0, spec) == pytest.approx(1000)
        assert stationary_mode(1.0, 1.0, spec) == pytest.approx(0.0)


class TestCalibration:
    def test_unit_cap(self):
        assert calibrate_prefactor(1.0) == pytest.approx(1.0, rel=1e-10)

    @pytest.mark.parametrize("v", [0.3, 0.7, 0.95])
    def test_capped(self, v):
        assert calibrate_prefactor(v) == pytest.approx(math.sqrt(math.pi / (2 * math.asin(v))), rel=1e-9)

    def test_lattice_sum_at_m32768(self):
        spec = LatticeSpec(32768, 1e-4)
        assert abs(tail_norm(make_tail(0.3, spec), spec) - 1) < 1e-2

    @pytest.mark.parametrize("t", [0.3, 0.8, 1.5])
    def test_doubling_t(self, t):
        spec = LatticeSpec(32768, 5e-5)
        a = tail_norm(make_tail(t, spec), spec)
        b = tail_norm(make_tail(t * 0.5, spec), spec)
        assert abs(a - b) < 1e-3

    def test_bare_sum_converges(self):
        errs = [abs(tail_norm(make_tail(1.0, LatticeSpec(40000, d)), LatticeSpec(40000, d), None) - 1) for d in (1e-3, 1e-4)]
        assert errs[1] < errs[0] / 2

    def test_capped_norm(self):
        spec = LatticeSpec(32768, 1e-4)
        assert abs(tail_norm(make_tail(1.0, spec, v=0.6), spec) - 1) < 1e-2


class TestStationaryPhase:
    def test_direct_sum_matches_tail(self):
        spec = LatticeSpec(16384, 1 / 512)
        t = 10.0
        x = grid_index(np.linspace(-0.8 * t, 0.8 * t, 33), spec) * spec.step
        direct = delta_evolution_direct(spec, t, x)
        tail = tail_closed_form(make_tail(t, spec), x).value
        assert np.max(np.abs(np.abs(direct) / np.abs(tail) - 1)) < 0.05
        # phase includes the -pi/4 stationary-phase offset
        assert np.max(np.abs(np.angle(direct / tail))) < 0.05


class TestNSComponent:
    spec = LatticeSpec(4000, 0.01)

    def test_single_singularity(self):
        g = gaussian_field(self.spec)
        p = packet_from_standard(g, [0.0], self.spec)
        x = np.array([-0.5, 0.1, 0.9])
        got = build_ns_component(p, self.spec, 1.0, x)
        expected = tail_closed_form(make_tail(1.0, self.spec), x).value
        np.testing.assert_allclose(got, expected * p.weights[0], rtol=1e-14)
        assert abs(p.weights[0]) == pytest.approx(1.0)

    def test_two_sites_midpoint(self):
        a = 0.3
        w = 1 / math.sqrt(2)
        p = PropagatingPacket(gaussian_field(self.spec), (-a, a), (w, w))
        tail = make_tail(1.0, self.spec)
        expected = w * tail_closed_form(tail, a).value + w * tail_closed_form(tail, -a).value
        assert build_ns_component(p, self.spec, 1.0, [0.0])[0] == pytest.approx(expected, rel=1e-14)

    def test_gaussian_weights_normalized(self):
        g = gaussian_field(self.spec, width=0.7)
        w = singularity_weights(g, np.linspace(-2, 2, 17), self.spec)
        assert abs(np.sum(np.abs(w) ** 2) - 1) < 1e-12

    def test_unnormalized_rejected(self):
        p = PropagatingPacket(gaussian_field(self.spec), (0.0, 0.1), (1.0, 1.0))
        with pytest.raises(ValidationError):
            build_ns_component(p, self.spec, 1.0, [0.0])

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0, 2 * math.pi), st.floats(0.05, 0.95))
    def test_linear_in_weights(self, phase, frac):
        g = gaussian_field(self.spec)
        pos = (-0.2, 0.4)
        x = np.linspace(-0.5, 0.5, 7)
        e0 = build_ns_component(PropagatingPacket(g, pos, (1, 0)), self.spec, 1.0, x)
        e1 = build_ns_component(PropagatingPacket(g, pos, (0, 1)), self.spec, 1.0, x)
        w = (math.sqrt(frac), math.sqrt(1 - frac) * complex(math.cos(phase), math.sin(phase)))
        got = build_ns_component(PropagatingPacket(g, pos, w), self.spec, 1.0, x)
        np.testing.assert_allclose(got, w[0] * e0 + w[1] * e1, atol=1e-13)


class TestBoundStates:
    def test_orthogonal_standard_parts(self):
        spec = LatticeSpec(2048, 0.02)
        rng = np.random.default_rng(0)
        ks = generate_momenta(4, spec, rng)
        a = bound_state(gaussian_field(spec, width=1.0), ks, spec)
        odd = gaussian_field(spec, width=1.0).values * spec.positions()
        b = bound_state(WaveField(odd), ks, spec)
        assert abs(ns_overlap(a, b, 0.7, spec)) < 1e-12

    def test_self_overlap_at_zero(self):
        spec = LatticeSpec(2048, 0.02)
        ks = generate_momenta(6, spec, np.random.default_rng(1))
        a = bound_state(gaussian_field(spec), ks, spec)
        assert ns_overlap(a, a, 0.0, spec) == pytest.approx(6.0, rel=1e-9)

    def test_brute_force_grid_sum(self):
        spec = LatticeSpec(8192, 0.01, standard_fraction=0.05)
        ks = generate_momenta(16, spec, np.random.default_rng(7))
        a = bound_state(gaussian_field(spec, center=0.2, width=1.0), ks, spec)
        b = bound_state(gaussian_field(spec, center=-0.3, width=1.3, momentum=0.5), ks, spec)
        for t in (0.0, 0.37, 2.9):
            brute = scalar_product(bound_ns_field(a, t, spec), bound_ns_field(b, t, spec), spec)
            closed = ns_overlap(a, b, t, spec)
            assert abs(brute - closed) / abs(closed) < 1e-3

    def test_ratio_independent_of_pair(self):
        spec = LatticeSpec(2048, 0.02)
        ks = generate_momenta(5, spec, np.random.default_rng(2))
        fields = [gaussian_field(spec, center=c, width=w) for c, w in [(0, 1), (0.5, 0.8), (-1, 1.2)]]
        states = [bound_state(f, ks, spec) for f in fields]
        t = 1.3
        expected = sum(math.cos(w * t) ** 2 for w in states[0].omegas)
        for a in states:
            for b in states:
                ratio = ns_overlap(a, b, t, spec) / scalar_product(a.phi_S, b.phi_S, spec)
                assert ratio == pytest.approx(expected, rel=1e-12)

    def test_mismatched_spectra(self):
        spec = LatticeSpec(2048, 0.02)
        a = bound_state(gaussian_field(spec), (500, -900), spec)
        b = bound_state(gaussian_field(spec), (500, 1400), spec)
        with pytest.raises(DomainError):
            ns_overlap(a, b, 0.0, spec)

    def test_standard_momentum_rejected(self):
        spec = LatticeSpec(2048, 0.02)
        with pytest.raises(DomainError):
            bound_state(gaussian_field(spec), (10, 900), spec)

    def test_generated_spectrum_conditions(self):
        spec = LatticeSpec(4096, 0.02)
        ks = generate_momenta(8, spec, np.random.default_rng(3))
        bound_state(gaussian_field(spec), ks, spec)
        assert generate_momenta(8, spec, np.random.default_rng(3)) == ks

    def test_generation_impossible(self):
        spec = LatticeSpec(100, 0.1, standard_fraction=0.4)
        with pytest.raises(ValidationError):
            generate_momenta(10, spec, np.random.default_rng(0), max_tries=2000)


class TestComposition:
    spec = LatticeSpec(128, 0.05)

    def packet(self, center):
        g = gaussian_field(self.spec, center=center, width=0.5)
        return packet_from_standard(g, [center - 0.2, center, center + 0.2], self.spec)

    def test_two_terms_only(self):
        comp = compose_two_particle(self.packet(0.0), self.packet(0.5), self.spec, 1.0)
        assert len(comp.terms) == 2

    def test_mixed_sector_weight_vanishes(self):
        comp = compose_two_particle(self.packet(-0.4), self.packet(0.6), self.spec, 1.5)
        w = sector_weights(comp.on_grid(), self.spec)
        S, NS = ModeClass.STANDARD, ModeClass.NONSTANDARD
        assert w[(S, NS)] + w[(NS, S)] < 1e-10
        assert w[(S, S)] > 0 and w[(NS, NS)] > 0

    def test_full_product_has_cross_terms(self):
        # control: the naive product (S1+NS1)(S2+NS2) fails the audit
        comp = compose_two_particle(self.packet(-0.4), self.packet(0.6), self.spec, 1.5)
        full = np.outer(comp.s1.values[:-1] + comp.ns1.values[:-1], comp.s2.values[:-1] + comp.ns2.values[:-1])
        w = sector_weights(full, self.spec)
        assert w[(ModeClass.STANDARD, ModeClass.NONSTANDARD)] > 1e-3

    def test_zero_ns_gives_pure_product(self):
        comp = compose_two_particle(self.packet(0.0), self.packet(0.3), self.spec, 1.0)
        comp = type(comp)(comp.s1, comp.s2, comp.ns1, WaveField(np.zeros(257)))
        x1, x2 = np.array([0.1, -0.3]), np.array([0.4, 0.2])
        j1 = grid_index(x1, self.spec) + 128
        j2 = grid_index(x2, self.spec) + 128
        np.testing.assert_allclose(comp.evaluate(x1, x2, self.spec), comp.s1.values[j1] * comp.s2.values[j2])

    def test_exchange_symmetry(self):
        p = self.packet(0.1)
        comp = compose_two_particle(p, p, self.spec, 0.8)
        grid = comp.on_grid()
        np.testing.assert_allclose(grid, grid.T, atol=1e-14)


class TestExpansion:
    spec = LatticeSpec(2000, 0.01)

    def test_unit_indicator(self):
        basis = [plane_wave(k, self.spec) for k in (0, 3, 7)]
        # plane waves are unit in the mode product; rescale to the weighted one
        basis = [WaveField(b.values / math.sqrt(self.spec.step)) for b in basis]
        c = expand_in_basis(basis[1], basis, self.spec)
        np.testing.assert_allclose(c, [0, 1, 0], atol=1e-12)

    def test_gaussian_overlaps(self):
        sigma = 0.8
        state = gaussian_field(self.spec, center=0.0, width=sigma)
        basis = [gaussian_field(self.spec, center=c, width=sigma) for c in (-0.5, 1.2)]
        c = expand_in_basis(state, basis, self.spec)
        expected = [math.exp(-(0.5**2) / (4 * sigma**2)), math.exp(-(1.2**2) / (4 * sigma**2))]
        np.testing.assert_allclose(c.real, expected, atol=1e-6)

    def test_parseval(self):
        spec = LatticeSpec(64, 0.1)
        basis = [WaveField(plane_wave(k, spec).values / math.sqrt(spec.step)) for k in range(-63, 65)]
        state = gaussian_field(spec, width=0.7)
        c = expand_in_basis(state, basis, spec)
        assert abs(np.sum(np.abs(c) ** 2) - 1) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            expand_in_basis(gaussian_field(self.spec), [WaveField(np.zeros(3))], self.spec)
