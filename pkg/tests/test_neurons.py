import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedta.errors import DegenerateDynamicsError, NumericsError
from fedta.neurons import (DELTA, LifParams, NeuronState, STANDARD, SsmParams,
                           init_lif, init_ssm, lif_effective_alpha, lif_step,
                           spike_ramp, ssm_effective_matrices, ssm_step,
                           surrogate_spike)


def lif_rollout(params, inputs, u0=0.0, s0=0.0):
    """Reference rollout by repeated single steps."""
    state = NeuronState(u0, s0)
    us, spikes = [], []
    for u in inputs:
        state, s = lif_step(state, u, params)
        us.append(state.membrane_or_state)
        spikes.append(s)
    return np.array(us), np.array(spikes)


class TestLifStep:
    def test_constant_drive_crosses_threshold(self):
        params = LifParams(variant=STANDARD, alpha=0.5)
        us, spikes = lif_rollout(params, [2.0, 2.0])
        # U1 = 0.5*0 + 0.5*2 = 1 -> spike; U2 = 0.5*(1-1) + 0.5*2 = 1 -> spike
        assert us.tolist() == [1.0, 1.0]
        assert spikes.tolist() == [1.0, 1.0]

    def test_zero_input_is_fixed_point(self):
        params = LifParams(variant=STANDARD, alpha=0.7)
        us, spikes = lif_rollout(params, [0.0] * 10)
        assert np.all(us == 0.0)
        assert np.all(spikes == 0.0)

    def test_reset_after_spike(self):
        params = LifParams(variant=STANDARD, alpha=0.9)
        state, spike = lif_step(NeuronState(0.5, 1.0), 0.0, params)
        assert state.membrane_or_state == pytest.approx(-0.45, abs=1e-15)
        assert spike == 0.0

    def test_non_finite_rejected(self):
        params = LifParams(variant=STANDARD, alpha=0.5)
        with pytest.raises(NumericsError):
            lif_step(NeuronState(float("nan"), 0.0), 1.0, params)
        with pytest.raises(NumericsError):
            lif_step(NeuronState(0.0, 0.0), float("inf"), params)

    @given(alpha=st.floats(0.05, 0.95), u_max=st.floats(0.0, 5.0),
           seed=st.integers(0, 1000))
    @settings(max_examples=50, deadline=None)
    def test_membrane_bounded_by_drive(self, alpha, u_max, seed):
        # with non-negative inputs <= u_max and threshold 1, U never exceeds
        # max(U0, u_max)
        params = LifParams(variant=STANDARD, alpha=alpha)
        rng = np.random.default_rng(seed)
        us, spikes = lif_rollout(params, rng.uniform(0, u_max, size=50))
        assert np.all(us <= max(0.0, u_max) + 1e-12)
        assert set(np.unique(spikes)) <= {0.0, 1.0}


class TestEffectiveAlpha:
    def test_delta_composition(self):
        params = LifParams(variant=DELTA, delta_log=0.0, gamma_log=0.0)
        assert lif_effective_alpha(params) == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_delta_near_one_limit(self):
        params = LifParams(variant=DELTA, delta_log=-20.0, gamma_log=0.0)
        alpha = lif_effective_alpha(params)
        # 1 - alpha ~= exp(-20) to first order
        assert 1.0 - alpha == pytest.approx(math.exp(-20.0), rel=1e-6)

    def test_standard_passthrough(self):
        assert lif_effective_alpha(LifParams(variant=STANDARD, alpha=0.75)) == 0.75

    @given(delta_log=st.floats(-16, 3), gamma_log=st.floats(-16, 3))
    @settings(max_examples=100, deadline=None)
    def test_delta_alpha_always_in_unit_interval(self, delta_log, gamma_log):
        # (0, 1) holds for all finite parameters in real arithmetic; in float64
        # it is assertable while exp(d+g) neither underflows the 1-ulp gap
        # below 1 nor pushes exp(-...) below the smallest subnormal, hence the
        # bounded ranges here.
        params = LifParams(variant=DELTA, delta_log=delta_log, gamma_log=gamma_log)
        assert 0.0 < lif_effective_alpha(params) < 1.0


class TestSurrogateSpike:
    @pytest.mark.parametrize("v,expected_spike,expected_grad", [
        (1.0, 1.0, 1.0),
        (-5.0, 0.0, 0.0),
        (1.4, 1.0, 1.0),
        (1.6, 1.0, 0.0),
        (0.5, 0.0, 1.0),
        (0.4, 0.0, 0.0),
    ])
    def test_boxcar(self, v, expected_spike, expected_grad):
        spike, grad = surrogate_spike(v, 1.0, 0.5)
        assert spike == expected_spike
        assert grad == expected_grad

    @given(v=st.floats(-10, 10), width=st.floats(0.01, 2.0))
    @settings(max_examples=100, deadline=None)
    def test_forward_independent_of_width(self, v, width):
        assert surrogate_spike(v, 1.0, width)[0] == surrogate_spike(v, 1.0, 0.5)[0]

    def test_ramp_matches_heaviside_outside_support(self):
        v = np.array([-1.0, 0.49, 1.51, 3.0])
        assert spike_ramp(v, 1.0, 0.5).tolist() == [0.0, 0.0, 1.0, 1.0]


class TestSsmEffectiveMatrices:
    def test_delta_scalar_example(self):
        params = SsmParams(variant=DELTA, A_re_log=np.zeros(1), A_im=np.zeros(1),
                           delta_log=0.0, B=np.ones((1, 1), complex),
                           C=np.full((1, 1), 2.0 + 0.0j))
        A, B, C = ssm_effective_matrices(params)
        assert A[0] == pytest.approx(math.exp(-1.0), rel=1e-12)
        assert C[0, 0] == pytest.approx(2.0 * (math.exp(-1.0) - 1.0), rel=1e-12)
        assert B is params.B

    def test_standard_passthrough_is_bit_for_bit(self):
        rng = np.random.default_rng(0)
        params = init_ssm(STANDARD, 3, 1, 1, rng)
        A, B, C = ssm_effective_matrices(params)
        assert A is params.A and B is params.B and C is params.C

    def test_delta_doubling_squares_transition(self):
        rng = np.random.default_rng(1)
        base = init_ssm(DELTA, 4, 1, 1, rng)
        A1, _, _ = ssm_effective_matrices(SsmParams(
            variant=DELTA, A_re_log=base.A_re_log, A_im=base.A_im,
            delta_log=math.log(1.0), B=base.B, C=base.C))
        A2, _, _ = ssm_effective_matrices(SsmParams(
            variant=DELTA, A_re_log=base.A_re_log, A_im=base.A_im,
            delta_log=math.log(2.0), B=base.B, C=base.C))
        np.testing.assert_allclose(A2, A1 ** 2, rtol=0, atol=1e-12)

    def test_literal_rescale_switch(self):
        params = SsmParams(variant=DELTA, A_re_log=np.zeros(1), A_im=np.zeros(1),
                           delta_log=0.0, B=np.ones((1, 1), complex),
                           C=np.ones((1, 1), complex))
        _, _, C_zoh = ssm_effective_matrices(params, c_rescale="zoh")
        _, _, C_lit = ssm_effective_matrices(params, c_rescale="literal")
        a = math.exp(-1.0)
        assert C_zoh[0, 0] == pytest.approx(a - 1.0, rel=1e-12)
        assert C_lit[0, 0] == pytest.approx(math.exp(a) - 1.0, rel=1e-12)

    def test_degenerate_continuous_pole_rejected(self):
        # exp(-800) underflows to exactly 0, making A_c = 0
        params = SsmParams(variant=DELTA, A_re_log=np.array([-800.0]),
                           A_im=np.zeros(1), delta_log=0.0,
                           B=np.ones((1, 1), complex), C=np.ones((1, 1), complex))
        with pytest.raises(DegenerateDynamicsError):
            ssm_effective_matrices(params)


class TestSsmStep:
    def test_single_step(self):
        state = NeuronState(np.zeros(1, complex))
        A = np.zeros(1, complex)
        B = np.ones((1, 1), complex)
        C = np.ones((1, 1), complex)
        state, y = ssm_step(state, np.array([3.0]), A, B, C)
        assert state.membrane_or_state[0] == 3.0 + 0.0j
        assert y[0] == 0.0  # GELU(0), output uses the pre-update state

    def test_geometric_fixed_point(self):
        # x <- 0.5 x + 1 converges to 2
        state = NeuronState(np.zeros(1, complex))
        A = np.full(1, 0.5 + 0.0j)
        B = np.ones((1, 1), complex)
        C = np.ones((1, 1), complex)
        for _ in range(200):
            state, _ = ssm_step(state, np.array([1.0]), A, B, C)
        assert abs(state.membrane_or_state[0] - 2.0) < 1e-10

    def test_zero_everything_stays_zero(self):
        rng = np.random.default_rng(0)
        params = init_ssm(STANDARD, 3, 2, 1, rng)
        state = NeuronState(np.zeros(3, complex))
        for _ in range(5):
            state, y = ssm_step(state, np.zeros(2), params.A, params.B, params.C)
            assert np.all(state.membrane_or_state == 0)
            assert np.all(y == 0.0)

    def test_dimension_mismatch(self):
        state = NeuronState(np.zeros(2, complex))
        with pytest.raises(ValueError):
            ssm_step(state, np.zeros(1), np.zeros(3, complex),
                     np.ones((3, 1), complex), np.ones((1, 3), complex))

    @given(seed=st.integers(0, 500), a=st.floats(0.01, 0.99), b=st.floats(0.01, 0.99))
    @settings(max_examples=30, deadline=None)
    def test_state_update_is_linear(self, seed, a, b):
        rng = np.random.default_rng(seed)
        A = rng.uniform(0.2, 0.9, 3) * np.exp(1j * rng.uniform(-2, 2, 3))
        B = rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2))
        C = rng.normal(size=(1, 3)) + 1j * rng.normal(size=(1, 3))
        x1 = rng.normal(size=3) + 1j * rng.normal(size=3)
        x2 = rng.normal(size=3) + 1j * rng.normal(size=3)
        u1, u2 = rng.normal(size=2), rng.normal(size=2)
        s1, _ = ssm_step(NeuronState(x1), u1, A, B, C)
        s2, _ = ssm_step(NeuronState(x2), u2, A, B, C)
        s12, _ = ssm_step(NeuronState(a * x1 + b * x2), a * u1 + b * u2, A, B, C)
        combined = a * s1.membrane_or_state + b * s2.membrane_or_state
        np.testing.assert_allclose(s12.membrane_or_state, combined, rtol=0, atol=1e-12)


class TestInit:
    def test_standard_lif_bounds(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            params = init_lif(STANDARD, rng)
            assert math.exp(-1.0 / 5.0) <= params.alpha <= math.exp(-1.0 / 25.0)

    def test_delta_lif_matches_standard_interval_at_unit_timestep(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            params = init_lif(DELTA, rng)
            assert params.delta_log == 0.0
            alpha = lif_effective_alpha(params)
            assert math.exp(-1.0 / 5.0) - 1e-12 <= alpha <= math.exp(-1.0 / 25.0) + 1e-12

    def test_effective_alpha_at_interval_edge(self):
        params = LifParams(variant=DELTA, delta_log=0.0, gamma_log=math.log(1.0 / 5.0))
        assert lif_effective_alpha(params) == pytest.approx(math.exp(-0.2), rel=1e-12)

    def test_same_seed_same_params(self):
        a = init_lif(STANDARD, np.random.default_rng(7))
        b = init_lif(STANDARD, np.random.default_rng(7))
        assert a == b
        sa = init_ssm(DELTA, 4, 1, 1, np.random.default_rng(7))
        sb = init_ssm(DELTA, 4, 1, 1, np.random.default_rng(7))
        np.testing.assert_array_equal(sa.B, sb.B)
        np.testing.assert_array_equal(sa.C, sb.C)
        assert sa.delta_log == sb.delta_log

    def test_imaginary_ladder(self):
        params = init_ssm(DELTA, 2, 1, 1, np.random.default_rng(0))
        np.testing.assert_allclose(params.A_im, [0.0, math.pi])

    def test_discretized_transition_is_stable(self):
        # |exp(-exp(d) (1/2 - j pi n))| = exp(-exp(d)/2) < 1 across the init range
        for seed in range(50):
            params = init_ssm(STANDARD, 4, 1, 1, np.random.default_rng(seed))
            assert np.all(np.abs(params.A) < 1.0)
