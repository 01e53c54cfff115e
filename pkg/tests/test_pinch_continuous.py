import math

import numpy as np
import pytest

from pinchsim.pinch_continuous import (
    GaaParams,
    default_layout,
    gaa_inner,
    gradient_ascent,
    objective_gradient,
    penalized_objective,
    penalty_outer,
    project_spacing,
    rate_position_gradient,
    reparam_from_box,
    reparam_to_box,
    smoothed_penalties,
)
from pinchsim.scene import (
    Deployment,
    PinchingLayout,
    SystemConfig,
    feasible_continuous,
    sum_rate,
    user_rate,
    user_rates,
)

from conftest import random_deployment, random_layout, random_powers


def fd_rate_gradient(k, i, j, X, p, dep, config, h=1e-6):
    up, down = X.copy(), X.copy()
    up[i, j] += h
    down[i, j] -= h
    return (user_rate(k, up, p, dep, config)
            - user_rate(k, down, p, dep, config)) / (2 * h)


def fd_objective_gradient(latent, p, dep, config, beta, rho, form, h=1e-6):
    # h is a step in meters; convert per entry through the tanh Jacobian so
    # the decoded positions move by ~h regardless of latent saturation
    jac = config.strip_length / 2 * (1 - np.tanh(latent) ** 2)
    steps = np.minimum(h / np.maximum(jac, 1e-12), 1.0)
    grad = np.zeros_like(latent)
    for idx in np.ndindex(latent.shape):
        up, down = latent.copy(), latent.copy()
        up[idx] += steps[idx]
        down[idx] -= steps[idx]
        grad[idx] = (penalized_objective(up, p, dep, config, beta, rho, form)
                     - penalized_objective(down, p, dep, config, beta, rho, form)) / (2 * steps[idx])
    return grad


class TestReparam:
    def test_center_and_saturation(self):
        config = SystemConfig()
        L = config.strip_length
        assert reparam_to_box(np.zeros((2, 4)), config) == pytest.approx(L / 2)
        assert reparam_to_box(np.full((1, 1), 20.0), config)[0, 0] \
            == pytest.approx(L, abs=1e-9 * L)
        assert np.all(reparam_to_box(np.full((1, 1), 100.0), config) <= L)

    def test_roundtrip(self):
        config = SystemConfig()
        rng = np.random.default_rng(0)
        latent = rng.uniform(-5, 5, size=(2, 4))
        back = reparam_from_box(reparam_to_box(latent, config), config)
        assert np.allclose(back, latent, atol=1e-9)

    def test_boundary_clamp(self):
        config = SystemConfig()
        latent = reparam_from_box(np.zeros((1, 1)), config)
        assert latent[0, 0] == pytest.approx(math.atanh(-1 + 1e-6), rel=1e-12)
        assert latent[0, 0] == pytest.approx(-7.25, abs=0.01)

    def test_monotone(self):
        config = SystemConfig()
        xs = np.linspace(0.0, config.strip_length, 50)[None, :]
        latent = reparam_from_box(xs, config)
        assert np.all(np.diff(latent[0]) > 0)


class TestSmoothedPenalties:
    def test_symmetric_point(self):
        # hinge argument 0 at rho=1 gives ln 2
        config = SystemConfig(num_users=1, pas_per_waveguide=2, num_slots=2,
                              min_rate=0.0)
        from pinchsim.pinch_continuous import _softplus
        assert _softplus(0.0, 1.0) == pytest.approx(math.log(2), rel=1e-12)

    def test_deep_feasible_vanishes(self):
        from pinchsim.pinch_continuous import _softplus
        assert _softplus(-10.0, 0.1) < 1e-40

    def test_sandwich_bound(self):
        from pinchsim.pinch_continuous import _softplus
        rng = np.random.default_rng(1)
        zeta = rng.uniform(-50, 50, size=1000)
        rho = rng.uniform(1e-3, 10, size=1000)
        kappa = _softplus(zeta, rho)
        hinge = np.maximum(0.0, zeta)
        assert np.all(kappa >= hinge - 1e-12)
        assert np.all(kappa <= hinge + rho * math.log(2) + 1e-12)

    def test_shapes_and_values(self):
        config = SystemConfig()
        rng = np.random.default_rng(2)
        dep = random_deployment(config, rng)
        p = random_powers(config, rng)
        latent = rng.uniform(-2, 2, size=(2, 4))
        k1, k2 = smoothed_penalties(latent, p, dep, config, rho=1.0)
        assert k1.shape == (2,)
        assert k2.shape == (2, 3)
        assert np.all(k1 >= 0) and np.all(k2 >= 0)


class TestPenalizedObjective:
    def test_beta_zero_is_sum_rate(self):
        config = SystemConfig()
        rng = np.random.default_rng(3)
        dep = random_deployment(config, rng)
        p = random_powers(config, rng)
        latent = rng.uniform(-2, 2, size=(2, 4))
        X = reparam_to_box(latent, config)
        assert penalized_objective(latent, p, dep, config, 0.0, 1.0) \
            == pytest.approx(sum_rate(X, p, dep, config), rel=1e-12)

    def test_deep_feasible_close_to_sum_rate(self):
        config = SystemConfig(min_rate=0.0)
        dep = Deployment(np.array([[3.0, -5.0, 0.0], [7.0, 5.0, 0.0]]),
                         np.array([-3.0, 3.0]))
        X = np.vstack([np.linspace(1, 9, 4), np.linspace(1, 9, 4)])
        latent = reparam_from_box(X, config)
        beta, rho = 100.0, 1e-3
        q = penalized_objective(latent, np.full(2, 0.05), dep, config, beta, rho)
        f = sum_rate(reparam_to_box(latent, config), np.full(2, 0.05), dep, config)
        slack = beta * (2 + 2 * 3) * rho * math.log(2)
        assert abs(q - f) <= slack

    def test_violation_dominates(self):
        config = SystemConfig()
        rng = np.random.default_rng(4)
        dep = random_deployment(config, rng)
        p = random_powers(config, rng)
        # all PAs collapsed on one spot: every spacing pair violated
        latent = reparam_from_box(np.full((2, 4), 5.0), config)
        q = penalized_objective(latent, p, dep, config, beta=1e6, rho=1e-3,
                                spacing_form="box")
        assert q < -100.0


class TestRateGradient:
    def test_matches_finite_differences(self):
        config = SystemConfig()
        rng = np.random.default_rng(5)
        for _ in range(10):
            dep = random_deployment(config, rng)
            layout = random_layout(config, rng)
            p = random_powers(config, rng)
            X = layout.positions
            for k in range(2):
                for i in range(2):
                    j = int(rng.integers(0, 4))
                    got = rate_position_gradient(k, i, j, X, p, dep, config)
                    want = fd_rate_gradient(k, i, j, X, p, dep, config)
                    assert got == pytest.approx(want, rel=1e-5, abs=1e-7)

    def test_zero_power_waveguide(self):
        config = SystemConfig()
        rng = np.random.default_rng(6)
        dep = random_deployment(config, rng)
        X = random_layout(config, rng).positions
        p = np.array([0.0, 0.05])
        for k in range(2):
            assert rate_position_gradient(k, 0, 1, X, p, dep, config) == 0.0

    def test_single_term_closed_form(self):
        # K=1, N=1: the residual vanishes, so only the amplitude slope remains
        config = SystemConfig(num_users=1, pas_per_waveguide=1, num_slots=1,
                              min_rate=0.0)
        dep = Deployment(np.array([[3.0, 0.0, 0.0]]), np.array([0.0]))
        x = np.array([[4.2]])
        p = np.array([0.05])
        eta, d = config.ref_gain, config.height
        c2 = (4.2 - 3.0) ** 2 + d ** 2
        upsilon = eta ** 2 / c2
        dupsilon = -2 * eta ** 2 * (4.2 - 3.0) / c2 ** 2
        noise = config.effective_noise[0]
        expected = p[0] / (math.log(2) * (noise + p[0] * upsilon)) * dupsilon
        got = rate_position_gradient(0, 0, 0, x, p, dep, config)
        assert got == pytest.approx(expected, rel=1e-12)


class TestObjectiveGradient:
    @pytest.mark.parametrize("form", ["latent", "box"])
    def test_matches_finite_differences(self, form):
        config = SystemConfig()
        rng = np.random.default_rng(7)
        cases = 0
        for beta in (0.0, 1.0, 100.0):
            for rho in (1.0, 0.1):
                for _ in range(5):
                    dep = random_deployment(config, rng)
                    p = random_powers(config, rng)
                    latent = rng.uniform(-2.5, 2.5, size=(2, 4))
                    got = objective_gradient(latent, p, dep, config, beta, rho, form)
                    want = fd_objective_gradient(latent, p, dep, config, beta, rho, form)
                    err = np.linalg.norm(got - want) / np.linalg.norm(want)
                    assert err <= 1e-5
                    cases += 1
        assert cases == 30

    def test_saturated_entries_have_zero_gradient(self):
        config = SystemConfig()
        rng = np.random.default_rng(8)
        dep = random_deployment(config, rng)
        p = random_powers(config, rng)
        latent = rng.uniform(-1, 1, size=(2, 4))
        latent[0, 0] = 20.0
        g = objective_gradient(latent, p, dep, config, 1.0, 1.0)
        assert abs(g[0, 0]) < 1e-10


class TestFusedEvaluator:
    @pytest.mark.parametrize("form", ["latent", "box"])
    def test_matches_contract_functions(self, form):
        from pinchsim.pinch_continuous import _Evaluator

        config = SystemConfig()
        rng = np.random.default_rng(21)
        for beta, rho in ((0.0, 1.0), (1.0, 0.1), (100.0, 0.1)):
            dep = random_deployment(config, rng)
            p = random_powers(config, rng)
            ev = _Evaluator(p, dep, config, beta, rho, form)
            for _ in range(5):
                latent = rng.uniform(-3, 3, size=(2, 4))
                q_ref = penalized_objective(latent, p, dep, config, beta, rho, form)
                g_ref = objective_gradient(latent, p, dep, config, beta, rho, form)
                assert ev.objective(latent) == pytest.approx(q_ref, rel=1e-12)
                assert np.allclose(ev.gradient(latent), g_ref, rtol=1e-9, atol=1e-12)


class TestGradientAscent:
    def test_quadratic_converges_to_maximizer(self):
        target = 1.7
        params = GaaParams(tolerance=1e-14, inner_max=2000)
        x, trace, stalled = gradient_ascent(
            lambda x: -float(((x - target) ** 2).sum()),
            lambda x: -2.0 * (x - target),
            np.array([[-3.0]]), params)
        assert not stalled
        assert x[0, 0] == pytest.approx(target, abs=1e-6)

    def test_stationary_start_terminates_immediately(self):
        params = GaaParams()
        x0 = np.array([[2.0]])
        x, trace, stalled = gradient_ascent(
            lambda x: -float(((x - 2.0) ** 2).sum()),
            lambda x: -2.0 * (x - 2.0),
            x0, params)
        assert not stalled
        assert len(trace) == 1
        assert np.array_equal(x, x0)

    def test_trace_monotone_on_scenario(self):
        config = SystemConfig()
        rng = np.random.default_rng(9)
        for _ in range(5):
            dep = random_deployment(config, rng)
            p = random_powers(config, rng)
            latent = reparam_from_box(default_layout(config), config)
            _, trace, _ = gaa_inner(latent, p, dep, config, GaaParams(inner_max=60))
            assert np.all(np.diff(trace) >= 0)

    def test_two_pa_stage_stabilizes_early(self):
        # the bulk of the climb happens within the first few dozen steps
        # and the trace is essentially flat well before the iteration cap
        config = SystemConfig(pas_per_waveguide=2)
        for seed in range(3):
            dep = random_deployment(config, np.random.default_rng(seed))
            p = np.full(2, config.max_power / 2)
            latent = reparam_from_box(default_layout(config), config)
            _, trace, _ = gaa_inner(latent, p, dep, config, GaaParams())
            trace = np.asarray(trace)
            gain = trace[-1] - trace[0]
            assert gain > 0
            at_30 = trace[min(30, len(trace) - 1)] - trace[0]
            at_150 = trace[min(150, len(trace) - 1)] - trace[0]
            assert at_30 >= 0.70 * gain
            assert at_150 >= 0.99 * gain


class TestPenaltyOuter:
    def test_output_feasible_on_drops(self, table1_config):
        rng = np.random.default_rng(10)
        for _ in range(5):
            dep = random_deployment(table1_config, rng)
            p = np.full(2, table1_config.max_power / 2)
            result = penalty_outer(default_layout(table1_config), p, dep,
                                   table1_config)
            X = result.layout.positions
            assert feasible_continuous(X, table1_config)
            gaps = np.diff(X, axis=1)
            assert np.all(gaps >= table1_config.spacing - 1e-9)
            assert np.all(X >= 0) and np.all(X <= table1_config.strip_length)
            if result.feasible:
                rates = user_rates(X, p, dep, table1_config)
                assert np.all(rates >= table1_config.min_rates - 1e-6)

    def test_improves_over_init(self, table1_config):
        rng = np.random.default_rng(11)
        dep = random_deployment(table1_config, rng)
        p = np.full(2, table1_config.max_power / 2)
        X0 = default_layout(table1_config)
        result = penalty_outer(X0, p, dep, table1_config)
        assert sum_rate(result.layout, p, dep, table1_config) \
            >= sum_rate(X0, p, dep, table1_config) - 1e-9

    def test_projection_makes_spacing_exact(self):
        config = SystemConfig()
        delta = config.spacing
        X = np.array([[1.0, 1.0 + 0.2 * delta, 5.0, 9.999999999],
                      [0.0, 2.0, 2.0, 10.0]])
        out = project_spacing(X, config)
        assert np.all(np.diff(out, axis=1) >= delta - 1e-12)
        assert np.all(out >= 0) and np.all(out <= config.strip_length)

    def test_feasible_start_terminates_first_stage(self, table1_config):
        rng = np.random.default_rng(12)
        dep = random_deployment(table1_config, rng)
        p = np.full(2, table1_config.max_power / 2)
        first = penalty_outer(default_layout(table1_config), p, dep, table1_config)
        assert first.feasible
        again = penalty_outer(first.layout.positions, p, dep, table1_config)
        assert len(again.stage_lengths) == 1
