import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duffing_sp import _kernels
from duffing_sp.integrator import (
    ConfigError,
    IntegrationError,
    MultiRootWarning,
    NonConvergenceError,
    SchemeConfig,
    default_record_stride,
    integrate,
    rk4_integrate,
    rk4_step,
    sp_residual,
    sp_residual_derivative,
    sp_step,
)
from duffing_sp.model import DuffingParams, State, discrete_gradient, energy, energy_array

P311 = DuffingParams(3, 1.0, 1.0)
P301 = DuffingParams(3, 0.0, 1.0)


def oracle_residual(params, dt, prev, x):
    # written from the two-equation scheme, not from the library residual
    y_next = 2 * (x - prev.x) / dt - prev.y
    g = params.alpha / (params.p + 1) * sum(x ** (params.p - l) * prev.x ** l for l in range(params.p + 1))
    return (y_next - prev.y) / dt + g + params.mu * (y_next + prev.y) / 2


def oracle_bisect(f, lo, hi):
    flo = f(lo)
    assert flo * f(hi) < 0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if (f(mid) < 0) == (flo < 0):
            lo, flo = mid, f(mid)
        else:
            hi = mid
    return 0.5 * (lo + hi)


def step_defect(params, dt, prev, nxt):
    return energy(params, nxt) - energy(params, prev) + params.mu / 4 * (nxt.y + prev.y) ** 2 * dt


class TestResidual:
    def test_equilibrium(self):
        assert sp_residual(DuffingParams(5, 2.0, 3.0), 0.1, State(0, 0), 0.0) == 0.0

    def test_direct_substitution(self):
        assert sp_residual(P301, 1.0, State(0, 1), 1.0) == 0.25

    def test_root_agrees_with_bisection_oracle(self):
        prev = State(2, 0)
        root = sp_step(P311, SchemeConfig(0.01, 1.0), prev).next.x
        oracle_root = oracle_bisect(lambda x: oracle_residual(P311, 0.01, prev, x), 1.0, 3.0)
        assert root == pytest.approx(oracle_root, abs=1e-13)
        assert abs(sp_residual(P311, 0.01, prev, root)) <= 1e-10

    def test_derivative_examples(self):
        assert sp_residual_derivative(P301, 1.0, State(0, 0), 1.0) == 2.75
        assert sp_residual_derivative(P311, 0.01, State(1, 0), 1.0) == pytest.approx(20101.5, rel=1e-14)

    @settings(max_examples=300, deadline=None)
    @given(
        st.sampled_from([3, 5, 7]),
        st.floats(0, 10),
        st.floats(0.1, 10),
        st.floats(1e-3, 0.5),
        st.floats(-3, 3),
        st.floats(-3, 3),
        st.floats(-3, 3),
    )
    def test_derivative_matches_central_difference(self, p, mu, alpha, dt, x0, y0, x):
        params = DuffingParams(p, mu, alpha)
        prev = State(x0, y0)
        h = 1e-6 * max(1.0, abs(x))
        fd = (sp_residual(params, dt, prev, x + h) - sp_residual(params, dt, prev, x - h)) / (2 * h)
        exact = sp_residual_derivative(params, dt, prev, x)
        assert fd == pytest.approx(exact, rel=1e-5)

    @settings(max_examples=300, deadline=None)
    @given(st.sampled_from([3, 5, 7]), st.floats(0, 10), st.floats(0.1, 10), st.floats(1e-3, 1.0),
           st.floats(-5, 5), st.floats(-5, 5))
    def test_derivative_positive(self, p, mu, alpha, dt, x0, x):
        assert sp_residual_derivative(DuffingParams(p, mu, alpha), dt, State(x0, 0.0), x) > 0

    def test_residual_is_degree_p_polynomial(self):
        params = DuffingParams(5, 0.3, 2.0)
        prev = State(0.4, -0.2)
        xs = np.linspace(-3, 3, 12)
        vals = [sp_residual(params, 0.1, prev, x) for x in xs]
        coeffs = np.polyfit(xs, vals, 6)
        assert abs(coeffs[0]) < 1e-9
        assert coeffs[1] == pytest.approx(params.alpha / (params.p + 1), rel=1e-8)


class TestStep:
    def test_equilibrium(self):
        out = sp_step(P311, SchemeConfig(0.01, 1.0), State(0, 0))
        assert (out.next.x, out.next.y) == (0.0, 0.0)
        assert out.iterations <= 1

    def test_close_to_rk4_for_small_dt(self):
        prev = State(2, 0)
        nxt = sp_step(P301, SchemeConfig(1e-4, 1.0), prev).next
        ref = rk4_step(P301, 1e-4, prev)
        assert abs(nxt.x - ref.x) <= 1e-9
        ref3 = rk4_step(P301, 1e-3, prev)
        nxt3 = sp_step(P301, SchemeConfig(1e-3, 1.0), prev).next
        assert abs(nxt3.x - ref3.x) <= 1e-8 and abs(nxt3.y - ref3.y) <= 1e-8

    def test_discrete_energy_law_per_step(self):
        cfg = SchemeConfig(0.01, 1.0)
        prev = State(2, 0)
        out = sp_step(P311, cfg, prev)
        assert abs(step_defect(P311, cfg.dt, prev, out.next)) <= 10 * cfg.newton_tol
        assert abs(out.final_residual) <= out.tolerance

    def test_velocity_update_exact(self):
        cfg = SchemeConfig(0.01, 1.0)
        prev = State(1.3, -0.4)
        out = sp_step(P311, cfg, prev)
        assert out.next.y == 2.0 * (out.next.x - prev.x) / cfg.dt - prev.y

    def test_second_equation_holds(self):
        cfg = SchemeConfig(0.01, 1.0)
        prev = State(1.3, -0.4)
        nxt = sp_step(P311, cfg, prev).next
        eq2 = (nxt.y - prev.y) / cfg.dt + discrete_gradient(P311, nxt.x, prev.x) + P311.mu * (nxt.y + prev.y) / 2
        assert abs(eq2) <= cfg.newton_tol * 2 / cfg.dt

    @pytest.mark.parametrize("params", [P301, DuffingParams(5, 0.0, 3.0), DuffingParams(7, 0.0, 100.0)])
    def test_time_reversal_undamped(self, params):
        cfg = SchemeConfig(0.01, 1.0)
        start = State(0.8, -0.3)
        fwd = sp_step(params, cfg, start).next
        back = sp_step(params, cfg, State(fwd.x, -fwd.y)).next
        assert back.x == pytest.approx(start.x, abs=10 * cfg.newton_tol)
        assert back.y == pytest.approx(-start.y, abs=10 * cfg.newton_tol + 1e-13)

    @pytest.mark.parametrize("prev", [State(2, 0), State(-1.5, 3.0), State(0.01, -0.02)])
    def test_bisection_fallback_agrees_with_newton(self, prev):
        cfg = SchemeConfig(0.01, 1.0)
        params = DuffingParams(5, 2.0, 7.0)
        newton = sp_step(params, cfg, prev)
        bisect = sp_step(params, cfg, prev, force_bisection=True)
        assert bisect.next.x == pytest.approx(newton.next.x, abs=1e-14 * max(1, abs(prev.x)))
        assert abs(bisect.final_residual) <= bisect.tolerance

    def test_multi_root_warning(self, monkeypatch):
        monkeypatch.setattr(_kernels, "residual_derivative", lambda *a: -1.0)
        with pytest.warns(MultiRootWarning):
            out = sp_step(P311, SchemeConfig(0.01, 1.0), State(2, 0), force_bisection=True)
        assert abs(out.final_residual) <= out.tolerance

    def test_non_convergence_carries_last_iterate(self, monkeypatch):
        monkeypatch.setattr(_kernels, "residual", lambda *a: 1.0)
        with pytest.raises(NonConvergenceError) as info:
            sp_step(P311, SchemeConfig(0.01, 1.0), State(2, 0), force_bisection=True)
        assert info.value.residual == 1.0
        assert info.value.last_iterate == 2.0


class TestIntegrate:
    def test_equilibrium_trajectory(self):
        tr = integrate(P311, SchemeConfig(0.01, 10.0, record_stride=1), State(0, 0))
        assert len(tr) == 1001
        assert not tr.x.any() and not tr.y.any() and not tr.dissipation.any()

    def test_times(self):
        tr = integrate(P311, SchemeConfig(0.01, 10.0, record_stride=7), State(2, 0))
        assert tr.t[0] == 0.0
        assert np.all(np.diff(tr.t) > 0)
        np.testing.assert_allclose(np.diff(tr.t), 0.07, rtol=1e-9)
        assert len(tr) == 1000 // 7 + 1
        assert tr.t[-1] == 142 * 7 * 0.01

    def test_trajectory_is_read_only(self):
        tr = integrate(P311, SchemeConfig(0.01, 1.0), State(2, 0))
        with pytest.raises(ValueError):
            tr.x[0] = 1.0

    def test_undamped_conservation(self):
        tr = integrate(P301, SchemeConfig(0.01, 100.0, record_stride=1), State(2, 0))
        e = energy_array(P301, tr.x, tr.y)
        assert np.max(np.abs(e - e[0])) <= 1e-8

    @pytest.mark.parametrize("params", [P311, DuffingParams(5, 10.0, 100.0), DuffingParams(7, 0.1, 100.0)])
    def test_discrete_law_and_monotonicity(self, params):
        cfg = SchemeConfig(0.01, 50.0, record_stride=1)
        tr = integrate(params, cfg, State(2, 0))
        e = energy_array(params, tr.x, tr.y)
        scale = max(1.0, e[0])
        assert np.max(np.abs(e + tr.dissipation - e[0])) <= cfg.n_steps * 10 * cfg.newton_tol * scale
        assert np.all(np.diff(e) <= 10 * cfg.newton_tol * scale)
        assert np.all(np.diff(tr.dissipation) >= 0)

    def test_dissipation_matches_direct_sum(self):
        tr = integrate(P311, SchemeConfig(0.01, 20.0, record_stride=1), State(2, 0))
        direct = np.concatenate([[0.0], np.cumsum(0.25 * (tr.y[1:] + tr.y[:-1]) ** 2 * 0.01)])
        np.testing.assert_allclose(tr.dissipation, direct, rtol=1e-12, atol=1e-15)

    def test_stride_does_not_change_values(self):
        full = integrate(P311, SchemeConfig(0.01, 30.0, record_stride=1), State(2, 0))
        sub = integrate(P311, SchemeConfig(0.01, 30.0, record_stride=10), State(2, 0))
        np.testing.assert_array_equal(full.x[::10], sub.x)
        np.testing.assert_array_equal(full.dissipation[::10], sub.dissipation)

    def test_agrees_with_rk4_reference_on_early_interval(self):
        tr = integrate(P311, SchemeConfig(0.01, 100.0, record_stride=10), State(2, 0))
        _, x, y = rk4_integrate(P311, 1e-3, 100.0, State(2, 0), record_stride=100)
        assert np.max(np.abs(tr.x - x)) <= 1e-3
        assert np.max(np.abs(tr.y - y)) <= 1e-3

    def test_long_run_decays(self, baseline_trajectory):
        e = energy_array(P311, baseline_trajectory.x, baseline_trajectory.y)
        assert e[-1] < 1e-4 * e[0]

    def test_newton_iterations_recorded(self):
        tr = integrate(P311, SchemeConfig(0.01, 10.0, record_stride=1), State(2, 0))
        assert tr.newton_iters[0] == 0
        assert 1 <= tr.newton_iters[1:].min() and tr.newton_iters.max() <= 50

    def test_failure_is_annotated(self):
        with pytest.raises(IntegrationError) as info:
            integrate(DuffingParams(7, 0.0, 1.0), SchemeConfig(0.01, 1.0), State(1e100, 0.0))
        assert info.value.step == 0
        assert info.value.time == 0.0

    def test_fallback_inside_integrate(self, monkeypatch):
        # force every compiled Newton solve to hand over to the bisection path
        real = _kernels.sp_run
        handed_over = []

        def stop_every_third(*args):
            args = list(args)
            n_end = args[11]
            while True:
                n = args[10]
                if n >= n_end:
                    return (_kernels.OK, n, *args[6:10])
                if n % 3 == 0:
                    handed_over.append(n)
                    return (_kernels.NEEDS_FALLBACK, n, *args[6:10])
                status, n_next, x, y, d_sum, d_comp = real(*args[:11], n + 1, *args[12:])
                args[6:11] = [x, y, d_sum, d_comp, n_next]

        monkeypatch.setattr(_kernels, "sp_run", stop_every_third)
        cfg = SchemeConfig(0.01, 0.3, record_stride=1)
        patched = integrate(P311, cfg, State(2, 0))
        monkeypatch.undo()
        plain = integrate(P311, cfg, State(2, 0))
        assert handed_over == list(range(0, 30, 3))
        np.testing.assert_allclose(patched.x, plain.x, atol=1e-14)
        np.testing.assert_allclose(patched.dissipation, plain.dissipation, atol=1e-14)


class TestRK4:
    def test_equilibrium(self):
        s = rk4_step(P311, 0.1, State(0, 0))
        assert (s.x, s.y) == (0.0, 0.0)

    def test_richardson_ratio(self):
        s0 = State(1, 1)

        def local_error(h):
            _, x, y = rk4_integrate(P311, h / 2000, h, s0)
            r = rk4_step(P311, h, s0)
            return math.hypot(r.x - x[-1], r.y - y[-1])

        ratio = local_error(0.05) / local_error(0.025)
        assert 28 <= ratio <= 40


def test_convergence_order():
    _, xr, yr = rk4_integrate(P311, 1e-6, 1.0, State(2, 0))
    errs = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        tr = integrate(P311, SchemeConfig(dt, 1.0, record_stride=1), State(2, 0))
        errs.append(max(abs(tr.x[-1] - xr[-1]), abs(tr.y[-1] - yr[-1])))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert all(1.8 <= o <= 2.2 for o in orders)


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(dt=0.0, t_end=1.0),
            dict(dt=-0.1, t_end=1.0),
            dict(dt=0.1, t_end=0.05),
            dict(dt=0.1, t_end=1.0, newton_tol=0.0),
            dict(dt=0.1, t_end=1.0, max_newton_iters=0),
            dict(dt=0.1, t_end=1.0, record_stride=0),
            dict(dt=math.nan, t_end=1.0),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            SchemeConfig(**kwargs)

    def test_default_stride_caps_samples(self):
        assert default_record_stride(0.01, 5000.0) == 1
        assert default_record_stride(1e-4, 5000.0) == 51
        cfg = SchemeConfig(1e-4, 5000.0)
        assert cfg.n_steps // cfg.record_stride + 1 <= 1_000_000

    def test_step_count(self):
        assert SchemeConfig(0.01, 5000.0).n_steps == 500_000
