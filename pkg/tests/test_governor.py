import numpy as np
import pytest

from oco_rg import (
    GovernorState,
    InitializationInfeasibleError,
    InvarianceViolationError,
    command_governor,
    initialize_governor,
    sample_safe_states,
    scalar_rg,
)
from oco_rg.harness import command_governor_grid_oracle, scalar_rg_grid_oracle


def make_instances(safe_set, n, seed):
    rng = np.random.default_rng(seed)
    x, v_prev = sample_safe_states(safe_set, n, rng)
    lo, hi = safe_set.window
    r = rng.uniform(lo, hi, n)
    return x, v_prev, r


def literal_beta_scan(safe_set, x, r, v_prev, points=1_000_000, chunk=200_000):
    """Single-stage scan of the full lattice (slow; used to validate the
    two-stage oracle on a subsample)."""
    best = 0.0
    found = False
    for start in range(0, points, chunk):
        idx = np.arange(start, min(start + chunk, points))
        betas = idx / (points - 1)
        vs = v_prev + betas * (r - v_prev)
        feas = np.asarray(safe_set.contains(
            np.broadcast_to(np.asarray(x, float), vs.shape + np.shape(x)), vs))
        if feas.any():
            best = float(betas[np.flatnonzero(feas)[-1]])
            found = True
    return best if found else 0.0


class TestScalarGovernor:
    def test_pass_through_when_admissible(self, cstr):
        v0 = 0.62
        x = cstr.ctrl.ss.h(v0)
        st = GovernorState(v_prev=v0)
        r = 0.625  # close enough to remain admissible
        assert cstr.variable.contains(x, r)
        assert scalar_rg(x, r, st, cstr.variable) == r
        assert st.betas[-1] == 1.0

    def test_blocked_reference_keeps_previous(self, cstr):
        ctrl = cstr.ctrl
        v0 = 0.55
        # state on the admissible boundary at v0: any move toward a far
        # reference leaves the set immediately
        lev = float(cstr.variable.level(v0))
        P = ctrl.lyap_weight(v0)
        d = np.array([1.0, 0.0])
        x = ctrl.ss.h(v0) + np.sqrt(lev / (d @ P @ d)) * d * (1.0 - 1e-12)
        st = GovernorState(v_prev=v0)
        r = 0.85
        if not cstr.variable.contains(x, r):
            v = scalar_rg(x, r, st, cstr.variable)
            assert abs(v - v0) <= 1e-9 * abs(r - v0)

    def test_bisection_matches_dense_lattice(self, cstr):
        x, v_prev, r = make_instances(cstr.variable, 1000, seed=77)
        worst = 0.0
        active = 0
        for i in range(1000):
            st = GovernorState(v_prev=float(v_prev[i]))
            scalar_rg(x[i], float(r[i]), st, cstr.variable)
            beta = st.betas[-1]
            if beta == 1.0:
                continue
            active += 1
            beta_star = scalar_rg_grid_oracle(cstr.variable, x[i], float(r[i]),
                                              float(v_prev[i]))
            worst = max(worst, abs(beta - beta_star))
        assert active > 50, "instance generator produced no binding cases"
        assert worst <= 2e-6

    def test_two_stage_oracle_equals_literal_scan(self, cstr):
        x, v_prev, r = make_instances(cstr.variable, 200, seed=78)
        checked = 0
        for i in range(200):
            if bool(cstr.variable.contains(x[i], float(r[i]))):
                continue
            fast = scalar_rg_grid_oracle(cstr.variable, x[i], float(r[i]), float(v_prev[i]))
            slow = literal_beta_scan(cstr.variable, x[i], float(r[i]), float(v_prev[i]))
            assert fast == pytest.approx(slow, abs=1e-12)
            checked += 1
            if checked >= 25:
                break
        assert checked >= 10

    def test_maximality_of_bisection(self, cstr):
        x, v_prev, r = make_instances(cstr.variable, 400, seed=79)
        for i in range(400):
            st = GovernorState(v_prev=float(v_prev[i]))
            scalar_rg(x[i], float(r[i]), st, cstr.variable)
            beta = st.betas[-1]
            if beta < 1.0:
                probe = v_prev[i] + (beta + 1e-8) * (r[i] - v_prev[i])
                assert not bool(cstr.variable.contains(x[i], float(probe)))

    def test_monotone_approach(self, cstr):
        x, v_prev, r = make_instances(cstr.variable, 300, seed=80)
        for i in range(300):
            st = GovernorState(v_prev=float(v_prev[i]))
            v = scalar_rg(x[i], float(r[i]), st, cstr.variable)
            assert abs(r[i] - v) <= abs(r[i] - v_prev[i]) + 1e-15

    def test_invariance_violation_detected(self, cstr):
        x_bad = np.array([0.9, 0.45])  # far outside every slice
        st = GovernorState(v_prev=0.6)
        assert not cstr.variable.contains(x_bad, 0.6)
        with pytest.raises(InvarianceViolationError):
            scalar_rg(x_bad, 0.85, st, cstr.variable)


class TestCommandGovernor:
    def test_pass_through(self, cstr):
        x = cstr.ctrl.ss.h(0.6)
        assert command_governor(x, 0.6, cstr.variable) == 0.6

    def test_projection_onto_interval(self, cstr):
        x = cstr.ctrl.ss.h(0.6)
        lo, hi = cstr.variable.cross_section_v(x)
        r = min(hi + 0.05, 0.85)
        if r > hi:
            v = command_governor(x, r, cstr.variable)
            assert v == pytest.approx(hi, abs=1e-8)

    def test_matches_dense_lattice(self, cstr):
        x, _, r = make_instances(cstr.variable, 300, seed=81)
        for i in range(300):
            v = command_governor(x[i], float(r[i]), cstr.variable)
            v_star = command_governor_grid_oracle(cstr.variable, x[i], float(r[i]))
            assert abs(v - v_star) <= 2e-6

    def test_agrees_with_scalar_rg_on_intervals(self, cstr):
        """When the slice is an interval containing v_prev, the segment
        maximum and the projection coincide."""
        x, v_prev, r = make_instances(cstr.variable, 300, seed=82)
        for i in range(300):
            st = GovernorState(v_prev=float(v_prev[i]))
            v_seg = scalar_rg(x[i], float(r[i]), st, cstr.variable)
            v_proj = command_governor(x[i], float(r[i]), cstr.variable)
            assert abs(v_seg - v_proj) <= 5e-6


class TestInitialization:
    def test_benchmark_start_accepted(self, cstr):
        st = initialize_governor(cstr.plant.x0, 0.6519, cstr.fixed)
        assert st.v_prev == 0.6519

    def test_any_steady_state_accepted(self, cstr):
        for v in (0.45, 0.6, 0.8):
            st = initialize_governor(cstr.ctrl.ss.h(v), v, cstr.fixed)
            assert st.v_prev == v

    def test_infeasible_start_rejected(self, cstr):
        with pytest.raises(InitializationInfeasibleError, match="exceeds level"):
            initialize_governor(np.array([0.9, 0.45]), 0.6, cstr.fixed)
