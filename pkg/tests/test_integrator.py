from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from filippov.errors import EvaluationError, IntegrationError, NoBracketError
from filippov.integrator import (
    EventKind,
    FlowState,
    IntegratorConfig,
    Region,
    bisect_indicator,
    detect_grazing,
    flow_free,
    flow_sliding,
    flow_smooth,
    integrate_orbit,
    sigma_minimum,
    step_surface,
)
from filippov.policy import BranchPolicy
from filippov.scenarios import (
    make_dbfold,
    make_graze_fixture,
    make_linear_drop,
    make_mech,
    make_resonator,
    make_rotor,
)
from filippov.system import PwsSystem, SurfaceRegime


class TestConfig:
    @pytest.mark.parametrize("field", ["rel_tol", "abs_tol", "surface_band", "event_root_tol",
                                       "max_step", "sliding_projection_tol"])
    def test_positive(self, field):
        with pytest.raises(ValueError):
            IntegratorConfig(**{field: 0.0})

    def test_root_tol_below_max_step(self):
        with pytest.raises(ValueError):
            IntegratorConfig(event_root_tol=0.2, max_step=0.1)

    def test_replace(self):
        cfg = IntegratorConfig().replace(t_end=3.0)
        assert cfg.t_end == 3.0 and cfg.rel_tol == IntegratorConfig().rel_tol


class TestFreeFlight:
    @pytest.mark.parametrize("dim", [2, 3, 5])
    def test_linear_drop_hit_time(self, dim):
        sys_ = make_linear_drop(dim)
        x0 = np.zeros(dim)
        x0[-1] = 1.0
        _, ev = flow_free(sys_, FlowState(0.0, x0, Region.ABOVE), "plus", IntegratorConfig())
        assert ev.kind is EventKind.SURFACE_HIT
        assert abs(ev.t - 1.0) <= 1e-10
        assert abs(ev.x[-1]) <= 1e-12

    def test_terminates_at_t_end(self):
        traj, ev = flow_free(make_linear_drop(), FlowState(0.0, [0, 0, 5.0], Region.ABOVE), "plus",
                             IntegratorConfig(t_end=2.0))
        assert ev.kind is EventKind.TERMINATE and ev.t == 2.0
        assert traj.final.x[-1] == pytest.approx(3.0)

    def test_dbfold_spirals_out_of_upper_focus(self):
        # orbits of f+ about the unstable focus (1, 1) reach x2 = 0
        _, ev = flow_free(make_dbfold(), FlowState(0.0, [1.0, 1.2], Region.ABOVE), "plus",
                          IntegratorConfig(t_end=50))
        assert ev.kind is EventKind.SURFACE_HIT
        assert abs(ev.x[1]) < 1e-10

    def test_resonator_descends_towards_switching(self):
        sys_ = make_resonator(mu=2.0)
        traj, ev = flow_free(sys_, FlowState(0.0, [0.8, -0.4, 3.0], Region.ABOVE), "plus",
                             IntegratorConfig(t_end=10))
        assert ev.kind is EventKind.SURFACE_HIT
        assert traj.x[:, 2].min() >= 1.0 - 1e-8
        assert ev.x[2] == pytest.approx(1.0, abs=1e-10)

    def test_nonfinite_field_raises(self):
        bad = PwsSystem(2, lambda x: np.array([1.0, np.nan if x[0] > 0.5 else 0.0]),
                        lambda x: np.zeros(2), lambda x: x[1] + 10.0)
        with pytest.raises(EvaluationError):
            integrate_orbit(bad, [0.0, 0.0], IntegratorConfig(t_end=2.0))

    def test_blow_up_raises(self):
        bad = PwsSystem(2, lambda x: np.array([1.0, 1.0 / (1.0 - x[0])]), lambda x: np.zeros(2),
                        lambda x: x[1] + 10.0)
        with pytest.raises(IntegrationError):
            integrate_orbit(bad, [0.0, 0.0], IntegratorConfig(t_end=2.0))

    def test_dense_sampling(self):
        traj, _ = flow_free(make_linear_drop(), FlowState(0.0, [0, 0, 5.0], Region.ABOVE), "plus",
                            IntegratorConfig(t_end=1.0, sample_dt=0.25))
        assert set(np.round(traj.t, 12)) >= {0.25, 0.5, 0.75, 1.0}


class TestCrossing:
    def test_rotor_crossing_times(self):
        traj = integrate_orbit(make_rotor(), [0.0, 1.0], IntegratorConfig(t_end=5.0))
        crosses = traj.events_of(EventKind.CROSS)
        # a quarter turn at unit speed, then half a turn at double speed
        assert crosses[0].t == pytest.approx(math.pi / 2, abs=1e-9)
        assert crosses[1].t == pytest.approx(math.pi, abs=1e-9)
        assert crosses[0].info == {"from": "plus", "to": "minus"}
        assert np.linalg.norm(traj.final.x) == pytest.approx(1.0, abs=1e-8)

    def test_region_tags_follow_sigma(self):
        traj = integrate_orbit(make_rotor(), [0.0, 1.0], IntegratorConfig(t_end=5.0))
        sig = traj.x[:, 1]
        for s, r in zip(sig, traj.regions):
            if abs(s) > 1e-8:
                assert r is (Region.ABOVE if s > 0 else Region.BELOW)

    def test_reversibility_rotor(self):
        cfg = IntegratorConfig(t_end=2.5)
        fwd = integrate_orbit(make_rotor(), [0.0, 1.0], cfg)
        rev = PwsSystem(2, lambda x: np.array([x[1], -x[0]]), lambda x: 2.0 * np.array([x[1], -x[0]]),
                        lambda x: x[1])
        back = integrate_orbit(rev, fwd.final.x, cfg)
        assert np.allclose(back.final.x, [0.0, 1.0], atol=1e-8)

    def test_continuity(self):
        traj = integrate_orbit(make_mech(), [0.5, 0.0, 0.1], IntegratorConfig(t_end=3.0),
                               BranchPolicy.deterministic("plus", 0.2))
        steps = np.linalg.norm(np.diff(traj.x, axis=0), axis=1)
        speeds = np.diff(traj.t)
        # no jumps beyond the fastest field speed times the sample spacing
        assert np.all(steps <= 20.0 * speeds + 1e-9)


class TestStepSurface:
    def _hit(self, sys_, x, branch):
        from filippov.integrator import _surface_event
        return _surface_event(sys_, EventKind.SURFACE_HIT, 0.0, np.array(x, float), IntegratorConfig(),
                              branch=branch)

    def test_slide_enter(self):
        tr = step_surface(make_dbfold(), self._hit(make_dbfold(), [2.0, 0.0], "plus"), IntegratorConfig())
        assert tr.state.region is Region.SLIDING
        assert [e.kind for e in tr.events] == [EventKind.SLIDE_ENTER]
        assert (tr.events[0].h_plus, tr.events[0].h_minus) == (-2.0, 2.0)

    def test_repelling_reported_and_refused(self):
        tr = step_surface(make_dbfold(), self._hit(make_dbfold(), [-2.0, 0.0], "minus"), IntegratorConfig())
        assert tr.events[0].regime is SurfaceRegime.REPELLING_SLIDING
        assert tr.terminal

    def test_mech_cross_upwards(self):
        tr = step_surface(make_mech(), self._hit(make_mech(), [-2.0, 0.0, 1.0], "minus"), IntegratorConfig())
        assert tr.state.region is Region.ABOVE
        assert tr.events[0].kind is EventKind.CROSS

    def test_wrong_event_kind(self):
        from filippov.integrator import Event
        with pytest.raises(ValueError):
            step_surface(make_dbfold(), Event(EventKind.CROSS, 0.0, np.zeros(2)), IntegratorConfig())


class TestSliding:
    def test_dbfold_reaches_double_tangency(self):
        traj = integrate_orbit(make_dbfold(), [2.0, 0.0], IntegratorConfig(t_end=5.0))
        dt = traj.events_of(EventKind.DOUBLE_TANGENCY)
        assert dt and dt[0].t == pytest.approx(2.0, abs=1e-8)
        assert np.allclose(dt[0].x, [0.0, 0.0], atol=1e-8)
        assert traj.events[-1].info.get("terminal")

    def test_sliding_stays_on_surface(self):
        traj = integrate_orbit(make_mech(), [0.5, 0.0, 0.1], IntegratorConfig(t_end=2.0))
        on = [x for x, r in zip(traj.x, traj.regions) if r is Region.SLIDING]
        assert len(on) > 3
        assert max(abs(x[1]) for x in on) <= 1e-10

    def test_mech_exit_at_second_line(self):
        # independent reduction on u = 0: x' = v, z' = lam a + (1 - lam),
        # lam = (r1 z - x) / ((r1 - r2) z); exit where the + normal -x + r2 z vanishes
        from scipy.integrate import solve_ivp

        def rhs(t, y):
            lam = (12.0 * y[1] - y[0]) / (13.0 * y[1])
            return [-1.0, lam * -1.3 + (1.0 - lam)]

        hit = lambda t, y: -y[0] - y[1]
        hit.terminal = True
        ref = solve_ivp(rhs, (0, 5), [0.0, 1.0], events=hit, rtol=1e-12, atol=1e-14)
        t_ref = ref.t_events[0][0]
        seg, ev = flow_sliding(make_mech(), FlowState(0.0, [0.0, 0.0, 1.0], Region.SLIDING),
                               IntegratorConfig(t_end=5.0))
        assert ev.kind is EventKind.SLIDE_EXIT and ev.info["vanishing"] == "plus"
        assert ev.t == pytest.approx(t_ref, abs=1e-8)
        assert np.allclose(ev.x[[0, 2]], ref.y_events[0][0], atol=1e-8)
        assert ev.info["lambda_s"] == pytest.approx(1.0, abs=1e-8)
        assert abs(ev.h_plus) <= 1e-9 * np.linalg.norm(make_mech().field("plus", ev.x))
        assert np.max(np.abs(seg.x[:, 1])) <= 1e-10

    def test_mech_sliding_point_runs_into_double_tangency(self):
        seg, ev = flow_sliding(make_mech(), FlowState(0.0, [0.5, 0.0, 0.1], Region.SLIDING),
                               IntegratorConfig(t_end=5.0))
        assert ev.kind is EventKind.DOUBLE_TANGENCY
        assert ev.t == pytest.approx(0.5, abs=1e-8)
        assert ev.info["lambda_limit"] == pytest.approx(0.51718, abs=1e-4)

    def test_release_boundary_has_plus_velocity(self):
        # drop into attracting sliding on the double fold, then slide to the DT
        traj = integrate_orbit(make_dbfold(), [1.0, 0.5], IntegratorConfig(t_end=40.0))
        kinds = [e.kind for e in traj.events]
        assert EventKind.SLIDE_ENTER in kinds and EventKind.DOUBLE_TANGENCY in kinds

    def test_deterministic_branches_differ(self):
        cfg = IntegratorConfig(t_end=4.0)
        plus = integrate_orbit(make_dbfold(), [2.0, 0.0], cfg, BranchPolicy.deterministic("plus", 0.5))
        minus = integrate_orbit(make_dbfold(), [2.0, 0.0], cfg, BranchPolicy.deterministic("minus", 0.5))
        assert plus.final.x[1] > 0 or plus.count(EventKind.SLIDE_ENTER) > 1
        assert not np.allclose(plus.final.x, minus.final.x)
        rel = [e for e in plus.events if e.info.get("cause") == "release"][0]
        assert rel.t == pytest.approx(2.5, abs=1e-8)
        assert rel.x[0] == pytest.approx(-0.5, abs=1e-8)


class TestOrbit:
    def test_zero_duration(self):
        traj = integrate_orbit(make_dbfold(), [1.0, 0.5], IntegratorConfig(t_end=0.0))
        assert len(traj) == 1
        assert np.array_equal(traj.final.x, [1.0, 0.5])

    def test_resonator_fixed_point_residual(self):
        sys_ = make_resonator()
        x_star = sys_.landmarks["fixed_point_above"]
        assert np.linalg.norm(sys_.field("plus", x_star)) <= 1e-10

    def test_domain_escape(self):
        sys_ = PwsSystem(2, lambda x: np.array([1.0, 1.0]), lambda x: np.array([1.0, 1.0]), lambda x: x[1])
        traj = integrate_orbit(sys_, [0.0, 1.0], IntegratorConfig(t_end=100.0, domain_radius=5.0))
        assert traj.events[-1].kind is EventKind.TERMINATE
        assert traj.events[-1].info["reason"] == "escape"
        assert traj.final.t < 10.0

    def test_flow_smooth(self):
        traj = flow_smooth(lambda y: -y, [1.0, 2.0], IntegratorConfig(t_end=1.0))
        assert np.allclose(traj.final.x, np.exp(-1.0) * np.array([1.0, 2.0]), rtol=1e-9)


@settings(max_examples=25, deadline=None)
@given(r=st.floats(0.3, 2.0), angle=st.floats(0.1, 3.0))
def test_rotor_crossings_are_transversal(r, angle):
    x0 = [r * math.cos(angle), r * math.sin(angle)]
    traj = integrate_orbit(make_rotor(), x0, IntegratorConfig(t_end=6.0))
    for e in traj.events_of(EventKind.CROSS):
        assert e.h_plus * e.h_minus > 0
        assert abs(e.x[1]) <= 1e-8 * (1 + r)
    assert np.linalg.norm(traj.final.x) == pytest.approx(r, rel=1e-7)


class TestGrazing:
    def test_fixture_grazes_only_at_lift(self):
        cfg = IntegratorConfig(t_end=3.0)
        hit = detect_grazing(make_graze_fixture(0.25), [-1.0, 0.75], "plus", cfg)
        assert hit is not None
        t, x = hit
        assert t == pytest.approx(1.0, abs=1e-8)
        assert np.allclose(x, [0.0, 0.25], atol=1e-8)
        assert detect_grazing(make_graze_fixture(0.2), [-1.0, 0.75], "plus", cfg) is None
        assert detect_grazing(make_graze_fixture(0.3), [-1.0, 0.75], "plus", cfg) is None

    def test_minimum_value_is_signed_distance(self):
        m = sigma_minimum(make_graze_fixture(0.0), [-1.0, 0.75], "plus", IntegratorConfig(t_end=3.0))
        assert m.value == pytest.approx(0.25, abs=1e-10)

    def test_dbfold_origin_graze(self):
        # the backward f+ orbit of the origin leads forward into a graze there
        sys_ = make_dbfold()
        back = PwsSystem(2, lambda x: -sys_.f_plus(x), lambda x: -sys_.f_minus(x), sys_.sigma)
        start = flow_smooth(back.f_plus, [0.0, 0.0], IntegratorConfig(t_end=0.5)).final.x
        hit = detect_grazing(sys_, start, "plus", IntegratorConfig(t_end=2.0))
        assert hit is not None
        assert hit[0] == pytest.approx(0.5, abs=1e-6)
        assert np.allclose(hit[1], [0.0, 0.0], atol=1e-6)


class TestBisection:
    def test_finds_root(self):
        r = bisect_indicator(lambda v: v - 0.3, 0.0, 1.0, 1e-10)
        assert r.value == pytest.approx(0.3, abs=1e-10)
        lo, hi, flo, fhi = r.history[-1]
        assert hi - lo <= 1e-10 and flo < 0 < fhi

    def test_degenerate_interval(self):
        with pytest.raises(NoBracketError):
            bisect_indicator(lambda v: v, 1.0, 1.0, 1e-6)

    def test_no_sign_change(self):
        with pytest.raises(NoBracketError) as info:
            bisect_indicator(lambda v: v + 5.0, 0.0, 1.0, 1e-6)
        assert info.value.f_lo == 5.0 and info.value.f_hi == 6.0

    def test_bad_tol(self):
        with pytest.raises(ValueError):
            bisect_indicator(lambda v: v, -1.0, 1.0, 0.0)
