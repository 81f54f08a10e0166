from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from filippov.integrator import IntegratorConfig, flow_smooth
from filippov.scenarios import (
    RESONATOR_IP,
    SCENARIOS,
    MechParams,
    ResonatorParams,
    SmoothingParams,
    build_scenario,
    make_dbfold,
    make_graze_fixture,
    make_mech,
    make_resonator,
    make_smoothed,
    mech_sliding_rays,
)


class TestResonator:
    def test_fixed_point_closed_form(self):
        p = ResonatorParams(mu=1.0)
        x = p.fixed_point_above()
        lam = complex(-0.5, 1.0)
        b = 1j / lam
        assert np.allclose(x[:2], [b.real, b.imag])
        # T* = s+ / |L+|^2 = 3.891 / 1.25
        assert x[2] == pytest.approx(3.1128, abs=1e-12)

    @pytest.mark.parametrize("mu", [0.7, 1.0, 1.5656846, 2.4])
    def test_fixed_point_residual(self, mu):
        sys_ = make_resonator(mu=mu)
        assert np.linalg.norm(sys_.field("plus", sys_.landmarks["fixed_point_above"])) <= 1e-10

    def test_initial_point_is_above(self):
        sys_ = make_resonator()
        assert sys_.sigma_value(RESONATOR_IP) == 2.0

    def test_at_mu_one_initial_point_is_fixed_current(self):
        # at mu = 1 the initial current already equals i / L+
        x = ResonatorParams(mu=1.0).fixed_point_above()
        assert np.allclose(x[:2], RESONATOR_IP[:2])

    @given(phi=st.floats(0, 2 * np.pi))
    def test_tangency_parabolas(self, phi):
        sys_ = make_resonator()
        for branch, s in (("plus", 3.891), ("minus", 1.297)):
            r = np.sqrt(1.0 / s)
            p = [r * np.cos(phi), r * np.sin(phi), 1.0]
            assert abs(sys_.normal(branch, p)) <= 1e-10

    def test_branch_convention(self):
        # + field (L+, s+) above T = 1
        sys_ = make_resonator(mu=1.3)
        f = sys_.field("plus", [0.0, 0.0, 2.0])
        assert np.allclose(f, [0.0, -1.0, -2.0 / 0.01])
        assert np.allclose(sys_.field("minus", [1.0, 0.0, 1.0]), [-0.2, 1.0 - 1.0, (1.297 - 1.0) / 0.01])

    def test_eps_validated(self):
        with pytest.raises(ValueError):
            ResonatorParams(eps=0.0)


class TestDoubleFold:
    def test_foci_are_equilibria(self):
        sys_ = make_dbfold()
        assert np.array_equal(sys_.field("plus", [1.0, 1.0]), [0.0, 0.0])
        assert np.array_equal(sys_.field("minus", [1.0, -1.0]), [0.0, 0.0])

    def test_foci_unstable(self):
        jp = np.array([[0.0, 1.0], [-1.0, 1.0]])
        ev = np.linalg.eigvals(jp)
        assert np.all(ev.real > 0) and np.all(ev.imag != 0)

    @given(x1=st.floats(-10, 10), x2=st.floats(-10, 10))
    def test_mirror_symmetry(self, x1, x2):
        sys_ = make_dbfold()
        fp = sys_.field("plus", [x1, x2])
        fm = sys_.field("minus", [x1, -x2])
        assert np.allclose(fp, [fm[0], -fm[1]])


class TestMech:
    def test_minus_field_sample(self):
        assert np.allclose(make_mech().field("minus", [0.0, -0.5, 0.0]), [-1.5, -0.05, 1.0])

    @given(z=st.floats(-5, 5))
    def test_tangency_lines(self, z):
        sys_ = make_mech()
        assert sys_.normal("minus", [12.0 * z, 0.0, z]) == pytest.approx(0.0, abs=1e-12)
        assert sys_.normal("plus", [-z, 0.0, z]) == pytest.approx(0.0, abs=1e-12)

    def test_double_tangency_at_origin(self):
        sys_ = make_mech()
        assert sys_.normal("plus", np.zeros(3)) == 0.0 and sys_.normal("minus", np.zeros(3)) == 0.0

    def test_sliding_rays_are_invariant(self):
        p = MechParams()
        rays = mech_sliding_rays(p)
        assert len(rays) == 2
        sys_ = make_mech()
        for xi, lam, _ in rays:
            x = np.array([xi, 0.0, 1.0])
            nd_lam = (12.0 - xi) / 13.0
            assert lam == pytest.approx(nd_lam)
            v = lam * sys_.field("plus", x) + (1 - lam) * sys_.field("minus", x)
            # the sliding velocity is parallel to the ray direction (xi, 0, 1)
            assert v[0] * 1.0 - v[2] * xi == pytest.approx(0.0, abs=1e-10)
        incoming = [r for r in rays if r[2] and -1.0 < r[0] < 12.0]
        assert incoming[0][0] == pytest.approx(5.2767, abs=1e-3)
        assert sys_.landmarks["lambda_limit"] == pytest.approx(incoming[0][1])


class TestSmoothing:
    def test_saturation(self):
        sm = make_smoothed(make_mech(), SmoothingParams(steepness=1000.0))
        x = [0.3, 0.1, 0.2]
        assert np.allclose(sm.field(x), make_mech().field("plus", x), atol=1e-4)

    @pytest.mark.parametrize("kind", ["tanh", "algebraic"])
    def test_half_weight_on_surface(self, kind):
        sm = make_smoothed(make_mech(), SmoothingParams(kind=kind))
        x = [0.3, 0.0, 0.2]
        base = make_mech()
        assert sm.weight(x) == 0.5
        assert np.allclose(sm.field(x), 0.5 * (base.field("plus", x) + base.field("minus", x)))

    def test_steepness_validated(self):
        with pytest.raises(ValueError):
            SmoothingParams(steepness=0.0)

    def test_smoothed_orbit_is_bounded(self):
        sm = make_smoothed(make_mech(), SmoothingParams(steepness=50.0))
        traj = flow_smooth(sm.field, [0.5, 0.0, 0.1], IntegratorConfig(t_end=60.0))
        assert np.all(np.isfinite(traj.x))
        assert np.abs(traj.x).max() < 200.0


class TestRegistry:
    def test_all_scenarios_build(self):
        for name, spec in SCENARIOS.items():
            sys_ = build_scenario(name)
            assert sys_.dim == len(spec.initial)

    def test_parameter_override(self):
        assert build_scenario("resonator", mu=1.2).params["mu"] == 1.2
        assert build_scenario("resonator", lambda_minus=[-0.3, 1.0]).params["lambda_minus"] == [-0.3, 1.0]

    def test_unknown(self):
        with pytest.raises(KeyError):
            build_scenario("pendulum")
        with pytest.raises(KeyError):
            build_scenario("dbfold", mu=1.0)

    def test_graze_fixture_landmark(self):
        assert make_graze_fixture().landmarks["grazing_lift"] == 0.25
