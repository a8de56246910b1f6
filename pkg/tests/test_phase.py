import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from koopext.core import (
    DivergenceError,
    DomainError,
    EvalGrid,
    SingularInputError,
    principal_arg,
    singular_mask,
)
from koopext.dynamics import FlowMap, VectorField, make_system
from koopext.phase import (
    LaplaceConfig,
    isofield,
    laplace_average,
    laplace_average_batch,
    limit_cycle_period,
    map_trajectory_outside,
    polar_eigenfunctions,
    transform_Ti,
    transform_Ti_inv,
    transform_To,
    write_phase_csv,
)


def scalar_linear_field(lam):
    return VectorField(
        1,
        rhs=lambda x: lam * x,
        exact_flow=lambda pts, t: pts * math.exp(lam * t),
    )


class TestLaplaceAverage:
    def test_linear_observable_is_exact(self):
        # x' = lam x with f(x) = x: the integrand is constant, so the average
        # equals x for every horizon
        fld = scalar_linear_field(-0.7)
        out = laplace_average(
            fld, lambda p: p[:, 0].astype(complex), -0.7, np.array([1.3]), T=5.0, step=0.01
        )
        assert out == pytest.approx(1.3, abs=1e-10)

    def test_zero_at_steady_state(self):
        sys_ = make_system("polarLC", alpha=0.0)
        out = laplace_average(
            sys_,
            lambda p: np.sin(p[:, 0] + p[:, 1]).astype(complex),
            complex(0, 1.0),
            np.array([0.0, 0.0]),
            T=10.0,
            step=0.01,
        )
        assert abs(out) < 1e-12

    def test_divergence_guard(self):
        fld = scalar_linear_field(1.0)
        with pytest.raises(DivergenceError):
            laplace_average(
                fld, lambda p: p[:, 0].astype(complex), -1.0, np.array([1.0]),
                T=30.0, step=0.01,
            )


class TestLimitCyclePeriod:
    def test_polar_unit_cycle(self):
        sys_ = make_system("polarLC", mu=1.0, omega=1.0, alpha=0.0)
        omega, period = limit_cycle_period(sys_, np.array([1.5, 0.0]))
        assert period == pytest.approx(2 * math.pi, abs=1e-8)

    def test_polar_double_speed(self):
        sys_ = make_system("polarLC", mu=1.0, omega=2.0, alpha=0.0)
        omega, period = limit_cycle_period(sys_, np.array([1.5, 0.0]))
        assert period == pytest.approx(math.pi, abs=1e-8)

    def test_vanderpol_period_closes_the_loop(self):
        # independent check: integrating exactly one measured period returns
        # to the starting point on the cycle, at reference tolerance
        sys_ = make_system("vanderpol")
        omega, period = limit_cycle_period(sys_, np.array([2.0, 0.0]))

        def rhs1(t, u):
            return sys_.field.rhs(u[None, :])[0]

        p0 = solve_ivp(rhs1, (0, 80.0), [2.0, 0.0], rtol=1e-12, atol=1e-12).y[:, -1]
        p1 = solve_ivp(rhs1, (0, period), p0, rtol=1e-12, atol=1e-12).y[:, -1]
        assert np.linalg.norm(p1 - p0) < 1e-6 * max(1.0, np.linalg.norm(p0))

    def test_no_cycle_detected_from_steady_flow(self):
        sys_ = make_system("linear2d")
        with pytest.raises(Exception):
            limit_cycle_period(sys_, np.array([1.0, 1.0]))


class TestPolarEigenfunctions:
    def test_isostable_values(self):
        phi_lc, phi_ss = polar_eigenfunctions(1.0, 1.0, 0.0, 1.0)
        assert abs(phi_lc.anywhere(np.array([1.0]), np.array([0.3]))[0]) == pytest.approx(0.0)
        # C (mu/r^2 - 1) at r = 0.5 is 3
        assert abs(phi_lc.interior(np.array([0.5]), np.array([0.0]))[0]) == pytest.approx(3.0)
        # C r / sqrt(mu - r^2) at r = 0.6 is 0.75
        assert abs(phi_ss(np.array([0.6]), np.array([0.0]))[0]) == pytest.approx(0.75)

    def test_branch_domains_enforced(self):
        phi_lc, phi_ss = polar_eigenfunctions(1.0, 1.0, 0.5, 1.0)
        with pytest.raises(DomainError):
            phi_lc.interior(np.array([1.2]), np.array([0.0]))
        with pytest.raises(DomainError):
            phi_lc.exterior(np.array([0.8]), np.array([0.0]))
        with pytest.raises(DomainError):
            phi_ss(np.array([1.2]), np.array([0.0]))

    def test_singular_tags(self):
        phi_lc, phi_ss = polar_eigenfunctions(1.0, 1.0, 0.5, 1.0)
        assert singular_mask(phi_lc.anywhere(np.array([0.0]), np.array([0.0])))[0]
        assert singular_mask(phi_ss(np.array([1.0]), np.array([0.0])))[0]

    def test_branch_monotonicity_alpha_zero(self):
        phi_lc, _ = polar_eigenfunctions(1.0, 1.0, 0.0, 1.0)
        r_in = np.linspace(0.05, 0.95, 50)
        vals_in = np.abs(phi_lc.interior(r_in, np.zeros_like(r_in)))
        assert np.all(np.diff(vals_in) < 0)  # strictly decreasing inside
        r_out = np.linspace(1.05, 12.0, 50)
        vals_out = np.abs(phi_lc.exterior(r_out, np.zeros_like(r_out)))
        assert np.all(np.diff(vals_out) > 0)  # strictly increasing outside
        assert np.all(vals_out < 1.0)  # supremum C = 1


class TestTransformTi:
    def test_round_trip_identity(self):
        v = 0.3 * np.exp(0.7j)
        out = transform_Ti(transform_Ti_inv(v, 1.0, 1.0, 1.0), 1.0, 1.0, 1.0)
        assert out == pytest.approx(v, abs=1e-12)

    def test_alpha_zero_closed_form(self):
        rng = np.random.default_rng(0)
        z = rng.uniform(0.1, 3.0, 40) * np.exp(1j * rng.uniform(-3, 3, 40))
        out = transform_Ti(z, 1.0, 0.0, 1.0)
        expected = np.abs(z) ** -0.5 * np.exp(1j * np.asarray(principal_arg(z)))
        assert out == pytest.approx(expected, rel=1e-12)

    def test_modulus_depends_only_on_modulus(self):
        rng = np.random.default_rng(1)
        args = rng.uniform(-math.pi, math.pi, 100)
        z = 0.77 * np.exp(1j * args)
        out = np.abs(transform_Ti(z, 2.0, 1.3, 1.5))
        assert np.max(out) - np.min(out) < 1e-13

    def test_zero_rejected(self):
        with pytest.raises(SingularInputError):
            transform_Ti(0j, 1.0, 1.0, 1.0)
        with pytest.raises(SingularInputError):
            transform_Ti_inv(0j, 1.0, 1.0, 1.0)


class TestTransformTo:
    def test_hand_derived_point(self):
        # interior isostable at r = 0.5 is 3; pushed outside: 3/4; the exterior
        # radius solving 1 - 1/r^2 = 3/4 is exactly 2
        r_out, th_out = transform_To(0.5, 0.0, 1.0, 0.0, 1.0)
        assert r_out == pytest.approx(2.0, abs=1e-10)
        assert th_out == pytest.approx(0.0, abs=1e-10)

    def test_boundary_continuity(self):
        for eps in (1e-4, 1e-6, 1e-8):
            r_out, _ = transform_To(1.0 - eps, 0.2, 1.0, 0.0, 1.0)
            assert r_out > 1.0
            assert r_out - 1.0 < 10 * eps

    def test_isochron_preserved_with_twist(self):
        phi_lc, _ = polar_eigenfunctions(1.0, 1.0, 1.0, 1.0)
        rng = np.random.default_rng(7)
        r = rng.uniform(0.05, 0.95, 50)
        th = rng.uniform(0.0, 2 * math.pi, 50)
        r2, th2 = transform_To(r, th, 1.0, 1.0, 1.0)
        a_in = np.asarray(principal_arg(phi_lc.interior(r, th)))
        a_out = np.asarray(principal_arg(phi_lc.exterior(r2, th2)))
        diff = np.angle(np.exp(1j * (a_in - a_out)))
        assert np.max(np.abs(diff)) < 1e-10

    def test_domain_enforced(self):
        with pytest.raises(DomainError):
            transform_To(1.5, 0.0, 1.0, 0.0, 1.0)


class TestTrajectoryMapping:
    def trajectory(self):
        # a genuine interior spiral of the polar system
        sys_ = make_system("polarLC", mu=1.0, omega=1.0, alpha=1.0, C=1.0)
        fmap = FlowMap(sys_.field, 0.05, method="exact")
        p = np.array([0.15, 0.0])
        pts = [p]
        for _ in range(80):
            p = fmap(p)
            pts.append(p)
        xy = np.asarray(pts)
        r = np.hypot(xy[:, 0], xy[:, 1])
        th = np.mod(np.arctan2(xy[:, 1], xy[:, 0]), 2 * math.pi)
        return np.column_stack([r, th])

    def test_interior_trajectory_maps_to_continuous_exterior_curve(self):
        traj = self.trajectory()
        out = map_trajectory_outside(traj, 1.0, 1.0, 1.0, 1.0)
        assert not np.any(np.isnan(out))
        xy = np.column_stack([out[:, 0] * np.cos(out[:, 1]), out[:, 0] * np.sin(out[:, 1])])
        steps = np.linalg.norm(np.diff(xy, axis=0), axis=1)
        med = np.median(steps)
        assert np.max(steps) < 10 * med

    def test_composition_equals_transform_To(self):
        traj = self.trajectory()
        out = map_trajectory_outside(traj, 1.0, 1.0, 1.0, 1.0)
        r2, th2 = transform_To(traj[:, 0], traj[:, 1], 1.0, 1.0, 1.0)
        assert out[:, 0] == pytest.approx(r2, abs=1e-10)
        diff = np.angle(np.exp(1j * (out[:, 1] - th2)))
        assert np.max(np.abs(diff)) < 1e-10

    def test_steady_state_rejected(self):
        out = map_trajectory_outside(np.array([[0.0, 0.3]]), 1.0, 1.0, 1.0, 1.0)
        assert np.all(np.isnan(out))


class TestIsofield:
    def test_polar_analytic_isochrons_are_radial_lines(self):
        sys_ = make_system("polarLC", mu=1.0, omega=1.0, alpha=0.0, C=1.0)
        grid = EvalGrid((-1.8, -1.8), (1.8, 1.8), 0.2)
        field = isofield(sys_, "analytic", grid)
        # the argument is undefined where the field vanishes (on the cycle)
        keep = ~singular_mask(field.values) & (np.abs(field.values) > 1e-12)
        theta = np.arctan2(grid.points[keep, 1], grid.points[keep, 0])
        diff = np.angle(np.exp(1j * (field.isochron[keep] - theta)))
        assert np.max(np.abs(diff)) < 1e-10

    def test_modulus_vanishes_on_cycle(self):
        sys_ = make_system("polarLC", mu=1.0, omega=1.0, alpha=0.0, C=1.0)
        grid = EvalGrid((-1.5, -1.5), (1.5, 1.5), 0.05)
        field = isofield(sys_, "analytic", grid)
        r = np.hypot(grid.points[:, 0], grid.points[:, 1])
        near_cycle = np.abs(r - 1.0) < 0.025
        assert np.nanmin(np.abs(field.values[near_cycle])) < 0.11

    def test_vanderpol_laplace_field_eigen_relation(self):
        sys_ = make_system("vanderpol")
        grid = EvalGrid((-2.6, -2.6), (2.6, 2.6), 0.2)

        def rhs1(t, u):
            return sys_.field.rhs(u[None, :])[0]

        p0 = solve_ivp(rhs1, (0, 60.0), [2.0, 0.0], rtol=1e-10, atol=1e-10).y[:, -1]
        _, period = limit_cycle_period(sys_, np.array([2.0, 0.0]))
        cyc = solve_ivp(
            rhs1, (0, period), p0, rtol=1e-10, atol=1e-10,
            t_eval=np.linspace(0, period, 300),
        ).y.T

        def mask(pts):
            d = np.min(np.linalg.norm(pts[:, None, :] - cyc[None, :, :], axis=2), axis=1)
            return d <= 0.5

        field = isofield(sys_, "laplace_average", grid, LaplaceConfig(mask=mask))
        keep = ~singular_mask(field.values)
        assert np.count_nonzero(keep) > 100
        dt = 0.6
        fmap = FlowMap(sys_.field, dt, method="rk45", rel_tol=1e-10, abs_tol=1e-12)
        flowed = laplace_average_batch(
            sys_,
            lambda p: np.sin(p[:, 0] + p[:, 1]).astype(complex),
            field.eigenvalue,
            fmap(grid.points[keep]),
            field.source["T"],
            field.source["step"],
        )
        resid = np.abs(flowed - np.exp(field.eigenvalue * dt) * field.values[keep])
        assert np.max(resid) <= 5e-2 * np.max(np.abs(field.values[keep]))

    def test_phase_csv(self, tmp_path):
        sys_ = make_system("polarLC", alpha=0.0)
        grid = EvalGrid((-1.0, -1.0), (1.0, 1.0), 0.5)
        field = isofield(sys_, "analytic", grid)
        path = tmp_path / "phase.csv"
        write_phase_csv(path, field)
        lines = path.read_text().splitlines()
        assert lines[0] == "x1,x2,abs,arg,singular"
        assert len(lines) == 1 + len(grid)
        # the origin row is singular-tagged
        origin_row = [ln for ln in lines[1:] if ln.startswith("1,1,") or ",1" == ln[-2:]]
        assert any(ln.endswith(",1") for ln in lines[1:])


class TestSaddleTransversality:
    def test_eigenfunction_gradients_cross_the_manifolds(self):
        sys_ = make_system("saddle2d")
        theta = math.radians(60.0)
        R = np.array(
            [[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]]
        )

        def embed(x):
            return np.expm1((x @ R.T) / math.pi)

        ts = np.linspace(-1.2, 1.2, 15)
        for eig_idx, axis in ((0, 1), (1, 0)):
            eig = sys_.analytic_eigenfunctions[eig_idx]
            pts = np.zeros((len(ts), 2))
            pts[:, axis] = ts
            z = embed(pts)
            eps = 1e-6
            pp, pm = pts.copy(), pts.copy()
            pp[:, axis] += eps
            pm[:, axis] -= eps
            tang = (embed(pp) - embed(pm)) / (2 * eps)
            tang /= np.linalg.norm(tang, axis=1, keepdims=True)
            for zz, tg in zip(z, tang):
                grad = np.zeros(2)
                for j in range(2):
                    h = 1e-6 * (1 + abs(zz[j]))
                    zp, zm = zz.copy(), zz.copy()
                    zp[j] += h
                    zm[j] -= h
                    grad[j] = (
                        eig.eval(zp[None, :])[0].real - eig.eval(zm[None, :])[0].real
                    ) / (2 * h)
                grad /= np.linalg.norm(grad)
                normal = np.array([-tg[1], tg[0]])
                assert abs(grad @ normal) > 0.5
