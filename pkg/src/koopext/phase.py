"""Isochrons and isostables: Laplace averaging of observables, limit-cycle
period extraction, the polar benchmark's closed-form branched eigenfunctions,
and the invertible interior/exterior transformations that carry trajectories
across a limit cycle.

A complex phase field packs both coordinates at once: the modulus is the
isostable coordinate, the principal argument the isochron coordinate.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import (
    DIVERGENCE_LIMIT,
    ConfigurationError,
    DivergenceError,
    DomainError,
    EvalGrid,
    SINGULAR,
    SingularInputError,
    principal_arg,
    tag_nonfinite,
)
from .dynamics import BenchmarkSystem, VectorField, _dp_step

__all__ = [
    "PhaseField",
    "BranchedEigenfunction",
    "laplace_average",
    "laplace_average_batch",
    "limit_cycle_period",
    "polar_eigenfunctions",
    "transform_Ti",
    "transform_Ti_inv",
    "transform_To",
    "map_trajectory_outside",
    "isofield",
    "write_phase_csv",
]


@dataclass(frozen=True, eq=False)
class PhaseField:
    """Complex eigenfunction values on a grid; |values| are isostable
    coordinates, principal arguments are isochron coordinates."""

    grid: EvalGrid
    values: np.ndarray
    eigenvalue: complex
    source: dict = field(default_factory=dict)

    @property
    def isostable(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def isochron(self) -> np.ndarray:
        return np.asarray(principal_arg(self.values))


@dataclass(frozen=True)
class BranchedEigenfunction:
    """Closed-form eigenfunction split into interior/exterior branches of a
    limit cycle; each branch maps (r, theta) arrays to complex values.
    `anywhere`, when present, is the branch-free evaluator with singular tags
    instead of domain errors."""

    interior: Callable
    exterior: Callable | None
    boundary: str = ""
    anywhere: Callable | None = None
    eigenvalue: complex = 0j


def _field_of(system_or_field) -> VectorField:
    if isinstance(system_or_field, BenchmarkSystem):
        return system_or_field.field
    if isinstance(system_or_field, VectorField):
        return system_or_field
    raise ConfigurationError("expected a BenchmarkSystem or VectorField")


def laplace_average_batch(
    system_or_field,
    observable: Callable[[np.ndarray], np.ndarray],
    lam: complex,
    points: np.ndarray,
    T: float,
    step: float,
) -> np.ndarray:
    """(1/T) integral of f(F^t x) e^{-lam t} dt by trapezoid over fixed
    Dormand-Prince nodes, for every row of `points` at once.

    Rows whose integrand exceeds the divergence guard raise DivergenceError;
    callers that prefer masking should split the batch.
    """
    if T <= 0 or step <= 0:
        raise ConfigurationError("horizon and step must be positive")
    fld = _field_of(system_or_field)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n_steps = int(round(T / step))
    h = T / n_steps
    lam = complex(lam)
    y = pts.copy()
    g_prev = np.asarray(observable(y), dtype=complex)
    acc = np.zeros(pts.shape[0], dtype=complex)
    t = 0.0
    for _ in range(n_steps):
        y, _, _ = _dp_step(fld.rhs, y, h)
        t += h
        g = np.asarray(observable(y), dtype=complex) * np.exp(-lam * t)
        if np.any(np.abs(g) > DIVERGENCE_LIMIT) or not np.all(np.isfinite(y)):
            raise DivergenceError(
                "Laplace integrand exceeded the divergence guard; the eigenvalue "
                "is incompatible with this observable over this horizon"
            )
        acc += 0.5 * h * (g_prev + g)
        g_prev = g
    return acc / T


def laplace_average(
    system_or_field, observable, lam: complex, x, T: float, step: float
) -> complex:
    """Laplace average at a single state; see laplace_average_batch."""
    out = laplace_average_batch(system_or_field, observable, lam, np.atleast_2d(x), T, step)
    return complex(out[0])


def limit_cycle_period(
    system_or_field,
    x0,
    settle_time: float = 60.0,
    horizon: float = 100.0,
) -> tuple[float, float]:
    """(omega, period) of the attracting limit cycle reachable from x0.

    The state is first relaxed onto the cycle, then a Poincare section is
    placed through the relaxed point with the flow direction as its normal;
    the return time is refined with Newton steps on the section-crossing
    condition down to 1e-10.
    """
    from scipy.integrate import solve_ivp

    fld = _field_of(system_or_field)

    def rhs1(_t, u):
        return fld.rhs(u[None, :])[0]

    relax = solve_ivp(rhs1, (0.0, settle_time), np.asarray(x0, dtype=float),
                      rtol=1e-12, atol=1e-12)
    p0 = relax.y[:, -1]
    normal = rhs1(0.0, p0)
    speed = np.linalg.norm(normal)
    if speed < 1e-12:
        raise ConfigurationError("x0 relaxed onto a steady state, not a cycle")
    normal = normal / speed

    def section(t, u):
        return normal @ (u - p0)

    section.direction = 1.0

    sol = solve_ivp(
        rhs1, (0.0, horizon), p0, rtol=1e-12, atol=1e-12,
        events=section, dense_output=True,
    )
    crossings = sol.t_events[0]
    crossings = crossings[crossings > 1e-6]
    if crossings.size == 0:
        raise DivergenceError("no return to the section within the horizon; no cycle found")
    t_star = float(crossings[0])
    for _ in range(3):
        u = sol.sol(t_star)
        g = normal @ (u - p0)
        dg = normal @ rhs1(0.0, u)
        if dg == 0:
            break
        t_star -= g / dg
    period = t_star
    return 2.0 * math.pi / period, period


# ---------------------------------------------------------------------------
# Polar benchmark: closed-form eigenfunctions and the transformations.


def polar_eigenfunctions(mu: float, omega: float, alpha: float, C: float):
    """(phi_lc, phi_ss): the branched limit-cycle eigenfunction and the
    steady-state eigenfunction of the polar benchmark, as (r, theta) evaluators.

    phi_lc carries eigenvalue -2 mu + i omega and is singular at r = 0;
    phi_ss carries mu + i (omega - alpha sqrt(mu)), lives on 0 <= r < sqrt(mu),
    and is singular at the cycle.
    """
    if mu <= 0 or omega <= 0 or C <= 0:
        raise ConfigurationError("need mu > 0, omega > 0, C > 0")
    smu = math.sqrt(mu)

    def phi_lc_branch(inside: bool):
        def evaluator(r, theta):
            r = np.asarray(r, dtype=float)
            theta = np.asarray(theta, dtype=float)
            if inside and np.any((r <= 0) | (r >= smu)):
                raise DomainError("interior branch needs 0 < r < sqrt(mu)")
            if not inside and np.any(r <= smu):
                raise DomainError("exterior branch needs r > sqrt(mu)")
            mag = C * np.abs(mu - r**2) / r**2
            ang = theta - (alpha / smu) * np.log((smu + r) / r)
            return mag * np.exp(1j * ang)

        return evaluator

    def phi_lc_any(r, theta):
        # single-formula evaluator valid on r > 0; zero on the cycle itself
        r = np.asarray(r, dtype=float)
        theta = np.asarray(theta, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            mag = C * np.abs(mu - r**2) / r**2
            ang = theta - (alpha / smu) * np.log((smu + r) / r)
            vals = mag * np.exp(1j * ang)
        return tag_nonfinite(vals)

    def phi_ss(r, theta):
        r = np.asarray(r, dtype=float)
        theta = np.asarray(theta, dtype=float)
        if np.any(r >= smu + 1e-15):
            raise DomainError("steady-state eigenfunction is defined for 0 <= r < sqrt(mu)")
        with np.errstate(divide="ignore", invalid="ignore"):
            root = np.sqrt(mu - r**2)
            mag = C * r / root
            ang = theta - (alpha / smu) * np.log((smu + r) / root)
            vals = np.where(r == 0, 0.0, mag * np.exp(1j * ang))
        return tag_nonfinite(vals)

    phi_lc = BranchedEigenfunction(
        interior=phi_lc_branch(True),
        exterior=phi_lc_branch(False),
        boundary=f"limit cycle r = sqrt(mu) = {smu:g}",
        anywhere=phi_lc_any,
        eigenvalue=complex(-2 * mu, omega),
    )
    phi_ss.eigenvalue = complex(mu, omega - alpha * smu)
    return phi_lc, phi_ss


def transform_Ti(z, mu: float, alpha: float, C: float):
    """Interior change of representation from limit-cycle to steady-state
    eigenfunction values:
    T_i(z) = sqrt(C^3/|z|) exp(i [arg z + (alpha/(2 sqrt(mu))) ln(|z|/C)]).
    """
    zz = np.asarray(z, dtype=complex)
    if np.any(zz == 0):
        raise SingularInputError("T_i is undefined at 0")
    r = np.abs(zz)
    ang = np.asarray(principal_arg(zz)) + (alpha / (2.0 * math.sqrt(mu))) * np.log(r / C)
    out = np.sqrt(C**3 / r) * np.exp(1j * ang)
    return complex(out) if out.ndim == 0 else out


def transform_Ti_inv(v, mu: float, alpha: float, C: float):
    """Inverse of transform_Ti:
    T_i^{-1}(v) = (C^3/|v|^2) exp(i [arg v - (alpha/sqrt(mu)) ln(C/|v|)])."""
    vv = np.asarray(v, dtype=complex)
    if np.any(vv == 0):
        raise SingularInputError("T_i^{-1} is undefined at 0")
    r = np.abs(vv)
    ang = np.asarray(principal_arg(vv)) - (alpha / math.sqrt(mu)) * np.log(C / r)
    out = (C**3 / r**2) * np.exp(1j * ang)
    return complex(out) if out.ndim == 0 else out


def _lc_angle(r, theta, mu, alpha):
    return theta - (alpha / math.sqrt(mu)) * np.log((math.sqrt(mu) + r) / r)


def _lc_angle_inv(r, ang, mu, alpha):
    return ang + (alpha / math.sqrt(mu)) * np.log((math.sqrt(mu) + r) / r)


def transform_To(r, theta, mu: float, alpha: float, C: float):
    """Carry interior points across the cycle while preserving the isochron.

    The interior isostable level s = C(mu/r^2 - 1) is pushed through the
    monotone bijection s -> C s/(1 + s) onto the exterior isostable range
    (0, C), the exterior radius is recovered, and the angular coordinate is
    chosen so the eigenfunction argument is unchanged.
    """
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    smu = math.sqrt(mu)
    if np.any((r <= 0) | (r >= smu)):
        raise DomainError("transform_To needs 0 < r < sqrt(mu)")
    s = C * (mu / r**2 - 1.0)
    ang = _lc_angle(r, theta, mu, alpha)
    s_out = C * s / (1.0 + s)
    r_out = np.sqrt(mu / (1.0 - s_out / C))
    theta_out = np.mod(_lc_angle_inv(r_out, ang, mu, alpha), 2.0 * math.pi)
    if r_out.ndim == 0:
        return float(r_out), float(theta_out)
    return r_out, theta_out


def map_trajectory_outside(trajectory, mu: float, omega: float, alpha: float, C: float):
    """Map an interior trajectory, given as (r, theta) rows with
    0 < r < sqrt(mu), to its exterior image:
    read off the steady-state eigenfunction, change representation with
    T_i^{-1}, push the isostable level outside, and invert the exterior
    limit-cycle branch. Points at r = 0 or on the cycle come back
    singular-tagged.
    """
    traj = np.atleast_2d(np.asarray(trajectory, dtype=float))
    r, theta = traj[:, 0], traj[:, 1]
    smu = math.sqrt(mu)
    ok = (r > 0) & (r < smu)
    out = np.full_like(traj, np.nan)
    if np.any(ok):
        _, phi_ss = polar_eigenfunctions(mu, omega, alpha, C)
        z2 = phi_ss(r[ok], theta[ok])
        v = transform_Ti_inv(z2, mu, alpha, C)
        s = np.abs(v)
        ang = np.asarray(principal_arg(v))
        s_out = C * s / (1.0 + s)
        r_out = np.sqrt(mu / (1.0 - s_out / C))
        th_out = np.mod(_lc_angle_inv(r_out, ang, mu, alpha), 2.0 * math.pi)
        out[ok, 0] = r_out
        out[ok, 1] = th_out
    return out


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LaplaceConfig:
    observable: Callable | None = None
    lam: complex | None = None
    T: float | None = None
    step: float | None = None
    x0_cycle: tuple = (2.0, 0.0)
    mask: Callable | None = None  # points -> bool array; False rows stay singular
    label: str = "laplace_average"


def isofield(system: BenchmarkSystem, method: str, grid: EvalGrid, config=None) -> PhaseField:
    """Complex eigenfunction values on a grid, by closed form or Laplace average.

    method 'analytic' uses the system's first analytic eigenfunction (the
    polar benchmark's limit-cycle one). method 'laplace_average' integrates
    the observable (default sin(x1 + x2)) with eigenvalue i omega from the
    measured cycle period; horizon defaults to 50 periods and the quadrature
    step to period/200.
    """
    if method == "analytic":
        if not system.analytic_eigenfunctions:
            raise ConfigurationError(f"{system.id} has no analytic eigenfunctions")
        eig = system.analytic_eigenfunctions[0]
        vals = eig.eval(grid.points)
        return PhaseField(grid, vals, complex(eig.eigenvalue), {"method": "analytic"})
    if method != "laplace_average":
        raise ConfigurationError("method must be 'analytic' or 'laplace_average'")
    cfg = config or LaplaceConfig()
    omega, period = limit_cycle_period(system, np.asarray(cfg.x0_cycle, dtype=float))
    lam = cfg.lam if cfg.lam is not None else complex(0.0, omega)
    if lam.real == 0:
        T = cfg.T if cfg.T is not None else 50.0 * period
    else:
        T = cfg.T if cfg.T is not None else 50.0 / abs(lam.real)
    # align the horizon with whole periods so rotating terms cancel exactly
    T = period * max(1, round(T / period))
    step = cfg.step if cfg.step is not None else period / 200.0
    obs = cfg.observable or (lambda pts: np.sin(pts[:, 0] + pts[:, 1]))
    pts = grid.points
    keep = cfg.mask(pts) if cfg.mask is not None else np.ones(len(grid), dtype=bool)
    values = np.full(len(grid), SINGULAR, dtype=complex)
    if np.any(keep):
        values[keep] = laplace_average_batch(system, obs, lam, pts[keep], T, step)
    return PhaseField(
        grid,
        values,
        lam,
        {
            "method": "laplace_average",
            "label": cfg.label,
            "T": T,
            "step": step,
            "omega": omega,
            "period": period,
        },
    )


def write_phase_csv(path, field_: PhaseField) -> None:
    """CSV rows x1,...,xd,abs,arg,singular in grid enumeration order."""
    grid = field_.grid
    vals = field_.values
    from .core import singular_mask

    sing = singular_mask(vals)
    header = [f"x{k + 1}" for k in range(grid.dim)] + ["abs", "arg", "singular"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for point, v, s in zip(grid.points, vals, sing):
            if s:
                row = [format(c, ".17g") for c in point] + ["nan", "nan", "1"]
            else:
                row = [format(c, ".17g") for c in point] + [
                    format(abs(v), ".17g"),
                    format(float(principal_arg(v)), ".17g"),
                    "0",
                ]
            w.writerow(row)
