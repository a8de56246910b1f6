"""Vector fields, flow maps, integrators, and the benchmark-system library.

Each benchmark ships with closed-form eigenfunctions of its Koopman operator
where they exist, so downstream computations can be checked against exact
oracles. All evaluators are vectorized over a batch of states: an array of
shape (n, d) in, an array of shape (n,) or (n, d) out. Singular evaluations
are tagged (complex NaN), never returned as Inf.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq

from .core import (
    DIVERGENCE_LIMIT,
    ConfigurationError,
    DivergenceError,
    EvalGrid,
    UnsupportedSystemError,
    tag_nonfinite,
)

__all__ = [
    "VectorField",
    "FlowMap",
    "AnalyticEigenfunction",
    "BenchmarkSystem",
    "SnapshotSet",
    "flow",
    "integration_error_sup",
    "make_system",
    "sample_snapshots",
    "transform_snapshots",
    "unstable_manifold_sample",
    "koopman_pde_residual",
    "numeric_jacobian",
    "softplus",
    "softplus_inv",
    "bistable_transform",
    "bistable_transform_inv",
    "lin5d_lift",
    "lin5d_base_flow",
    "write_snapshots",
    "read_snapshots",
]


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4) tableau, used both adaptively (flows) and at fixed step
# (quadrature nodes for averaging). Batched: every stage acts on (n, d).

_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_DP_ERR = _DP_B5 - _DP_B4


def _dp_step(rhs, y, h):
    """One Dormand-Prince step: returns (y5, error_estimate, stages k)."""
    k = [rhs(y)]
    for i in range(1, 7):
        yi = y + h * sum(a * ki for a, ki in zip(_DP_A[i], k))
        k.append(rhs(yi))
    y5 = y + h * sum(b * ki for b, ki in zip(_DP_B5, k) if b != 0.0)
    err = h * sum(e * ki for e, ki in zip(_DP_ERR, k) if e != 0.0)
    return y5, err, k


def _check_divergence(y, context: str):
    if not np.all(np.isfinite(y)) or np.any(np.abs(y) > DIVERGENCE_LIMIT):
        raise DivergenceError(f"state exceeded {DIVERGENCE_LIMIT:g} during {context}")


def dp45(rhs, y0: np.ndarray, t: float, rel_tol: float = 1e-8, abs_tol: float = 1e-10):
    """Adaptive Dormand-Prince integration of a batch of independent states.

    `y0` has shape (n, d); every row is advanced from time 0 to `t` with a
    shared step controlled by the worst scaled error over the batch, which
    keeps results independent of how the batch is split.
    """
    if t == 0.0:
        return y0.copy()
    y = np.array(y0, dtype=float)
    _check_divergence(y, "integration")
    sign = 1.0 if t > 0 else -1.0
    remaining = abs(t)
    h = remaining / 16.0
    while remaining > 0.0:
        h = min(h, remaining)
        y_new, err, _ = _dp_step(lambda u: sign * rhs(u), y, h)
        scale = abs_tol + rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        with np.errstate(invalid="ignore"):
            err_norm = float(np.nanmax(np.sqrt(np.mean((err / scale) ** 2, axis=-1))))
        if not math.isfinite(err_norm):
            err_norm = 10.0
        if err_norm <= 1.0:
            y = y_new
            remaining -= h
            _check_divergence(y, "integration")
        factor = 0.9 * err_norm ** -0.2 if err_norm > 0 else 5.0
        h *= min(5.0, max(0.2, factor))
        if h < 1e-14 * abs(t):
            raise DivergenceError("adaptive step collapsed; system too stiff here")
    return y


def dp45_fixed(rhs, y0: np.ndarray, h: float, n_steps: int, observe=None):
    """Fixed-step Dormand-Prince; optionally records observe(y) at every node.

    Returns (y_final, observations or None) where observations has shape
    (n_steps + 1, ...) including the initial node.
    """
    y = np.array(y0, dtype=float)
    recorded = [observe(y)] if observe is not None else None
    for _ in range(n_steps):
        y, _, _ = _dp_step(rhs, y, h)
        _check_divergence(y, "fixed-step integration")
        if observe is not None:
            recorded.append(observe(y))
    return y, (np.array(recorded) if observe is not None else None)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VectorField:
    """Right-hand side of x' = F(x), vectorized over rows of (n, d) input.

    `exact_flow(points, t)`, when present, is the closed-form time-t flow used
    by FlowMap(method='exact').
    """

    dim: int
    rhs: Callable[[np.ndarray], np.ndarray]
    exact_flow: Callable[[np.ndarray, float], np.ndarray] | None = None

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.rhs(np.atleast_2d(np.asarray(points, dtype=float)))


@dataclass(frozen=True)
class FlowMap:
    """The time-dt flow of a vector field under a fixed integration method.

    method 'exact' requires the field's closed-form solution; 'euler' needs a
    step that divides dt; 'rk45' is adaptive Dormand-Prince.
    """

    field: VectorField
    dt: float
    method: str = "rk45"
    step: float | None = None
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10

    def __post_init__(self):
        if self.dt < 0:
            raise ConfigurationError("dt must be nonnegative")
        if self.method not in ("exact", "euler", "rk45"):
            raise ConfigurationError(f"unknown flow method {self.method!r}")
        if self.method == "exact" and self.field.exact_flow is None:
            raise ConfigurationError("this field has no closed-form flow")
        if self.method == "euler":
            if self.step is None or self.step <= 0:
                raise ConfigurationError("euler flow needs a positive step")
            if self.dt > 0:
                ratio = self.dt / self.step
                if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                    raise ConfigurationError(
                        f"euler step {self.step} does not divide dt {self.dt}"
                    )

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        batch = np.atleast_2d(pts)
        out = self._flow_batch(batch)
        return out[0] if single else out

    def _flow_batch(self, pts: np.ndarray) -> np.ndarray:
        if self.dt == 0.0:
            return pts.copy()
        if self.method == "exact":
            out = self.field.exact_flow(pts, self.dt)
            _check_divergence(out, "exact flow")
            return out
        if self.method == "euler":
            n = int(round(self.dt / self.step))
            y = pts.copy()
            for _ in range(n):
                y = y + self.step * self.field.rhs(y)
                _check_divergence(y, "euler flow")
            return y
        return dp45(self.field.rhs, pts, self.dt, self.rel_tol, self.abs_tol)


def flow(fmap: FlowMap, x) -> np.ndarray:
    """Endpoint of the flow map applied to a single state or a batch."""
    return fmap(x)


def integration_error_sup(map_numeric: FlowMap, map_exact: FlowMap, grid: EvalGrid) -> float:
    """Worst Euclidean gap between a numerical flow and the exact flow on a grid."""
    if map_numeric.dt != map_exact.dt:
        raise ConfigurationError("the two flow maps must share dt")
    y_num = map_numeric(grid.points)
    y_ref = map_exact(grid.points)
    return float(np.max(np.linalg.norm(y_num - y_ref, axis=1)))


# ---------------------------------------------------------------------------
# Benchmark systems.


@dataclass(frozen=True)
class AnalyticEigenfunction:
    """Closed-form Koopman eigenfunction: phi(F^t x) = exp(lambda t) phi(x).

    `evaluator` maps (n, d) states to (n,) complex values, tagging singular
    evaluations. `mask_fn`, when present, marks states comfortably away from
    the singular set (used when sampling validation points).
    """

    eigenvalue: complex
    evaluator: Callable[[np.ndarray], np.ndarray]
    singular_set: str = ""
    name: str = ""
    mask_fn: Callable[[np.ndarray], np.ndarray] | None = None

    def eval(self, points: np.ndarray) -> np.ndarray:
        return self.evaluator(np.atleast_2d(np.asarray(points, dtype=float)))


@dataclass(frozen=True)
class BenchmarkSystem:
    id: str
    field: VectorField
    steady_states: tuple
    analytic_eigenfunctions: tuple[AnalyticEigenfunction, ...] = ()
    metadata: dict = field(default_factory=dict)
    valid_box: tuple | None = None

    @property
    def dim(self) -> int:
        return self.field.dim


def _as_points(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


def _cubic1d(a=-1.0, b=0.0, c=3.0) -> BenchmarkSystem:
    a, b, c = float(a), float(b), float(c)
    if not a < b < c:
        raise ConfigurationError("cubic1d needs a < b < c")
    roots = np.array([a, b, c])
    # residues of 1/((x-a)(x-b)(x-c)); they sum to zero
    res = np.array(
        [
            1.0 / ((a - b) * (a - c)),
            1.0 / ((b - a) * (b - c)),
            1.0 / ((c - a) * (c - b)),
        ]
    )
    lams = np.array([(a - b) * (a - c), (b - a) * (b - c), (c - a) * (c - b)])

    def rhs(x):
        return (x - a) * (x - b) * (x - c)

    def antiderivative(x: float) -> float:
        return float(np.dot(res, np.log(np.abs(x - roots))))

    intervals = [(-np.inf, a), (a, b), (b, c), (c, np.inf)]

    def _interval_of(x: float):
        for lo, hi in intervals:
            if lo < x < hi:
                return lo, hi
        return None

    def exact_flow(pts, t):
        out = np.empty_like(pts)
        for i, x0 in enumerate(pts[:, 0]):
            if np.any(x0 == roots):
                out[i, 0] = x0
                continue
            lo, hi = _interval_of(x0)
            target = antiderivative(x0) + t
            gap = 1e-13 * (1.0 + abs(x0))
            xlo = lo + gap if np.isfinite(lo) else None
            xhi = hi - gap if np.isfinite(hi) else None
            if xlo is None or xhi is None:
                # unbounded side: expand the bracket; escape means blow-up
                inner = xhi if xlo is None else xlo
                width = 1.0
                other = None
                fn = lambda x: antiderivative(x) - target
                f_inner = fn(inner)
                while width < DIVERGENCE_LIMIT:
                    cand = inner - width if xlo is None else inner + width
                    if fn(cand) * f_inner <= 0:
                        other = cand
                        break
                    width *= 4.0
                if other is None:
                    raise DivergenceError("cubic flow escaped to infinity in finite time")
                xlo, xhi = (other, inner) if xlo is None else (inner, other)
            out[i, 0] = brentq(
                lambda x: antiderivative(x) - target, xlo, xhi, xtol=1e-15, rtol=8.9e-16
            )
        return out

    def make_eig(idx: int):
        exps = lams[idx] * res

        def evaluator(pts):
            x = pts[:, 0]
            with np.errstate(divide="ignore", invalid="ignore"):
                logmag = sum(e * np.log(np.abs(x - r)) for e, r in zip(exps, roots))
                vals = np.exp(logmag)
            return tag_nonfinite(vals)

        singular_roots = [float(r) for e, r in zip(exps, roots) if e < 0]
        return AnalyticEigenfunction(
            eigenvalue=complex(lams[idx]),
            evaluator=evaluator,
            singular_set=f"x in {singular_roots}",
            name=f"phi{idx + 1}",
            mask_fn=lambda pts: np.min(np.abs(pts[:, :1] - roots), axis=1) > 0.1,
        )

    return BenchmarkSystem(
        id="cubic1d",
        field=VectorField(1, rhs, exact_flow),
        steady_states=(np.array([a]), np.array([b]), np.array([c])),
        analytic_eigenfunctions=tuple(make_eig(i) for i in range(3)),
        metadata={"a": a, "b": b, "c": c, "eigenvalues": [float(v) for v in lams]},
        valid_box=((a - 1.0,), (c + 1.0,)),
    )


def _quad1d(a=2.0, b=3.0) -> BenchmarkSystem:
    a, b = float(a), float(b)
    if a >= b:
        raise ConfigurationError("quad1d needs a < b")

    def rhs(x):
        return (x - a) * (x - b)

    def exact_flow(pts, t):
        x = pts[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = (x - a) / (x - b)
            ut = u * math.exp((a - b) * t)
            # u crossing 1 is the finite-time escape of the trajectory
            blown = (x != b) & np.isfinite(u) & ((u - 1.0) * (ut - 1.0) <= 0.0) & (u != ut)
            if np.any(blown):
                raise DivergenceError("quad1d trajectory escaped to infinity before dt")
            out = (a - b * ut) / (1.0 - ut)
        out = np.where(x == b, b, out)
        out = out.reshape(-1, 1)
        _check_divergence(out, "quad1d exact flow")
        return out

    # eigenvalue signs fixed by direct substitution into grad(phi) . F = lambda phi:
    # ((x-a)/(x-b))^k carries k (a-b); the reciprocal family carries k (b-a).
    def ratio_eig(k: int, anchored_at_a: bool) -> AnalyticEigenfunction:
        num, den = (a, b) if anchored_at_a else (b, a)
        lam = k * ((a - b) if anchored_at_a else (b - a))

        def evaluator(pts):
            x = pts[:, 0]
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = ((x - num) / (x - den)) ** k
            return tag_nonfinite(vals)

        return AnalyticEigenfunction(
            eigenvalue=complex(lam),
            evaluator=evaluator,
            singular_set=f"x = {den}" if k > 0 else f"x = {num}",
            name=f"phi_{'a' if anchored_at_a else 'b'}^{k}",
            mask_fn=lambda pts: np.minimum(np.abs(pts[:, 0] - a), np.abs(pts[:, 0] - b))
            > 0.05,
        )

    return BenchmarkSystem(
        id="quad1d",
        field=VectorField(1, rhs, exact_flow),
        steady_states=(np.array([a]), np.array([b])),
        analytic_eigenfunctions=(ratio_eig(1, True), ratio_eig(1, False)),
        metadata={"a": a, "b": b},
        valid_box=((a - 1.0,), (b + 1.0,)),
    )


def quad1d_eigenfunction(system: BenchmarkSystem, k: int, anchored_at_a: bool = True):
    """Integer-power member of the quad1d family, ((x-a)/(x-b))^k or its mirror."""
    a, b = system.metadata["a"], system.metadata["b"]
    base = system.analytic_eigenfunctions[0 if anchored_at_a else 1]

    def evaluator(pts):
        x = pts[:, 0]
        num, den = (a, b) if anchored_at_a else (b, a)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = ((x - num) / (x - den)) ** k
        return tag_nonfinite(vals)

    return AnalyticEigenfunction(
        eigenvalue=complex(base.eigenvalue * k),
        evaluator=evaluator,
        singular_set=base.singular_set,
        name=f"{base.name[:-2]}^{k}",
        mask_fn=base.mask_fn,
    )


def _left_eigenvectors_2x2(A: np.ndarray):
    lams, W = np.linalg.eig(A.T)
    if np.any(np.abs(lams.imag) > 1e-12):
        return None
    order = np.argsort(lams.real)
    vecs = []
    for j in order:
        w = W[:, j].real
        w = w / np.linalg.norm(w)
        k = int(np.argmax(np.abs(w)))
        if w[k] < 0:
            w = -w
        vecs.append((float(lams[j].real), w))
    return vecs


def _linear2d(A=None) -> BenchmarkSystem:
    A = np.array([[-0.9, 0.1], [0.0, -0.8]] if A is None else A, dtype=float)
    if A.shape != (2, 2):
        raise ConfigurationError("linear2d needs a 2x2 matrix")
    cache: dict[float, np.ndarray] = {}

    def propagator(t: float) -> np.ndarray:
        if t not in cache:
            cache[t] = expm(A * t)
        return cache[t]

    def rhs(x):
        return x @ A.T

    def exact_flow(pts, t):
        return pts @ propagator(t).T

    eig = _left_eigenvectors_2x2(A)
    funcs = []
    if eig is not None:
        for lam, w in eig:
            funcs.append(
                AnalyticEigenfunction(
                    eigenvalue=complex(lam),
                    evaluator=lambda pts, w=w: (pts @ w).astype(complex),
                    name=f"<w,{lam:g}>",
                    mask_fn=lambda pts, w=w: np.abs(pts @ w) > 0.05,
                )
            )
    return BenchmarkSystem(
        id="linear2d",
        field=VectorField(2, rhs, exact_flow),
        steady_states=(np.zeros(2),),
        analytic_eigenfunctions=tuple(funcs),
        metadata={"A": A.tolist()},
        valid_box=((-2.0, -2.0), (2.0, 2.0)),
    )


def softplus(x):
    """log(e^x + 1), applied coordinate-wise; maps R to (0, inf)."""
    return np.logaddexp(0.0, np.asarray(x, dtype=float))


def softplus_inv(y):
    """log(e^y - 1) for y > 0, NaN elsewhere; stable for large and small y."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = np.where(y > 30.0, y, np.log(np.expm1(np.where(y > 0, y, np.nan))))
    return out


def _softplus2d(A=None) -> BenchmarkSystem:
    A = np.array([[-0.9, 0.1], [0.0, -0.8]] if A is None else A, dtype=float)
    cache: dict[float, np.ndarray] = {}

    def propagator(t: float) -> np.ndarray:
        if t not in cache:
            cache[t] = expm(A * t)
        return cache[t]

    def rhs(y):
        x = softplus_inv(y)
        return (1.0 - np.exp(-y)) * (x @ A.T)

    def exact_flow(pts, t):
        x = softplus_inv(pts)
        return softplus(x @ propagator(t).T)

    eig = _left_eigenvectors_2x2(A)
    funcs = []
    if eig is not None:
        for lam, w in eig:
            def evaluator(pts, w=w):
                return tag_nonfinite(softplus_inv(pts) @ w)

            funcs.append(
                AnalyticEigenfunction(
                    eigenvalue=complex(lam),
                    evaluator=evaluator,
                    singular_set="any coordinate <= 0",
                    name=f"<w,{lam:g}> o softplus_inv",
                    mask_fn=lambda pts, w=w: (np.min(pts, axis=1) > 0.05)
                    & (np.abs(softplus_inv(pts) @ w) > 0.05),
                )
            )
    return BenchmarkSystem(
        id="softplus2d",
        field=VectorField(2, rhs, exact_flow),
        steady_states=(softplus(np.zeros(2)),),
        analytic_eigenfunctions=tuple(funcs),
        metadata={"A": A.tolist()},
        valid_box=((0.1, 0.1), (2.5, 2.5)),
    )


def _lin5d_matrix(a: float, b: float) -> np.ndarray:
    return np.array(
        [
            [a, 0, 0, 0, 0],
            [0, b, -b, 0, 0],
            [0, 0, 2 * a, 0, 0],
            [0, 0, 0, a + b, -b],
            [0, 0, 0, 0, 3 * a],
        ],
        dtype=float,
    )


def _lin5d(a=-0.4, b=-1.0) -> BenchmarkSystem:
    a, b = float(a), float(b)
    if b == 0 or abs(2 * a - b) < 1e-12 or a == 0:
        raise ConfigurationError("lin5d needs a != 0, b != 0 and b != 2a")
    A = _lin5d_matrix(a, b)
    cache: dict[float, np.ndarray] = {}

    def propagator(t: float) -> np.ndarray:
        if t not in cache:
            cache[t] = expm(A * t)
        return cache[t]

    r = (2 * a - b) / b
    lefts = [
        (a, np.array([1.0, 0, 0, 0, 0])),
        (2 * a, np.array([0.0, 0, 1, 0, 0])),
        (3 * a, np.array([0.0, 0, 0, 0, 1])),
        (b, np.array([0.0, r, 1, 0, 0])),
        (a + b, np.array([0.0, 0, 0, r, 1])),
    ]

    funcs = tuple(
        AnalyticEigenfunction(
            eigenvalue=complex(lam),
            evaluator=lambda pts, w=w: (pts @ w).astype(complex),
            name=f"phi{i + 1}",
            mask_fn=lambda pts, w=w: np.abs(pts @ w) > 0.1,
        )
        for i, (lam, w) in enumerate(lefts)
    )
    return BenchmarkSystem(
        id="lin5d",
        field=VectorField(5, lambda y: y @ A.T, lambda pts, t: pts @ propagator(t).T),
        steady_states=(np.zeros(5),),
        analytic_eigenfunctions=funcs,
        metadata={"a": a, "b": b},
        valid_box=((-2.0,) * 5, (2.0,) * 5),
    )


def lin5d_lift(x2d: np.ndarray) -> np.ndarray:
    """Lift planar states (x1, x2) to the observables (x1, x2, x1^2, x1 x2, x1^3)."""
    p = _as_points(x2d)
    x1, x2 = p[:, 0], p[:, 1]
    return np.column_stack([x1, x2, x1**2, x1 * x2, x1**3])


def lin5d_base_flow(x2d: np.ndarray, t: float, a: float = -0.4, b: float = -1.0) -> np.ndarray:
    """Closed-form flow of x1' = a x1, x2' = b (x2 - x1^2)."""
    p = _as_points(x2d)
    x1, x2 = p[:, 0], p[:, 1]
    c = b * x1**2 / (b - 2 * a)
    x1t = x1 * math.exp(a * t)
    x2t = (x2 - c) * math.exp(b * t) + c * math.exp(2 * a * t)
    return np.column_stack([x1t, x2t])


def _polar_lc(mu=1.0, omega=1.0, alpha=1.0, C=1.0) -> BenchmarkSystem:
    mu, omega, alpha, C = float(mu), float(omega), float(alpha), float(C)
    if mu <= 0 or omega <= 0 or C <= 0:
        raise ConfigurationError("polarLC needs mu > 0, omega > 0, C > 0")
    smu = math.sqrt(mu)

    def rhs(p):
        x, y = p[:, 0], p[:, 1]
        r2 = x * x + y * y
        radial = mu - r2
        swirl = omega + alpha * (np.sqrt(r2) - smu)
        return np.column_stack([x * radial - y * swirl, y * radial + x * swirl])

    def exact_flow(p, t):
        x, y = p[:, 0], p[:, 1]
        r0 = np.hypot(x, y)
        th0 = np.arctan2(y, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = r0**2
            ut = np.where(u > 0, mu / (1.0 + (mu / u - 1.0) * math.exp(-2 * mu * t)), 0.0)
            rt = np.sqrt(ut)
            phase0 = np.where(r0 > 0, np.log((smu + r0) / r0), 0.0)
            phaset = np.where(rt > 0, np.log((smu + rt) / rt), 0.0)
            tht = th0 + omega * t + (alpha / smu) * (phaset - phase0)
        return np.column_stack([rt * np.cos(tht), rt * np.sin(tht)])

    lam_lc = complex(-2 * mu, omega)
    lam_ss = complex(mu, omega - alpha * smu)

    def eval_lc(p):
        x, y = p[:, 0], p[:, 1]
        r = np.hypot(x, y)
        th = np.arctan2(y, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            mag = C * np.abs(mu - r**2) / r**2
            ang = th - (alpha / smu) * np.log((smu + r) / r)
            vals = mag * np.exp(1j * ang)
        return tag_nonfinite(vals)

    def eval_ss(p):
        x, y = p[:, 0], p[:, 1]
        r = np.hypot(x, y)
        th = np.arctan2(y, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            root = np.sqrt(np.where(r < smu, mu - r**2, np.nan))
            mag = C * r / root
            ang = th - (alpha / smu) * np.log((smu + r) / root)
            vals = np.where(r == 0, 0.0, mag * np.exp(1j * ang))
        return tag_nonfinite(vals)

    def mask_lc(p):
        r = np.hypot(p[:, 0], p[:, 1])
        return (r > 0.1) & (np.abs(r - smu) > 0.05)

    def mask_ss(p):
        r = np.hypot(p[:, 0], p[:, 1])
        return (r > 0.05) & (r < smu - 0.05)

    return BenchmarkSystem(
        id="polarLC",
        field=VectorField(2, rhs, exact_flow),
        steady_states=(np.zeros(2),),
        analytic_eigenfunctions=(
            AnalyticEigenfunction(lam_lc, eval_lc, "r = 0", "phi_lc", mask_lc),
            AnalyticEigenfunction(lam_ss, eval_ss, f"r = sqrt(mu) = {smu:g}", "phi_ss", mask_ss),
        ),
        metadata={"mu": mu, "omega": omega, "alpha": alpha, "C": C},
        valid_box=((-2 * smu, -2 * smu), (2 * smu, 2 * smu)),
    )


def _vanderpol(mu=0.3) -> BenchmarkSystem:
    mu = float(mu)

    def rhs(p):
        x, y = p[:, 0], p[:, 1]
        return np.column_stack([y, mu * (1.0 - x * x) * y - x])

    return BenchmarkSystem(
        id="vanderpol",
        field=VectorField(2, rhs),
        steady_states=(np.zeros(2),),
        metadata={"mu": mu},
        valid_box=((-3.0, -3.0), (3.0, 3.0)),
    )


def _saddle2d() -> BenchmarkSystem:
    theta = math.radians(60.0)
    R = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    lam1, lam2 = -1.0, 1.5
    M = R @ np.diag([lam1, lam2]) @ R.T

    def rhs(z):
        with np.errstate(divide="ignore", invalid="ignore"):
            L = np.log1p(z)
        return (z + 1.0) * (L @ M.T)

    def exact_flow(z, t):
        with np.errstate(divide="ignore", invalid="ignore"):
            x0 = math.pi * (np.log1p(z) @ R)
        xt = x0 * np.array([math.exp(lam1 * t), math.exp(lam2 * t)])
        return np.expm1((xt @ R.T) / math.pi)

    def coord_eig(idx: int, lam: float) -> AnalyticEigenfunction:
        def evaluator(z):
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = math.pi * (np.log1p(z) @ R)[:, idx]
            return tag_nonfinite(vals)

        return AnalyticEigenfunction(
            eigenvalue=complex(lam),
            evaluator=evaluator,
            singular_set="any coordinate <= -1",
            name=f"phi{idx + 1}",
            mask_fn=lambda z: (np.min(z, axis=1) > -0.9)
            & (np.abs(math.pi * (np.log1p(np.maximum(z, -0.9)) @ R)[:, idx]) > 0.05),
        )

    return BenchmarkSystem(
        id="saddle2d",
        field=VectorField(2, rhs, exact_flow),
        steady_states=(np.zeros(2),),
        analytic_eigenfunctions=(coord_eig(0, lam1), coord_eig(1, lam2)),
        metadata={"lambda1": lam1, "lambda2": lam2, "rotation_deg": 60.0},
        valid_box=((-0.8, -0.8), (2.0, 2.0)),
    )


def bistable_transform(y: np.ndarray) -> np.ndarray:
    """Diffeomorphism from (y1, y2) to the bistable system's x coordinates."""
    p = _as_points(y)
    y1, y2 = p[:, 0], p[:, 1]
    return np.column_stack(
        [2.0 * (y1 + y1**4 + 2.0 * y1**2 * y2 + y2**2), 2.0 * (y1**2 + y2)]
    )


def bistable_transform_inv(x: np.ndarray) -> np.ndarray:
    p = _as_points(x)
    u, v = p[:, 0] / 2.0, p[:, 1] / 2.0
    y1 = u - v**2
    y2 = -(u**2) + v + 2.0 * u * v**2 - v**4
    return np.column_stack([y1, y2])


def _bistable2d() -> BenchmarkSystem:
    lam_u, lam_s2, lam_s1 = 1.0 / 16.0, -1.0, -1.0 / 8.0

    def rhs_y(y):
        y1, y2 = y[:, 0], y[:, 1]
        return np.column_stack([-(y1 - 0.25) * (y1 + 0.25) * y1, -y2])

    def jac_h(y):
        y1, y2 = y[:, 0], y[:, 1]
        J = np.empty((y.shape[0], 2, 2))
        J[:, 0, 0] = 2.0 * (1.0 + 4.0 * y1**3 + 4.0 * y1 * y2)
        J[:, 0, 1] = 2.0 * (2.0 * y1**2 + 2.0 * y2)
        J[:, 1, 0] = 4.0 * y1
        J[:, 1, 1] = 2.0
        return J

    def rhs(x):
        y = bistable_transform_inv(x)
        dy = rhs_y(y)
        return np.einsum("nij,nj->ni", jac_h(y), dy)

    def flow_y(y, t):
        y1, y2 = y[:, 0], y[:, 1]
        K, r = 1.0 / 16.0, 1.0 / 8.0
        u = y1**2
        with np.errstate(divide="ignore", invalid="ignore"):
            ut = np.where(u > 0, K / (1.0 + (K / u - 1.0) * math.exp(-r * t)), 0.0)
        return np.column_stack([np.sign(y1) * np.sqrt(ut), y2 * math.exp(-t)])

    def exact_flow(x, t):
        return bistable_transform(flow_y(bistable_transform_inv(x), t))

    def base_ratio(y1):
        # (y1 - 1/4)(y1 + 1/4) / y1^2, the log-derivative eigenquantity
        with np.errstate(divide="ignore", invalid="ignore"):
            return (y1**2 - 1.0 / 16.0) / y1**2

    def power_eig(exponent: float, lam: float, name: str) -> AnalyticEigenfunction:
        def evaluator(x):
            y = bistable_transform_inv(x)
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = np.abs(base_ratio(y[:, 0])) ** exponent
            return tag_nonfinite(vals)

        def mask(x):
            y = bistable_transform_inv(x)
            return (np.abs(y[:, 0]) > 0.06) & (
                np.minimum(np.abs(y[:, 0] - 0.25), np.abs(y[:, 0] + 0.25)) > 0.06
            )

        return AnalyticEigenfunction(
            eigenvalue=complex(lam),
            evaluator=evaluator,
            singular_set="y1 in {0, +-1/4} (image under the transform)",
            name=name,
            mask_fn=mask,
        )

    def y2_eig() -> AnalyticEigenfunction:
        def evaluator(x):
            y = bistable_transform_inv(x)
            return tag_nonfinite(np.abs(y[:, 1]))

        return AnalyticEigenfunction(
            eigenvalue=complex(lam_s2),
            evaluator=evaluator,
            singular_set="",
            name="phi2",
            mask_fn=lambda x: np.abs(bistable_transform_inv(x)[:, 1]) > 0.03,
        )

    nodes_y = (np.array([0.0, 0.0]), np.array([0.25, 0.0]), np.array([-0.25, 0.0]))
    steady = tuple(bistable_transform(n)[0] for n in nodes_y)
    return BenchmarkSystem(
        id="bistable2d",
        field=VectorField(2, rhs, exact_flow),
        steady_states=steady,
        analytic_eigenfunctions=(
            power_eig(-0.5, lam_u, "phi1_unstable"),
            power_eig(1.0, lam_s1, "phi1_node"),
            y2_eig(),
        ),
        metadata={"eigenvalues": [lam_u, lam_s2, lam_s1]},
        valid_box=((-1.0, -1.0), (1.0, 1.0)),
    )


def _duffing(delta=0.5, beta=-1.0, alpha=0.1) -> BenchmarkSystem:
    delta, beta, alpha = float(delta), float(beta), float(alpha)
    if alpha == 0:
        raise ConfigurationError("duffing needs alpha != 0")

    def rhs(p):
        x, y = p[:, 0], p[:, 1]
        return np.column_stack([y, -delta * y - x * (beta + alpha * x * x)])

    steady = [np.zeros(2)]
    if beta / alpha < 0:
        xs = math.sqrt(-beta / alpha)
        steady += [np.array([xs, 0.0]), np.array([-xs, 0.0])]
    return BenchmarkSystem(
        id="duffing",
        field=VectorField(2, rhs),
        steady_states=tuple(steady),
        metadata={"delta": delta, "beta": beta, "alpha": alpha},
        valid_box=((-6.0, -6.0), (6.0, 6.0)),
    )


_FACTORIES = {
    "cubic1d": _cubic1d,
    "quad1d": _quad1d,
    "linear2d": _linear2d,
    "softplus2d": _softplus2d,
    "lin5d": _lin5d,
    "polarLC": _polar_lc,
    "vanderpol": _vanderpol,
    "saddle2d": _saddle2d,
    "bistable2d": _bistable2d,
    "duffing": _duffing,
}


def make_system(system_id: str, **params) -> BenchmarkSystem:
    """Construct a benchmark system by id.

    Available: cubic1d(a,b,c), quad1d(a,b), linear2d(A), softplus2d(A),
    lin5d(a,b), polarLC(mu,omega,alpha,C), vanderpol(mu), saddle2d(),
    bistable2d(), duffing(delta,beta,alpha).
    """
    try:
        factory = _FACTORIES[system_id]
    except KeyError:
        raise ConfigurationError(
            f"unknown system {system_id!r}; choose from {sorted(_FACTORIES)}"
        ) from None
    return factory(**params)


# ---------------------------------------------------------------------------
# Snapshot sampling.


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    """Paired samples (x_k, F^dt(x_k)) plus the sampling interval."""

    x: np.ndarray
    y: np.ndarray
    dt: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.x.shape != self.y.shape:
            raise ConfigurationError("x and y snapshot blocks must have equal shape")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


def sample_snapshots(
    system: BenchmarkSystem,
    n_pairs: int,
    dt: float,
    box,
    seed: int,
    samples_per_traj: int = 2,
    method: str | None = None,
) -> SnapshotSet:
    """Deterministically sample snapshot pairs with initial conditions uniform
    on `box`.

    With samples_per_traj = s, each trajectory contributes s - 1 consecutive
    pairs, so (s - 1) must divide n_pairs. Divergent trajectories are dropped
    (not clipped) and counted in metadata['n_dropped']; replacements are drawn
    until n_pairs survive.
    """
    if n_pairs < 1:
        raise ConfigurationError("n_pairs must be >= 1")
    if samples_per_traj < 2:
        raise ConfigurationError("samples_per_traj must be >= 2")
    per_traj = samples_per_traj - 1
    if n_pairs % per_traj != 0:
        raise ConfigurationError(
            f"samples_per_traj - 1 = {per_traj} must divide n_pairs = {n_pairs}"
        )
    n_traj = n_pairs // per_traj
    lo, hi = (np.asarray(v, dtype=float) for v in box)
    if method is None:
        method = "exact" if system.field.exact_flow is not None else "rk45"
    fmap = FlowMap(system.field, dt, method=method)
    # counter-based generator: sampling order is reproducible however batched
    rng = np.random.Generator(np.random.Philox(seed))
    xs, ys = [], []
    collected = 0
    dropped = 0
    budget = 50 * n_traj

    def integrate_block(ics: np.ndarray):
        states = [ics]
        for _ in range(per_traj):
            states.append(fmap._flow_batch(states[-1]))
        stacked = np.stack(states)  # (s, n, d)
        return (
            stacked[:-1].transpose(1, 0, 2).reshape(-1, ics.shape[1]),
            stacked[1:].transpose(1, 0, 2).reshape(-1, ics.shape[1]),
        )

    while collected < n_traj and budget > 0:
        batch_n = n_traj - collected
        budget -= batch_n
        ics = lo + (hi - lo) * rng.random((batch_n, lo.shape[0]))
        try:
            bx, by = integrate_block(ics)
            xs.append(bx)
            ys.append(by)
            collected += batch_n
        except DivergenceError:
            # isolate the divergent trajectories one by one
            for row in ics:
                try:
                    bx, by = integrate_block(row[None, :])
                except DivergenceError:
                    dropped += 1
                    continue
                xs.append(bx)
                ys.append(by)
                collected += 1
    if collected < n_traj:
        raise DivergenceError("too many divergent trajectories in the sampling box")
    if dropped:
        warnings.warn(f"dropped {dropped} divergent trajectories while sampling")
    return SnapshotSet(
        x=np.vstack(xs)[: n_traj * per_traj],
        y=np.vstack(ys)[: n_traj * per_traj],
        dt=float(dt),
        metadata={
            "system": system.id,
            "seed": int(seed),
            "box": [lo.tolist(), hi.tolist()],
            "n_dropped": dropped,
            "samples_per_traj": samples_per_traj,
            "method": method,
        },
    )


def transform_snapshots(snaps: SnapshotSet, fn: Callable[[np.ndarray], np.ndarray]) -> SnapshotSet:
    """Push an entire snapshot set through a coordinate change."""
    meta = dict(snaps.metadata)
    meta["transformed"] = True
    return SnapshotSet(x=fn(snaps.x), y=fn(snaps.y), dt=snaps.dt, metadata=meta)


# ---------------------------------------------------------------------------


def numeric_jacobian(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, scale: float = 1e-6):
    """Central-difference Jacobian of a batch map at a single state."""
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    J = np.empty((d, d))
    for j in range(d):
        h = scale * (1.0 + abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        J[:, j] = (fn(xp[None, :])[0] - fn(xm[None, :])[0]) / (2 * h)
    return J


def _find_saddle(system: BenchmarkSystem):
    for ss in system.steady_states:
        J = numeric_jacobian(system.field.rhs, np.asarray(ss, dtype=float))
        lams, vecs = np.linalg.eig(J)
        pos = np.flatnonzero(lams.real > 1e-8)
        neg = np.flatnonzero(lams.real < -1e-8)
        if len(pos) == 1 and len(neg) == len(lams) - 1:
            v = vecs[:, pos[0]].real
            v = v / np.linalg.norm(v)
            k = int(np.flatnonzero(np.abs(v) > 1e-12)[0])
            if v[k] < 0:
                v = -v
            return np.asarray(ss, dtype=float), float(lams[pos[0]].real), v
    raise UnsupportedSystemError(f"{system.id} has no saddle with a 1D unstable manifold")


def _trace_branch(system: BenchmarkSystem, seed_pt: np.ndarray, window_lo, window_hi, ds: float):
    """Polyline along one unstable-manifold branch, cropped at first window exit."""
    from scipy.integrate import solve_ivp

    def inside(p):
        return bool(np.all(p >= window_lo) and np.all(p <= window_hi))

    def rhs1(_t, u):
        return system.field.rhs(u[None, :])[0]

    pts = [seed_pt.copy()]
    x = seed_pt.copy()
    horizon, chunk, t_used = 2000.0, 1.0, 0.0
    while t_used < horizon:
        sol = solve_ivp(rhs1, (0.0, chunk), x, rtol=1e-10, atol=1e-12, dense_output=True)
        # walk the dense solution in arclength increments of roughly ds
        t_local = 0.0
        while t_local < chunk:
            speed = float(np.linalg.norm(rhs1(0.0, x)))
            if speed < 1e-14:
                return np.asarray(pts)
            t_local = min(t_local + ds / speed, chunk)
            x = sol.sol(t_local)
            if not inside(x):
                return np.asarray(pts)
            if np.linalg.norm(x) > DIVERGENCE_LIMIT:
                raise DivergenceError("unstable manifold escaped the divergence guard")
            pts.append(x.copy())
        t_used += chunk
    return np.asarray(pts)


def _resample_polyline(pts: np.ndarray, n: int) -> np.ndarray:
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, s[-1], n)
    out = np.empty((n, pts.shape[1]))
    for j in range(pts.shape[1]):
        out[:, j] = np.interp(targets, s, pts[:, j])
    return out


def unstable_manifold_sample(system: BenchmarkSystem, n: int, window) -> np.ndarray:
    """Sample the saddle's 1D unstable manifold, resampled by arclength.

    Both branches are traced by forward integration from the saddle offset by
    +-1e-6 along the unstable eigenvector and cropped at the first exit from
    `window`; the returned polyline runs from the far end of the negative
    branch, through the saddle, to the far end of the positive branch. n = 1
    returns the positive-branch seed point.
    """
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    saddle, _, v_u = _find_saddle(system)
    lo, hi = (np.asarray(v, dtype=float) for v in window)
    delta = 1e-6
    seed_plus = saddle + delta * v_u
    if n == 1:
        return seed_plus[None, :]
    span = float(np.max(hi - lo))
    ds = span / (40.0 * n)
    plus = _trace_branch(system, seed_plus, lo, hi, ds)
    minus = _trace_branch(system, saddle - delta * v_u, lo, hi, ds)
    poly = np.vstack([minus[::-1], plus])
    return _resample_polyline(poly, n)


def koopman_pde_residual(
    system: BenchmarkSystem,
    eigenfunction: AnalyticEigenfunction,
    points: np.ndarray,
    fd_scale: float = 1e-6,
) -> np.ndarray:
    """|grad(phi) . F - lambda phi| at each point, with grad(phi) from central
    differences of the evaluator. Validation oracle for analytic eigenfunctions."""
    pts = _as_points(points)
    n, d = pts.shape
    grad = np.zeros((n, d), dtype=complex)
    for j in range(d):
        h = fd_scale * (1.0 + np.abs(pts[:, j]))
        pp, pm = pts.copy(), pts.copy()
        pp[:, j] += h
        pm[:, j] -= h
        grad[:, j] = (eigenfunction.eval(pp) - eigenfunction.eval(pm)) / (2 * h)
    F = system.field.rhs(pts)
    phi = eigenfunction.eval(pts)
    return np.abs(np.sum(grad * F, axis=1) - eigenfunction.eigenvalue * phi)


# ---------------------------------------------------------------------------
# Snapshot CSV + JSON sidecar.


def write_snapshots(path_stem: str, snaps: SnapshotSet) -> None:
    import csv as _csv
    import json

    d = snaps.dim
    header = [f"x{k + 1}" for k in range(d)] + [f"y{k + 1}" for k in range(d)]
    with open(f"{path_stem}.csv", "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(header)
        for xr, yr in zip(snaps.x, snaps.y):
            w.writerow([format(v, ".17g") for v in (*xr, *yr)])
    sidecar = {"dt": snaps.dt, **snaps.metadata}
    with open(f"{path_stem}.json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)


def read_snapshots(path_stem: str) -> SnapshotSet:
    import json

    import numpy as _np

    with open(f"{path_stem}.json") as fh:
        meta = json.load(fh)
    data = _np.loadtxt(f"{path_stem}.csv", delimiter=",", skiprows=1, ndmin=2)
    d = data.shape[1] // 2
    return SnapshotSet(x=data[:, :d], y=data[:, d:], dt=float(meta.pop("dt")), metadata=meta)
