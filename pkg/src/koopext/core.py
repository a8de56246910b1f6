"""Shared domain types: evaluation grids, the grid norm, principal-branch
complex arithmetic, singular-value tagging, and grid-field CSV I/O.

Everything here is immutable after construction and safe to share. Grid
reductions go through numpy's pairwise summation, so results do not depend
on how a caller might partition the work.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ContractViolationError",
    "SingularInputError",
    "ConfigurationError",
    "DomainError",
    "EmptySupportError",
    "DivergenceError",
    "ConvergenceError",
    "IllConditionedError",
    "NearDefectiveError",
    "UnsupportedSystemError",
    "SINGULAR",
    "singular_mask",
    "tag_nonfinite",
    "EvalGrid",
    "grid_norm",
    "masked_grid_norm",
    "principal_arg",
    "principal_log",
    "principal_pow",
    "write_grid_field",
    "read_grid_field",
]


class ContractViolationError(ValueError):
    """An argument violates a documented precondition (e.g. length mismatch)."""


class SingularInputError(ValueError):
    """Operation undefined at this input (e.g. log of zero)."""


class ConfigurationError(ValueError):
    """Invalid parameter combination."""


class DomainError(ValueError):
    """Evaluation requested outside a function's declared domain."""


class EmptySupportError(ValueError):
    """Every point was masked out; nothing left to reduce over."""


class DivergenceError(RuntimeError):
    """A trajectory or integrand blew past the divergence guard."""


class ConvergenceError(RuntimeError):
    """Iteration did not converge; carries the last iterate when available."""

    def __init__(self, message: str, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class IllConditionedError(RuntimeError):
    """Linear solve refused; message names the condition number."""


class NearDefectiveError(RuntimeError):
    """Biorthogonal normalization failed (w^T v ~ 0); message names the index."""


class UnsupportedSystemError(ValueError):
    """The requested operation needs structure this system does not have."""


#: Tagged result for evaluating an eigenfunction at (or beyond) a singularity.
#: Kept as complex NaN rather than Inf so norms can exclude it deterministically.
SINGULAR = complex(np.nan, np.nan)

#: Guard used by integrators and averaging loops.
DIVERGENCE_LIMIT = 1e8


def singular_mask(values) -> np.ndarray:
    """Boolean mask of singular-tagged entries."""
    v = np.asarray(values)
    if np.iscomplexobj(v):
        return np.isnan(v.real) | np.isnan(v.imag)
    return np.isnan(v)


def tag_nonfinite(values) -> np.ndarray:
    """Copy `values` as complex with every non-finite entry replaced by SINGULAR."""
    v = np.array(values, dtype=complex)
    bad = ~(np.isfinite(v.real) & np.isfinite(v.imag))
    v[bad] = SINGULAR
    return v


@dataclass(frozen=True, eq=False)
class EvalGrid:
    """Axis-aligned uniform grid over the box [lo, hi] with spacing h.

    Points enumerate the lattice {lo + (n_1 h, ..., n_d h)} in row-major
    order (last dimension fastest), so exported CSV files are reproducible
    byte for byte. The per-axis count is floor((hi_k - lo_k)/h) + 1; the
    box is authoritative and the count is derived from it.
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    spacing: float
    points: np.ndarray = field(init=False, repr=False)
    shape: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        h = float(self.spacing)
        if not (0.0 < h < 1.0):
            raise ConfigurationError(f"grid spacing must lie in (0, 1), got {h}")
        if len(lo) != len(hi):
            raise ConfigurationError("lo and hi must have the same dimension")
        if any(b < a for a, b in zip(lo, hi)):
            raise ConfigurationError("grid box has hi < lo")
        if not all(map(math.isfinite, lo + hi)):
            raise ConfigurationError("grid corners must be finite")
        # 1e-9 absorbs representation error in (hi-lo)/h before flooring
        counts = tuple(int(math.floor((b - a) / h + 1e-9)) + 1 for a, b in zip(lo, hi))
        axes = [a + h * np.arange(n) for a, n in zip(lo, counts)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack(mesh, axis=-1).reshape(-1, len(lo))
        pts.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "spacing", h)
        object.__setattr__(self, "shape", counts)
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return len(self.lo)

    def __len__(self) -> int:
        return self.points.shape[0]


def grid_norm(values, grid: EvalGrid | None = None) -> float:
    """Root-mean-square of `values` over the grid; complex entries contribute
    their modulus. `grid` is optional but, when given, the lengths must match."""
    v = np.asarray(values)
    if grid is not None and v.shape[0] != len(grid):
        raise ContractViolationError(
            f"got {v.shape[0]} values for a grid of {len(grid)} points"
        )
    if v.size == 0:
        raise EmptySupportError("grid norm of an empty value set")
    return float(np.sqrt(np.mean(np.abs(v) ** 2)))


def masked_grid_norm(values, grid: EvalGrid | None = None) -> tuple[float, int]:
    """Grid norm restricted to non-singular entries.

    Returns (norm, number of excluded points). The mean runs over the
    surviving points only. Raises EmptySupportError when nothing survives.
    """
    v = np.asarray(values)
    if grid is not None and v.shape[0] != len(grid):
        raise ContractViolationError(
            f"got {v.shape[0]} values for a grid of {len(grid)} points"
        )
    bad = singular_mask(v)
    n_excluded = int(np.count_nonzero(bad))
    if n_excluded == v.shape[0]:
        raise EmptySupportError("all grid points are singular-tagged")
    norm = float(np.sqrt(np.mean(np.abs(v[~bad]) ** 2)))
    return norm, n_excluded


def principal_arg(z) -> np.ndarray | float:
    """Argument in (-pi, pi]; the branch edge -pi is folded onto +pi."""
    a = np.angle(np.asarray(z, dtype=complex))
    a = np.where(a == -np.pi, np.pi, a)
    return a if a.ndim else float(a)


def principal_log(z):
    """ln|z| + i*arg(z) with arg in (-pi, pi]. Scalar or elementwise on arrays.

    Raises SingularInputError for z = 0 anywhere in the input.
    """
    zz = np.asarray(z, dtype=complex)
    if np.any(zz == 0):
        raise SingularInputError("principal_log is undefined at z = 0")
    out = np.log(np.abs(zz)) + 1j * np.asarray(principal_arg(zz))
    return complex(out) if out.ndim == 0 else out


def principal_pow(z, alpha: float):
    """z**alpha through the principal branch: exp(alpha * principal_log(z)).

    z = 0 is allowed only for alpha > 0 (result 0). Integer alpha agrees with
    repeated multiplication to roundoff. Scalar or elementwise on arrays.
    """
    zz = np.asarray(z, dtype=complex)
    zero = zz == 0
    if np.any(zero) and alpha <= 0:
        raise SingularInputError(f"0**{alpha} is undefined for alpha <= 0")
    with np.errstate(divide="ignore"):
        logz = np.where(zero, 0.0, np.log(np.abs(zz))) + 1j * np.asarray(principal_arg(zz))
    out = np.exp(alpha * logz)
    out = np.where(zero, 0.0, out)
    return complex(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Grid-field CSV: header x1,...,xd,re,im, one row per grid point in
# enumeration order, 17 significant digits.

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_grid_field(path, grid: EvalGrid, values) -> None:
    v = np.asarray(values, dtype=complex)
    if v.shape[0] != len(grid):
        raise ContractViolationError("field length does not match grid")
    header = [f"x{k + 1}" for k in range(grid.dim)] + ["re", "im"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for point, val in zip(grid.points, v):
            writer.writerow([_fmt(c) for c in point] + [_fmt(val.real), _fmt(val.imag)])


def read_grid_field(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a grid-field CSV back as (points, complex values)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 2
        pts, vals = [], []
        for row in reader:
            pts.append([float(c) for c in row[:d]])
            vals.append(complex(float(row[d]), float(row[d + 1])))
    return np.asarray(pts), np.asarray(vals)
