"""Dense eigensolvers built around the power method: plain power iteration,
an Arnoldi-accelerated variant that resolves complex-conjugate dominant pairs
through a two-column Krylov basis, biorthogonal deflation for real
non-Hermitian matrices, 2x2 closed-form helpers, and a reference QR iteration
used for cross-validation.

Determinism rules: seeded start vectors, eigenvalues ordered by descending
modulus (ties: descending real part, then positive imaginary part first),
and every eigenvector scaled so its largest-modulus entry is real positive.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import ConfigurationError, ConvergenceError, NearDefectiveError

__all__ = [
    "Eigenpair",
    "power_iteration",
    "eigen2d",
    "eigvector2d",
    "power_iteration_complex",
    "deflate_spectrum",
    "qr_iteration",
    "quasi_triangular_eigenvalues",
    "write_spectrum_json",
    "write_eigenvectors_csv",
]


@dataclass(frozen=True)
class Eigenpair:
    """Eigenvalue with unit right eigenvector and, optionally, the left one.

    When `normalized` is set the pair is biorthogonal: w^T v = 1 (plain
    transpose, no conjugation), the pairing the deflation update
    A - lambda v w^T requires.
    """

    lam: complex
    right: np.ndarray | None = None
    left: np.ndarray | None = None
    normalized: bool = False
    residual: float = np.nan

    def conjugate(self) -> "Eigenpair":
        return Eigenpair(
            lam=np.conj(self.lam),
            right=None if self.right is None else np.conj(self.right),
            left=None if self.left is None else np.conj(self.left),
            normalized=self.normalized,
            residual=self.residual,
        )


def _fix_phase(v: np.ndarray) -> np.ndarray:
    """Largest-modulus entry made real positive; deterministic tie-break (first)."""
    k = int(np.argmax(np.abs(v)))
    pivot = v[k]
    if pivot == 0:
        return v
    return v * (np.conj(pivot) / abs(pivot))


def _eig_sort_key(lam: complex):
    return (-abs(lam), -lam.real, -lam.imag)


def power_iteration(
    A: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 20000,
    seed: int = 0,
    require_convergence: bool = True,
):
    """Classic power iteration for a dominant real simple eigenvalue.

    Returns (lambda, v) with |A v - lambda v| <= tol * |A|. An alternating
    Rayleigh quotient is reported as a ConvergenceError suggesting a complex
    dominant pair; the caller should switch to power_iteration_complex.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ConfigurationError("power_iteration needs a square matrix")
    rng = np.random.Generator(np.random.Philox(seed))
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    norm_A = np.linalg.norm(A)
    lam_hist = []
    for _ in range(max_iter):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0, _fix_phase(v).real
        v_new = w / nw
        lam = float(v_new @ (A @ v_new))
        lam_hist.append(lam)
        if np.linalg.norm(A @ v_new - lam * v_new) <= tol * max(norm_A, 1e-300):
            return lam, _fix_phase(v_new.astype(complex)).real
        if len(lam_hist) >= 6:
            a, b, c, d = lam_hist[-4:]
            alternating = abs(a - c) < 1e-8 * (abs(a) + 1) and abs(b - d) < 1e-8 * (
                abs(b) + 1
            ) and abs(a - b) > 1e-4 * (abs(a) + 1)
            if alternating and require_convergence:
                raise ConvergenceError(
                    "Rayleigh quotient alternates; dominant eigenvalue is likely a "
                    "complex pair, use power_iteration_complex",
                    last_iterate=v_new,
                )
        v = v_new
    if require_convergence:
        raise ConvergenceError(
            f"power iteration did not reach tol={tol} in {max_iter} iterations",
            last_iterate=v,
        )
    lam = float(v @ (A @ v))
    return lam, _fix_phase(v.astype(complex)).real


def eigen2d(h: np.ndarray) -> tuple[complex, complex]:
    """Eigenvalues of a real 2x2 matrix by the sign-matched quadratic formula.

    Ordered by descending modulus; ties by descending real part, then the
    +imaginary member first.
    """
    h = np.asarray(h, dtype=float)
    tr = h[0, 0] + h[1, 1]
    det = h[0, 0] * h[1, 1] - h[0, 1] * h[1, 0]
    disc = tr * tr - 4.0 * det
    if disc >= 0:
        s = np.sqrt(disc)
        big = 0.5 * (tr + np.copysign(s, tr))
        if big == 0.0:
            lams = (complex(0.0), complex(0.0))
        else:
            lams = (complex(big), complex(det / big))
    else:
        s = np.sqrt(-disc)
        lams = (complex(tr / 2, s / 2), complex(tr / 2, -s / 2))
    return tuple(sorted(lams, key=_eig_sort_key))


def eigvector2d(h: np.ndarray, lam: complex) -> tuple[np.ndarray, bool]:
    """Unit eigenvector of a 2x2 matrix from the null space of h - lam I,
    using the larger-pivot row. Returns (vector, defective_flag); the flag is
    set when the eigenvalue is (numerically) a double root with a rank-1
    eigenspace, in which case the single eigenvector is returned.
    """
    h = np.asarray(h, dtype=float)
    M = h.astype(complex) - lam * np.eye(2)
    scale = max(np.abs(h).max(), abs(lam), 1e-300)
    r0, r1 = np.linalg.norm(M[0]), np.linalg.norm(M[1])
    if max(r0, r1) <= 1e-14 * scale:
        # full eigenspace; any direction works
        return np.array([1.0 + 0j, 0.0 + 0j]), False
    row = M[0] if r0 >= r1 else M[1]
    v = np.array([-row[1], row[0]])
    v = _fix_phase(v / np.linalg.norm(v))
    lams = eigen2d(h)
    defective = abs(lams[0] - lams[1]) <= 1e-12 * scale
    return v, defective


def _arnoldi_2col(A: np.ndarray, x: np.ndarray):
    """Two-column Arnoldi step with modified Gram-Schmidt.

    Returns (h, V) where V is an orthonormal (n, 2) basis of span{x, A x}
    and h = V^T A V is the projected 2x2 matrix. Raises on Krylov breakdown
    (second basis vector below 1e-14).
    """
    v1 = x / np.linalg.norm(x)
    w = A @ v1
    h00 = v1 @ w
    w = w - h00 * v1
    h10 = np.linalg.norm(w)
    if h10 < 1e-14:
        raise ConvergenceError("Krylov breakdown: x is already an eigenvector")
    v2 = w / h10
    w2 = A @ v2
    h01 = v1 @ w2
    h11 = v2 @ w2
    V = np.column_stack([v1, v2])
    h = np.array([[h00, h01], [h10, h11]])
    return h, V


def power_iteration_complex(
    A: np.ndarray,
    tol: float = 1e-13,
    max_iter: int = 50000,
    seed: int = 0,
    warm_start_iters: int = 500,
    residual_tol: float | None = None,
) -> Eigenpair:
    """Arnoldi-accelerated power iteration for real non-Hermitian matrices
    whose dominant eigenvalue is simple or a complex-conjugate pair.

    Warm-starts with plain power iteration (fixed iteration budget, no
    convergence requirement), then repeats: orthonormalize the two-column
    Krylov basis of the current vector, take the larger-modulus eigenvalue of
    the projected 2x2 matrix, and lift its eigenvector. Stops once the
    eigenvalue change drops below `tol` and the residual is below
    `residual_tol * |A|` (residual_tol defaults to 1e-10).
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if n == 1:
        return Eigenpair(lam=complex(A[0, 0]), right=np.array([1.0 + 0j]), residual=0.0)
    if residual_tol is None:
        residual_tol = 1e-10
    norm_A = max(np.linalg.norm(A), 1e-300)
    try:
        _, x = power_iteration(A, max_iter=warm_start_iters, seed=seed, require_convergence=False)
    except ConvergenceError as err:
        x = err.last_iterate
    x = np.asarray(x, dtype=float)
    lam_old = complex(np.inf)
    best: Eigenpair | None = None
    Ac = A.astype(complex)
    for _ in range(max_iter):
        try:
            h, V = _arnoldi_2col(A, x)
        except ConvergenceError:
            # hard breakdown: the vector is (numerically) a real eigenvector
            lam = float(x @ (A @ x) / (x @ x))
            v = _fix_phase((x / np.linalg.norm(x)).astype(complex))
            res = float(np.linalg.norm(A @ v - lam * v))
            return Eigenpair(lam=complex(lam), right=v, residual=res)
        lams = eigen2d(h)
        lam_c = lams[0]
        w2, _ = eigvector2d(h, lam_c)
        v_c = V.astype(complex) @ w2
        v_c = _fix_phase(v_c / np.linalg.norm(v_c))
        res_c = float(np.linalg.norm(Ac @ v_c - lam_c * v_c))
        # the plain real candidate: residual of (h00, x) is exactly h10, so a
        # near-degenerate second basis column (real dominant eigenvalue) hands
        # the result to this branch instead of amplifying basis noise
        lam_r = complex(h[0, 0])
        v_r = _fix_phase(V[:, 0].astype(complex))
        res_r = float(abs(h[1, 0]))
        if res_r < res_c:
            lam, v, res = lam_r, v_r, res_r
        else:
            lam, v, res = lam_c, v_c, res_c
        if best is None or res < best.residual:
            best = Eigenpair(lam=lam, right=v, residual=res)
        if abs(lam - lam_old) < tol * max(1.0, abs(lam)) and res <= residual_tol * norm_A:
            return Eigenpair(lam=lam, right=v, residual=res)
        lam_old = lam
        # advance the underlying vector by a plain power step; the sequence
        # may rotate within a complex pair's invariant plane, which the
        # two-column extraction above resolves, but its dominant-subspace
        # alignment improves monotonically
        x_next = A @ x
        nx = np.linalg.norm(x_next)
        if nx < 1e-300:
            break
        x = x_next / nx
    if best is not None and best.residual <= residual_tol * norm_A:
        return best
    raise ConvergenceError(
        f"complex power iteration stagnated after {max_iter} iterations "
        f"(best residual {0.0 if best is None else best.residual:.3e})",
        last_iterate=None if best is None else best.right,
    )


def _match_left(lam_right: complex, pair_left: Eigenpair) -> Eigenpair:
    """Pair a left eigenpair (computed from A^T) with the right one by
    eigenvalue proximity, conjugating when the solver landed on the partner."""
    lam_l = pair_left.lam
    tol = 1e-6 * max(1.0, abs(lam_right))
    if abs(lam_l - lam_right) <= tol:
        return pair_left
    if abs(np.conj(lam_l) - lam_right) <= tol:
        return pair_left.conjugate()
    raise ConvergenceError(
        f"left/right eigenvalue mismatch: {lam_l:.6g} vs {lam_right:.6g}"
    )


def deflate_spectrum(
    A: np.ndarray,
    n_pairs: int,
    tol: float = 1e-13,
    seed: int = 0,
    max_iter: int = 50000,
    residual_tol: float | None = None,
) -> list[Eigenpair]:
    """Dominant eigenpairs of a real matrix by biorthogonal deflation.

    Per round: right pair from A, left pair from A^T, normalize w so that
    w^T v = 1, deflate A <- A - lambda v w^T. When Im(lambda) > 1e-6 the
    conjugate pair is emitted and deflated as well, after which the working
    matrix is real again up to roundoff.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if n_pairs > n:
        raise ConfigurationError(f"asked for {n_pairs} eigenpairs of a {n}x{n} matrix")
    work = A.copy()
    out: list[Eigenpair] = []
    i = 0
    while i < n_pairs:
        right = power_iteration_complex(
            work, tol=tol, seed=seed + i, max_iter=max_iter, residual_tol=residual_tol
        )
        left = power_iteration_complex(
            work.T, tol=tol, seed=seed + i, max_iter=max_iter, residual_tol=residual_tol
        )
        left = _match_left(right.lam, left)
        lam, v, w = right.lam, right.right, left.right
        s = w @ v
        if abs(s) < 1e-12:
            raise NearDefectiveError(
                f"eigenpair {i}: |w^T v| = {abs(s):.3e}, matrix is near defective"
            )
        w = w / s
        out.append(Eigenpair(lam=lam, right=v, left=w, normalized=True, residual=right.residual))
        workc = work.astype(complex) - lam * np.outer(v, w)
        i += 1
        if lam.imag > 1e-6:
            # conjugate partner always ships with its twin, even past n_pairs,
            # so that complex eigenvalues of a real matrix come in pairs
            conj = out[-1].conjugate()
            out.append(conj)
            workc = workc - conj.lam * np.outer(conj.right, conj.left)
            i += 1
        work = workc.real
    return out


def qr_iteration(A: np.ndarray, n_steps: int) -> np.ndarray:
    """n unshifted QR similarity steps, A <- R Q; eigenvalues are preserved.

    Serves as the independent cross-check oracle for deflate_spectrum.
    """
    work = np.asarray(A, dtype=float).copy()
    for _ in range(n_steps):
        Q, R = np.linalg.qr(work)
        work = R @ Q
    return work


def quasi_triangular_eigenvalues(T: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Eigenvalues of a (nearly) quasi-triangular matrix by scanning the
    subdiagonal for 2x2 blocks, solved with eigen2d."""
    T = np.asarray(T, dtype=float)
    n = T.shape[0]
    scale = max(np.abs(T).max(), 1e-300)
    lams: list[complex] = []
    i = 0
    while i < n:
        if i + 1 < n and abs(T[i + 1, i]) > tol * scale:
            lams.extend(eigen2d(T[i : i + 2, i : i + 2]))
            i += 2
        else:
            lams.append(complex(T[i, i]))
            i += 1
    return np.asarray(sorted(lams, key=_eig_sort_key))


def write_spectrum_json(path, pairs: list[Eigenpair]) -> None:
    rows = [
        {
            "index": i,
            "re": p.lam.real,
            "im": p.lam.imag,
            "residual": None if np.isnan(p.residual) else p.residual,
        }
        for i, p in enumerate(pairs)
    ]
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=2)


def write_eigenvectors_csv(path_stem, pairs: list[Eigenpair]) -> None:
    """Right/left eigenvectors as <stem>_right.csv and <stem>_left.csv,
    one eigenvector per column, real and imaginary blocks stacked."""
    for side in ("right", "left"):
        vecs = [getattr(p, side) for p in pairs if getattr(p, side) is not None]
        if not vecs:
            continue
        mat = np.column_stack(vecs)
        stacked = np.vstack([mat.real, mat.imag])
        np.savetxt(f"{path_stem}_{side}.csv", stacked, delimiter=",", fmt="%.17g")
