"""Dense linear-algebra kernels.

Householder-QR least-squares solve, the stacked-R merge solve that turns
two half-sketch factorizations into the full-sketch solution, thin SVD,
residual norms, and the analytic flop model used for all cost accounting.

Flop costs are model values (operation counts for the textbook
Householder algorithm), not hardware measurements; they are deterministic
functions of the problem dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import BadDimension, ConvergenceFailure, RankDeficient

RANK_TOL = 1e-12


@dataclass
class QRFactors:
    """Thin QR factors with the nonnegative-R-diagonal sign convention."""

    q_thin: np.ndarray  # (s, n), orthonormal columns
    r: np.ndarray  # (n, n), upper triangular, diag >= 0


@dataclass
class ThinSVD:
    """Thin singular value decomposition a = u @ diag(sigma) @ v.T."""

    u: np.ndarray  # (m, n), orthonormal columns
    sigma: np.ndarray  # (n,), nonincreasing, nonnegative
    v: np.ndarray  # (n, n), orthogonal


@dataclass
class FlopCounter:
    """Accumulates model flops, split by category."""

    counts: dict = field(default_factory=dict)

    def add(self, flops: float, category: str = "solve") -> None:
        if flops < 0:
            raise ValueError("flop increments must be nonnegative")
        self.counts[category] = self.counts.get(category, 0.0) + float(flops)

    @property
    def total(self) -> float:
        return float(sum(self.counts.values()))


def qr_cost(s: int, n: int) -> float:
    """Model cost of a Householder QR least-squares solve on an s x n system."""
    return 2.0 * s * n * n - 2.0 * n**3 / 3.0


def merge_cost(n: int) -> float:
    """Model cost of re-factorizing the stacked [R_a; R_b] block."""
    return 10.0 * n**3 / 3.0


def _fix_qr_signs(q, r):
    # Enforce nonnegative R diagonal so factors are reproducible.
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d, d[:, None] * r


def _check_diag(r, rank_tol):
    diag = np.abs(np.diag(r))
    ref = diag[0]
    bad = np.nonzero(diag <= rank_tol * ref)[0]
    if ref == 0.0:
        raise RankDeficient(0)
    if bad.size:
        raise RankDeficient(int(bad[0]))


def qr_solve(sa: np.ndarray, sb: np.ndarray, rank_tol: float = RANK_TOL):
    """Solve min_x ||sa @ x - sb||_2 by Householder QR.

    Returns (solution, QRFactors, model_cost). Raises RankDeficient when a
    diagonal of R falls below rank_tol relative to |r_11|.
    """
    sa = np.asarray(sa, dtype=np.float64)
    sb = np.asarray(sb, dtype=np.float64)
    if sa.ndim != 2 or sb.ndim != 1 or sa.shape[0] != sb.shape[0]:
        raise BadDimension(f"incompatible shapes {sa.shape} and {sb.shape}")
    s, n = sa.shape
    if s < n:
        raise BadDimension(f"need s >= n, got {s} < {n}")
    q, r = np.linalg.qr(sa, mode="reduced")
    q, r = _fix_qr_signs(q, r)
    _check_diag(r, rank_tol)
    x = solve_triangular(r, q.T @ sb)
    return x, QRFactors(q, r), qr_cost(s, n)


def merge_solve(
    ra: np.ndarray,
    rb: np.ndarray,
    qa_t_b: np.ndarray,
    qb_t_b: np.ndarray,
    rank_tol: float = RANK_TOL,
):
    """Solve the stacked fine sketch from the two half factorizations.

    Given S_a A = Q_a R_a and S_b A = Q_b R_b, the minimizer of the stacked
    system (1/sqrt(2)) [S_a A; S_b A] is obtained from the QR of
    [R_a; R_b] alone, at cost (10/3) n^3 independent of the sketch sizes.
    ``qa_t_b`` and ``qb_t_b`` are Q_a^T S_a b and Q_b^T S_b b.
    """
    ra = np.asarray(ra, dtype=np.float64)
    rb = np.asarray(rb, dtype=np.float64)
    n = ra.shape[0]
    if ra.shape != (n, n) or rb.shape != (n, n):
        raise BadDimension("ra and rb must be square with matching size")
    if len(qa_t_b) != n or len(qb_t_b) != n:
        raise BadDimension("reduced right-hand sides must have length n")
    _check_diag(ra, rank_tol)
    _check_diag(rb, rank_tol)
    stacked = np.vstack([ra, rb])
    q, r = np.linalg.qr(stacked, mode="reduced")
    q, r = _fix_qr_signs(q, r)
    _check_diag(r, rank_tol)
    rhs = q.T @ np.concatenate([np.asarray(qa_t_b), np.asarray(qb_t_b)])
    x = solve_triangular(r, rhs)
    return x, merge_cost(n)


def thin_svd(a: np.ndarray) -> ThinSVD:
    """Thin SVD of a tall matrix, computed via QR then SVD of the R factor.

    For m >> n this avoids the m x n iterative kernel; U is recovered as
    Q @ U_R. Exactly singular inputs are returned with sigma[-1] == 0
    rather than raised.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise BadDimension("expected a 2-d array")
    m, n = a.shape
    if m < n:
        raise BadDimension(f"need m >= n, got {m} < {n}")
    q, r = np.linalg.qr(a, mode="reduced")
    q, r = _fix_qr_signs(q, r)
    try:
        u_r, sigma, vt = np.linalg.svd(r)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    return ThinSVD(u=q @ u_r, sigma=sigma, v=vt.T)


def residual_norm(problem, x: np.ndarray) -> float:
    """||A x - b||_2 for an LSProblem-like object with .a and .b."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (problem.a.shape[1],):
        raise BadDimension(f"solution length {x.shape} does not match n")
    return float(np.linalg.norm(problem.a @ x - problem.b))
