"""Test-problem generation and exact reference quantities.

The default generator builds dense matrices with Haar-distributed singular
vectors and geometrically spaced singular values (condition number exactly
``cond`` by construction), plus a right-hand side with a configurable
noise floor. A coherent variant plants identity rows in the left singular
factor to drive the coherence to its maximum m/n, and external problems
can be loaded from CSV or Matrix Market files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .errors import BadDimension, InvalidSpec, MissingSVD, RankDeficient
from .linalg import ThinSVD, qr_solve, residual_norm, thin_svd

PROBLEM_KINDS = ("randsvd_haar", "coherent_spike", "file")


@dataclass(frozen=True)
class ProblemSpec:
    """Recipe for one least-squares test problem."""

    m: int
    n: int
    cond: float = 100.0
    noise: float = 1e-3
    seed: int = 0
    kind: str = "randsvd_haar"
    spike_rows: int = 3  # coherent_spike only
    path: str | None = None  # file kind: A (or [A b]) source
    b_path: str | None = None  # file kind: separate b source
    b_from_last_column: bool = False

    def validate(self) -> None:
        if self.kind not in PROBLEM_KINDS:
            raise InvalidSpec(f"unknown problem kind {self.kind!r}")
        if self.kind != "file":
            if not (self.m > self.n >= 1):
                raise InvalidSpec(f"need m > n >= 1, got m={self.m}, n={self.n}")
            if self.cond < 1:
                raise InvalidSpec("cond must be >= 1")
            if self.n == 1 and self.cond != 1:
                raise InvalidSpec("n == 1 forces cond == 1")
            if self.noise < 0:
                raise InvalidSpec("noise must be >= 0")
            if self.seed < 0:
                raise InvalidSpec("seed must be >= 0")
        if self.kind == "coherent_spike" and not (1 <= self.spike_rows < self.n):
            raise InvalidSpec("spike_rows must be in [1, n)")
        if self.kind == "file" and self.path is None:
            raise InvalidSpec("file kind requires a path")


@dataclass
class LSProblem:
    """A dense least-squares instance with cached reference quantities."""

    a: np.ndarray
    b: np.ndarray
    svd: ThinSVD | None = None
    x_star: np.ndarray | None = None
    residual_star: float | None = None
    spec: ProblemSpec | None = None
    _leverage_cache: dict = field(default_factory=dict, repr=False)

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def n(self) -> int:
        return self.a.shape[1]

    def leverage(self, source: str = "plain_A"):
        """Cached (scores, probs) for leverage-score sampling."""
        if source not in self._leverage_cache:
            if source == "plain_A" and self.svd is not None:
                if self.svd.sigma[-1] <= 1e-12 * self.svd.sigma[0]:
                    raise RankDeficient(int(len(self.svd.sigma) - 1))
                scores = np.einsum("ij,ij->i", self.svd.u, self.svd.u)
                self._leverage_cache[source] = (scores, scores / scores.sum())
            else:
                from .sketch import leverage_scores  # local import, avoids cycle

                b = self.b if source == "augmented_Ab" else None
                self._leverage_cache[source] = leverage_scores(self.a, source, b)
        return self._leverage_cache[source]


def _haar(m, n, gen):
    """Haar-distributed m x n orthonormal columns via sign-fixed QR."""
    g = gen.standard_normal((m, n))
    q, r = np.linalg.qr(g, mode="reduced")
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def _geometric_sigma(n, cond):
    if n == 1:
        return np.ones(1)
    return cond ** (-np.arange(n) / (n - 1.0))


def generate(spec: ProblemSpec) -> LSProblem:
    """Generate the problem described by ``spec`` (deterministic in seed)."""
    spec.validate()
    if spec.kind == "file":
        return _load_file_problem(spec)

    m, n = spec.m, spec.n
    gen_u = rng.stream(spec.seed, rng.PROBLEM_STREAM, 0)
    gen_v = rng.stream(spec.seed, rng.PROBLEM_STREAM, 1)
    gen_b = rng.stream(spec.seed, rng.PROBLEM_STREAM, 2)

    if spec.kind == "randsvd_haar":
        u = _haar(m, n, gen_u)
    else:  # coherent_spike: identity rows carry leverage exactly 1
        k = spec.spike_rows
        u = np.zeros((m, n))
        u[:k, :k] = np.eye(k)
        u[k:, k:] = _haar(m - k, n - k, gen_u)
    v = _haar(n, n, gen_v)
    sigma = _geometric_sigma(n, spec.cond)

    a = (u * sigma) @ v.T
    g = gen_b.standard_normal(n)
    h = gen_b.standard_normal(m)
    b = a @ g + spec.noise * h

    problem = LSProblem(a=a, b=b, svd=ThinSVD(u, sigma, v), spec=spec)
    problem.x_star, problem.residual_star = exact_solve(problem)
    return problem


def exact_solve(problem: LSProblem):
    """Exact solution and residual from the full Householder QR."""
    x, _, _ = qr_solve(problem.a, problem.b)
    return x, residual_norm(problem, x)


def coherence(problem: LSProblem) -> float:
    """mu(A) = (m/n) * max_i ||U_{i,:}||^2, in [1, m/n]."""
    if problem.svd is None:
        raise MissingSVD("coherence needs the cached thin SVD")
    row_norms = np.einsum("ij,ij->i", problem.svd.u, problem.svd.u)
    return float(problem.m / problem.n * row_norms.max())


def load_matrix(path: str) -> np.ndarray:
    """Load a dense matrix from CSV or Matrix Market (by extension)."""
    ext = os.path.splitext(path)[1].lower()
    if ext in (".mtx", ".mm"):
        from scipy.io import mmread

        mat = np.asarray(mmread(path), dtype=np.float64)
    else:
        with open(path, "r", encoding="utf-8") as fh:
            first = fh.readline()
        skip = 0
        try:
            [float(tok) for tok in first.replace(",", " ").split()]
        except ValueError:
            skip = 1  # header row
        mat = np.loadtxt(path, delimiter=",", skiprows=skip, dtype=np.float64)
    mat = np.atleast_2d(mat)
    if not np.all(np.isfinite(mat)):
        raise InvalidSpec(f"{path} contains non-finite entries")
    return mat


def _load_file_problem(spec: ProblemSpec) -> LSProblem:
    mat = load_matrix(spec.path)
    if spec.b_path is not None:
        a = mat
        b = load_matrix(spec.b_path).reshape(-1)
    elif spec.b_from_last_column:
        if mat.shape[1] < 2:
            raise InvalidSpec("need at least two columns to split off b")
        a, b = mat[:, :-1], mat[:, -1]
    else:
        raise InvalidSpec("file kind needs b_path or b_from_last_column")
    if a.shape[0] != b.shape[0]:
        raise BadDimension("row counts of A and b differ")
    if a.shape[0] <= a.shape[1]:
        raise InvalidSpec("file problem must be overdetermined (m > n)")
    sv = thin_svd(a)
    if sv.sigma[-1] <= 1e-12 * sv.sigma[0]:
        raise RankDeficient(int(len(sv.sigma) - 1))
    problem = LSProblem(a=a, b=np.ascontiguousarray(b, dtype=np.float64), svd=sv, spec=spec)
    problem.x_star, problem.residual_star = exact_solve(problem)
    return problem


def benchmark_spec(seed: int = 0, quick: bool = False, **overrides) -> ProblemSpec:
    """The default dense benchmark (m=6400, n=50, cond 1e2, noise 1e-3)."""
    base = dict(m=6400, n=50, cond=1e2, noise=1e-3, seed=seed)
    if quick:
        base.update(m=1600, n=25)
    base.update(overrides)
    return ProblemSpec(**base)
