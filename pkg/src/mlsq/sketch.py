"""Random sketch operators: nested, splittable, four families.

Conventions
-----------
* Sampling operators (uniform, leverage) have exactly one nonzero per row:
  sqrt(m/s) for uniform, 1/sqrt(s p_i) for leverage-score sampling with
  p_i = l_i / sum(l).  Both satisfy E[S^T S] = I analytically.
* SRHT zero-pads the row dimension to the next power of two and uses the
  orthonormal Walsh-Hadamard transform on the padded length, scaled by
  sqrt(m_pad/s); SRTT uses the orthonormal DCT-II at length m.  Rows are
  selected uniformly without replacement among transformed rows.  The
  sign-diagonal + transform pair is realized once and shared, so fresh
  samples only re-draw the selected rows (the transformed data is cached
  and row resampling costs O(sn)).
* A nested hierarchy draws one stream of finest-level randomness; the
  level-l operator is the first s_l rows of it at scale adjusted by
  sqrt(s_L/s_l), which makes the coarse operator an exact prefix of the
  fine one.  Splitting the level-l operator gives the two halves S_a, S_b
  whose 1/sqrt(2)-scaled stack reproduces S_l exactly.
* With the weighted flag, leverage operators additionally fold
  diag(1/sqrt(l_i)) into the row scaling, so every consumer (half solves,
  merged fine solve, Gram factors) sees the same weighted system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft
from scipy.linalg import solve_triangular

from . import rng
from .errors import (
    BadDimension,
    LevelTooLarge,
    MissingContext,
    RankDeficient,
)
from .linalg import _fix_qr_signs, thin_svd

FAMILY_TAGS = ("gaussian", "uniform", "leverage", "srht", "srtt")
LEVERAGE_SOURCES = ("plain_A", "augmented_Ab")


@dataclass(frozen=True)
class SketchFamily:
    """A sketch family plus its family-specific options."""

    tag: str
    leverage_source: str = "plain_A"
    weighted: bool = False
    replacement: bool = True  # uniform sampling only

    def __post_init__(self):
        if self.tag not in FAMILY_TAGS:
            raise BadDimension(f"unknown sketch family {self.tag!r}")
        if self.leverage_source not in LEVERAGE_SOURCES:
            raise BadDimension(f"unknown leverage source {self.leverage_source!r}")

    @property
    def needs_transform(self) -> bool:
        return self.tag in ("srht", "srtt")

    @property
    def sampling(self) -> bool:
        return self.tag in ("uniform", "leverage")

    @property
    def without_replacement_rows(self) -> bool:
        """True when row selection cannot exceed the source row count."""
        return self.tag in ("srht", "srtt") or (
            self.tag == "uniform" and not self.replacement
        )


GAUSSIAN = SketchFamily("gaussian")
UNIFORM = SketchFamily("uniform")
UNIFORM_NO_REPLACEMENT = SketchFamily("uniform", replacement=False)
LEVERAGE = SketchFamily("leverage")
LEVERAGE_AUGMENTED = SketchFamily("leverage", leverage_source="augmented_Ab", weighted=True)
SRHT = SketchFamily("srht")
SRTT = SketchFamily("srtt")


def _rademacher(gen, size):
    return gen.integers(0, 2, size=size).astype(np.float64) * 2.0 - 1.0


def _fwht(a: np.ndarray) -> np.ndarray:
    """Orthonormal Walsh-Hadamard transform along axis 0 (power-of-two length)."""
    out = np.array(a, dtype=np.float64, copy=True)
    length = out.shape[0]
    if length & (length - 1):
        raise BadDimension(f"FWHT length {length} is not a power of two")
    h = 1
    while h < length:
        view = out.reshape(length // (2 * h), 2, h, -1)
        u = view[:, 0].copy()
        v = view[:, 1].copy()
        view[:, 0] = u + v
        view[:, 1] = u - v
        h *= 2
    out /= math.sqrt(length)
    return out


@dataclass
class TransformState:
    """Shared sign-diagonal + fast transform realization for SRHT/SRTT."""

    kind: str  # "fwht" or "dct"
    m: int
    m_pad: int
    signs: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def transform(self, arr):
        """Transformed (and padded) copy of ``arr``; caches by identity."""
        hit = self._cache.get(id(arr))
        if hit is not None and hit[0] is arr:
            return hit[1], True
        data = np.asarray(arr, dtype=np.float64)
        vector = data.ndim == 1
        cols = data.reshape(self.m, -1)
        if self.m_pad != self.m:
            work = np.zeros((self.m_pad, cols.shape[1]))
            work[: self.m] = cols
            work *= self.signs[:, None]
        else:
            work = self.signs[:, None] * cols
        if self.kind == "fwht":
            out = _fwht(work)
        else:
            out = scipy.fft.dct(work, type=2, axis=0, norm="ortho")
        if vector:
            out = out[:, 0]
        self._cache[id(arr)] = (arr, out)
        return out, False


def make_transform_state(family: SketchFamily, m: int, seed) -> TransformState:
    gen = seed if isinstance(seed, np.random.Generator) else rng.stream(seed)
    if family.tag == "srht":
        m_pad = 1 << max(m - 1, 0).bit_length() if m > 1 else 1
        return TransformState("fwht", m, m_pad, _rademacher(gen, m_pad))
    if family.tag == "srtt":
        return TransformState("dct", m, m, _rademacher(gen, m))
    raise BadDimension(f"{family.tag} does not use a transform")


@dataclass
class SketchOperator:
    """One realized s x m sketch.

    ``rows``/``scalings`` describe sampling and transform-subsampling
    operators; ``gauss``/``gauss_scale`` the dense Gaussian block.  Slices
    of one operator share the underlying draw arrays, which is what makes
    nested prefixes exact.
    """

    family: SketchFamily
    s: int
    m: int
    rows: np.ndarray | None = None
    scalings: np.ndarray | None = None
    gauss: np.ndarray | None = None
    gauss_scale: float | None = None
    transform: TransformState | None = None
    probs: np.ndarray | None = None
    scores: np.ndarray | None = None

    # -- application ---------------------------------------------------

    def _transform_cost(self, k):
        n_model = max(k, 2)
        return float(self.m * k * math.log2(n_model))

    def apply_to(self, mat: np.ndarray):
        """(S @ mat, model apply cost) for an (m, k) matrix or m-vector."""
        mat_arr = np.asarray(mat, dtype=np.float64)
        k = 1 if mat_arr.ndim == 1 else mat_arr.shape[1]
        if mat_arr.shape[0] != self.m:
            raise BadDimension(f"operator expects {self.m} rows, got {mat_arr.shape[0]}")
        if self.family.tag == "gaussian":
            return (self.gauss @ mat_arr) * self.gauss_scale, float(2 * self.s * self.m * k)
        if self.family.needs_transform:
            data, cached = self.transform.transform(mat)
            cost = float(self.s * k) + (0.0 if cached else self._transform_cost(k))
        else:
            data, cost = mat_arr, float(self.s * k)
        picked = data[self.rows]
        if picked.ndim == 1:
            return picked * self.scalings, cost
        return picked * self.scalings[:, None], cost

    def apply(self, a: np.ndarray, b: np.ndarray):
        """(S @ a, S @ b, total model apply cost)."""
        sa, cost_a = self.apply_to(a)
        sb, cost_b = self.apply_to(b)
        return sa, sb, cost_a + cost_b

    def dense(self) -> np.ndarray:
        """Explicit s x m matrix (test/diagnostic use only)."""
        if self.family.tag == "gaussian":
            return self.gauss * self.gauss_scale
        if self.family.needs_transform:
            td, _ = self.transform.transform(np.eye(self.m))
            return self.scalings[:, None] * td[self.rows]
        z = np.zeros((self.s, self.m))
        z[np.arange(self.s), self.rows] = self.scalings
        return z

    # -- nesting / splitting -------------------------------------------

    def _slice(self, start: int, stop: int, factor: float) -> "SketchOperator":
        new_s = stop - start
        kwargs = dict(family=self.family, s=new_s, m=self.m, transform=self.transform,
                      probs=self.probs, scores=self.scores)
        if self.family.tag == "gaussian":
            kwargs["gauss"] = self.gauss[start:stop]
            kwargs["gauss_scale"] = self.gauss_scale * factor
        else:
            kwargs["rows"] = self.rows[start:stop]
            kwargs["scalings"] = self.scalings[start:stop] * factor
        return SketchOperator(**kwargs)

    def prefix(self, s_coarse: int) -> "SketchOperator":
        """First ``s_coarse`` rows, rescaled so the operator stays calibrated."""
        if not 1 <= s_coarse <= self.s:
            raise BadDimension(f"prefix size {s_coarse} outside [1, {self.s}]")
        return self._slice(0, s_coarse, math.sqrt(self.s / s_coarse))

    def split(self):
        """Halves (S_a, S_b) with S = (1/sqrt(2)) [S_a; S_b] exactly."""
        if self.s % 2:
            raise BadDimension("cannot split an odd-sized operator")
        h = self.s // 2
        return self._slice(0, h, math.sqrt(2.0)), self._slice(h, self.s, math.sqrt(2.0))


def stack_operators(op_a: SketchOperator, op_b: SketchOperator) -> SketchOperator:
    """Fine operator (1/sqrt(2)) [S_a; S_b] from two equal-sized halves."""
    if op_a.family != op_b.family or op_a.m != op_b.m or op_a.s != op_b.s:
        raise BadDimension("halves must share family, source rows, and size")
    inv = 1.0 / math.sqrt(2.0)
    kwargs = dict(family=op_a.family, s=2 * op_a.s, m=op_a.m,
                  probs=op_a.probs, scores=op_a.scores)
    if op_a.family.tag == "gaussian":
        if op_a.gauss_scale != op_b.gauss_scale:
            raise BadDimension("gaussian halves must share their scale")
        kwargs["gauss"] = np.vstack([op_a.gauss, op_b.gauss])
        kwargs["gauss_scale"] = op_a.gauss_scale * inv
    else:
        if op_a.family.needs_transform and op_a.transform is not op_b.transform:
            raise BadDimension("transform halves must share one TransformState")
        kwargs["transform"] = op_a.transform
        kwargs["rows"] = np.concatenate([op_a.rows, op_b.rows])
        kwargs["scalings"] = np.concatenate([op_a.scalings, op_b.scalings]) * inv
    return SketchOperator(**kwargs)


def _realize(family, s, m, gen, problem_context=None, transform_state=None):
    """Draw one operator; the draw order here is the determinism contract."""
    if s < 1:
        raise BadDimension("sketch size must be positive")
    if family.without_replacement_rows and s > m:
        raise BadDimension(f"family {family.tag} needs s <= m, got {s} > {m}")

    if family.tag == "uniform":
        if family.replacement:
            rows = gen.integers(0, m, size=s)
        else:
            rows = gen.permutation(m)[:s]
        scalings = np.full(s, math.sqrt(m / s))
        return SketchOperator(family, s, m, rows=rows, scalings=scalings)

    if family.tag == "leverage":
        if problem_context is None:
            raise MissingContext("leverage sampling needs its problem context")
        scores, probs = problem_context.leverage(family.leverage_source)
        rows = gen.choice(m, size=s, p=probs)
        scalings = 1.0 / np.sqrt(s * probs[rows])
        if family.weighted:
            scalings = scalings / np.sqrt(scores[rows])
        return SketchOperator(family, s, m, rows=rows, scalings=scalings,
                              probs=probs, scores=scores)

    if family.tag == "gaussian":
        block = gen.standard_normal((s, m))
        return SketchOperator(family, s, m, gauss=block, gauss_scale=1.0 / math.sqrt(s))

    # srht / srtt
    if transform_state is None:
        raise MissingContext("transform families need a TransformState")
    rows = gen.permutation(transform_state.m_pad)[:s]
    scalings = np.full(s, math.sqrt(transform_state.m_pad / s))
    return SketchOperator(family, s, m, rows=rows, scalings=scalings,
                          transform=transform_state)


def make_operator(family: SketchFamily, s: int, m: int, seed,
                  problem_context=None, transform_state=None) -> SketchOperator:
    """Realize one operator deterministically from ``seed``."""
    if family.needs_transform and transform_state is None:
        transform_state = make_transform_state(family, m, rng.stream(seed, 1))
    return _realize(family, s, m, rng.stream(seed, 0), problem_context, transform_state)


@dataclass
class NestedSketch:
    """Prefix-nested operators for levels 0..L with split accessors."""

    family: SketchFamily
    n: int
    m: int
    max_level: int
    base_factor: int
    levels: list

    @property
    def sizes(self):
        return [op.s for op in self.levels]

    def level(self, ell: int) -> SketchOperator:
        return self.levels[ell]

    def split(self, ell: int):
        return self.levels[ell].split()


def level_size(n: int, ell: int, base_factor: int = 2) -> int:
    """Sketch size at level ``ell`` (s_0 = base_factor * n, doubling)."""
    return base_factor * n * (1 << ell)


def make_nested(family: SketchFamily, max_level: int, n: int, m: int, seed,
                base_factor: int = 2, problem_context=None,
                transform_state=None) -> NestedSketch:
    """One realized hierarchy; level l-1 is an exact prefix of level l."""
    if base_factor < 1 or max_level < 0:
        raise BadDimension("base_factor >= 1 and max_level >= 0 required")
    sizes = [level_size(n, ell, base_factor) for ell in range(max_level + 1)]
    if family.without_replacement_rows and sizes[-1] > m:
        raise LevelTooLarge(
            f"level {max_level} needs {sizes[-1]} rows but only {m} are available"
        )
    if family.needs_transform and transform_state is None:
        transform_state = make_transform_state(family, m, rng.stream(seed, 1))
    top = _realize(family, sizes[-1], m, rng.stream(seed, 0),
                   problem_context, transform_state)
    levels = [top.prefix(s) for s in sizes[:-1]] + [top]
    return NestedSketch(family, n, m, max_level, base_factor, levels)


# -- leverage scores ----------------------------------------------------


def leverage_scores(a: np.ndarray, source: str = "plain_A", b: np.ndarray | None = None):
    """Exact scores l_i = ||U_{i,:}||^2 and sampling probabilities.

    ``augmented_Ab`` computes the scores from the SVD of [A, b], which
    protects rows where b is large but A's leverage is small.
    """
    a = np.asarray(a, dtype=np.float64)
    if source == "augmented_Ab":
        if b is None:
            raise BadDimension("augmented scores need b")
        mat = np.column_stack([a, np.asarray(b, dtype=np.float64)])
    elif source == "plain_A":
        mat = a
    else:
        raise BadDimension(f"unknown leverage source {source!r}")
    sv = thin_svd(mat)
    if sv.sigma[-1] <= 1e-12 * sv.sigma[0]:
        raise RankDeficient(int(len(sv.sigma) - 1))
    scores = np.einsum("ij,ij->i", sv.u, sv.u)
    return scores, scores / scores.sum()


def approx_leverage_scores(a: np.ndarray, sketch_size: int, seed) -> np.ndarray:
    """Sketched leverage-score approximation.

    Sketches A with a subsampled trigonometric transform, takes R from the
    QR of the sketch, and returns the row norms of A R^{-1}.  With
    sketch_size == m the sketch is orthogonal and the scores are exact.
    Quality is reported by callers, never enforced here.
    """
    a = np.asarray(a, dtype=np.float64)
    m, n = a.shape
    if sketch_size < n:
        raise BadDimension("sketch_size must be at least n")
    op = make_operator(SRTT, sketch_size, m, seed)
    sa, _ = op.apply_to(a)
    q, r = np.linalg.qr(sa, mode="reduced")
    q, r = _fix_qr_signs(q, r)
    diag = np.abs(np.diag(r))
    if diag[0] == 0 or np.any(diag <= 1e-12 * diag[0]):
        raise RankDeficient(int(np.argmin(diag)))
    w = solve_triangular(r.T, a.T, lower=True).T  # A R^{-1}
    return np.einsum("ij,ij->i", w, w)


def embedding_distortion(op: SketchOperator, u: np.ndarray) -> float:
    """Realized distortion ||U^T S^T S U - I||_2 for orthonormal U."""
    w, _ = op.apply_to(u)
    gram = w.T @ w
    gram[np.diag_indices_from(gram)] -= 1.0
    return float(np.linalg.norm(gram, 2))
