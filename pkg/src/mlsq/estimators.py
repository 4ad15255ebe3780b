"""Sketch-and-solve estimators: single solves, Monte Carlo averaging, the
multilevel estimator with antithetic level differences, optimal sample
allocation, an adaptive driver, the bias bound, and the sample-recycling
scheme.

Per-sample randomness is addressed by (level, sample index, retry)
streams derived from one master seed, so sample generation is
order-independent and reproducible; a rank-deficient sketch is resampled
once on the next retry stream before the error propagates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import rng
from .diagnostics import LevelStats, level_stats
from .errors import (
    AllocationInfeasible,
    BadDimension,
    InsufficientBaseSamples,
    InvalidSpec,
    NonPositiveValue,
    RankDeficient,
)
from .linalg import (
    _check_diag,
    _fix_qr_signs,
    merge_cost,
    merge_solve,
    qr_cost,
    qr_solve,
    residual_norm,
)
from .sketch import (
    NestedSketch,
    SketchFamily,
    SketchOperator,
    _realize,
    level_size,
    make_nested,
    make_transform_state,
)

MODES = ("antithetic", "plain", "recycled")


@dataclass
class LevelDelta:
    """One sample of the level-l correction term."""

    level: int
    delta_x: np.ndarray
    fine_x: np.ndarray
    coarse_parts: tuple  # (), (x_a,), or (x_a, x_b)
    mode: str
    cost: float  # model flops of the solves
    stream_id: tuple | None = None
    apply_cost: float = 0.0
    ops: tuple | None = None  # (fine, a_half, b_half) when retained


@dataclass
class EstimatorConfig:
    """Knobs for the multilevel estimators."""

    family: SketchFamily
    eps: float
    max_level: int = 4
    mode: str = "antithetic"
    n_pilot: int = 100
    recycle: bool = False
    seed: int = 0
    base_factor: int = 2

    def validate(self):
        if self.eps <= 0:
            raise InvalidSpec("eps must be positive")
        if self.n_pilot < 2:
            raise InvalidSpec("need at least two pilot samples per level")
        if self.max_level < 0:
            raise InvalidSpec("max_level must be >= 0")
        if self.mode not in MODES:
            raise InvalidSpec(f"unknown mode {self.mode!r}")
        if self.base_factor < 1:
            raise InvalidSpec("base_factor must be >= 1")


@dataclass
class MLSASResult:
    """Multilevel estimate with its per-level bookkeeping."""

    x_hat: np.ndarray
    per_level: list  # LevelStats
    total_cost: float
    variance_total: float
    bias_bound: float | None = None
    apply_flops: float = 0.0
    max_level_reached: bool = False


def antithetic_cost(s_ell: int, n: int) -> float:
    """Two half solves plus the stacked-R merge: 2 s_l n^2 + 2 n^3 exactly."""
    return float(2 * s_ell * n * n + 2 * n**3)


def plain_cost(s_ell: int, n: int) -> float:
    """Full fine solve plus prefix coarse solve: 3 s_l n^2 - (4/3) n^3."""
    return 3.0 * s_ell * n * n - 4.0 * n**3 / 3.0


def level_cost_model(n: int, ell: int, mode: str, base_factor: int = 2) -> float:
    s_ell = level_size(n, ell, base_factor)
    if ell == 0:
        return qr_cost(s_ell, n)
    if mode == "plain":
        return plain_cost(s_ell, n)
    return antithetic_cost(s_ell, n)


def sas_solve(problem, op: SketchOperator):
    """Single sketch-and-solve estimate; cost includes the sketch apply."""
    sa, sb, apply_cost = op.apply(problem.a, problem.b)
    x, _, solve_flops = qr_solve(sa, sb)
    return x, apply_cost + solve_flops


def delta_from_operators(problem, level, mode, op_fine, op_a=None, op_b=None,
                         stream_id=None, retain_ops=False) -> LevelDelta:
    """Core level-difference computation on explicitly given operators.

    Level 0 is the plain SAS sample.  Antithetic samples solve both
    halves, then obtain the fine solution from the merged R factors;
    plain samples solve the fine sketch directly and reuse the S_a half
    as the coarse sample.
    """
    a, b = problem.a, problem.b
    n = problem.n
    if level == 0:
        sa, sb, apply_cost = op_fine.apply(a, b)
        x, _, _ = qr_solve(sa, sb)
        return LevelDelta(0, x, x, (), mode, qr_cost(op_fine.s, n),
                          stream_id, apply_cost,
                          (op_fine, None, None) if retain_ops else None)

    if mode == "antithetic" or mode == "recycled":
        sa_a, sb_a, cost_a = op_a.apply(a, b)
        sa_b, sb_b, cost_b = op_b.apply(a, b)
        x_a, fac_a, _ = qr_solve(sa_a, sb_a)
        x_b, fac_b, _ = qr_solve(sa_b, sb_b)
        fine_x, _ = merge_solve(fac_a.r, fac_b.r,
                                fac_a.q_thin.T @ sb_a, fac_b.q_thin.T @ sb_b)
        delta = fine_x - (x_a + x_b) / 2.0
        return LevelDelta(level, delta, fine_x, (x_a, x_b), mode,
                          antithetic_cost(2 * op_a.s, n), stream_id,
                          cost_a + cost_b,
                          (op_fine, op_a, op_b) if retain_ops else None)

    if mode == "plain":
        sa_f, sb_f, cost_f = op_fine.apply(a, b)
        fine_x, _, _ = qr_solve(sa_f, sb_f)
        sa_a, sb_a, cost_a = op_a.apply(a, b)
        x_a, _, _ = qr_solve(sa_a, sb_a)
        delta = fine_x - x_a
        return LevelDelta(level, delta, fine_x, (x_a,), mode,
                          plain_cost(op_fine.s, n), stream_id, cost_f + cost_a,
                          (op_fine, op_a, op_b) if retain_ops else None)

    raise InvalidSpec(f"unknown mode {mode!r}")


def sample_delta(problem, nested: NestedSketch, level: int, mode: str,
                 stream_id=None, retain_ops=False) -> LevelDelta:
    """Level difference for one realized nested hierarchy."""
    if level > nested.max_level:
        raise BadDimension(f"level {level} exceeds nested max {nested.max_level}")
    if level == 0:
        return delta_from_operators(problem, 0, mode, nested.level(0),
                                    stream_id=stream_id, retain_ops=retain_ops)
    op_a, op_b = nested.split(level)
    return delta_from_operators(problem, level, mode, nested.level(level),
                                op_a, op_b, stream_id, retain_ops)


def draw_delta(problem, family, level, mode, master_seed, index,
               base_factor=2, transform_state=None, retain_ops=False) -> LevelDelta:
    """Draw the (level, index) sample on its own stream, resampling once
    on a rank-deficient sketch before letting the error propagate."""
    last = None
    for retry in (0, 1):
        child = rng.seed_seq(master_seed, rng.SAMPLE_STREAM, level, index, retry)
        nested = make_nested(family, level, problem.n, problem.m, child,
                             base_factor, problem, transform_state)
        try:
            return sample_delta(problem, nested, level, mode,
                                stream_id=(level, index), retain_ops=retain_ops)
        except RankDeficient as exc:
            last = exc
    raise last


def collect_deltas(problem, family, level, mode, count, master_seed,
                   base_factor=2, transform_state=None, retain_ops=False,
                   start=0):
    """``count`` independent level-difference samples (indices start..)."""
    return [
        draw_delta(problem, family, level, mode, master_seed, i,
                   base_factor, transform_state, retain_ops)
        for i in range(start, start + count)
    ]


def _shared_transform(family, problem, seed):
    if family.needs_transform:
        return make_transform_state(family, problem.m,
                                    rng.stream(seed, rng.TRANSFORM_STREAM))
    return None


def mc_average(problem, family: SketchFamily, s: int, n_samples: int, seed,
               transform_state=None):
    """Mean of independent SAS solutions plus its scalar variance estimate.

    Returns (x_bar, variance_estimate, cost) where the variance is the
    unbiased total variance of A x_hat across the samples (nan for a
    single sample).
    """
    if n_samples < 1:
        raise InvalidSpec("need at least one sample")
    if transform_state is None:
        transform_state = _shared_transform(family, problem, seed)
    xs = np.empty((n_samples, problem.n))
    cost = 0.0
    for i in range(n_samples):
        last = None
        for retry in (0, 1):
            child = rng.seed_seq(seed, rng.SAMPLE_STREAM, 0, i, retry)
            op = _realize(family, s, problem.m, rng.stream(child, 0),
                          problem, transform_state)
            try:
                xs[i], c = sas_solve(problem, op)
                cost += c
                last = None
                break
            except RankDeficient as exc:
                last = exc
        if last is not None:
            raise last
    x_bar = xs.mean(axis=0)
    if n_samples == 1:
        return x_bar, float("nan"), cost
    from .diagnostics import a_image  # local import keeps module load light

    img = a_image(problem, xs)
    centered = img - img.mean(axis=0)
    variance = float(np.einsum("ij,ij->", centered, centered) / (n_samples - 1))
    return x_bar, variance, cost


def optimal_allocation(v, c, eps) -> np.ndarray:
    """Sample counts N_l = ceil(eps^-2 sqrt(V_l/C_l) sum_k sqrt(V_k C_k))."""
    v = np.asarray(v, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if eps <= 0:
        raise NonPositiveValue("eps must be positive")
    if np.any(c <= 0) or np.any(v < 0):
        raise NonPositiveValue("variances must be >= 0 and costs > 0")
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(c))):
        raise AllocationInfeasible("nonfinite variance or cost estimate")
    total = np.sum(np.sqrt(v * c))
    n = np.ceil(np.sqrt(v / c) * total / eps**2)
    return np.maximum(n, 1.0).astype(np.int64)


def bias_bound(problem, x_top, s_top, eta, lev_max, use_exact_residual=False) -> float:
    """Computable upper bound on the squared bias of the top-level mean.

    sqrt(4 eta (n/s_L) * r^2 * lev_max) with r = (1+eta) ||A x_L - b||
    (the computable surrogate), or r = ||A x* - b|| when the exact
    residual is cached and requested.
    """
    if not 0.0 < eta < 1.0:
        raise InvalidSpec("eta must lie in (0, 1)")
    if use_exact_residual:
        if problem.residual_star is None:
            raise InvalidSpec("exact residual not cached on this problem")
        res_sq = problem.residual_star**2
    else:
        res_sq = ((1.0 + eta) * residual_norm(problem, x_top)) ** 2
    return math.sqrt(4.0 * eta * (problem.n / s_top) * res_sq * lev_max)


def _result_from_samples(problem, config, samples_per_level):
    stats = []
    total_cost = 0.0
    apply_flops = 0.0
    x_hat = np.zeros(problem.n)
    for ell, samples in enumerate(samples_per_level):
        st = level_stats(samples, problem)
        stats.append(st)
        x_hat = x_hat + st.mean_delta
        total_cost += sum(s.cost for s in samples)
        apply_flops += sum(s.apply_cost for s in samples)
    variance_total = float(sum(st.v_ell / st.n for st in stats))
    bound = None
    if problem.svd is not None:
        scores, _ = problem.leverage("plain_A")
        s_top = level_size(problem.n, len(samples_per_level) - 1, config.base_factor)
        bound = bias_bound(problem, x_hat, s_top, 0.5, float(scores.max()))
    return MLSASResult(x_hat, stats, total_cost, variance_total, bound, apply_flops)


def mlsas_estimate(problem, config: EstimatorConfig) -> MLSASResult:
    """Fixed-level multilevel estimate with pilot-based allocation."""
    config.validate()
    transform_state = _shared_transform(config.family, problem, config.seed)
    levels = range(config.max_level + 1)

    pilots = [
        collect_deltas(problem, config.family, ell,
                       "antithetic" if config.recycle else config.mode,
                       config.n_pilot, config.seed, config.base_factor,
                       transform_state)
        for ell in levels
    ]
    v = np.array([level_stats(p, problem).v_ell for p in pilots])
    if not np.all(np.isfinite(v)):
        raise AllocationInfeasible("pilot variance estimate is not finite")
    c = np.array([
        level_cost_model(problem.n, ell, config.mode, config.base_factor)
        for ell in levels
    ])
    counts = np.maximum(optimal_allocation(v, c, config.eps), config.n_pilot)

    if config.recycle:
        recycled = recycled_sampler(problem, config, counts, transform_state)
        samples = [recycled.deltas[ell] for ell in levels]
        return _result_from_samples(problem, config, samples)

    samples = []
    for ell in levels:
        extra = collect_deltas(problem, config.family, ell, config.mode,
                               int(counts[ell]) - config.n_pilot, config.seed,
                               config.base_factor, transform_state,
                               start=config.n_pilot)
        samples.append(pilots[ell] + extra)
    return _result_from_samples(problem, config, samples)


def _weak_convergence(problem, samples_per_level, eps):
    """Top-level weak test: ||A mean(delta_L)|| <= (2^alpha - 1) eps/sqrt(2).

    alpha is fitted by OLS on log2 of that scalar over the top (up to 3)
    correction levels; with a single correction level alpha defaults to 1.
    """
    from .diagnostics import a_image

    p_scalars = []
    for samples in samples_per_level[1:]:
        mean_delta = np.mean([s.delta_x for s in samples], axis=0)
        p_scalars.append(float(np.linalg.norm(a_image(problem, mean_delta[None, :]))))
    if not p_scalars:
        return True, float("nan"), []
    if len(p_scalars) >= 2 and all(p > 0 for p in p_scalars[-3:]):
        tail = p_scalars[-3:]
        xs = np.arange(len(tail), dtype=float)
        slope = np.polyfit(xs, np.log2(tail), 1)[0]
        alpha = max(-slope, 0.1)
    else:
        alpha = 1.0
    tol = eps / math.sqrt(2.0)
    return p_scalars[-1] <= (2.0**alpha - 1.0) * tol, alpha, p_scalars


def adaptive_mlsas(problem, config: EstimatorConfig, max_rounds: int = 60) -> MLSASResult:
    """Adaptive driver: reallocate, top up, test weak convergence, and add
    levels until the eps^2/2 + eps^2/2 variance/bias split is met or the
    next sketch size would exceed m (returned with max_level_reached)."""
    config.validate()
    transform_state = _shared_transform(config.family, problem, config.seed)
    eps_var = config.eps / math.sqrt(2.0)

    samples = [
        collect_deltas(problem, config.family, ell, config.mode, config.n_pilot,
                       config.seed, config.base_factor, transform_state)
        for ell in range(config.max_level + 1)
    ]
    flag = False
    for _ in range(max_rounds):
        v = np.array([level_stats(s, problem).v_ell for s in samples])
        if not np.all(np.isfinite(v)):
            raise AllocationInfeasible("variance estimate is not finite")
        c = np.array([
            level_cost_model(problem.n, ell, config.mode, config.base_factor)
            for ell in range(len(samples))
        ])
        counts = np.maximum(optimal_allocation(v, c, eps_var), config.n_pilot)
        for ell, target in enumerate(counts):
            have = len(samples[ell])
            if target > have:
                samples[ell] += collect_deltas(
                    problem, config.family, ell, config.mode, int(target) - have,
                    config.seed, config.base_factor, transform_state, start=have)

        variance_total = sum(
            level_stats(s, problem).v_ell / len(s) for s in samples)
        weak_ok, _, _ = _weak_convergence(problem, samples, config.eps)
        if variance_total <= eps_var**2 and weak_ok:
            break
        if not weak_ok:
            next_level = len(samples)
            if level_size(problem.n, next_level, config.base_factor) > problem.m:
                flag = True
                break
            samples.append(collect_deltas(
                problem, config.family, next_level, config.mode, config.n_pilot,
                config.seed, config.base_factor, transform_state))

    result = _result_from_samples(problem, config, samples)
    result.max_level_reached = flag
    return result


# -- sample recycling -----------------------------------------------------


@dataclass
class _Record:
    """Stored SAS factorization: R, Q^T (S b), and the solution."""

    r: np.ndarray
    qtb: np.ndarray
    x: np.ndarray


@dataclass
class RecycledSamples:
    """Per-level recycled deltas plus the base-consumption audit trail."""

    deltas: dict  # level -> [LevelDelta]
    base_ids: dict  # level -> [tuple of consumed base indices] (levels >= 2)
    usage: dict  # (parity, base index) -> [levels it feeds]

    def paired(self, hi_level: int):
        """(base deltas, high-level deltas) paired for correlation checks.

        Each level-``hi_level`` delta is paired with the delta of the first
        base sample its composite consumed.
        """
        parity = hi_level % 2
        lo = [self.deltas[parity][ids[0]] for ids in self.base_ids[hi_level]]
        return lo, self.deltas[hi_level]


def _merge_records(rec_a: _Record, rec_b: _Record) -> _Record:
    stacked = np.vstack([rec_a.r, rec_b.r])
    q, r = np.linalg.qr(stacked, mode="reduced")
    q, r = _fix_qr_signs(q, r)
    _check_diag(r, 1e-12)
    qtb = q.T @ np.concatenate([rec_a.qtb, rec_b.qtb])
    return _Record(r, qtb, solve_triangular(r, qtb))


def _merge_tree(records):
    if len(records) == 1:
        return records[0]
    h = len(records) // 2
    return _merge_records(_merge_tree(records[:h]), _merge_tree(records[h:]))


def recycled_sampler(problem, config: EstimatorConfig, counts,
                     transform_state=None) -> RecycledSamples:
    """Generate per-level samples with the even/odd recycling scheme.

    Levels 0 and 1 are sampled fresh and double as the reuse pools: even
    levels >= 2 consume disjoint groups of level-0 samples, odd levels
    >= 3 consume disjoint groups of level-1 samples, so every base sample
    appears in at most one higher-level delta and never feeds adjacent
    levels.  Enforces N_l <= 2^-l N_parity before consuming anything.
    """
    counts = [int(c) for c in counts]
    max_level = len(counts) - 1
    if transform_state is None:
        transform_state = _shared_transform(config.family, problem, config.seed)
    n = problem.n

    for ell in range(2, max_level + 1):
        parity = ell % 2
        if counts[ell] > counts[parity] * 2.0 ** (-ell):
            raise InsufficientBaseSamples(
                f"level {ell} wants {counts[ell]} samples but the parity "
                f"quota allows {int(counts[parity] * 2.0 ** (-ell))}")

    deltas = {}
    usage = {}
    pools = {}

    def _base_sample(level, index):
        last = None
        for retry in (0, 1):
            child = rng.seed_seq(config.seed, rng.SAMPLE_STREAM, level, index, retry)
            nested = make_nested(config.family, level, n, problem.m, child,
                                 config.base_factor, problem, transform_state)
            try:
                if level == 0:
                    sa, sb, ac = nested.level(0).apply(problem.a, problem.b)
                    x, fac, _ = qr_solve(sa, sb)
                    rec = _Record(fac.r, fac.q_thin.T @ sb, x)
                    delta = LevelDelta(0, x, x, (), "recycled",
                                       qr_cost(nested.level(0).s, n),
                                       (0, index), ac)
                    return rec, delta
                op_a, op_b = nested.split(1)
                sa_a, sb_a, ca = op_a.apply(problem.a, problem.b)
                sa_b, sb_b, cb = op_b.apply(problem.a, problem.b)
                x_a, fac_a, _ = qr_solve(sa_a, sb_a)
                x_b, fac_b, _ = qr_solve(sa_b, sb_b)
                rec = _merge_records(
                    _Record(fac_a.r, fac_a.q_thin.T @ sb_a, x_a),
                    _Record(fac_b.r, fac_b.q_thin.T @ sb_b, x_b))
                delta = LevelDelta(1, rec.x - (x_a + x_b) / 2.0, rec.x,
                                   (x_a, x_b), "recycled",
                                   antithetic_cost(nested.level(1).s, n),
                                   (1, index), ca + cb)
                return rec, delta
            except RankDeficient as exc:
                last = exc
        raise last

    for parity in (0, 1):
        if parity > max_level:
            break
        pool, dl = [], []
        for i in range(counts[parity]):
            rec, delta = _base_sample(parity, i)
            pool.append(rec)
            dl.append(delta)
            usage[(parity, i)] = [parity]
        pools[parity] = pool
        deltas[parity] = dl

    base_ids = {}
    cursor = {0: 0, 1: 0}
    for ell in range(2, max_level + 1):
        parity = ell % 2
        need = 2 ** (ell - parity)
        pool = pools[parity]
        dl, ids = [], []
        for j in range(counts[ell]):
            lo = cursor[parity]
            hi = lo + need
            if hi > len(pool):
                raise InsufficientBaseSamples(
                    f"level {ell} exhausted the level-{parity} pool")
            cursor[parity] = hi
            chunk = pool[lo:hi]
            left = _merge_tree(chunk[: need // 2])
            right = _merge_tree(chunk[need // 2:])
            top = _merge_records(left, right)
            delta = LevelDelta(ell, top.x - (left.x + right.x) / 2.0, top.x,
                               (left.x, right.x), "recycled",
                               (need - 1) * merge_cost(n), (ell, j))
            dl.append(delta)
            consumed = tuple(range(lo, hi))
            ids.append(consumed)
            for k in consumed:
                usage[(parity, k)].append(ell)
        deltas[ell] = dl
        base_ids[ell] = ids

    return RecycledSamples(deltas, base_ids, usage)
