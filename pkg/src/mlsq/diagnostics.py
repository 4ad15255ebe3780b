"""Level statistics, factor decomposition of the correction terms, slope
fits, cross-level correlations, and the multilevel-vs-Monte-Carlo cost
comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadDimension,
    MissingContext,
    MissingSVD,
    NonPositiveValue,
    TooFewSamples,
)
from .linalg import qr_cost, qr_solve


def a_image(problem, vectors: np.ndarray) -> np.ndarray:
    """Coordinates of A @ v for each row v, preserving inner products.

    Uses the cached SVD (Sigma V^T v) when available so norms of A v are
    computed without touching the m-dimensional image.
    """
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if problem.svd is not None:
        sv = problem.svd
        return (sv.sigma[:, None] * (sv.v.T @ vectors.T)).T
    return vectors @ problem.a.T


@dataclass
class LevelStats:
    """Summary statistics of one level's correction samples."""

    level: int
    n: int
    mode: str
    mean_delta: np.ndarray
    v_ell: float  # unbiased total variance of A delta
    alpha_ell: float  # mean ||A delta||^2
    beta_of_delta: float  # ||A mean(delta)||^2, the term inside V_ell
    beta_of_x: float  # ||A mean(fine x)||^2
    c_ell: float  # model flops per sample
    stderr_v: float


@dataclass
class FactorNorms:
    """Spectral-norm squares of the correction-term factors."""

    h_inv_sq: float  # ||H_l^{-1}||^2, H_l = (H_a + H_b)/2
    h_diff_sq: float  # ||H_a - H_b||^2
    h_b_sq: float  # ||H_b||^2
    x_ab_diff_sq: float  # ||x_a - x_b||^2
    recon_rel_err: float
    a_delta_norm: float


@dataclass
class SlopeFit:
    """OLS fit of log2(y) against x."""

    xs: np.ndarray
    ys: np.ndarray  # log2 of the measured values
    slope: float
    intercept: float
    r_squared: float


@dataclass
class CostReport:
    """Cost comparison between the multilevel and plain MC estimators."""

    eps: float
    variant: str
    v_levels: np.ndarray
    c_levels: np.ndarray
    sqrt_vc: np.ndarray
    mlsas_total: float
    v_mc: float
    c_mc: float
    mc_total: float
    verdict: str


@dataclass
class TrendResult:
    """Variance-vs-sketch-size measurement with the Gaussian bound check."""

    fit: SlopeFit
    sizes: np.ndarray
    variance: np.ndarray  # Var(A x_hat) about the sample mean
    mse: np.ndarray  # mean ||A x_hat - A x*||^2 (the bound's left side)
    bounds: np.ndarray  # n/(s-n-1) * ||A x* - b||^2
    bound_ok: np.ndarray


def level_stats(samples, problem, c_model=None) -> LevelStats:
    """Unbiased V_l with its alpha/beta decomposition.

    v_ell is computed literally as (alpha - beta_of_delta) * N/(N-1) so
    the bookkeeping identity between the stored fields is exact.
    """
    if len(samples) < 2:
        raise TooFewSamples("level statistics need at least two samples")
    level, mode = samples[0].level, samples[0].mode
    if any(s.level != level or s.mode != mode for s in samples):
        raise BadDimension("samples mix levels or modes")
    n_samp = len(samples)

    deltas = np.stack([s.delta_x for s in samples])
    fines = np.stack([s.fine_x for s in samples])
    img = a_image(problem, deltas)
    alpha = float(np.einsum("ij,ij->", img, img) / n_samp)
    beta_delta = float(np.sum(a_image(problem, deltas.mean(axis=0)[None, :]) ** 2))
    beta_x = float(np.sum(a_image(problem, fines.mean(axis=0)[None, :]) ** 2))
    v_ell = (alpha - beta_delta) * n_samp / (n_samp - 1)

    centered = img - img.mean(axis=0)
    q = np.einsum("ij,ij->i", centered, centered)
    stderr = float(np.std(q, ddof=1) / math.sqrt(n_samp) * n_samp / (n_samp - 1))
    cost = float(c_model) if c_model is not None else float(samples[0].cost)
    return LevelStats(level, n_samp, mode, deltas.mean(axis=0), v_ell,
                      alpha, beta_delta, beta_x, cost, stderr)


def factor_decomposition(sample, problem) -> FactorNorms:
    """Decompose one correction sample into its algebraic factors.

    Rebuilds A delta_x from the factors and reports the relative
    reconstruction error alongside the four spectral-norm squares.
    Requires the sample to have retained its operators.
    """
    if sample.ops is None or sample.level == 0:
        raise MissingContext("factor decomposition needs a level >= 1 sample "
                             "with retained operators")
    if problem.svd is None:
        raise MissingSVD("factor decomposition needs the cached thin SVD")
    _, op_a, op_b = sample.ops
    sv = problem.svd

    w_a, _ = op_a.apply_to(sv.u)
    w_b, _ = op_b.apply_to(sv.u)
    h_a = w_a.T @ w_a
    h_b = w_b.T @ w_b
    m_sum = h_a + h_b

    h_inv_sq = float(np.linalg.norm(2.0 * np.linalg.inv(m_sum), 2) ** 2)
    h_diff_sq = float(np.linalg.norm(h_a - h_b, 2) ** 2)
    h_b_sq = float(np.linalg.norm(h_b, 2) ** 2)

    if len(sample.coarse_parts) == 2:
        x_a, x_b = sample.coarse_parts
    else:  # plain sample: solve the unused half for the audit
        (x_a,) = sample.coarse_parts
        sb_a, sb_b, _ = op_b.apply(problem.a, problem.b)
        x_b, _, _ = qr_solve(sb_a, sb_b)
    x_ab_diff_sq = float(np.sum((x_a - x_b) ** 2))

    if sample.mode == "plain":
        t = sv.sigma * (sv.v.T @ (x_b - x_a))
        recon = sv.u @ np.linalg.solve(m_sum, h_b @ t)
    else:
        t = sv.sigma * (sv.v.T @ (x_a - x_b))
        recon = 0.5 * (sv.u @ np.linalg.solve(m_sum, (h_a - h_b) @ t))

    a_delta = problem.a @ sample.delta_x
    norm = float(np.linalg.norm(a_delta))
    err = float(np.linalg.norm(a_delta - recon))
    rel = err / norm if norm > 0 else err
    return FactorNorms(h_inv_sq, h_diff_sq, h_b_sq, x_ab_diff_sq, rel, norm)


def fit_slope(xs, ys) -> SlopeFit:
    """OLS fit of log2(ys) on xs; raises on nonpositive measurements."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size < 3:
        raise TooFewSamples("slope fits need at least three points")
    if np.any(ys <= 0):
        raise NonPositiveValue("log2 fit needs positive values")
    logy = np.log2(ys)
    slope, intercept = np.polyfit(xs, logy, 1)
    pred = slope * xs + intercept
    ss_res = float(np.sum((logy - pred) ** 2))
    ss_tot = float(np.sum((logy - logy.mean()) ** 2))
    r_sq = 1.0 if ss_tot == 0 else max(0.0, 1.0 - ss_res / ss_tot)
    return SlopeFit(xs, logy, float(slope), float(intercept), r_sq)


def _trace_correlation(x, y):
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    num = float(np.einsum("ij,ij->", xc, yc))
    den = math.sqrt(float(np.einsum("ij,ij->", xc, xc)) *
                    float(np.einsum("ij,ij->", yc, yc)))
    return num / den if den > 0 else 0.0


def cross_level_correlation(deltas_lo, deltas_hi, problem):
    """Scalar correlations (for delta x and A delta x) of paired samples.

    Scalarized as trace(Cov(X,Y)) / sqrt(trace(Cov(X,X)) trace(Cov(Y,Y))).
    """
    if len(deltas_lo) != len(deltas_hi):
        raise BadDimension("pairing requires equally many samples")
    if len(deltas_lo) < 30:
        raise TooFewSamples("need at least 30 pairs")
    x = np.stack([s.delta_x for s in deltas_lo])
    y = np.stack([s.delta_x for s in deltas_hi])
    rho_x = _trace_correlation(x, y)
    rho_ax = _trace_correlation(a_image(problem, x), a_image(problem, y))
    return rho_x, rho_ax


def recycled_level_costs(n: int, num_levels: int) -> np.ndarray:
    """Pinned per-sample cost model of the recycling scheme (s_0 = 4n):
    C_0 = 22 n^3 / 3, C_1 = 18 n^3, C_l = 10 n^3 / 3 for l >= 2."""
    n3 = float(n) ** 3
    costs = [22.0 * n3 / 3.0, 18.0 * n3] + [10.0 * n3 / 3.0] * max(num_levels - 2, 0)
    return np.array(costs[:num_levels])


def recycled_cost_chain(v0: float, n: int, max_level: int):
    """Closed-form eps^2-scaled totals under the analytic variance model.

    With V_l = 4^-l V_0 and the rounded recycled costs (7 n^3, 18 n^3,
    3 n^3), the multilevel total is
    n^3 V_0 (sqrt(7) + sqrt(4.5) + (sqrt(3)/2)(1 - 2^(1-L)))^2, while the
    plain MC side collapses to 2^-L V_0 * 2^(L+3) n^3 = 8 n^3 V_0.
    """
    n3 = float(n) ** 3
    terms = [math.sqrt(v0 * 7.0 * n3)]
    if max_level >= 1:
        terms.append(math.sqrt((v0 / 4.0) * 18.0 * n3))
    for ell in range(2, max_level + 1):
        terms.append(2.0 ** (-ell) * math.sqrt(3.0 * v0 * n3))
    mlsas_total = sum(terms) ** 2
    mc_total = (2.0 ** (-max_level) * v0) * (2.0 ** (max_level + 3) * n3)
    return mlsas_total, mc_total


def cost_compare(v_levels, c_levels, eps, v_mc, c_mc, variant="classic") -> CostReport:
    """Evaluate both estimators' total cost at target RMSE ``eps``.

    The multilevel side is eps^-2 (sum_l sqrt(V_l C_l))^2; the MC side is
    eps^-2 V_L^MC C_L^MC at the matching bias level.  ``variant`` labels
    which per-sample cost model produced ``c_levels``.
    """
    v_levels = np.asarray(v_levels, dtype=np.float64)
    c_levels = np.asarray(c_levels, dtype=np.float64)
    if np.any(v_levels <= 0) or np.any(c_levels <= 0) or v_mc <= 0 or c_mc <= 0:
        raise NonPositiveValue("cost comparison needs positive variances and costs")
    sqrt_vc = np.sqrt(v_levels * c_levels)
    mlsas_total = float(sqrt_vc.sum() ** 2 / eps**2)
    mc_total = float(v_mc * c_mc / eps**2)
    if mlsas_total > mc_total:
        verdict = "mlsas_more_expensive"
    elif mlsas_total < mc_total:
        verdict = "mc_more_expensive"
    else:
        verdict = "equal"
    return CostReport(eps, variant, v_levels, c_levels, sqrt_vc,
                      mlsas_total, float(v_mc), float(c_mc), mc_total, verdict)


def mc_variance_trend(problem, family, sizes, n_samples, seed) -> TrendResult:
    """Variance of the SAS estimate across sketch sizes, with the
    n/(s-n-1) ||A x* - b||^2 reference bound evaluated at each size."""
    from . import rng as _rng
    from .estimators import sas_solve
    from .sketch import _realize, make_transform_state

    sizes = np.asarray(sizes, dtype=np.int64)
    n = problem.n
    if np.any(np.diff(sizes) <= 0):
        raise BadDimension("sizes must be strictly increasing")
    if np.any(sizes <= n + 1):
        raise BadDimension("every size must exceed n + 1")
    if problem.x_star is None or problem.residual_star is None:
        raise MissingSVD("trend needs the cached exact solution")

    transform_state = None
    if family.needs_transform:
        transform_state = make_transform_state(
            family, problem.m, _rng.stream(seed, _rng.TRANSFORM_STREAM))
    exact_img = a_image(problem, problem.x_star[None, :])[0]

    variance = np.empty(len(sizes))
    mse = np.empty(len(sizes))
    bounds = np.empty(len(sizes))
    for k, s in enumerate(sizes):
        xs = np.empty((n_samples, n))
        for i in range(n_samples):
            gen_seed = _rng.seed_seq(seed, _rng.SAMPLE_STREAM, k, i)
            op = _realize(family, int(s), problem.m, _rng.stream(gen_seed, 0),
                          problem, transform_state)
            xs[i], _ = sas_solve(problem, op)
        img = a_image(problem, xs)
        centered = img - img.mean(axis=0)
        variance[k] = np.einsum("ij,ij->", centered, centered) / (n_samples - 1)
        dev = img - exact_img
        mse[k] = np.einsum("ij,ij->", dev, dev) / n_samples
        bounds[k] = n / (s - n - 1) * problem.residual_star**2

    fit = fit_slope(np.log2(sizes.astype(float)), variance)
    return TrendResult(fit, sizes, variance, mse, bounds, mse <= 1.2 * bounds)
