"""Multilevel sketch-and-solve least squares (mlsq).

Library layout:

* ``linalg``      dense QR/SVD kernels, merge solve, flop model
* ``problems``    test-problem generation, loading, exact references
* ``sketch``      nested splittable sketch operators, leverage scores
* ``estimators``  SAS, Monte Carlo averaging, multilevel estimators
* ``diagnostics`` level statistics, factor decomposition, cost reports
* ``cli``         experiment recipes (``mlsq`` console script)
"""

from .errors import (
    AllocationInfeasible,
    BadDimension,
    ConvergenceFailure,
    InsufficientBaseSamples,
    InvalidSpec,
    LevelTooLarge,
    MissingContext,
    MissingSVD,
    MlsqError,
    NonPositiveValue,
    RankDeficient,
    TooFewSamples,
)
from .linalg import (
    FlopCounter,
    QRFactors,
    ThinSVD,
    merge_cost,
    merge_solve,
    qr_cost,
    qr_solve,
    residual_norm,
    thin_svd,
)
from .problems import LSProblem, ProblemSpec, benchmark_spec, coherence, exact_solve, generate
from .sketch import (
    GAUSSIAN,
    LEVERAGE,
    LEVERAGE_AUGMENTED,
    SRHT,
    SRTT,
    UNIFORM,
    UNIFORM_NO_REPLACEMENT,
    NestedSketch,
    SketchFamily,
    SketchOperator,
    approx_leverage_scores,
    embedding_distortion,
    leverage_scores,
    make_nested,
    make_operator,
    stack_operators,
)
from .estimators import (
    EstimatorConfig,
    LevelDelta,
    MLSASResult,
    RecycledSamples,
    adaptive_mlsas,
    bias_bound,
    collect_deltas,
    delta_from_operators,
    draw_delta,
    mc_average,
    mlsas_estimate,
    optimal_allocation,
    recycled_sampler,
    sample_delta,
    sas_solve,
)
from .diagnostics import (
    CostReport,
    FactorNorms,
    LevelStats,
    SlopeFit,
    cost_compare,
    cross_level_correlation,
    factor_decomposition,
    fit_slope,
    level_stats,
    mc_variance_trend,
    recycled_cost_chain,
    recycled_level_costs,
)

__version__ = "0.1.0"
