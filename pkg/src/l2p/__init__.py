"""Linear feature-forecast caching: fixed rules, learned weights, analysis.

Forecast-style feature caching reduces to fixed linear combinations of
cached history; this package consolidates those rules, measures how
linearly representable feature trajectories actually are, trains the
per-step learnable alternative, and benchmarks everything end to end on a
seeded surrogate with honest FLOPs and cache-memory accounting.
"""

from .core import (
    CacheSchedule,
    DivergedError,
    DivergedLossError,
    FeatureTrajectory,
    HistoryUnderflowError,
    IndexOutOfRangeError,
    InsufficientHistoryError,
    InvalidSpecError,
    L2PError,
    LinearCoefficients,
    NonFiniteError,
    NonMonotoneLabelsError,
    RunMetrics,
    ShapeMismatchError,
    SingularSystemError,
    TrajectorySet,
    WeightMatrix,
    ZeroNormFeatureError,
    validate_trajectory,
)
from .equivalence import (
    MAX_CONVERSION_SIZE,
    difference_coeffs_to_weights,
    pascal_matrix,
    verify_isomorphism,
    weights_to_difference_coeffs,
)
from .io import (
    export_metrics,
    load_dataset,
    load_trajectory,
    load_weights,
    save_dataset,
    save_trajectory,
    save_weights,
)
from .learner import (
    LearnableLinearPredictor,
    TrainConfig,
    TrainReport,
    as_trajectory_set,
    eval_predictor,
    init_weights,
    predict_step,
    ridge_oracle,
    train,
)
from .predictors import (
    FocaPredictor,
    LearnedWeightPredictor,
    NaiveReusePredictor,
    TaylorPredictor,
    apply_linear,
    finite_difference,
    foca_corrected_coefficients,
    foca_predict_direct,
    foca_predictor_coefficients,
    parse_predictor_spec,
    taylor_coefficients,
    taylor_predict_direct,
)
from .projection import FidelityProfile, fidelity_profile, project_onto_history, relative_residual
from .schedule import (
    cache_memory_accounting,
    cached_rollout,
    flops_accounting,
    psnr,
    uniform_schedule,
)
from .surrogate import (
    SmoothSpec,
    ToyDenoiser,
    gen_dataset,
    gen_smooth_trajectory,
    make_toy_denoiser,
    rollout_denoiser,
)

__version__ = "0.1.0"
