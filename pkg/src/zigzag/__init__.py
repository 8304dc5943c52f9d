"""Exact Zig-Zag sampling with sub-sampling and control variates."""

from .core import (
    EvalCounter,
    ModelEvaluationError,
    PhaseState,
    RefreshRates,
    Skeleton,
    SkeletonPoint,
    TargetModel,
    canonical_rate,
    flip,
    position_at,
    positions_at,
    validate_skeleton,
)
from .poisson import (
    NEVER,
    AffinePlus,
    Constant,
    HorizonConst,
    HorizonError,
    HorizonExhausted,
    MinConstAffine,
    RateBound,
    bound_value,
    first_event_time,
    integrated_rate,
)
from .samplers import (
    BoundViolation,
    ConfigurationError,
    MaxEpochs,
    MaxProposals,
    MaxTime,
    NoEventError,
    ReferencePoint,
    RunReport,
    find_reference,
    make_rng,
    simulate_zz,
    simulate_zz_cv,
    simulate_zz_hessian,
    simulate_zz_ss,
)
from .models import (
    CauchyModel,
    GaussianMeanModel,
    LogisticModel,
    NonIdentifiableLogisticModel,
    ProductGaussianModel,
    synth_gaussian,
    synth_logistic,
    synth_nonident,
)

__version__ = "0.1.0"
