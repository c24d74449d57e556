"""Heavy-tailed weights and compressibility: samplers, estimators, pruning, SGD and bounds."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DegenerateSampleError,
    DivergenceError,
    DomainError,
    EmptyResultError,
    FormatError,
    HtcError,
    NumericError,
    ParameterError,
    PreconditionError,
    SVDConvergenceError,
)
from .seeding import RngSeed  # noqa: E402
from .stable import (  # noqa: E402
    EllipticStableParams,
    StableParams,
    char_fn_sas,
    sample_elliptic_sas,
    sample_positive_stable,
    sample_sas,
    sigma_alpha,
)
from .tail_index import TailIndexEstimate, center_median, estimate_alpha, mean_layer_alpha  # noqa: E402
