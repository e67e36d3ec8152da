"""Provably robust conformal prediction at desk scale.

Vanilla split conformal prediction, certified robust prediction sets built
on Monte-Carlo smoothed scores with concentration bounds, a rank-then-
sigmoid score transform that keeps the robust sets small, a differentiable
robust-training loop for linear-softmax models, and a closed-form 1-D
oracle used as ground truth throughout the test suite.
"""

__version__ = "0.1.0"

from .calibrate import (  # noqa: F401
    PredictionSet,
    Threshold,
    conformal_quantile,
    evaluate,
    predict_set,
    predict_sets,
)
from .errors import (  # noqa: F401
    ConfigError,
    DataError,
    NumericError,
    ParseError,
    TrainingDivergedError,
)
from .robust import (  # noqa: F401
    CalibrationArtifact,
    rscp_plus_calibrate,
    rscp_plus_set,
    rscp_set,
    rscp_threshold,
)
from .scores import (  # noqa: F401
    BlobSpec,
    LabeledDataset,
    LinearSoftmaxModel,
    aps_score,
    hps_score,
    make_blobs,
    score_matrix,
    train_blob_classifier,
)
from .smoothing import (  # noqa: F401
    BoundSpec,
    GaussianNoiseSpec,
    ScoreSamples,
    bernstein_bound,
    hoeffding_bound,
    mc_mean,
    mc_score_samples,
    mc_variance,
    smoothed_tilde,
    std_normal_cdf,
    std_normal_inv_cdf,
)
