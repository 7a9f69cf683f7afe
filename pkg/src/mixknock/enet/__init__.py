from .solver import (
    CvResult,
    DesignSpec,
    ElasticNetFit,
    cross_validate,
    fit_cv,
    fit_path,
    kkt_violation,
    lambda_grid_for,
    predict,
    residual_variance,
)

__all__ = [
    "CvResult",
    "DesignSpec",
    "ElasticNetFit",
    "cross_validate",
    "fit_cv",
    "fit_path",
    "kkt_violation",
    "lambda_grid_for",
    "predict",
    "residual_variance",
]
