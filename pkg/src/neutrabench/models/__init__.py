from neutrabench.models.base import DensityTarget, PosteriorModel
from neutrabench.models.densities import normal_log_pdf, poisson_log_pmf, truncnorm_log_pdf
from neutrabench.models.gaussian_fit import (
    GaussianFitModel,
    gaussian_fit_log_density,
    load_reference_dataset,
    make_dataset,
    reference_model,
)
from neutrabench.models.nsi import (
    NsiCouplings,
    NsiModel,
    NsiObservation,
    NsiParameters,
    RatePlugin,
    SurrogateRate,
    nsi_log_density,
    nsi_sphere_to_cartesian,
)
from neutrabench.models.transforms import (
    AffineTransform,
    GaussianQuantileTransform,
    IdentityTransform,
    LogisticTransform,
    SigmoidTransform,
    logistic_transform,
)

__all__ = [
    "AffineTransform",
    "DensityTarget",
    "GaussianFitModel",
    "GaussianQuantileTransform",
    "IdentityTransform",
    "LogisticTransform",
    "NsiCouplings",
    "NsiModel",
    "NsiObservation",
    "NsiParameters",
    "PosteriorModel",
    "RatePlugin",
    "SigmoidTransform",
    "SurrogateRate",
    "gaussian_fit_log_density",
    "load_reference_dataset",
    "logistic_transform",
    "make_dataset",
    "normal_log_pdf",
    "nsi_log_density",
    "nsi_sphere_to_cartesian",
    "poisson_log_pmf",
    "reference_model",
    "truncnorm_log_pdf",
]
