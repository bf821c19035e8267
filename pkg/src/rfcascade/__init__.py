"""Affine Gaussian and spatio-temporal receptive fields with cascade smoothing."""
from .params import (CovMat2, SpatialParams, STParams, cov_from_axes, eccentricity, joint_cov,
                     match_spatial, match_spatiotemporal, psd_check)

__all__ = ["CovMat2", "SpatialParams", "STParams", "cov_from_axes", "eccentricity", "joint_cov",
           "match_spatial", "match_spatiotemporal", "psd_check"]
__version__ = "0.1.0"
