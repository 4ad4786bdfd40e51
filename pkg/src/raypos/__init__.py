"""Bayesian reverse ray tracing for AoA-based indoor positioning."""

from .aoa import (AngleDistribution, BaseStation, CalibrationTable, Measurement,
                  derive_rng, establish_true_aoa, posterior, sample_measurement)
from .errors import (CalibrationMissing, ConfigError, EmptyResults, EmptyScore,
                     NoCellScored, OriginOutsideScene, RayposError, SceneLoadError)
from .estimator import (AngleSampleSet, CellScore, PositionEstimate, estimate, locate,
                        sample_angles_benchmark, sample_angles_mc, sample_angles_uniform,
                        score_grid)
from .evaluation import CampaignConfig, CdfSummary, TrialResult, run_campaign, summarize
from .geometry import Hit, Ray, Scene, Triangle, intersect, load_scene, reflect
from .rays import CellGrid, LaunchAngle, RayPath, cells_crossed, trace

__version__ = "0.1.0"

__all__ = [
    "AngleDistribution", "BaseStation", "CalibrationTable", "Measurement", "derive_rng",
    "establish_true_aoa", "posterior", "sample_measurement",
    "CalibrationMissing", "ConfigError", "EmptyResults", "EmptyScore", "NoCellScored",
    "OriginOutsideScene", "RayposError", "SceneLoadError",
    "AngleSampleSet", "CellScore", "PositionEstimate", "estimate", "locate",
    "sample_angles_benchmark", "sample_angles_mc", "sample_angles_uniform", "score_grid",
    "CampaignConfig", "CdfSummary", "TrialResult", "run_campaign", "summarize",
    "Hit", "Ray", "Scene", "Triangle", "intersect", "load_scene", "reflect",
    "CellGrid", "LaunchAngle", "RayPath", "cells_crossed", "trace",
]
