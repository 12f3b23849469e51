"""Posterior-covariance prediction and observability-aware trajectory
refinement for landmark-based estimators.

Core pieces: an interval-bundled information filter with landmark
marginalization (explicit and Lie-Taylor paths), an affine mass-coefficient
aggregation over landmark fields, differentiable trajectory objectives, a
budget-constrained local refiner, and a reproducible experiment harness.
"""

__version__ = "0.1.0"

from .geometry import (ControlInput, EstimatorState, PlantState, TimeGrid,
                       boxminus, retract)
from .dynamics import DynamicsParams, default_params, hover_control
from .sensing import (LandmarkField, OrthoCamera, OrthographicSensor,
                      finite_field, forward_camera, load_landmarks)
from .interval import IntervalFilter, UpdateOptions
from .objectives import ObjectiveSpec, Scenario, evaluate, gradient
from .refine import RefinementProblem, SolveResult, baseline_solve, refine

__all__ = [
    "ControlInput", "EstimatorState", "PlantState", "TimeGrid",
    "boxminus", "retract",
    "DynamicsParams", "default_params", "hover_control",
    "LandmarkField", "OrthoCamera", "OrthographicSensor",
    "finite_field", "forward_camera", "load_landmarks",
    "IntervalFilter", "UpdateOptions",
    "ObjectiveSpec", "Scenario", "evaluate", "gradient",
    "RefinementProblem", "SolveResult", "baseline_solve", "refine",
]
