"""Deep Taylor explanations of small 3D-CNN video classifiers and their temporal biases."""

from .analysis import fit_linear, fit_quadratic, mean_profile, sweep_offset, sweep_step, temporal_profile
from .network import NetworkSpec, forward, gradient, mini_c3d, predict
from .relevance import RelevanceConfig, dtd_explain, sensitivity_explain
from .sampler import SnippetSpec, Video, extract_snippet, offset_schedule, step_schedule

__all__ = [
    "NetworkSpec", "RelevanceConfig", "SnippetSpec", "Video",
    "dtd_explain", "extract_snippet", "fit_linear", "fit_quadratic", "forward", "gradient",
    "mean_profile", "mini_c3d", "offset_schedule", "predict", "sensitivity_explain",
    "step_schedule", "sweep_offset", "sweep_step", "temporal_profile",
]
__version__ = "0.1.0"
