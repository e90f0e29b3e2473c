"""Robust joint content placement and active/passive beamforming for an
IRS-aided multi-user downlink with bounded cascaded-channel errors."""

from .beamforming import (
    AoConfig, BeamformingState, CcpConfig, ConvergenceReport, InitializationError, alternating_optimize,
    initialize_state, passive_step, precoder_step, robust_feasibility,
)
from .cache import CachePlacement, backhaul_cost, solve_content_placement, zipf_popularity
from .channel import ChannelScene, SceneConfig, cascaded_channel, error_radius, generate_scene, inverse_chi2_cdf
from .harness import ExperimentConfig, ExperimentRecord, emit_results, network_cost, run_experiment
from .lmi import LmiBlock, SlackSet, TaylorCoefficients, taylor_coefficients
from .robustness import RobustnessReport, empirical_outage, rate_under_error, worst_case_certificate

__version__ = "0.1.0"
