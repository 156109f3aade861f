"""Collision-probability estimation for linear stochastic vehicles: brute-force MC and FDMC."""

from fdmc.errors import (
    DegeneratePopulationError,
    DimensionError,
    DomainError,
    FdmcError,
    NotPSDError,
    NumericalError,
    ScenarioError,
    UnsupportedModelError,
)
from fdmc.estimators import EstimateResult, fdmc_estimate, mc_estimate
from fdmc.linalg import Ellipsoid, GaussianDist, chol, dist_point_to_ellipsoid, gram_integral, mat_exp
from fdmc.process import ChannelModel, ChannelSet, FddGaussian, LinearSde, build_fdd, channel_moments, sde_moments
from fdmc.sampling import ObstacleTrack, PlanMode, SamplingPlan, equidistant_plan, equitime_plan, importance_filter
from fdmc.scenario import RunReport, Scenario, emit_plot_data, emit_results, parse_scenario, run_benchmark

__version__ = "0.1.0"
