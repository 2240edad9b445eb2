"""Simulation of a 1-bit reconfigurable surface steering a mmWave link, with an emulated control loop."""

from .phy import (Codebook, Codeword, RisAperture, SteeringPair, array_factor, beam_metrics, build_codebook,
                  optimize_pre_phase, synthesize_codeword)
from .link import (LinkGeometry, RadioConfig, bistatic_rcs, joint_beam_search, monostatic_rcs, received_power,
                   synthesize_channels)
from .scenario import ScenarioConfig, Trajectory, load_scenario, position_at

__version__ = "0.1.0"

__all__ = [
    "Codebook", "Codeword", "RisAperture", "SteeringPair", "array_factor", "beam_metrics", "build_codebook",
    "optimize_pre_phase", "synthesize_codeword", "LinkGeometry", "RadioConfig", "bistatic_rcs",
    "joint_beam_search", "monostatic_rcs", "received_power", "synthesize_channels", "ScenarioConfig",
    "Trajectory", "load_scenario", "position_at",
]
