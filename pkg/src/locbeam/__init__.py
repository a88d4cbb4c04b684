"""Transmit beamforming for joint data transmission and localization.

Minimizes total BS transmit power subject to per-MS rate floors and
Cramer-Rao-bound localization caps, for flat and OFDM channels, TOA and TDOA
timing, nominal and worst-case (robust) parameter knowledge.  Ships its own
small dense cone-program solver (PSD + exponential cones) and independent
full-Fisher-information oracles for validation.
"""

from . import channel, conic, fim, harness, optimizer, rate, scene
from .optimizer import Scenario, SolveReport, SolverOptions, solve_scenario

__all__ = [
    "channel", "conic", "fim", "harness", "optimizer", "rate", "scene",
    "Scenario", "SolveReport", "SolverOptions", "solve_scenario",
]

__version__ = "0.1.0"
