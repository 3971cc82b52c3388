"""Binaural MWF with interaural-coherence preservation, solved per frequency bin."""

from .beamformer import BinProblem, FilterPair, Variant
from .optimizer import SolveConfig, solve_all_bins, solve_bin
from .pipeline import ExperimentConfig, run_experiment, summarize
from .scene import ArrayGeometry, ScenarioSpec, build_scene
from .stft import StftConfig, analyze, synthesize

__version__ = "0.1.0"

__all__ = ["ArrayGeometry", "BinProblem", "ExperimentConfig", "FilterPair", "ScenarioSpec",
           "SolveConfig", "StftConfig", "Variant", "analyze", "build_scene", "run_experiment",
           "solve_all_bins", "solve_bin", "summarize", "synthesize"]
