"""Exact simulation and verification of the fixed-size beneficial-mutation wave."""

__version__ = "0.1.0"

from .errors import (
    AdaptwaveError,
    ConfigError,
    DegeneratePopulation,
    InsufficientResolution,
    InvalidEvent,
    InvalidGrid,
    InvalidParams,
    QueryOutOfRange,
    TooFewTypes,
)
from .model import ModelParams, PopulationState, mean_mutations
from .engine import RunSchedule, Trajectory, run, seed_for_replicate
from .renewal import TheoryCurves, cached_curves, renewal_oracle, solve_curves, solve_m, solve_q
from .theory import Scales, predictions, scales, summary
from .observables import WaveRecord, martingale_Z, supermartingale_Y, wave_observables
from .experiments import EnsembleReport, ExperimentConfig, run_ensemble, verify
