from .arms import ArmSpec, SeedSweep, compare_arms, default_arms, median_by_value, run_arm, seed_sweep, sweep
from .engine import IterativePruner, iterative_prune, prune_once
from .iter_config import Curve, IterationState, PruneOptions, Schedule
from .objective import converged, layer_errors, perplexity, reconstruction_error
from .report import ComparisonReport, PruneReport, StepRecord, write_trace_csv
