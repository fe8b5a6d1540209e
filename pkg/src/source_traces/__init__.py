"""Tabular value learning with source traces: exact oracles, incremental
learners, benchmark environments and a seeded experiment harness."""

from .envs import EnvSpec, Trajectory, Transition, derive_seed, make_env, sample_step, sample_trajectory, stream
from .errors import (ConfigError, DimensionMismatch, Divergence, EmptyGrid, EmptyMemory, GenerationFailure,
                     InvalidMrp, InvalidStep, SingularSystem, SourceTracesError)
from .harness import (ExperimentConfig, RunRecord, best_of_grid, load_config, parse_config, run_experiment,
                      steps_to_target)
from .learners import Algorithm, Learner, LearnerConfig, LearnerState
from .mrp import (Mrp, SourceMap, exact_source_map, exact_value, full_expected_backup, lambda_source_map,
                  norm_defect, nstep_source_map, partial_source_map, partial_trace_bound)
from .replay import ReplayMemory, replay_step
from .schedules import Schedule, annealed, fixed, harmonic, parse_schedule

__version__ = "0.1.0"
