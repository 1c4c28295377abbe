"""Structured stochastic quasi-Newton optimizers for finite-sum objectives."""
from .config import RunConfig, build_problem, engine_options, load_config, parse_config
from .engine import Engine, EngineOptions, RunRecord, compute_reference_optimum, run, step
from .errors import S2QNError
from .schedule import ScheduleConfig, lambda_k

__version__ = "0.1.0"

__all__ = [
    "Engine", "EngineOptions", "RunConfig", "RunRecord", "S2QNError", "ScheduleConfig",
    "build_problem", "compute_reference_optimum", "engine_options", "lambda_k",
    "load_config", "parse_config", "run", "step",
]
