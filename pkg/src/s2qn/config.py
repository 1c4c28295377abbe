"""Run configuration: a versioned JSON document validated with pydantic."""
import json
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .engine import METHODS, EngineOptions
from .errors import ConfigError
from .refinement import GAMMA_RULES, P_CHOICES, SketchConfig
from .schedule import AlphaRule, BatchRule, ScheduleConfig

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SynthLogistic(_Strict):
    kind: Literal["synth-logistic"] = "synth-logistic"
    n: int = Field(100, ge=2)
    N: int = Field(2000, ge=2)
    profile: Literal["isotropic", "graded", "whitened"] = "isotropic"
    seed: int = 0
    theta_scale: float = 1.0
    feature_scale: float = 1.0
    condition: float = Field(100.0, gt=0)
    mu: float = Field(1e-3, ge=0)
    normalize: bool = False


class LibsvmProblem(_Strict):
    kind: Literal["libsvm"] = "libsvm"
    path: str
    n_features: int | None = None
    sort_indices: bool = False
    mu: float = Field(1e-3, ge=0)
    normalize: bool = True


class CurvesMLP(_Strict):
    kind: Literal["curves-mlp"] = "curves-mlp"
    seed: int = 0
    n_samples: int = Field(500, ge=2, le=2000)
    size: int = Field(8, ge=2)
    hidden: list[int] = [16]
    activation: Literal["sigmoid", "relu"] = "sigmoid"
    loss: Literal["cross-entropy", "square"] = "cross-entropy"
    weight_decay: float = Field(0.0, ge=0)


class ConvMaps(_Strict):
    kind: Literal["conv"] = "conv"
    seed: int = 0
    N: int = Field(64, ge=2)
    in_channels: int = Field(2, ge=1)
    out_channels: int = Field(3, ge=1)
    K: int = Field(1, ge=0)
    height: int = Field(6, ge=1)
    width: int = Field(6, ge=1)
    loss: Literal["square", "cross-entropy"] = "square"
    noise: float = Field(0.1, ge=0)


ProblemSpec = Annotated[Union[SynthLogistic, LibsvmProblem, CurvesMLP, ConvMaps], Field(discriminator="kind")]


class BatchSpec(_Strict):
    kind: Literal["constant", "geometric", "superlinear"] = "constant"
    s0: int = Field(32, ge=1)
    ratio: float = Field(2.0, ge=1.0)


class AlphaSpec(_Strict):
    kind: Literal["constant", "polynomial"] = "constant"
    value: float = Field(0.1, gt=0)
    power: float = Field(0.5, gt=0, le=1)


class ScheduleSpec(_Strict):
    r1: float = Field(1e-3, gt=0)
    r2: float = Field(1.0, gt=0)
    alpha: AlphaSpec = AlphaSpec()
    beta: float = Field(1.0, gt=0)
    theory: bool = False
    L_psi: float = Field(1.0, ge=1.0)
    h: float = Field(1.0, gt=0)
    c: float = Field(1.0, gt=0)
    grad_batch: BatchSpec = BatchSpec()
    hess_batch: BatchSpec = BatchSpec()
    lambda_mode: Literal["adaptive", "fixed"] = "adaptive"
    lambda_fixed: float = Field(1e-10, gt=0)

    @model_validator(mode="after")
    def _thresholds(self):
        if not self.r1 < self.r2:
            raise ValueError(f"need r1 < r2, got r1={self.r1}, r2={self.r2}")
        return self


class SketchSpec(_Strict):
    dim: int = Field(ge=1)
    distribution: Literal["gaussian", "row-subsample"] = "gaussian"


class RefinementSpec(_Strict):
    memory: int = Field(5, ge=1)
    eps_b: float = Field(1e-8, gt=0)
    damping: bool = True
    pair_mode: Literal["secant", "structured"] = "secant"
    strict_refresh: bool = False
    gamma_rule: Literal[GAMMA_RULES] = "vv/uv"
    p_choice: Literal[P_CHOICES] = "sym"
    block_init: float = Field(1e-3, gt=0)
    sketch: SketchSpec | None = None


class SolverSpec(_Strict):
    kron_mode: Literal["exact", "pi"] = "exact"
    spatial_average: bool = True


class InitSpec(_Strict):
    kind: Literal["zeros", "random"] = "zeros"
    seed: int = 0


class BudgetSpec(_Strict):
    max_epochs: float = Field(10.0, ge=0)
    max_iters: int | None = Field(None, ge=0)
    tol: float = Field(0.0, ge=0)
    probe_interval: float = Field(0.0, ge=0)
    wall_budget: float | None = Field(None, gt=0)


class RunConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    name: str = "run"
    problem: ProblemSpec = SynthLogistic()
    method: Literal[METHODS] = "s4qn"
    base: Literal["hessian", "ggn", "efim", "efim-lowrank", "kfac"] | None = None
    schedule: ScheduleSpec = ScheduleSpec()
    refinement: RefinementSpec = RefinementSpec()
    solver: SolverSpec = SolverSpec()
    init: InitSpec = InitSpec()
    budget: BudgetSpec = BudgetSpec()
    seed: int = 0
    reference_optimum: bool = True
    timing: bool = False
    output_dir: str | None = None

    @model_validator(mode="after")
    def _compatible(self):
        net = self.problem.kind in ("curves-mlp", "conv")
        base = self.resolved_base
        if self.method.startswith("skqn"):
            if not net:
                raise ValueError(f"{self.method} needs a network problem")
            if base != "kfac":
                raise ValueError(f"{self.method} needs the kfac base")
        if self.method == "s4qn" and base != "hessian":
            raise ValueError("s4qn uses the subsampled Hessian base")
        if self.method == "sgd-baseline" and self.base is not None:
            raise ValueError("sgd-baseline takes no base matrix")
        if base == "hessian" and self.problem.kind == "curves-mlp":
            raise ValueError("the MLP problem has no exact Hessian; use ggn, efim or kfac")
        if base == "kfac" and not net:
            raise ValueError("the kfac base needs a network problem")
        if self.refinement.pair_mode == "structured" and self.method not in ("s4qn", "s2qn", "skqn-l"):
            raise ValueError("structured pairs apply to vector refinements only")
        return self

    @property
    def resolved_base(self):
        if self.method == "sgd-baseline":
            return None
        from .engine import DEFAULT_BASE

        return self.base or DEFAULT_BASE[self.method]


def load_config(path, seed=None, output_dir=None):
    """Read and validate a config file; ``seed`` and ``output_dir`` override."""
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found", code="config-missing") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})", code="config-json") from None
    return parse_config(raw, seed=seed, output_dir=output_dir)


def parse_config(raw, seed=None, output_dir=None):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", code="config-invalid")
    if "schema_version" not in raw:
        raise ConfigError("config lacks schema_version", code="config-schema")
    if seed is not None:
        raw = {**raw, "seed": int(seed)}
    if output_dir is not None:
        raw = {**raw, "output_dir": str(output_dir)}
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(x) for x in first["loc"]) or "<root>"
        raise ConfigError(f"{where}: {first['msg']} ({exc.error_count()} error(s))",
                          code="config-invalid") from None


def resolved_dict(cfg):
    return cfg.model_dump(mode="json")


def schedule_from(spec):
    return ScheduleConfig(
        r1=spec.r1, r2=spec.r2,
        alpha=AlphaRule(spec.alpha.kind, spec.alpha.value, spec.alpha.power),
        beta=spec.beta, theory=spec.theory, L_psi=spec.L_psi, h=spec.h, c=spec.c,
        grad_batch=BatchRule(spec.grad_batch.kind, spec.grad_batch.s0, spec.grad_batch.ratio),
        hess_batch=BatchRule(spec.hess_batch.kind, spec.hess_batch.s0, spec.hess_batch.ratio),
    )


def engine_options(cfg):
    ref, sol, bud, sch = cfg.refinement, cfg.solver, cfg.budget, cfg.schedule
    sketch = None
    if ref.sketch is not None:
        sketch = SketchConfig(ref.sketch.dim, ref.sketch.distribution, cfg.seed)
    return EngineOptions(
        method=cfg.method, base=cfg.base, memory=ref.memory, eps_b=ref.eps_b, damping=ref.damping,
        pair_mode=ref.pair_mode, strict_refresh=ref.strict_refresh, gamma_rule=ref.gamma_rule,
        p_choice=ref.p_choice, sketch=sketch, block_init=ref.block_init, kron_mode=sol.kron_mode,
        spatial_average=sol.spatial_average, lambda_mode=sch.lambda_mode, lambda_fixed=sch.lambda_fixed,
        schedule=schedule_from(sch), seed=cfg.seed, max_epochs=bud.max_epochs, max_iters=bud.max_iters,
        tol=bud.tol, probe_interval=bud.probe_interval, wall_budget=bud.wall_budget,
        record_time=cfg.timing,
    )


def build_problem(cfg):
    """Instantiate the problem and the starting point named by the config."""
    from . import dataio
    from .models import ConvLayerSpec, ConvProblem, LogisticRegressionProblem, MLPProblem

    spec = cfg.problem
    if spec.kind in ("synth-logistic", "libsvm"):
        if spec.kind == "synth-logistic":
            ds, _ = dataio.synth_logistic(spec.n, spec.N, spec.profile, spec.seed, spec.theta_scale,
                                          spec.feature_scale, spec.condition)
        else:
            ds = dataio.read_libsvm(spec.path, spec.n_features, spec.sort_indices)
        if spec.normalize:
            ds = dataio.normalize_maxabs(ds)
        problem = LogisticRegressionProblem(ds.features, ds.labels, spec.mu)
    elif spec.kind == "curves-mlp":
        ds = dataio.synth_curves_toy(spec.seed, spec.n_samples, spec.size)
        dims = [ds.n, *spec.hidden, ds.n]
        problem = MLPProblem(ds.features, ds.labels, dims, spec.activation, spec.loss, spec.weight_decay)
    else:
        layer = ConvLayerSpec(spec.in_channels, spec.out_channels, spec.K, spec.height, spec.width)
        a, targets, _ = dataio.synth_conv_maps(layer, spec.N, spec.seed, spec.noise, spec.loss)
        problem = ConvProblem(layer, a, targets, spec.loss)
    if cfg.init.kind == "zeros":
        theta0 = np.zeros(problem.n_params)
    elif hasattr(problem, "init_params"):
        theta0 = problem.init_params(cfg.init.seed)
    else:
        theta0 = np.random.default_rng(cfg.init.seed).standard_normal(problem.n_params) * 0.01
    return problem, theta0
