"""Turning a configuration into pipeline, data and method calls."""

from __future__ import annotations

import time
from concurrent.futures import Executor
from dataclasses import dataclass

import numpy as np

from .. import trainer as tr
from ..baselines import BrsConfig, FixedBetaConfig, brs_run, fixed_beta_run
from ..fd_jacobian import ProbeConfig
from ..generator.pipeline import CsgPipeline, Pipeline
from ..generator.sampling import SeedString, stream_id
from ..generator.toy import ToyPipeline
from ..optimizer import HybridConfig, OptimizerState
from ..optimizer import run as hybrid_run
from .config import BetaSpec, ExperimentConfig


@dataclass
class Experiment:
    config: ExperimentConfig
    pipeline: Pipeline
    target_beta: np.ndarray
    start_beta: np.ndarray
    validation: tr.ValidationSet
    weights0: tr.ModelParams


def make_pipeline(config: ExperimentConfig) -> Pipeline:
    p = config.pipeline
    if p.kind == "toy":
        return ToyPipeline(resolution=tuple(p.resolution))
    return CsgPipeline(resolution=tuple(p.resolution), task=p.task, depth_cap=p.depth_cap,
                       frame_scale=p.frame_scale)


def resolve_beta(spec: BetaSpec, layout, target: np.ndarray | None = None) -> np.ndarray:
    if spec.base == "target":
        if target is None:
            raise ValueError("a target-relative vector needs the target")
        beta = np.array(target, dtype=np.float64)
    else:
        beta = layout.default().values.copy()
    for name, value in spec.values.items():
        beta[layout.index(name)] = value
    for name, value in spec.offsets.items():
        beta[layout.index(name)] += value
    return layout.clip(beta)


def validation_seeds(config: ExperimentConfig) -> list[SeedString]:
    stream = stream_id("validation", config.target.validation_seed)
    return [SeedString(stream, i) for i in range(config.target.validation_size)]


def model_config(config: ExperimentConfig, pipeline: Pipeline) -> tr.ModelConfig:
    return tr.ModelConfig(
        image_shape=tuple(pipeline.image_shape),
        out_channels=pipeline.target_shape[-1],
        hidden=config.model.hidden,
        init_scale=config.model.init_scale,
        task=config.pipeline.task,
    )


def build(config: ExperimentConfig) -> Experiment:
    pipeline = make_pipeline(config)
    layout = pipeline.layout
    target = resolve_beta(config.target.beta, layout)
    start = resolve_beta(config.start, layout, target)
    samples = [pipeline(target, r) for r in validation_seeds(config)]
    validation = tr.ValidationSet.from_samples(samples)
    weights0 = tr.init_model(model_config(config, pipeline), stream_id("init", config.seed) >> 1)
    return Experiment(config, pipeline, target, start, validation, weights0)


def hybrid_config(config: ExperimentConfig) -> HybridConfig:
    h, p = config.hybrid, config.probe
    return HybridConfig(
        n=h.n, gamma=h.gamma, rho=h.rho, eps=h.eps, steps=h.steps, seed=config.seed,
        jacobian=h.jacobian, fresh_seeds=h.fresh_seeds,
        probe=ProbeConfig(m=p.m, sigma=p.sigma, seed=config.seed, share_probes=p.share_probes),
        train=tr.TrainConfig(lr=config.train.lr),
    )


def brs_config(config: ExperimentConfig) -> BrsConfig:
    b = config.brs
    return BrsConfig(m=b.m, sigma=b.sigma, gamma=b.gamma, rho=b.rho, eps=b.eps, n=b.n, steps=b.steps,
                     carry_weights=b.carry_weights, fresh_seeds=b.fresh_seeds, seed=config.seed,
                     train=tr.TrainConfig(lr=config.train.lr))


def fixed_beta_config(config: ExperimentConfig) -> FixedBetaConfig:
    f = config.fixed_beta
    return FixedBetaConfig(draws=f.draws, dataset_size=f.dataset_size, sgd_steps=f.sgd_steps,
                           snapshot_every=f.snapshot_every, seed=config.seed,
                           train=tr.TrainConfig(lr=config.train.lr))


@dataclass
class RunResult:
    config: ExperimentConfig
    state: OptimizerState
    wall_ms: float
    best: float

    @property
    def trajectory(self) -> list[dict]:
        return self.state.trajectory


def run_experiment(config: ExperimentConfig, *, executor: Executor | None = None, progress=None) -> RunResult:
    exp = build(config)
    started = time.perf_counter()
    if config.method == "hybrid":
        state = hybrid_run(exp.pipeline, exp.start_beta, exp.weights0, exp.validation, hybrid_config(config),
                           executor=executor, callback=progress)
        for rec in state.trajectory:
            rec["method"] = "hybrid"
    elif config.method == "brs":
        state = brs_run(exp.pipeline, exp.start_beta, exp.weights0, exp.validation, brs_config(config),
                        executor=executor, callback=progress)
    else:
        _, state = fixed_beta_run(exp.pipeline, exp.weights0, exp.validation, fixed_beta_config(config))
    wall = (time.perf_counter() - started) * 1e3
    best = min(r["L"] for r in state.trajectory)
    return RunResult(config, state, wall, best)


def budget(config: ExperimentConfig) -> dict:
    """Closed-form generator-call and SGD-step totals for ``config``."""
    if config.method == "hybrid":
        h, m = config.hybrid, config.probe.m
        probes = 0 if h.gamma == 0 else (h.n if h.jacobian == "fd" else 0) * 2 * m
        return {"generator_calls": h.steps * (h.n + probes), "sgd_steps": h.steps * h.n}
    if config.method == "brs":
        b = config.brs
        per = b.n * (2 * b.m + 1)
        return {"generator_calls": b.steps * per, "sgd_steps": b.steps * per}
    f = config.fixed_beta
    return {"generator_calls": f.draws * f.dataset_size, "sgd_steps": f.draws * f.sgd_steps}
