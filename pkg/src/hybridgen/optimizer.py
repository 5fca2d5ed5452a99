"""Outer optimization of the decision vector with the hybrid gradient.

Each outer step generates ``n`` samples at the current decision vector,
trains the carried network on them, backpropagates the validation loss to
the samples, chains those gradients with per-sample generator Jacobians,
and takes an RMSprop step.  The trained weights become the next step's
starting point.
"""

from __future__ import annotations

import time
from collections import Counter
from collections.abc import Callable, Sequence
from concurrent.futures import Executor
from dataclasses import dataclass, field, replace

import numpy as np

from . import trainer as tr
from .fd_jacobian import ProbeConfig, estimate_jacobian, sample_directions
from .generator.pipeline import Pipeline, generate_dataset
from .generator.sampling import SeedString, stream_id


class OuterStepError(RuntimeError):
    def __init__(self, t: int, cause: BaseException):
        self.t = t
        super().__init__(f"outer step {t}: {cause}")


@dataclass(frozen=True)
class HybridConfig:
    n: int = 4
    gamma: float = 0.01
    rho: float = 0.99
    eps: float = 1e-8
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    train: tr.TrainConfig = field(default_factory=tr.TrainConfig)
    steps: int = 100
    seed: int = 0
    jacobian: str = "fd"          # "fd" or "analytic" (pipelines exposing .jacobian)
    fresh_seeds: bool = True      # new generator seeds every outer step

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if not self.gamma >= 0:  # gamma = 0 freezes beta, used as a reference run
            raise ValueError("gamma must be nonnegative")
        if self.steps < 1:
            raise ValueError("need at least one outer step")
        if not 0 <= self.rho < 1:
            raise ValueError("rho must lie in [0, 1)")
        if self.jacobian not in ("fd", "analytic"):
            raise ValueError(f"unknown jacobian mode {self.jacobian!r}")


@dataclass
class Counters:
    generator_calls: int = 0
    sgd_steps: int = 0
    backward_passes: int = 0

    def as_dict(self) -> dict:
        return {"generator_calls": self.generator_calls, "sgd_steps": self.sgd_steps,
                "backward_passes": self.backward_passes}


@dataclass
class OptimizerState:
    t: int
    beta: np.ndarray
    weights: tr.ModelParams
    acc: np.ndarray
    counters: Counters = field(default_factory=Counters)
    trajectory: list[dict] = field(default_factory=list)
    telemetry: Counter = field(default_factory=Counter)
    started: float = field(default_factory=time.perf_counter)

    @classmethod
    def initial(cls, beta, weights: tr.ModelParams) -> OptimizerState:
        beta = np.array(beta, dtype=np.float64)
        return cls(0, beta, [np.array(w) for w in weights], np.zeros_like(beta))

    def record(self, loss: float, method: str | None = None) -> dict:
        rec = {
            "t": self.t,
            "L": float(loss),
            "beta": [float(v) for v in self.beta],
            "generator_calls": self.counters.generator_calls,
            "sgd_steps": self.counters.sgd_steps,
            "wall_ms": (time.perf_counter() - self.started) * 1e3,
        }
        if method is not None:
            rec["method"] = method
        self.trajectory.append(rec)
        return rec


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------

def hybrid_gradient(sample_grads: Sequence[np.ndarray], jacobians: Sequence[np.ndarray]) -> np.ndarray:
    """``sum_i dL/dX_i . dX_i/dbeta`` for flattened sample gradients."""
    if len(sample_grads) != len(jacobians):
        raise ValueError(f"{len(sample_grads)} sample gradients but {len(jacobians)} Jacobians")
    if not sample_grads:
        raise ValueError("no samples")
    total = None
    for i, (g, j) in enumerate(zip(sample_grads, jacobians)):
        g = np.asarray(g, dtype=np.float64).ravel()
        j = np.asarray(j, dtype=np.float64)
        if j.ndim != 2 or j.shape[0] != g.size:
            raise ValueError(f"sample {i}: gradient has {g.size} entries but Jacobian has shape {j.shape}")
        term = g @ j
        total = term if total is None else total + term
    return total


def rmsprop(beta, acc, grad, gamma, *, rho=0.99, eps=1e-8, clip: Callable | None = None):
    """One RMSprop step; returns ``(beta', acc')``."""
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("gradient is not finite")
    acc = rho * np.asarray(acc) + (1.0 - rho) * grad * grad
    beta = np.asarray(beta) - gamma * grad / (np.sqrt(acc) + eps)
    return (clip(beta) if clip is not None else beta), acc


def rmsprop_update(state: OptimizerState, grad, gamma: float, *, rho: float = 0.99, eps: float = 1e-8,
                   clip: Callable | None = None) -> np.ndarray:
    """Update ``state.beta`` and its accumulator in place; return the new beta."""
    state.telemetry["rmsprop_update"] += 1
    state.beta, state.acc = rmsprop(state.beta, state.acc, grad, gamma, rho=rho, eps=eps, clip=clip)
    return state.beta


def step_seeds(seed: int, t: int, n: int, fresh: bool = True, tag: str = "train") -> list[SeedString]:
    stream = stream_id(tag, seed)
    start = t * n if fresh else 0
    return [SeedString(stream, start + i) for i in range(n)]


def train_on(state: OptimizerState, samples, train: tr.TrainConfig, validation: tr.ValidationSet, task: str):
    state.telemetry["train"] += 1
    trace = tr.unrolled_train(state.weights, samples, train, validation, task=task)
    state.counters.sgd_steps += len(samples)
    return trace


def generate(state: OptimizerState, pipeline: Pipeline, beta, seeds) -> list:
    state.telemetry["generate"] += 1
    out = generate_dataset(pipeline, beta, seeds)
    state.counters.generator_calls += len(seeds)
    return out


# ---------------------------------------------------------------------------
# the hybrid step
# ---------------------------------------------------------------------------

def outer_step(state: OptimizerState, pipeline: Pipeline, validation: tr.ValidationSet, config: HybridConfig,
               *, executor: Executor | None = None) -> OptimizerState:
    t = state.t
    try:
        seeds = step_seeds(config.seed, t, config.n, config.fresh_seeds)
        samples = generate(state, pipeline, state.beta, seeds)
        trace = train_on(state, samples, config.train, validation, pipeline.task)
        grads = tr.backprop_to_inputs(trace)
        state.counters.backward_passes += 1
        loss = grads.loss
        if config.gamma > 0:
            jacobians = _jacobians(state, pipeline, seeds, config, executor)
            g = hybrid_gradient([grads.flat(k) for k in range(len(samples))], jacobians)
            rmsprop_update(state, g, config.gamma, rho=config.rho, eps=config.eps, clip=pipeline.layout.clip)
        # with gamma = 0 beta cannot move, so the probes are skipped
        state.weights = trace.final_weights()
    except (tr.TrainingError, FloatingPointError, ValueError) as exc:
        raise OuterStepError(t, exc) from exc
    state.record(loss)
    state.t += 1
    return state


def _jacobians(state, pipeline, seeds, config: HybridConfig, executor):
    beta = state.beta
    if config.jacobian == "analytic":
        return [pipeline.jacobian(beta, r) for r in seeds]
    probe = config.probe
    shared = sample_directions(beta.size, probe, stream=state.t) if probe.share_probes else None
    out = []
    for i, r in enumerate(seeds):
        deltas = shared
        if deltas is None:
            deltas = sample_directions(beta.size, probe, stream=(state.t << 16) + i + 1)
        est = estimate_jacobian(pipeline, beta, r, probe, directions=deltas, clip=pipeline.layout.clip,
                                executor=executor)
        state.counters.generator_calls += 2 * probe.m
        state.telemetry["estimate_jacobian"] += 1
        out.append(est.matrix)
    return out


def run(pipeline: Pipeline, beta0, weights0: tr.ModelParams, validation: tr.ValidationSet, config: HybridConfig,
        *, executor: Executor | None = None, callback: Callable[[OptimizerState], None] | None = None
        ) -> OptimizerState:
    """``config.steps`` outer steps from ``(beta0, weights0)``."""
    state = OptimizerState.initial(pipeline.layout.clip(beta0), weights0)
    for _ in range(config.steps):
        outer_step(state, pipeline, validation, config, executor=executor)
        if callback is not None:
            callback(state)
    return state


def with_overrides(config: HybridConfig, **kwargs) -> HybridConfig:
    return replace(config, **kwargs)
