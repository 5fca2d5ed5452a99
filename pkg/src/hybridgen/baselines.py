"""Black-box comparison methods built from the same generator, trainer and
update code as the hybrid optimizer.

* Basic Random Search estimates the gradient of the validation loss with
  respect to the decision vector from symmetric loss differences, where each
  loss evaluation is a full generate, train and validate cycle.
* The fixed-decision baseline trains on datasets from a few random decision
  vectors and keeps the best weight snapshot.
"""

from __future__ import annotations

from collections.abc import Callable
from concurrent.futures import Executor
from dataclasses import dataclass, field

import numpy as np

from . import trainer as tr
from .fd_jacobian import ProbeConfig, estimate_scalar_gradient, sample_directions
from .generator.pipeline import Pipeline
from .generator.sampling import SeedString, stream_id
from .optimizer import (
    OptimizerState,
    OuterStepError,
    generate,
    rmsprop_update,
    step_seeds,
)


@dataclass(frozen=True)
class BrsConfig:
    m: int = 8
    sigma: float = 0.02
    gamma: float = 0.01          # RMSprop step size
    rho: float = 0.99
    eps: float = 1e-8
    n: int = 4
    steps: int = 100
    train: tr.TrainConfig = field(default_factory=tr.TrainConfig)
    carry_weights: bool = True
    seed: int = 0
    fresh_seeds: bool = True

    def __post_init__(self):
        ProbeConfig(self.m, self.sigma)  # validates m and sigma
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.n < 1 or self.steps < 1:
            raise ValueError("n and steps must be at least 1")

    @property
    def probe(self) -> ProbeConfig:
        return ProbeConfig(self.m, self.sigma, self.seed)


def train_plain(state: OptimizerState, weights: tr.ModelParams, samples, train: tr.TrainConfig,
                validation: tr.ValidationSet, task: str) -> tuple[tr.ModelParams, float]:
    """Loss-only training (no backward pass needed); counts SGD steps."""
    state.telemetry["train"] += 1
    trained = tr.train_numeric(weights, samples, train)
    state.counters.sgd_steps += len(samples)
    return trained, tr.validation_loss_numeric(trained, validation, task)


def evaluate_beta(state: OptimizerState, pipeline: Pipeline, beta, seeds, weights: tr.ModelParams,
                  train: tr.TrainConfig, validation: tr.ValidationSet) -> float:
    """Generate at ``beta``, train ``weights`` for ``len(seeds)`` steps and
    return the validation loss.  ``state`` only receives counter updates."""
    samples = generate(state, pipeline, beta, seeds)
    return train_plain(state, weights, samples, train, validation, pipeline.task)[1]


def brs_step(state: OptimizerState, pipeline: Pipeline, validation: tr.ValidationSet, config: BrsConfig,
             *, weights0: tr.ModelParams | None = None, executor: Executor | None = None) -> OptimizerState:
    t = state.t
    clip = pipeline.layout.clip
    try:
        seeds = step_seeds(config.seed, t, config.n, config.fresh_seeds)
        # the snapshot trained on the unperturbed beta gives this step's loss
        samples = generate(state, pipeline, state.beta, seeds)
        trained, loss = train_plain(state, state.weights, samples, config.train, validation, pipeline.task)

        base = state.weights
        deltas = sample_directions(state.beta.size, config.probe, stream=t)
        points = [clip(state.beta + s * d) for d in deltas for s in (1.0, -1.0)]

        def one(point):
            return evaluate_beta(state, pipeline, point, seeds, base, config.train, validation)

        losses = list(executor.map(one, points)) if executor is not None else [one(p) for p in points]
        pairs = list(zip(losses[0::2], losses[1::2]))
        g = estimate_scalar_gradient(None, state.beta, deltas, values=pairs)
        rmsprop_update(state, g, config.gamma, rho=config.rho, eps=config.eps, clip=clip)
        if config.carry_weights:
            state.weights = trained
        elif weights0 is not None:
            state.weights = [np.array(w) for w in weights0]
    except (tr.TrainingError, FloatingPointError, ValueError) as exc:
        raise OuterStepError(t, exc) from exc
    state.record(loss, method="brs")
    state.t += 1
    return state


def brs_run(pipeline: Pipeline, beta0, weights0: tr.ModelParams, validation: tr.ValidationSet, config: BrsConfig,
            *, executor: Executor | None = None, callback: Callable | None = None) -> OptimizerState:
    state = OptimizerState.initial(pipeline.layout.clip(beta0), weights0)
    for _ in range(config.steps):
        brs_step(state, pipeline, validation, config, weights0=weights0, executor=executor)
        if callback is not None:
            callback(state)
    return state


def brs_minimize(loss: Callable[[np.ndarray], float], beta0, config: BrsConfig,
                 clip: Callable | None = None) -> list[np.ndarray]:
    """BRS on an arbitrary scalar map, sharing the estimator and RMSprop
    update.  Returns the iterates ``beta_0 .. beta_T``."""
    clip = clip or (lambda b: b)
    state = OptimizerState.initial(beta0, [])
    path = [state.beta.copy()]
    for t in range(config.steps):
        deltas = sample_directions(state.beta.size, config.probe, stream=t)
        g = estimate_scalar_gradient(loss, state.beta, deltas, clip=clip)
        rmsprop_update(state, g, config.gamma, rho=config.rho, eps=config.eps, clip=clip)
        path.append(state.beta.copy())
    return path


# ---------------------------------------------------------------------------
# random fixed decision vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FixedBetaConfig:
    draws: int = 10
    dataset_size: int = 32
    sgd_steps: int = 400          # per draw, cycling through its dataset
    snapshot_every: int = 20
    train: tr.TrainConfig = field(default_factory=tr.TrainConfig)
    seed: int = 0

    def __post_init__(self):
        if self.draws < 1:
            raise ValueError("need at least one draw")
        if self.dataset_size < 1 or self.sgd_steps < 1 or self.snapshot_every < 1:
            raise ValueError("dataset_size, sgd_steps and snapshot_every must be positive")


@dataclass
class Snapshot:
    loss: float
    weights: tr.ModelParams
    draw: int
    step: int
    beta: np.ndarray


def random_beta(layout, rng: np.random.Generator) -> np.ndarray:
    """Uniform over the valid box of every entry."""
    return rng.uniform(layout.lower, layout.upper)


def fixed_beta_run(pipeline: Pipeline, weights0: tr.ModelParams, validation: tr.ValidationSet,
                   config: FixedBetaConfig, *, betas: list[np.ndarray] | None = None
                   ) -> tuple[Snapshot, OptimizerState]:
    """Train one network per random decision vector and return the snapshot
    with the lowest validation loss over all draws, plus a state whose
    trajectory lists every recorded snapshot."""
    rng = np.random.Generator(np.random.Philox(key=[stream_id("fixed-beta"), config.seed]))
    if betas is None:
        betas = [random_beta(pipeline.layout, rng) for _ in range(config.draws)]
    state = OptimizerState.initial(betas[0], weights0)
    best: Snapshot | None = None
    for d, beta in enumerate(betas):
        state.beta = np.asarray(beta, dtype=np.float64)
        stream = stream_id("fixed-beta-data", config.seed, d)
        data = generate(state, pipeline, beta, [SeedString(stream, i) for i in range(config.dataset_size)])
        state.weights = [np.array(w) for w in weights0]
        done = 0
        while done < config.sgd_steps:
            k = min(config.snapshot_every, config.sgd_steps - done)
            batch = [data[(done + i) % len(data)] for i in range(k)]
            state.weights, loss = train_plain(state, state.weights, batch, config.train, validation, pipeline.task)
            done += k
            state.record(loss, method="fixed_beta")
            state.t += 1
            if best is None or loss < best.loss:
                best = Snapshot(loss, state.weights, d, done, state.beta.copy())
    return best, state
