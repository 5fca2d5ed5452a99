"""The predictive model, its losses, and unrolled SGD with backpropagation to
the training samples.

The model is a two-layer perceptron on the flattened image.  Outputs are
laid out channel-major: ``(C_out * H * W, 1)`` with all x-components first,
then y, then z, so per-pixel reductions are a reshape to ``(C_out, P, V)``
followed by a sum over axis 0.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Expr, Tape
from .generator.sample import Sample

COS_CLAMP = 1.0 - 1e-7
NORM_EPS = 1e-9
DIVERGENCE_NORM = 1e6


class TrainingError(RuntimeError):
    """Raised for divergence or non-finite values; ``step`` is 1-based, 0 for
    the validation loss."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class ModelConfig:
    image_shape: tuple[int, int, int] = (16, 16, 1)
    out_channels: int = 3
    hidden: int = 64
    init_scale: float = 0.1
    task: str = "normal"

    @property
    def pixels(self) -> int:
        return self.image_shape[0] * self.image_shape[1]

    @property
    def n_in(self) -> int:
        return self.pixels * self.image_shape[2]

    @property
    def n_out(self) -> int:
        return self.pixels * self.out_channels

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [(self.hidden, self.n_in), (self.hidden, 1), (self.n_out, self.hidden), (self.n_out, 1)]

    @property
    def n_params(self) -> int:
        return sum(a * b for a, b in self.shapes)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    steps: int = 4

    def __post_init__(self):
        if not self.lr >= 0:  # lr = 0 is allowed as a diagnostic
            raise ValueError("learning rate must be nonnegative")
        if self.steps < 1:
            raise ValueError("need at least one SGD step")


ModelParams = list[np.ndarray]


def init_model(config: ModelConfig, seed: int) -> ModelParams:
    """Weights and biases uniform in ``+-init_scale``."""
    rng = np.random.default_rng(seed)
    return [rng.uniform(-config.init_scale, config.init_scale, size=s) for s in config.shapes]


# ---------------------------------------------------------------------------
# data layout
# ---------------------------------------------------------------------------

def sample_columns(sample: Sample) -> tuple[np.ndarray, np.ndarray]:
    """``(x, y)`` column vectors for one sample, target channel-major."""
    x = sample.image.reshape(-1, 1)
    y = np.moveaxis(sample.target, -1, 0).reshape(-1, 1)
    return x, y


def columns_to_sample_shape(sample: Sample, gx: np.ndarray, gy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`sample_columns` for gradient arrays."""
    h, w, c = sample.target.shape
    return gx.reshape(sample.image.shape), np.moveaxis(gy.reshape(c, h, w), 0, -1)


@dataclass
class ValidationSet:
    """Validation samples stacked column-wise."""

    inputs: np.ndarray   # (n_in, V)
    targets: np.ndarray  # (n_out, V), channel-major
    mask: np.ndarray     # (P, V) 0/1
    channels: int

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> ValidationSet:
        if not samples:
            raise ValueError("validation set is empty")
        cols = [sample_columns(s) for s in samples]
        return cls(
            inputs=np.hstack([c[0] for c in cols]),
            targets=np.hstack([c[1] for c in cols]),
            mask=np.stack([s.mask.ravel() for s in samples], axis=1).astype(np.float64),
            channels=samples[0].target.shape[-1],
        )

    def __len__(self) -> int:
        return self.inputs.shape[1]


# ---------------------------------------------------------------------------
# model and losses
# ---------------------------------------------------------------------------

def forward(w: Sequence[Expr], x: Expr) -> Expr:
    """Prediction for inputs ``x`` of shape ``(n_in, V)``."""
    w1, b1, w2, b2 = w
    v = x.shape[1]
    if v == 1:
        hidden = ad.tanh(ad.add(ad.matmul(w1, x), b1))
        return ad.add(ad.matmul(w2, hidden), b2)
    ones = ad.const(x.tape, np.ones((1, v)))
    hidden = ad.tanh(ad.add(ad.matmul(w1, x), ad.matmul(b1, ones)))
    return ad.add(ad.matmul(w2, hidden), ad.matmul(b2, ones))


def mse(pred: Expr, target: Expr) -> Expr:
    if pred.shape != target.shape:
        raise ad.ShapeError("mse", pred.shape, target.shape)
    return ad.mean(ad.square(ad.sub(pred, target)))


def train_loss(w: Sequence[Expr], x: Expr, y: Expr) -> Expr:
    """Mean squared error of the model on one sample."""
    return mse(forward(w, x), y)


def angle_loss(pred: Expr, target: Expr, mask: np.ndarray, channels: int = 3) -> Expr:
    """Mean angle (radians) between per-pixel prediction and unit target
    vectors over masked pixels.  ``pred``/``target`` are ``(3P, V)``
    channel-major; ``mask`` is ``(P, V)``."""
    tape = pred.tape
    n_rows, v = pred.shape
    p = n_rows // channels
    count = float(np.sum(mask))
    if count <= 0:
        raise ValueError("validation mask selects no pixels")
    pred3 = ad.reshape(pred, (channels, p, v))
    tgt3 = ad.reshape(target, (channels, p, v))
    dot = ad.sum(ad.mul(pred3, tgt3), axis=0)
    norm = ad.sqrt(ad.shift(ad.sum(ad.square(pred3), axis=0), NORM_EPS))
    cos = ad.clip(ad.div(dot, norm), -COS_CLAMP, COS_CLAMP)
    angles = ad.arccos(cos)
    return ad.scale(ad.sum(ad.mul(angles, ad.const(tape, mask))), 1.0 / count)


def masked_mse(pred: Expr, target: Expr, mask: np.ndarray) -> Expr:
    count = float(np.sum(mask))
    if count <= 0:
        raise ValueError("validation mask selects no pixels")
    err = ad.square(ad.sub(pred, target))
    return ad.scale(ad.sum(ad.mul(err, ad.const(pred.tape, mask))), 1.0 / count)


def eval_loss(w: Sequence[Expr], validation: ValidationSet, task: str = "normal") -> Expr:
    """Validation loss: mean angle error for normals, masked MSE for depth."""
    if len(validation) == 0:
        raise ValueError("validation set is empty")
    tape = w[0].tape
    pred = forward(w, ad.const(tape, validation.inputs))
    target = ad.const(tape, validation.targets)
    if task == "normal":
        return angle_loss(pred, target, validation.mask, validation.channels)
    if task == "depth":
        return masked_mse(pred, target, validation.mask)
    raise ValueError(f"unknown task {task!r}")


# ---------------------------------------------------------------------------
# unrolled training
# ---------------------------------------------------------------------------

def sgd_step(w: Sequence[Expr], x: Expr, y: Expr, lr: float) -> list[Expr]:
    """``w - lr * d train_loss / dw`` as expressions differentiable in ``w``,
    ``x`` and ``y``."""
    if lr < 0:
        raise ValueError("learning rate must be nonnegative")
    loss = train_loss(w, x, y)
    grads = ad.derive(loss, list(w))
    return [ad.sub(wi, ad.scale(gi, lr)) for wi, gi in zip(w, grads)]


@dataclass
class TrainTrace:
    tape: Tape
    weights: list[list[Expr]]          # w^(1) .. w^(n+1)
    inputs: list[tuple[Expr, Expr]]    # (x, y) per consumed sample
    samples: list[Sample]
    bindings: dict
    step_ends: list[int]               # first node id after step k
    loss: Expr | None = None
    task: str = "normal"
    memo: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.inputs)

    def values(self, exprs: Sequence[Expr]) -> list[np.ndarray]:
        try:
            return ad.evaluate(exprs, self.bindings, memo=self.memo)
        except ad.NonFiniteError as exc:
            raise TrainingError(f"non-finite value during step {self._step_of(exc.node)}", self._step_of(exc.node)) from exc

    def _step_of(self, node: int) -> int:
        for k, end in enumerate(self.step_ends, start=1):
            if node < end:
                return k
        return 0

    def final_weights(self) -> ModelParams:
        return [np.array(v) for v in self.values(self.weights[-1])]

    def loss_value(self) -> float:
        if self.loss is None:
            raise ValueError("trace has no validation loss attached")
        return float(self.values([self.loss])[0])


def unrolled_train(
    w0: ModelParams,
    samples: Sequence[Sample],
    config: TrainConfig,
    validation: ValidationSet | None = None,
    *,
    task: str = "normal",
    check: bool = True,
) -> TrainTrace:
    """Record ``len(samples)`` SGD steps (batch size 1, generation order) on
    a fresh tape.  With ``validation`` the loss of the final weights is
    attached as ``trace.loss``."""
    if not samples:
        raise ValueError("need at least one training sample")
    tape = Tape()
    w = [ad.leaf(tape, v) for v in w0]
    weights = [w]
    inputs, step_ends, bindings = [], [], {}
    for sample in samples:
        xv, yv = sample_columns(sample)
        x, y = ad.leaf(tape, xv), ad.leaf(tape, yv)
        inputs.append((x, y))
        w = sgd_step(w, x, y, config.lr)
        weights.append(w)
        step_ends.append(len(tape))
    trace = TrainTrace(tape, weights, inputs, list(samples), bindings, step_ends, task=task)
    if validation is not None:
        trace.loss = eval_loss(weights[-1], validation, task)
    if check:
        _check_divergence(trace)
    return trace


def _check_divergence(trace: TrainTrace) -> None:
    flat = [e for ws in trace.weights[1:] for e in ws]
    values = trace.values(flat)
    per = len(trace.weights[0])
    for k in range(trace.n_steps):
        norm = np.sqrt(sum(float(np.sum(v * v)) for v in values[k * per:(k + 1) * per]))
        if norm > DIVERGENCE_NORM:
            raise TrainingError(f"weights diverged at step {k + 1} (norm {norm:.3g})", k + 1)


@dataclass
class InputGradients:
    samples: list[tuple[np.ndarray, np.ndarray]]  # (d/d image, d/d target) per step
    initial_weights: ModelParams
    loss: float

    def flat(self, k: int) -> np.ndarray:
        """Gradient for sample ``k`` in :meth:`Sample.flatten` order."""
        gi, gt = self.samples[k]
        return np.concatenate([gi.ravel(), gt.ravel()])

    def __iter__(self):
        yield self.samples
        yield self.initial_weights


def backprop_to_inputs(trace: TrainTrace) -> InputGradients:
    """Gradient of the attached validation loss with respect to every
    consumed sample and to the initial weights, from one reverse sweep."""
    if trace.loss is None:
        raise ValueError("trace has no validation loss attached")
    wrt = [e for pair in trace.inputs for e in pair] + list(trace.weights[0])
    grads = ad.derive(trace.loss, wrt)
    values = trace.values([trace.loss] + grads)
    loss, gvals = values[0], values[1:]
    per_sample = []
    for k, sample in enumerate(trace.samples):
        gx, gy = gvals[2 * k], gvals[2 * k + 1]
        per_sample.append(columns_to_sample_shape(sample, gx, gy))
    n = 2 * trace.n_steps
    return InputGradients(per_sample, [np.array(g) for g in gvals[n:]], float(loss))


def validation_loss(weights: ModelParams, validation: ValidationSet, task: str = "normal") -> float:
    tape = Tape()
    w = [ad.leaf(tape, v) for v in weights]
    (value,) = ad.evaluate([eval_loss(w, validation, task)])
    return float(value)


# ---------------------------------------------------------------------------
# tape-free path for loss-only evaluations
# ---------------------------------------------------------------------------

def sgd_numeric(weights: ModelParams, x: np.ndarray, y: np.ndarray, lr: float) -> ModelParams:
    """One SGD step computed directly in numpy; same update as
    :func:`sgd_step` without recording anything."""
    w1, b1, w2, b2 = weights
    h = np.tanh(w1 @ x + b1)
    out = w2 @ h + b2
    d = 2.0 * (out - y) / out.size
    dh = (w2.T @ d) * (1.0 - h * h)
    return [w1 - lr * (dh @ x.T), b1 - lr * dh, w2 - lr * (d @ h.T), b2 - lr * d]


def train_numeric(w0: ModelParams, samples: Sequence[Sample], config: TrainConfig) -> ModelParams:
    """Final weights after one SGD step per sample, without a tape."""
    w = [np.array(v) for v in w0]
    for k, sample in enumerate(samples, start=1):
        x, y = sample_columns(sample)
        w = sgd_numeric(w, x, y, config.lr)
        norm = np.sqrt(sum(float(np.sum(v * v)) for v in w))
        if not np.isfinite(norm):
            raise TrainingError(f"non-finite value during step {k}", k)
        if norm > DIVERGENCE_NORM:
            raise TrainingError(f"weights diverged at step {k} (norm {norm:.3g})", k)
    return w


def validation_loss_numeric(weights: ModelParams, validation: ValidationSet, task: str = "normal") -> float:
    w1, b1, w2, b2 = weights
    pred = w2 @ np.tanh(w1 @ validation.inputs + b1) + b2
    mask = validation.mask
    count = float(mask.sum())
    if count <= 0:
        raise ValueError("validation mask selects no pixels")
    if task == "depth":
        return float(np.sum((pred - validation.targets) ** 2 * mask) / count)
    if task != "normal":
        raise ValueError(f"unknown task {task!r}")
    c = validation.channels
    p3 = pred.reshape(c, -1, pred.shape[1])
    t3 = validation.targets.reshape(c, -1, pred.shape[1])
    cos = np.sum(p3 * t3, axis=0) / np.sqrt(np.sum(p3 * p3, axis=0) + NORM_EPS)
    angles = np.arccos(np.clip(cos, -COS_CLAMP, COS_CLAMP))
    return float(np.sum(angles * mask) / count)
