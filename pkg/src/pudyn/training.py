"""Adam training of product-unit networks with two learning-rate groups."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _rng
from .complex_core import DEFAULT_EPS, NonFiniteError, log_clamped
from .dynamics import TrainingDataset
from .network import GradientSet, ProductUnitModel, backward_from_logs, loss_cmse, model_forward

log = logging.getLogger(__name__)

# parameter name -> learning-rate group
PARAM_GROUPS = {
    "exponents": "exponents",
    "log_biases": "exponents",
    "coefficients": "coefficients",
}


class TrainingDiverged(RuntimeError):
    """Every batch of an epoch produced a non-finite loss."""


@dataclass
class TrainConfig:
    epochs: int = 5000
    batch_size: int = 30
    lr_coefficients: float = 0.03
    lr_exponents: float = 0.003
    decay_gamma: float = 0.999
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    exponent_scale: float = 0.1
    coefficient_scale: float = 0.5

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.decay_gamma <= 1:
            raise ValueError("decay_gamma must lie in (0, 1]")
        if self.lr_coefficients < 0 or self.lr_exponents < 0:
            raise ValueError("learning rates must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    """Moment estimates over the real-pair view of every parameter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model: ProductUnitModel, beta1=0.9, beta2=0.999, eps=1e-8):
        m = {k: np.zeros(_pairs(getattr(model, k)).shape) for k in PARAM_GROUPS}
        v = {k: np.zeros_like(a) for k, a in m.items()}
        return cls(m, v, 0, beta1, beta2, eps)


def _pairs(a: np.ndarray) -> np.ndarray:
    # interleaved (re, im) float view, no copy for contiguous input
    return np.ascontiguousarray(a, dtype=np.complex128).view(np.float64)


def adam_update(
    state: AdamState, grads: GradientSet, lr_exponents: float, lr_coefficients: float
) -> GradientSet:
    """Advance the moments by one step and return the parameter deltas.

    Real and imaginary parts are independent scalars.  Exponents and log
    biases step with ``lr_exponents``, coefficients with ``lr_coefficients``.
    """
    lrs = {"exponents": lr_exponents, "coefficients": lr_coefficients}
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    out = {}
    for name, group in PARAM_GROUPS.items():
        g = _pairs(getattr(grads, name))
        m, v = state.m[name], state.v[name]
        if g.shape != m.shape:
            raise ValueError(f"gradient for {name} does not match the optimizer state")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        d = m / (np.sqrt(v / bc2) + state.eps)
        d *= -lrs[group] / bc1
        out[name] = d.view(np.complex128)
    return GradientSet(**out)


def lr_at_epoch(base_lr: float, gamma: float, epoch: int) -> float:
    """Exponentially decayed learning rate ``base_lr * gamma**epoch``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr * gamma**epoch


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    lr_coeff: float
    lr_exp: float
    skipped_batches: int


@dataclass
class TrainResult:
    model: ProductUnitModel
    history: list[EpochRecord] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.history[-1].loss if self.history else math.nan

    @property
    def skipped_batches(self) -> int:
        return sum(r.skipped_batches for r in self.history)


def train(
    model: ProductUnitModel,
    dataset: TrainingDataset,
    config: TrainConfig,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
    eps: float = DEFAULT_EPS,
) -> TrainResult:
    """Fit ``model`` (a copy of it) to ``dataset`` with mini-batch Adam.

    Samples are reshuffled every epoch from the ``config.seed`` shuffle
    stream; the last partial batch is kept.  Batches whose forward pass
    overflows or whose loss is non-finite are skipped and counted.
    """
    config.validate()
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.inputs.shape[1] != model.n_inputs or dataset.targets.shape[1] != model.n_outputs:
        raise ValueError(
            f"dataset is {dataset.inputs.shape[1]}->{dataset.targets.shape[1]}, "
            f"model is {model.n_inputs}->{model.n_outputs}"
        )
    model = model.copy()
    logs = log_clamped(dataset.inputs, eps)
    targets = np.asarray(dataset.targets, dtype=np.complex128)
    n = len(dataset)
    bs = config.batch_size
    state = AdamState.for_model(model, config.adam_beta1, config.adam_beta2, config.adam_eps)
    rng = _rng.rng_for(config.seed, _rng.SHUFFLE)
    result = TrainResult(model)

    for epoch in range(config.epochs):
        lr_c = lr_at_epoch(config.lr_coefficients, config.decay_gamma, epoch)
        lr_e = lr_at_epoch(config.lr_exponents, config.decay_gamma, epoch)
        perm = rng.permutation(n)
        total, used, skipped = 0.0, 0, 0
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            try:
                loss, grads = backward_from_logs(model, logs[idx], targets[idx])
            except NonFiniteError:
                skipped += 1
                continue
            delta = adam_update(state, grads, lr_e, lr_c)
            for name, group in PARAM_GROUPS.items():
                if (lr_e if group == "exponents" else lr_c) != 0:
                    param = getattr(model, name)
                    param += getattr(delta, name)
            total += loss
            used += 1
        if used == 0:
            raise TrainingDiverged(f"all batches skipped in epoch {epoch}")
        if skipped:
            log.warning("epoch %d: skipped %d non-finite batches", epoch, skipped)
        rec = EpochRecord(epoch, total / used, lr_c, lr_e, skipped)
        result.history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return result


def evaluate_loss(model: ProductUnitModel, dataset: TrainingDataset) -> float:
    """CMSE of ``model`` on a (held-out) dataset."""
    return loss_cmse(model_forward(model, dataset.inputs), dataset.targets)


HISTORY_HEADER = ["epoch", "loss", "lr_coeff", "lr_exp", "skipped_batches"]


def write_history_csv(history: list[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_HEADER)
        for r in history:
            w.writerow([r.epoch, repr(r.loss), repr(r.lr_coeff), repr(r.lr_exp), r.skipped_batches])
