"""Effective prediction time of a recovered model against the true system.

Both systems are advanced with RK4 from the same warmed-up state.  The
recovered network is first rounded and compiled into a symbolic term system;
the true system is compiled the same way from its ground-truth terms, so two
identical sets of equations produce bit-identical trajectories.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _rng
from .complex_core import NonFiniteError, log_clamped
from .discovery import Term, extract_terms, round_half_away, truth_terms
from .dynamics import SystemSpec, as_box, get_system, rollout_batch
from .network import ProductUnitModel


class WarmupDiverged(RuntimeError):
    """The true system left the finite range while warming up."""


def round_model(model: ProductUnitModel, decimals: int = 3) -> ProductUnitModel:
    """Round every parameter half away from zero.

    The log-domain biases are folded into the coefficients first
    (``c * exp(b)``, ``b = 0``), which leaves the represented function
    unchanged and makes the rounded coefficients the ones that are displayed.
    """
    if decimals < 0:
        raise ValueError("decimals must be >= 0")
    return ProductUnitModel(
        exponents=round_half_away(model.exponents, decimals),
        log_biases=np.zeros(model.n_units, dtype=np.complex128),
        coefficients=round_half_away(model.effective_coefficients(), decimals),
        meta=dict(model.meta),
    )


def _int_power(x: np.ndarray, k: int) -> np.ndarray:
    if k < 0:
        return 1.0 / _int_power(x, -k)
    out = x
    for _ in range(k - 1):
        out = out * x
    return out


class TermSystem:
    """Right-hand side assembled from monomial terms, evaluated in a fixed order.

    Terms with identical exponents are combined, monomials are sorted, and
    integer exponents are evaluated by repeated multiplication, so a real
    state stays exactly real.  Other exponents use the principal power on
    zero-clamped inputs.
    """

    def __init__(self, equations: Sequence[Sequence[Term]], decimals: Optional[int] = None):
        combined: list[dict] = []
        for eq in equations:
            acc: dict = {}
            for t in eq:
                key = tuple((e.real + 0.0, e.imag + 0.0) for e in t.exponents)
                acc[key] = acc.get(key, 0j) + t.coefficient
            if decimals is not None:
                acc = {k: complex(round_half_away(c, decimals)) for k, c in acc.items()}
            combined.append({k: c for k, c in acc.items() if c != 0})
        self.monomials = sorted(set().union(*combined)) if combined else []
        self.n_outputs = len(combined)
        self.coefficients = np.array(
            [[eq.get(m, 0j) for m in self.monomials] for eq in combined], dtype=np.complex128
        ).reshape(self.n_outputs, len(self.monomials))
        self._plan = [self._compile(m) for m in self.monomials]

    @staticmethod
    def _compile(mono):
        plan = []
        for i, (re, im) in enumerate(mono):
            if im == 0 and re == int(re):
                if re != 0:
                    plan.append((i, int(re), None))
            else:
                plan.append((i, None, complex(re, im)))
        return plan

    def equations(self) -> list[list[Term]]:
        return [
            [
                Term(c, tuple(complex(*e) for e in m))
                for m, c in zip(self.monomials, row)
                if c != 0
            ]
            for row in self.coefficients
        ]

    def __call__(self, state: np.ndarray) -> np.ndarray:
        s = np.asarray(state, dtype=np.complex128)
        cols = []
        for plan in self._plan:
            val = np.ones(s.shape[:-1], dtype=np.complex128)
            for i, k, w in plan:
                if w is None:
                    val = val * _int_power(s[..., i], k)
                else:
                    val = val * np.exp(w * log_clamped(s[..., i]))
            cols.append(val)
        if not cols:
            return np.zeros(s.shape[:-1] + (self.n_outputs,), dtype=np.complex128)
        return np.stack(cols, axis=-1) @ self.coefficients.T

    @classmethod
    def from_model(cls, model: ProductUnitModel, decimals: Optional[int] = 3) -> "TermSystem":
        if decimals is not None:
            model = round_model(model, decimals)
        eqs = [extract_terms(model, v) for v in range(model.n_outputs)]
        return cls(eqs, decimals)

    @classmethod
    def from_system(cls, system: str | SystemSpec) -> "TermSystem":
        return cls(truth_terms(system))


def model_from_terms(equations: Sequence[Sequence[Term]]) -> ProductUnitModel:
    """Product-unit model with one unit per distinct monomial and zero biases."""
    ts = TermSystem(equations)
    return ProductUnitModel(
        exponents=np.array([[complex(*e) for e in m] for m in ts.monomials]),
        log_biases=np.zeros(len(ts.monomials)),
        coefficients=ts.coefficients,
    )


def corrupted_lorenz63() -> ProductUnitModel:
    """Lorenz63 with ``dx/dt = -10x + (10.001 + 0.001i) y``."""
    eqs = truth_terms("lorenz63")
    eqs[0] = [Term(-10.0, (1, 0, 0)), Term(10.001 + 0.001j, (0, 1, 0))]
    return model_from_terms(eqs)


def trajectory_error(x, x_model) -> np.ndarray | float:
    """Mean over coordinates of ``(X - X~) * conj(X - X~)``; works on stacked points."""
    x = np.asarray(x)
    x_model = np.asarray(x_model)
    if x.shape[-1] != x_model.shape[-1]:
        raise ValueError("dimension mismatch")
    r = x - x_model
    e = np.mean(r.real**2 + r.imag**2, axis=-1)
    return float(e) if np.ndim(e) == 0 else e


def ept_from_series(error_series: np.ndarray, theta: float) -> float:
    """Index of the first point whose error exceeds ``theta`` (that is ``t - 1``).

    Non-finite errors count as exceeding.  Returns ``inf`` if none does.
    """
    e = np.asarray(error_series, dtype=float)
    over = ~(e <= theta)
    return float(np.argmax(over)) if over.any() else math.inf


@dataclass
class EptConfig:
    dt: float = 0.001
    warmup_steps: int = 50_000
    horizon_steps: int = 50_000
    init_box: Sequence = ((-4.0, 4.0),) * 3
    lambda_max: float = 0.9056
    seed: int = 0
    decimals: Optional[int] = 3
    discard_imag: bool = False

    def validate(self):
        if self.warmup_steps < 0 or self.horizon_steps < 1:
            raise ValueError("need warmup_steps >= 0 and horizon_steps >= 1")
        if not self.lambda_max > 0:
            raise ValueError("lambda_max must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @classmethod
    def for_system(cls, system, **kw) -> "EptConfig":
        system = get_system(system)
        kw.setdefault("dt", system.dt)
        kw.setdefault("init_box", system.ept_box)
        kw.setdefault("lambda_max", system.lyapunov)
        return cls(**kw)


@dataclass
class EptResult:
    ept_steps: float  # int-valued, or inf
    ept_normalized: float
    threshold_theta: float
    error_series: np.ndarray
    diverged: bool
    trial: int = 0
    start: np.ndarray = field(default=None, repr=False)
    imag_norm: np.ndarray = field(default=None, repr=False)

    @property
    def finite(self) -> bool:
        return math.isfinite(self.ept_steps)


def ept_starts(config: EptConfig, trials: Sequence[int]) -> np.ndarray:
    box = as_box(config.init_box)
    return np.array(
        [_rng.rng_for(config.seed, _rng.EPT, k).uniform(box[:, 0], box[:, 1]) for k in trials]
    )


def compute_ept_trials(
    true_system: str | SystemSpec,
    model: ProductUnitModel | TermSystem,
    config: EptConfig,
    trials: Sequence[int] | int = 1,
) -> list[EptResult]:
    """Run several EPT trials at once; trial ``k`` draws its start from ``(seed, k)``."""
    config.validate()
    if isinstance(trials, int):
        trials = range(trials)
    trials = list(trials)
    true_rhs = TermSystem.from_system(true_system)
    model_rhs = model if isinstance(model, TermSystem) else TermSystem.from_model(model, config.decimals)
    if model_rhs.n_outputs != 3:
        raise ValueError("model must have three outputs")

    s = ept_starts(config, trials).astype(np.complex128)
    starts = s.copy()
    if config.warmup_steps:
        warm = rollout_batch(true_rhs, s, config.dt, config.warmup_steps)
        if not warm.ok:
            raise WarmupDiverged(f"true system diverged during warmup (trials {trials})")
        s = warm.states[-1]

    truth = rollout_batch(true_rhs, s, config.dt, config.horizon_steps).states
    if not np.all(np.isfinite(truth)):
        raise NonFiniteError("true system diverged inside the comparison horizon")
    post = (lambda u: u.real.astype(np.complex128)) if config.discard_imag else None
    pred = rollout_batch(model_rhs, s, config.dt, config.horizon_steps, post).states

    with np.errstate(invalid="ignore", over="ignore"):
        errors = trajectory_error(truth, pred)  # (H+1, B)
    thetas = truth.real.std(axis=0).min(axis=-1)
    imag_norm = np.abs(pred.imag).sum(axis=-1)
    lam_dt = config.dt * config.lambda_max

    results = []
    for b, k in enumerate(trials):
        e = errors[:, b]
        ept = ept_from_series(e, thetas[b])
        results.append(
            EptResult(
                ept_steps=ept,
                ept_normalized=ept * lam_dt if math.isfinite(ept) else math.inf,
                threshold_theta=float(thetas[b]),
                error_series=e,
                diverged=not bool(np.all(np.isfinite(pred[:, b]))),
                trial=k,
                start=starts[b].real,
                imag_norm=imag_norm[:, b],
            )
        )
    return results


def compute_ept(
    true_system: str | SystemSpec,
    model: ProductUnitModel | TermSystem,
    config: EptConfig,
    trial: int = 0,
) -> EptResult:
    return compute_ept_trials(true_system, model, config, [trial])[0]


EPT_HEADER = ["system", "seed", "trial", "theta", "ept_steps", "ept_normalized", "finite", "diverged"]


def write_ept_csv(results: Sequence[EptResult], system: str, seed: int, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EPT_HEADER)
        for r in results:
            steps = int(r.ept_steps) if r.finite else "inf"
            w.writerow([
                system, seed, r.trial, repr(r.threshold_theta), steps,
                repr(r.ept_normalized) if r.finite else "inf",
                str(r.finite).lower(), str(r.diverged).lower(),
            ])


def write_error_csv(result: EptResult, dt: float, path) -> None:
    """Per-step dump ``t,E,imag_norm`` for error-growth plots."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "E", "imag_norm"])
        for i, (e, im) in enumerate(zip(result.error_series, result.imag_norm)):
            w.writerow([repr(i * dt), repr(float(e)), repr(float(im))])
