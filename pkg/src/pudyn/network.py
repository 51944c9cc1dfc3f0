"""Complex-valued product-unit network.

One layer of product units feeds a fully connected linear output layer::

    unit_k(x) = exp(b_k + sum_i w_ki * log x_i)
    f_v(x)    = sum_k c_vk * unit_k(x)

All parameters are complex.  Gradients are reported in the real-pair
convention: the gradient entry for a complex parameter ``p`` is
``dL/dRe(p) + 1j * dL/dIm(p)``.  For the real-valued loss used here this is
twice the conjugate Wirtinger derivative, so plain gradient descent on the
pairs is Wirtinger gradient descent.
"""
from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ._rng import INIT, rng_for
from .complex_core import (
    DEFAULT_EPS,
    NonFiniteError,
    log_clamped,
    principal_log,
)

# exp() of a larger real part overflows float64
OVERFLOW_LIMIT = 300.0


class ModelFormatError(ValueError):
    """A model document is malformed or its arrays have inconsistent shapes."""


@dataclass
class ProductUnitModel:
    exponents: np.ndarray  # (n_units, n_inputs)
    log_biases: np.ndarray  # (n_units,)
    coefficients: np.ndarray  # (n_outputs, n_units)
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.exponents = np.array(self.exponents, dtype=np.complex128, ndmin=2)
        self.log_biases = np.array(self.log_biases, dtype=np.complex128, ndmin=1)
        self.coefficients = np.array(self.coefficients, dtype=np.complex128, ndmin=2)
        m, n = self.exponents.shape
        if m < 1 or n < 1:
            raise ModelFormatError("model needs at least one unit and one input")
        if self.log_biases.shape != (m,):
            raise ModelFormatError(
                f"log_biases has shape {self.log_biases.shape}, expected ({m},)"
            )
        if self.coefficients.ndim != 2 or self.coefficients.shape[1] != m:
            raise ModelFormatError(
                f"coefficients has shape {self.coefficients.shape}, expected (d, {m})"
            )
        if self.coefficients.shape[0] < 1:
            raise ModelFormatError("model needs at least one output")
        for name in ("exponents", "log_biases", "coefficients"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ModelFormatError(f"{name} contains non-finite entries")

    @property
    def n_inputs(self) -> int:
        return self.exponents.shape[1]

    @property
    def n_units(self) -> int:
        return self.exponents.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.coefficients.shape[0]

    def copy(self) -> "ProductUnitModel":
        return ProductUnitModel(
            self.exponents.copy(),
            self.log_biases.copy(),
            self.coefficients.copy(),
            dict(self.meta),
        )

    def effective_coefficients(self) -> np.ndarray:
        """Coefficients with the log-domain biases folded in, ``c_vk * exp(b_k)``."""
        return self.coefficients * np.exp(self.log_biases)[None, :]


@dataclass
class GradientSet:
    """Partials of a real loss, packed as ``dL/dRe + 1j * dL/dIm`` per parameter."""

    exponents: np.ndarray
    log_biases: np.ndarray
    coefficients: np.ndarray


def init_model(
    n_inputs: int,
    n_units: int,
    n_outputs: int,
    seed: int | np.random.Generator | None = None,
    exponent_scale: float = 0.1,
    coefficient_scale: float = 0.5,
) -> ProductUnitModel:
    """Draw a model from circular Gaussians.

    Small exponents start every unit close to a constant, which keeps the
    first forward passes far from overflow.
    """
    rng = seed if isinstance(seed, np.random.Generator) else rng_for(seed or 0, INIT)

    def draw(scale, shape):
        return rng.normal(0.0, scale, shape) + 1j * rng.normal(0.0, scale, shape)

    return ProductUnitModel(
        exponents=draw(exponent_scale, (n_units, n_inputs)),
        log_biases=draw(exponent_scale, n_units),
        coefficients=draw(coefficient_scale, (n_outputs, n_units)),
    )


def unit_forward(x, w_row, b: complex = 0j) -> complex:
    """Single product unit ``exp(b + sum_i w_i log x_i)`` on clamped inputs."""
    if len(x) != len(w_row):
        raise ValueError(f"input has {len(x)} entries, exponent row has {len(w_row)}")
    z = complex(b) + sum(complex(w) * principal_log(xi) for xi, w in zip(x, w_row))
    if z.real > OVERFLOW_LIMIT:
        raise NonFiniteError(f"unit pre-activation {z.real:.1f} would overflow")
    return cmath.exp(z)


def _pre_activations(model: ProductUnitModel, logs: np.ndarray) -> np.ndarray:
    return logs @ model.exponents.T + model.log_biases


def unit_values(model: ProductUnitModel, x, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Product-unit activations for a state ``(n,)`` or a batch ``(B, n)``."""
    x = np.asarray(x)
    if x.shape[-1] != model.n_inputs:
        raise ValueError(f"expected {model.n_inputs} inputs, got {x.shape[-1]}")
    z = _pre_activations(model, log_clamped(x, eps))
    bad = z.real > OVERFLOW_LIMIT
    if bad.any():
        rows = np.unique(np.nonzero(np.atleast_2d(bad))[0]).tolist()
        raise NonFiniteError(f"unit pre-activation overflow in samples {rows}")
    return np.exp(z)


def model_forward(model: ProductUnitModel, x, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Evaluate all outputs; unit values are computed once and shared.

    Units are accumulated in index order, elementwise per output, so an
    output does not depend on how many other outputs are evaluated with it.
    """
    u = unit_values(model, x, eps)
    c = model.coefficients.T
    out = u[..., 0:1] * c[0]
    for k in range(1, model.n_units):
        out = out + u[..., k:k + 1] * c[k]
    return out


def loss_cmse(preds, targets) -> float:
    """Mean of ``(f - f_hat) * conj(f - f_hat)`` over all entries."""
    preds = np.asarray(preds, dtype=np.complex128)
    targets = np.asarray(targets, dtype=np.complex128)
    if preds.shape != targets.shape:
        raise ValueError(f"shape mismatch {preds.shape} vs {targets.shape}")
    if preds.size == 0:
        raise ValueError("loss of an empty batch")
    r = preds - targets
    return float(np.mean(r.real**2 + r.imag**2))


def backward_from_logs(
    model: ProductUnitModel, logs: np.ndarray, targets: np.ndarray
) -> tuple[float, GradientSet]:
    """Loss and gradients for a batch whose inputs are already ``log_clamped``.

    The loss is averaged over samples and outputs.  Samples are reduced in
    index order, so results are reproducible bit for bit.
    """
    if logs.ndim != 2 or logs.shape[1] != model.n_inputs:
        raise ValueError(f"inputs must have shape (B, {model.n_inputs})")
    if targets.shape != (logs.shape[0], model.n_outputs):
        raise ValueError(f"targets must have shape ({logs.shape[0]}, {model.n_outputs})")
    if logs.shape[0] == 0:
        raise ValueError("empty batch")
    z = _pre_activations(model, logs)
    if np.any(z.real > OVERFLOW_LIMIT):
        raise NonFiniteError("unit pre-activation overflow")
    u = np.exp(z)
    resid = u @ model.coefficients.T - targets
    scale = 2.0 / resid.size
    loss = float(np.mean(resid.real**2 + resid.imag**2))
    if not math.isfinite(loss):
        raise NonFiniteError("non-finite loss")

    # holomorphic chain rule in the real-pair convention: g_in = conj(df/din) * g_out
    g_out = scale * resid
    g_coef = g_out.T @ u.conj()
    g_z = (g_out @ model.coefficients.conj()) * u.conj()
    if not np.all(np.isfinite(g_z)):
        raise NonFiniteError("non-finite gradient")
    grads = GradientSet(
        exponents=g_z.T @ logs.conj(),
        log_biases=g_z.sum(axis=0),
        coefficients=g_coef,
    )
    return loss, grads


def backward(
    model: ProductUnitModel, inputs, targets, eps: float = DEFAULT_EPS
) -> tuple[float, GradientSet]:
    """Batch loss and exact gradients with respect to every parameter."""
    inputs = np.atleast_2d(np.asarray(inputs))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.complex128))
    return backward_from_logs(model, log_clamped(inputs, eps), targets)


# ---------------------------------------------------------------------------
# serialization

def _pairs(a: np.ndarray) -> list:
    return np.stack([a.real, a.imag], axis=-1).tolist()


def model_to_dict(model: ProductUnitModel) -> dict:
    return {
        "n_inputs": model.n_inputs,
        "n_units": model.n_units,
        "n_outputs": model.n_outputs,
        "exponents": _pairs(model.exponents),
        "log_biases": _pairs(model.log_biases),
        "coefficients": _pairs(model.coefficients),
        "meta": model.meta,
    }


def _complex_array(doc: dict, key: str, shape: tuple[int, ...]) -> np.ndarray:
    if key not in doc:
        raise ModelFormatError(f"missing field {key!r}")
    try:
        arr = np.array(doc[key], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"field {key!r} is not numeric: {exc}") from None
    if arr.shape != shape + (2,):
        raise ModelFormatError(f"field {key!r} has shape {arr.shape[:-1]}, expected {shape}")
    return arr[..., 0] + 1j * arr[..., 1]


def model_from_dict(doc: dict) -> ProductUnitModel:
    try:
        n, m, d = (int(doc[k]) for k in ("n_inputs", "n_units", "n_outputs"))
    except KeyError as exc:
        raise ModelFormatError(f"missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"dimension fields must be integers: {exc}") from None
    return ProductUnitModel(
        exponents=_complex_array(doc, "exponents", (m, n)),
        log_biases=_complex_array(doc, "log_biases", (m,)),
        coefficients=_complex_array(doc, "coefficients", (d, m)),
        meta=dict(doc.get("meta") or {}),
    )


def serialize_model(model: ProductUnitModel) -> str:
    # json writes floats with repr(), which round-trips exactly
    return json.dumps(model_to_dict(model), indent=1)


def deserialize_model(text: str) -> ProductUnitModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(
            f"invalid model document at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from None
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be an object")
    return model_from_dict(doc)


def save_model(model: ProductUnitModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_model(model))
        fh.write("\n")


def load_model(path) -> ProductUnitModel:
    with open(path) as fh:
        return deserialize_model(fh.read())


__all__ = [
    "GradientSet",
    "ModelFormatError",
    "ProductUnitModel",
    "backward",
    "backward_from_logs",
    "deserialize_model",
    "init_model",
    "load_model",
    "loss_cmse",
    "model_forward",
    "save_model",
    "serialize_model",
    "unit_forward",
    "unit_values",
]
