"""Principal-branch complex arithmetic and the zero clamp used by product units.

Product units evaluate ``x ** w`` as ``exp(w * log(x))``, so every input must be
nonzero and the logarithm must use a fixed branch.  The branch cut is the
negative real axis with ``arg(z)`` in ``(-pi, pi]``; this makes integer powers
of negative reals come out real.
"""
from __future__ import annotations

import cmath
import math

import numpy as np

DEFAULT_EPS = 1e-12


class DomainError(ValueError):
    """Raised when a logarithm or power is requested at zero."""


class NonFiniteError(ArithmeticError):
    """Raised when a computation produces NaN or infinity."""


def _check_finite(z: complex) -> None:
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise NonFiniteError(f"non-finite complex value {z!r}")


def principal_log(z: complex) -> complex:
    """Return ``ln|z| + i*arg(z)`` with ``arg(z)`` in ``(-pi, pi]``."""
    z = complex(z)
    _check_finite(z)
    if z == 0:
        raise DomainError("logarithm of zero")
    # -0.0 imaginary parts would land on the lower lip of the cut
    return cmath.log(complex(z.real, z.imag + 0.0))


def complex_pow(x: complex, w: complex) -> complex:
    """Return ``exp(w * principal_log(x))``.

    Raises
    ------
    DomainError
        If ``x`` is zero.
    OverflowError
        If the exponential overflows.
    """
    out = cmath.exp(complex(w) * principal_log(x))
    _check_finite(out)
    return out


def clamp_nonzero(z: complex, eps: float = DEFAULT_EPS) -> complex:
    """Push ``z`` out to magnitude ``eps`` if it lies closer to the origin.

    The phase is preserved; an exact zero has no phase and maps to ``eps + 0j``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    z = complex(z)
    r = abs(z)
    if r >= eps:
        return z
    if r == 0:
        return complex(eps, 0.0)
    unit = z / r  # dividing first keeps subnormal inputs finite
    mag = eps
    out = unit * mag
    while abs(out) < eps:  # rounding can land one ulp short, which would break idempotence
        mag = math.nextafter(mag, math.inf)
        out = unit * mag
    return out


def clamp_nonzero_array(z: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Vectorized :func:`clamp_nonzero`; always returns a complex128 copy."""
    z = np.array(z, dtype=np.complex128)
    r = np.abs(z)
    small = r < eps
    if small.any():
        zero = r == 0
        fix = small & ~zero
        unit = np.divide(z, r, out=np.ones_like(z), where=fix)
        mag = np.full(r.shape, float(eps))
        out = unit * mag
        short = fix & (np.abs(out) < eps)
        while short.any():
            mag[short] = np.nextafter(mag[short], np.inf)
            out[short] = unit[short] * mag[short]
            short = fix & (np.abs(out) < eps)
        z[fix] = out[fix]
        z[zero] = eps
    return z


def principal_log_array(z: np.ndarray) -> np.ndarray:
    """Vectorized :func:`principal_log` for already-clamped arrays."""
    z = np.asarray(z, dtype=np.complex128)
    if not np.all(np.isfinite(z)):
        raise NonFiniteError("non-finite input to logarithm")
    if np.any(z == 0):
        raise DomainError("logarithm of zero")
    folded = np.empty_like(z)
    folded.real = z.real
    folded.imag = z.imag + 0.0
    return np.log(folded)


def log_clamped(x: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Clamp ``x`` away from zero and take the principal logarithm."""
    return principal_log_array(clamp_nonzero_array(x, eps))
