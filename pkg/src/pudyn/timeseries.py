"""Time-delay embedding, low-pass filtering and closed-loop forecasting of 3-channel signals."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.signal import sosfilt

from . import _rng
from .complex_core import DEFAULT_EPS, NonFiniteError
from .dynamics import TrainingDataset
from .network import ProductUnitModel, model_forward

CHANNELS = ("ax", "ay", "az")


@dataclass
class TimeSeries:
    samples: np.ndarray  # (N, 3), complex only for forecasts
    sample_rate: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim == 1:
            self.samples = self.samples[:, None]
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) / self.sample_rate

    def slice(self, start: int, stop: Optional[int] = None) -> "TimeSeries":
        return TimeSeries(self.samples[start:stop], self.sample_rate)


@dataclass
class EmbeddingConfig:
    n_lags: int = 50
    lag_base: float = 500.0
    channels: int = 3

    def validate(self):
        if self.n_lags < 1:
            raise ValueError("n_lags must be >= 1")
        if not self.lag_base >= 1:
            raise ValueError("lag_base must be >= 1")


@dataclass
class FilterSpec:
    order: int = 4
    cutoff_hz: float = 15.0
    sample_rate_hz: float = 200.0

    def validate(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if not 0 < self.cutoff_hz < self.sample_rate_hz / 2:
            raise ValueError(
                f"cutoff {self.cutoff_hz} Hz must lie strictly between 0 and Nyquist "
                f"({self.sample_rate_hz / 2} Hz)"
            )


def lag_schedule(config: EmbeddingConfig = EmbeddingConfig()) -> list[int]:
    """``psi_k = floor(base**(k/m) + k - 1)`` for ``k = 1..m``."""
    config.validate()
    m = config.n_lags
    return [math.floor(config.lag_base ** (k / m) + k - 1) for k in range(1, m + 1)]


def _lag_matrix(data: np.ndarray, t: np.ndarray, lags: np.ndarray) -> np.ndarray:
    # (len(t), channels * m), channel-major: all lags of channel 0, then channel 1, ...
    idx = t[:, None] - lags[None, :]
    return np.concatenate([data[idx, c] for c in range(data.shape[1])], axis=1)


def build_embedding_dataset(series: TimeSeries, config: EmbeddingConfig = EmbeddingConfig()) -> TrainingDataset:
    """One sample per ``t`` in ``[psi_m, N)``; inputs are the lagged values, targets ``a(t)``."""
    lags = np.array(lag_schedule(config))
    data = series.samples
    if data.shape[1] != config.channels:
        raise ValueError(f"series has {data.shape[1]} channels, config expects {config.channels}")
    if len(data) <= lags[-1]:
        raise ValueError(f"series of length {len(data)} is too short for the largest lag {lags[-1]}")
    t = np.arange(lags[-1], len(data))
    return TrainingDataset(
        inputs=_lag_matrix(data, t, lags),
        targets=data[t],
        step=t,
        dt=1.0 / series.sample_rate,
    )


# ---------------------------------------------------------------------------
# filtering

def butterworth_sos(spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Digital Butterworth low-pass as second-order sections, scipy ``sos`` layout.

    Analog prototype poles are scaled to the pre-warped cutoff and mapped by the
    bilinear transform; every section gets the zero pair at ``z = -1`` and unit
    gain at DC.
    """
    spec.validate()
    n, fs = spec.order, spec.sample_rate_hz
    k = 2.0 * fs
    wc = k * math.tan(math.pi * spec.cutoff_hz / fs)
    analog = wc * np.exp(1j * math.pi * (2 * np.arange(1, n + 1) + n - 1) / (2 * n))
    poles = (k + analog) / (k - analog)
    upper = sorted((p for p in poles if p.imag > 1e-12), key=lambda p: -abs(p))
    real = sorted((p.real for p in poles if abs(p.imag) <= 1e-12), key=lambda p: -abs(p))
    rows = []
    for p in upper:
        a = [1.0, -2.0 * p.real, abs(p) ** 2]
        b = [1.0, 2.0, 1.0]
        g = sum(a) / sum(b)
        rows.append([g * v for v in b] + a)
    for p in real:  # odd orders: one first-order section
        a = [1.0, -p, 0.0]
        g = (1.0 - p) / 2.0
        rows.append([g, g, 0.0] + a)
    return np.array(rows)


def sos_frequency_response(sos: np.ndarray, freq_hz, sample_rate_hz: float) -> np.ndarray:
    z = np.exp(1j * 2 * np.pi * np.asarray(freq_hz, dtype=float) / sample_rate_hz)
    h = np.ones_like(z)
    for b0, b1, b2, a0, a1, a2 in sos:
        h = h * (b0 + b1 / z + b2 / z**2) / (a0 + a1 / z + a2 / z**2)
    return h


def butterworth_lowpass(series: TimeSeries, spec: FilterSpec | None = None) -> TimeSeries:
    """Causal single-pass filtering of every channel from zero initial state."""
    if spec is None:
        spec = FilterSpec(sample_rate_hz=series.sample_rate)
    elif not math.isclose(spec.sample_rate_hz, series.sample_rate):
        raise ValueError("filter sample rate does not match the series")
    out = sosfilt(butterworth_sos(spec), np.asarray(series.samples, dtype=float), axis=0)
    return TimeSeries(out, series.sample_rate)


# ---------------------------------------------------------------------------
# forecasting

@dataclass
class Forecast:
    predictions: TimeSeries  # complex model outputs
    failed_at: int = -1  # step of the first non-finite prediction, -1 if none

    @property
    def ok(self) -> bool:
        return self.failed_at < 0


def forecast(
    model: ProductUnitModel,
    history: TimeSeries,
    steps: int,
    config: EmbeddingConfig = EmbeddingConfig(),
    eps: float = DEFAULT_EPS,
) -> Forecast:
    """Closed-loop rollout that feeds back the real part of each prediction."""
    lags = np.array(lag_schedule(config))
    c = config.channels
    if model.n_inputs != c * len(lags) or model.n_outputs != c:
        raise ValueError(f"model must map {c * len(lags)} inputs to {c} outputs")
    if len(history) <= lags[-1]:
        raise ValueError(f"history of length {len(history)} is too short for the largest lag {lags[-1]}")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    n0 = len(history)
    buf = np.empty((n0 + steps, c))
    buf[:n0] = np.real(history.samples)
    preds = np.empty((steps, c), dtype=np.complex128)
    for s in range(steps):
        t = n0 + s
        x = buf[t - lags].T.reshape(-1)
        try:
            y = model_forward(model, x[None, :], eps)[0]
        except NonFiniteError:
            y = np.full(c, np.nan + 0j)
        if not np.all(np.isfinite(y)):
            return Forecast(TimeSeries(preds[:s].reshape(s, c), history.sample_rate), s)
        preds[s] = y
        buf[t] = y.real
    return Forecast(TimeSeries(preds, history.sample_rate))


# ---------------------------------------------------------------------------
# metrics

def _ranges(true: np.ndarray) -> np.ndarray:
    rng = true.max(axis=0) - true.min(axis=0)
    if np.any(rng <= 0):
        raise ValueError("a channel has zero amplitude range")
    return rng


def rmse_metrics(true_series, predicted_series, window_samples: int) -> tuple[np.ndarray, np.ndarray]:
    """Range-normalized RMSE per channel and its moving-window version.

    The moving RMSE at index ``i`` covers the ``window_samples`` points ending
    at ``i`` (fewer at the start).  Only real parts are compared.
    """
    a = np.real(getattr(true_series, "samples", true_series)).astype(float)
    b = np.real(getattr(predicted_series, "samples", predicted_series)).astype(float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if window_samples < 1:
        raise ValueError("window must be >= 1")
    if len(a) == 0:
        raise ValueError("empty series")
    rng = _ranges(a)
    sq = (a - b) ** 2
    rmse = np.sqrt(sq.mean(axis=0)) / rng
    csum = np.vstack([np.zeros((1, sq.shape[1])), np.cumsum(sq, axis=0)])
    hi = np.arange(1, len(sq) + 1)
    lo = np.maximum(hi - window_samples, 0)
    moving = np.sqrt(np.maximum(csum[hi] - csum[lo], 0.0) / (hi - lo)[:, None]) / rng
    return rmse, moving


# ---------------------------------------------------------------------------
# synthetic gait surrogate

GAIT_FUNDAMENTAL_HZ = 1.8
GAIT_DRIFT_PERIOD_S = 30.0
GAIT_DRIFT_DEPTH = 0.08
# harmonic amplitudes (m/s^2) per axis
GAIT_AMPLITUDES = np.array([[4.0, 1.6, 0.7], [2.5, 1.2, 0.0], [6.0, 2.4, 1.0]])


def _gait_params(seed: int):
    rng = _rng.rng_for(seed, _rng.SIGNAL, 0)
    amps = GAIT_AMPLITUDES * rng.uniform(0.85, 1.15, GAIT_AMPLITUDES.shape)
    phases = rng.uniform(-np.pi, np.pi, amps.shape)
    drift_phase = rng.uniform(-np.pi, np.pi, 3)
    return amps, phases, drift_phase


def gait_envelope(n: int, sample_rate: float, seed: int = 0) -> np.ndarray:
    """Slow multiplicative amplitude drift, shape ``(n, 3)``."""
    _, _, drift_phase = _gait_params(seed)
    t = np.arange(n)[:, None] / sample_rate
    return 1.0 + GAIT_DRIFT_DEPTH * np.sin(2 * np.pi * t / GAIT_DRIFT_PERIOD_S + drift_phase)


def synth_gait(
    duration_s: float = 40.0,
    sample_rate: float = 200.0,
    seed: int = 0,
    noise: float = 0.05,
) -> TimeSeries:
    """Quasi-periodic 3-axis accelerometer reading.

    Per axis: harmonics of 1.8 Hz with a slow amplitude drift plus Gaussian
    noise whose standard deviation is ``noise`` times the axis' largest
    harmonic amplitude.
    """
    if not duration_s > 0:
        raise ValueError("duration must be positive")
    n = int(round(duration_s * sample_rate))
    amps, phases, _ = _gait_params(seed)
    t = np.arange(n)[:, None] / sample_rate
    dyn = np.zeros((n, 3))
    for h in range(amps.shape[1]):
        w = 2 * np.pi * GAIT_FUNDAMENTAL_HZ * (h + 1)
        dyn += amps[:, h] * np.sin(w * t + phases[:, h])
    dyn *= gait_envelope(n, sample_rate, seed)
    sigma = noise * amps.max(axis=1)
    eps = _rng.rng_for(seed, _rng.SIGNAL, 1).standard_normal((n, 3))
    return TimeSeries(dyn + sigma * eps, sample_rate)


# ---------------------------------------------------------------------------
# CSV

def write_series_csv(series: TimeSeries, path) -> None:
    data = np.asarray(series.samples)
    cplx = np.iscomplexobj(data)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *CHANNELS] + ([f"{c}_im" for c in CHANNELS] if cplx else []))
        for t, row in zip(series.times, data):
            vals = [repr(float(v)) for v in np.real(row)]
            if cplx:
                vals += [repr(float(v)) for v in np.imag(row)]
            w.writerow([repr(float(t)), *vals])


def read_series_csv(path, sample_rate: Optional[float] = None) -> TimeSeries:
    """Read ``t,ax,ay,az``; the sample rate is inferred from ``t`` unless given."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"t", *CHANNELS} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no samples")
    t = np.array([float(r["t"]) for r in rows])
    data = np.array([[float(r[c]) for c in CHANNELS] for r in rows])
    if all(f"{c}_im" in rows[0] for c in CHANNELS):
        data = data + 1j * np.array([[float(r[f"{c}_im"]) for c in CHANNELS] for r in rows])
    if sample_rate is None:
        if len(t) < 2:
            raise ValueError(f"{path}: need two samples or an explicit sample rate")
        sample_rate = 1.0 / float(np.median(np.diff(t)))
    return TimeSeries(data, sample_rate)


METRICS_HEADER = ["t", "err_x", "err_y", "err_z", "mrmse_x", "mrmse_y", "mrmse_z"]


def write_metrics_csv(true_series: TimeSeries, predicted: TimeSeries, window_samples: int, path, t0: float = 0.0) -> None:
    _, moving = rmse_metrics(true_series, predicted, window_samples)
    err = np.real(predicted.samples) - np.real(true_series.samples)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for i in range(len(err)):
            w.writerow([repr(t0 + i / true_series.sample_rate)]
                       + [repr(float(v)) for v in err[i]]
                       + [repr(float(v)) for v in moving[i]])
