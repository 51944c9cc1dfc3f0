"""Benchmark ODE systems, the classical RK4 integrator and training-data generation."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _rng
from .complex_core import NonFiniteError, log_clamped

Box = tuple[tuple[float, float], ...]
# (coefficient, exponents) pairs, one list per equation
TruthTerms = tuple[tuple[tuple[float, tuple[float, ...]], ...], ...]


@dataclass(frozen=True)
class SystemSpec:
    name: str
    params: dict
    rhs: Callable[[np.ndarray], np.ndarray]
    truth: TruthTerms
    lyapunov: float
    n_units: int
    dt: float
    train_box: Box
    ept_box: Box
    state_clamp: Optional[Box] = None
    state_dim: int = 3

    def __call__(self, state):
        return self.rhs(state)


def _split(s):
    s = np.asarray(s)
    return s[..., 0], s[..., 1], s[..., 2]


def _fractional_power(z, eta):
    if np.iscomplexobj(z):
        return np.exp(eta * log_clamped(z))
    with np.errstate(invalid="ignore"):
        return np.power(z, eta)


def _lorenz63(p):
    sigma, rho, beta = p["sigma"], p["rho"], p["beta"]

    def rhs(s):
        x, y, z = _split(s)
        return np.stack([sigma * (y - x), x * (rho - z) - y, x * y - beta * z], axis=-1)

    truth = (
        ((-sigma, (1, 0, 0)), (sigma, (0, 1, 0))),
        ((-1.0, (1, 0, 1)), (rho, (1, 0, 0)), (-1.0, (0, 1, 0))),
        ((1.0, (1, 1, 0)), (-beta, (0, 0, 1))),
    )
    return rhs, truth


def _lorenz84(p):
    a, b, F, G = p["a"], p["b"], p["F"], p["G"]

    def rhs(s):
        x, y, z = _split(s)
        return np.stack(
            [
                -y * y - z * z - a * x + a * F,
                x * y - b * x * z - y + G,
                b * x * y + x * z - z,
            ],
            axis=-1,
        )

    truth = (
        ((-1.0, (0, 2, 0)), (-1.0, (0, 0, 2)), (-a, (1, 0, 0)), (a * F, (0, 0, 0))),
        ((1.0, (1, 1, 0)), (-b, (1, 0, 1)), (-1.0, (0, 1, 0)), (G, (0, 0, 0))),
        ((b, (1, 1, 0)), (1.0, (1, 0, 1)), (-1.0, (0, 0, 1))),
    )
    return rhs, truth


def _four_wing(p):
    a, b, c, d, e, f = (p[k] for k in "abcdef")

    def rhs(s):
        x, y, z = _split(s)
        return np.stack([a * x + c * y * z, b * x + d * y - x * z, e * z + f * x * y], axis=-1)

    truth = (
        ((a, (1, 0, 0)), (c, (0, 1, 1))),
        ((b, (1, 0, 0)), (d, (0, 1, 0)), (-1.0, (1, 0, 1))),
        ((e, (0, 0, 1)), (f, (1, 1, 0))),
    )
    return rhs, truth


def _lorenz_fract(p):
    sigma, rho, beta, eta = p["sigma"], p["rho"], p["beta"], p["eta"]

    def rhs(s):
        x, y, z = _split(s)
        return np.stack(
            [sigma * (y - x), x * (rho - z) - y, x * y - beta * _fractional_power(z, eta)],
            axis=-1,
        )

    truth = (
        ((-sigma, (1, 0, 0)), (sigma, (0, 1, 0))),
        ((-1.0, (1, 0, 1)), (rho, (1, 0, 0)), (-1.0, (0, 1, 0))),
        ((1.0, (1, 1, 0)), (-beta, (0, 0, eta))),
    )
    return rhs, truth


def _box(lo, hi, n=3) -> Box:
    return tuple((float(lo), float(hi)) for _ in range(n))


def _make(name, builder, params, **kw) -> SystemSpec:
    rhs, truth = builder(params)
    truth = tuple(
        tuple((float(c), tuple(float(e) for e in ex)) for c, ex in eq) for eq in truth
    )
    return SystemSpec(name=name, params=dict(params), rhs=rhs, truth=truth, **kw)


SYSTEMS: dict[str, SystemSpec] = {
    s.name: s
    for s in (
        _make(
            "lorenz63", _lorenz63, {"sigma": 10.0, "rho": 28.0, "beta": 2.667},
            lyapunov=0.9056, n_units=5, dt=0.001,
            train_box=_box(-2, 2), ept_box=_box(-4, 4),
        ),
        _make(
            "lorenz84", _lorenz84, {"a": 0.25, "b": 6.0, "F": 16.0, "G": 3.0},
            lyapunov=0.56, n_units=8, dt=0.001,
            train_box=_box(-2, 2), ept_box=_box(-4, 4),
        ),
        _make(
            "four_wing", _four_wing,
            {"a": 0.2, "b": -0.01, "c": 1.0, "d": -0.4, "e": -1.0, "f": -1.0},
            lyapunov=0.064, n_units=6, dt=0.001,
            train_box=_box(-2, 2), ept_box=_box(-4, 4),
        ),
        # the [0, 20] bound constrains the starting points; free integration keeps
        # z positive, whereas projecting every step pins the data to a box corner
        _make(
            "lorenz_fract", _lorenz_fract,
            {"sigma": 35.0, "rho": 28.0, "beta": 3.0, "eta": 0.5},
            lyapunov=6e-5, n_units=5, dt=0.01,
            train_box=_box(0, 20), ept_box=_box(0, 40),
        ),
    )
}

_ALIASES = {"fourwing": "four_wing", "lorenzfract": "lorenz_fract"}


def get_system(name: str | SystemSpec) -> SystemSpec:
    if isinstance(name, SystemSpec):
        return name
    key = name.lower().replace("-", "_")
    key = _ALIASES.get(key.replace("_", ""), key)
    try:
        return SYSTEMS[key]
    except KeyError:
        raise KeyError(
            f"unknown system {name!r}; built-ins: {', '.join(SYSTEMS)}"
        ) from None


def rhs_eval(system: str | SystemSpec, state) -> np.ndarray:
    return get_system(system).rhs(np.asarray(state))


def rk4_step(rhs: Callable, state, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step with weights 1/6, 1/3, 1/3, 1/6."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    state = np.asarray(state)
    with np.errstate(all="ignore"):
        k1 = rhs(state)
        k2 = rhs(state + 0.5 * dt * k1)
        k3 = rhs(state + 0.5 * dt * k2)
        k4 = rhs(state + dt * k3)
    for k in (k1, k2, k3, k4):
        if not np.all(np.isfinite(k)):
            raise NonFiniteError("non-finite RK4 stage value")
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass
class Rollout:
    """Trajectory including the start point.

    For a single start ``states`` has shape ``(len, n)`` and is truncated at
    the last finite state; ``failed_at`` is the step whose state became
    non-finite, or ``None``.  Batched rollouts keep the full length, pad
    failed rows with NaN and report ``failed_at`` per row (-1 = no failure).
    """

    states: np.ndarray
    failed_at: Optional[int] | np.ndarray

    @property
    def ok(self) -> bool:
        if self.failed_at is None:
            return True
        return bool(np.all(np.asarray(self.failed_at) < 0))


def rollout_batch(
    rhs: Callable,
    starts,
    dt: float,
    steps: int,
    post_step: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Rollout:
    """Integrate a batch of starts ``(B, n)`` independently for ``steps`` steps."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not dt > 0:
        raise ValueError("dt must be positive")
    s = np.array(starts, ndmin=2)
    out = np.empty((steps + 1,) + s.shape, dtype=np.result_type(s, rhs(s)))
    out[0] = s
    failed = np.full(s.shape[0], -1)
    h = 0.5 * dt
    with np.errstate(all="ignore"):
        for i in range(1, steps + 1):
            k1 = rhs(s)
            k2 = rhs(s + h * k1)
            k3 = rhs(s + h * k2)
            k4 = rhs(s + dt * k3)
            s = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if post_step is not None:
                s = post_step(s)
            bad = ~np.all(np.isfinite(s), axis=-1)
            if bad.any():
                new = bad & (failed < 0)
                failed[new] = i
                s = np.where(bad[:, None], np.nan, s)
            out[i] = s
    return Rollout(out, failed)


def rollout(
    rhs: Callable,
    start,
    dt: float,
    steps: int,
    post_step: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Rollout:
    """Integrate a single trajectory; works for real and complex states."""
    start = np.asarray(start)
    res = rollout_batch(lambda s: rhs(s[0])[None], start[None], dt, steps, post_step)
    fail = int(res.failed_at[0])
    states = res.states[:, 0]
    if fail >= 0:
        return Rollout(states[:fail], fail)
    return Rollout(states, None)


# ---------------------------------------------------------------------------
# training data

@dataclass
class TrajectoryConfig:
    n_trajectories: int
    total_points: int
    dt: float
    init_box: Sequence = ((-2.0, 2.0),) * 3
    state_clamp: Optional[Sequence] = None
    seed: int = 0

    @property
    def points_per_trajectory(self) -> int:
        return self.total_points // self.n_trajectories

    def validate(self) -> None:
        if self.n_trajectories < 1 or self.total_points < 1:
            raise ValueError("trajectory and point counts must be positive")
        if self.points_per_trajectory < 2:
            raise ValueError("need at least 2 points per trajectory")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @classmethod
    def for_system(cls, system, n_trajectories: int, total_points: int, seed: int = 0, **kw):
        """Config with the system's own step size and starting box unless overridden."""
        system = get_system(system)
        kw.setdefault("dt", system.dt)
        kw.setdefault("init_box", system.train_box)
        kw.setdefault("state_clamp", system.state_clamp)
        return cls(n_trajectories, total_points, seed=seed, **kw)


def as_box(box, n: int = 3) -> np.ndarray:
    """Normalize ``(lo, hi)`` or per-coordinate intervals to an ``(n, 2)`` array."""
    arr = np.asarray(box, dtype=float)
    if arr.shape == (2,):
        arr = np.tile(arr, (n, 1))
    if arr.shape != (n, 2) or np.any(arr[:, 0] > arr[:, 1]):
        raise ValueError(f"invalid box {box!r}")
    return arr


@dataclass
class TrainingDataset:
    inputs: np.ndarray
    targets: np.ndarray
    traj: np.ndarray = field(default=None)
    step: np.ndarray = field(default=None)
    dt: float = 0.0

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs))
        self.targets = np.atleast_2d(np.asarray(self.targets))
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets differ in length")
        n = len(self.inputs)
        if self.traj is None:
            self.traj = np.zeros(n, dtype=int)
        if self.step is None:
            self.step = np.arange(n)

    def __len__(self) -> int:
        return len(self.inputs)


def trajectory_starts(config: TrajectoryConfig, n: int = 3) -> np.ndarray:
    """Uniform starting points; trajectory ``j`` draws from its own ``(seed, j)`` stream."""
    box = as_box(config.init_box, n)
    return np.array(
        [
            _rng.rng_for(config.seed, _rng.DATA, j).uniform(box[:, 0], box[:, 1])
            for j in range(config.n_trajectories)
        ]
    )


def generate_dataset(system, config: TrajectoryConfig) -> TrainingDataset:
    """Sample RK4 trajectories and pair every point with its exact derivative."""
    system = get_system(system)
    config.validate()
    ppt = config.points_per_trajectory
    starts = trajectory_starts(config, system.state_dim)
    post = None
    if config.state_clamp is not None:
        clamp = as_box(config.state_clamp, system.state_dim)
        post = lambda s: np.clip(s, clamp[:, 0], clamp[:, 1])  # noqa: E731
        starts = post(starts)
    if ppt > 1:
        res = rollout_batch(system.rhs, starts, config.dt, ppt - 1, post)
        if not res.ok:
            j = int(np.argmax(res.failed_at >= 0))
            raise NonFiniteError(
                f"{system.name}: trajectory {j} became non-finite at step {res.failed_at[j]}"
            )
        states = res.states
    else:
        states = starts[None]
    # (steps, traj, n) -> trajectory-major sample order
    pts = np.transpose(states, (1, 0, 2)).reshape(-1, system.state_dim)
    targets = system.rhs(pts)
    if not np.all(np.isfinite(targets)):
        raise NonFiniteError(f"{system.name}: non-finite derivative in generated data")
    traj = np.repeat(np.arange(config.n_trajectories), ppt)
    step = np.tile(np.arange(ppt), config.n_trajectories)
    return TrainingDataset(pts, targets, traj, step, config.dt)


DATASET_HEADER = ["traj", "step", "t", "x", "y", "z", "dx", "dy", "dz"]


def write_dataset_csv(ds: TrainingDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DATASET_HEADER)
        for i in range(len(ds)):
            row = [int(ds.traj[i]), int(ds.step[i]), repr(float(ds.step[i] * ds.dt))]
            row += [repr(float(v)) for v in ds.inputs[i]]
            row += [repr(float(v)) for v in ds.targets[i]]
            w.writerow(row)


def read_dataset_csv(path) -> TrainingDataset:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no samples")
    missing = set(DATASET_HEADER) - set(rows[0])
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    inputs = np.array([[float(r[k]) for k in ("x", "y", "z")] for r in rows])
    targets = np.array([[float(r[k]) for k in ("dx", "dy", "dz")] for r in rows])
    traj = np.array([int(r["traj"]) for r in rows])
    step = np.array([int(r["step"]) for r in rows])
    dt = 0.0
    nz = step > 0
    if nz.any():
        i = int(np.argmax(nz))
        dt = float(rows[i]["t"]) / step[i]
    return TrainingDataset(inputs, targets, traj, step, dt)


def write_trajectory_csv(states, dt: float, path, traj: int = 0) -> None:
    """Write one rollout; complex states get extra ``*_im`` columns."""
    states = np.asarray(states)
    cplx = np.iscomplexobj(states)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["traj", "step", "t", "x", "y", "z"] + (["x_im", "y_im", "z_im"] if cplx else []))
        for i, s in enumerate(states):
            row = [traj, i, repr(i * dt)] + [repr(float(v)) for v in s.real]
            if cplx:
                row += [repr(float(v)) for v in s.imag]
            w.writerow(row)
