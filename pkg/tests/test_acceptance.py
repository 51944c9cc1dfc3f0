"""End-to-end acceptance checks.

Each test prints one ``ACCEPTANCE <n> PASS|FAIL`` line and asserts the
criterion at its stated tolerance.  Recovery runs are shared between the
criteria that use them, so the whole module takes tens of minutes.
"""
import csv
import functools
import math

import numpy as np
import pytest

from pudyn.cli import build_parser, gait_run, resolve_config
from pudyn.discovery import (
    MergeConfig,
    Term,
    discover,
    match_against_truth,
    merge_terms,
    prune_terms,
    render_equation,
    render_term,
    truth_terms,
)
from pudyn.dynamics import SYSTEMS, TrajectoryConfig, generate_dataset, get_system, rollout
from pudyn.evaluation import EptConfig, TermSystem, compute_ept_trials, corrupted_lorenz63
from pudyn.network import backward, init_model, loss_cmse, model_forward
from pudyn.timeseries import (
    FilterSpec,
    TimeSeries,
    build_embedding_dataset,
    butterworth_lowpass,
    lag_schedule,
    read_series_csv,
    synth_gait,
)
from pudyn.training import TrainConfig, train

SEEDS = range(10)


# ---------------------------------------------------------------------------
# shared recovery runs

@functools.lru_cache(maxsize=None)
def recovery_runs(name: str):
    """Default protocol: 3000 points from 30 trajectories, system unit count, 10 seeds."""
    system = get_system(name)
    runs = []
    for seed in SEEDS:
        ds = generate_dataset(system, TrajectoryConfig.for_system(system, 30, 3000, seed=seed))
        result = train(init_model(3, system.n_units, 3, seed), ds, TrainConfig(seed=seed))
        runs.append((seed, result.model, discover(result.model, system)))
    return runs


def fully_correct(name: str):
    return [(seed, model, res) for seed, model, res in recovery_runs(name) if res.report.fully_correct]


def recovery_line(name: str) -> str:
    return " ".join(
        f"{seed}:{res.report.correct_count}/{res.report.erroneous_count}" for seed, _, res in recovery_runs(name)
    )


# ---------------------------------------------------------------------------
# 1

def _finite_difference(model, x, t, h=1e-6):
    out = {}
    for name in ("exponents", "log_biases", "coefficients"):
        p = getattr(model, name)
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            for part in (1, 1j):
                orig = p[idx]
                p[idx] = orig + h * part
                lp = loss_cmse(model_forward(model, x), t)
                p[idx] = orig - h * part
                lm = loss_cmse(model_forward(model, x), t)
                p[idx] = orig
                g[idx] += part * (lp - lm) / (2 * h)
        out[name] = g
    return out


def test_gradient_correctness(acceptance_report):
    rng = np.random.default_rng(2024)
    n_configs, worst = 120, 0.0
    failures = 0
    for _ in range(n_configs):
        n, m, d, batch = rng.integers(1, 5), rng.integers(1, 11), rng.integers(1, 4), rng.integers(1, 6)
        # moderate magnitudes keep the loss O(1), where a 1e-6 central difference is accurate
        model = init_model(n, m, d, rng, exponent_scale=0.3, coefficient_scale=1.0)
        x = rng.uniform(0.5, 2.0, (batch, n)) * rng.choice([-1, 1], (batch, n)) + 1j * rng.normal(0, 0.3, (batch, n))
        t = rng.normal(size=(batch, d)) + 1j * rng.normal(size=(batch, d))
        _, g = backward(model, x, t)
        for name, ref in _finite_difference(model, x, t).items():
            got = getattr(g, name)
            # relative error, with a floor far below the finite-difference noise for exact zeros
            rel = np.abs(got - ref) / np.maximum(np.abs(ref), 1e-3)
            worst = max(worst, float(rel.max()))
            failures += int(np.any(rel > 1e-5))
    ok = failures == 0
    acceptance_report(1, ok, f"{n_configs} configurations, worst relative error {worst:.2e}")
    assert ok


# ---------------------------------------------------------------------------
# 2

def test_rk4_order(acceptance_report):
    def endpoint_error(dt):
        steps = round(1 / dt)
        return abs(rollout(lambda s: s, np.array([1.0]), dt, steps).states[-1, 0] - math.e)

    e1, e2, e4 = endpoint_error(1e-2), endpoint_error(5e-3), endpoint_error(2.5e-3)
    half, quarter = e1 / e2, e1 / e4
    ok = 12 <= half <= 20 and 128 <= quarter <= 512
    acceptance_report(2, ok, f"halving ratio {half:.2f}, quartering ratio {quarter:.1f}")
    assert ok


# ---------------------------------------------------------------------------
# 3-5

def test_lorenz63_recovery(acceptance_report):
    n = len(fully_correct("lorenz63"))
    ok = n >= 7
    acceptance_report(3, ok, f"lorenz63 fully correct {n}/10 (correct/erroneous per seed {recovery_line('lorenz63')})")
    assert ok


def test_four_wing_and_lorenz84_recovery(acceptance_report):
    counts = {name: len(fully_correct(name)) for name in ("four_wing", "lorenz84")}
    ok = all(c >= 6 for c in counts.values())
    acceptance_report(4, ok, ", ".join(f"{k} fully correct {v}/10" for k, v in counts.items()))
    assert ok


def test_lorenz_fract_recovery(acceptance_report):
    good = fully_correct("lorenz_fract")
    deviations = []
    for _, _, res in good:
        beta_pair = [i for i, j in res.report.equations[2].pairs if j == 1]
        z_exp = res.equations[2][beta_pair[0]].exponents[2]
        deviations.append(abs(z_exp - 0.5))
    worst = max(deviations, default=math.inf)
    ok = len(good) >= 5 and worst <= 0.1
    acceptance_report(
        5, ok, f"lorenz_fract fully correct {len(good)}/10, largest |z exponent - 0.5| of the beta term {worst:.2e}"
    )
    assert ok


# ---------------------------------------------------------------------------
# 6

def _term_key(ts: TermSystem):
    return (tuple(ts.monomials), ts.coefficients.tobytes())


def test_exact_recovery_ept(acceptance_report):
    cache: dict = {}
    checked, infinite, bad = 0, 0, []
    for name in SYSTEMS:
        cfg = EptConfig.for_system(name)
        for seed, model, _ in fully_correct(name):
            ts = TermSystem.from_model(model, decimals=3)
            key = (name, _term_key(ts))
            if key not in cache:  # identical rounded systems give identical trajectories
                cache[key] = compute_ept_trials(name, ts, cfg, trials=3)
            steps = [r.ept_steps for r in cache[key]]
            checked += 1
            if all(s == math.inf for s in steps):
                infinite += 1
            else:
                bad.append(f"{name}/{seed}:{steps}")
    ok = checked > 0 and infinite == checked
    detail = f"{infinite}/{checked} fully-correct models infinite over 3 starts ({len(cache)} distinct rounded systems)"
    if bad:
        detail += "; finite: " + " ".join(bad)
    acceptance_report(6, ok, detail)
    assert ok


# ---------------------------------------------------------------------------
# 7

def test_corrupted_system_ept(acceptance_report):
    results = compute_ept_trials("lorenz63", corrupted_lorenz63(), EptConfig.for_system("lorenz63"), trials=10)
    values = [r.ept_normalized for r in results]
    inside = sum(1 for v in values if math.isfinite(v) and 2 <= v <= 30)
    ok = inside >= 8
    acceptance_report(7, ok, f"{inside}/10 starts in [2, 30]: " + " ".join(f"{v:.2f}" for v in values))
    assert ok


# ---------------------------------------------------------------------------
# 8-10

def test_lag_schedule(acceptance_report):
    lags = lag_schedule()
    ok = (lags[0], lags[24], lags[49]) == (1, 46, 549)
    acceptance_report(8, ok, f"psi_1={lags[0]} psi_25={lags[24]} psi_50={lags[49]}")
    assert ok


def test_embedding_count(acceptance_report):
    n = len(build_embedding_dataset(TimeSeries(np.zeros((2000, 3)), 200.0)).inputs)
    ok = n == 1451
    acceptance_report(9, ok, f"2000-point series gives {n} samples")
    assert ok


def _steady_state_gain(freq_hz, spec=FilterSpec(), seconds=10.0):
    fs = spec.sample_rate_hz
    t = np.arange(int(seconds * fs)) / fs
    y = butterworth_lowpass(TimeSeries(np.cos(2 * np.pi * freq_hz * t), fs), spec).samples[:, 0]
    tail = slice(len(t) - int(2 * fs), None)  # final 2 s
    if freq_hz == 0:
        return float(np.mean(y[tail]))
    basis = np.stack([np.cos(2 * np.pi * freq_hz * t[tail]), np.sin(2 * np.pi * freq_hz * t[tail])], axis=1)
    coef, *_ = np.linalg.lstsq(basis, y[tail], rcond=None)
    return float(np.hypot(*coef))


def test_butterworth_response(acceptance_report):
    dc, g15, g60 = _steady_state_gain(0.0), _steady_state_gain(15.0), _steady_state_gain(60.0)
    ok = abs(dc - 1) <= 1e-9 and abs(g15 * math.sqrt(2) - 1) <= 0.01 and g60 < 0.01
    acceptance_report(10, ok, f"DC gain {dc:.12f}, |H(15 Hz)| {g15:.5f}, |H(60 Hz)| {g60:.2e}")
    assert ok


# ---------------------------------------------------------------------------
# 11

@pytest.fixture(scope="module")
def gait(tmp_path_factory):
    out = tmp_path_factory.mktemp("gait")
    cfg = resolve_config("gait", build_parser().parse_args(["gait", "--out", str(out)]))
    assert (cfg["duration"], cfg["rate"], cfg["train_seconds"]) == (40.0, 200.0, 10.0)
    assert (cfg["units"], cfg["epochs"], cfg["gamma"]) == (300, 500, 0.99)
    return cfg, gait_run(cfg), out


def test_gait_forecasting(acceptance_report, gait):
    _, summary, out = gait
    finite = summary["failed_at"] < 0 and summary["forecast_steps"] == 6000
    rmse = summary.get("rmse", [math.inf] * 3)
    ratio = math.inf
    if finite:
        with open(out / "metrics.csv", newline="") as fh:
            moving = np.array([[float(r[f"mrmse_{c}"]) for c in "xyz"] for r in csv.DictReader(fh)])
        five = 5 * 200
        ratio = float(np.max(moving[-five:].mean(axis=0) / moving[:five].mean(axis=0)))
    ok = finite and max(rmse) <= 0.20 and ratio <= 2.0
    acceptance_report(
        11, ok,
        f"finite={finite} normalized RMSE " + " ".join(f"{v:.3f}" for v in rmse)
        + f", last/first 5 s moving RMSE ratio {ratio:.2f}",
    )
    assert ok


def test_gait_forecast_stays_bounded(gait):
    cfg, summary, out = gait
    assert summary["failed_at"] < 0
    pred = read_series_csv(out / "forecast.csv").samples.real
    train_part = butterworth_lowpass(synth_gait(cfg["duration"], cfg["rate"], cfg["seed"])).samples[:2000]
    span = train_part.max(axis=0) - train_part.min(axis=0)
    assert np.all(pred.max(axis=0) - pred.min(axis=0) <= 2 * span)


# ---------------------------------------------------------------------------
# 12

def test_discovery_unit_properties(acceptance_report):
    checks = {}
    rng = np.random.default_rng(7)
    idempotent = True
    for _ in range(200):
        terms = [
            Term(complex(*rng.normal(size=2)), tuple(np.round(rng.uniform(0, 2, 3) * 4) / 4 + rng.normal(0, 0.03, 3)))
            for _ in range(rng.integers(0, 8))
        ]
        once = merge_terms(terms, 0.1)
        idempotent &= merge_terms(once, 0.1) == once
    checks["merge idempotent"] = idempotent

    terms = [Term(1e-3, (1, 0, 0)), Term(-1e-3, (0, 1, 0)), Term(0.000999, (0, 0, 1)), Term(1e-3j, (1, 1, 0))]
    checks["prune boundary inclusive"] = prune_terms(terms, 1e-3) == [terms[0], terms[1], terms[3]]

    perfect = True
    for name in SYSTEMS:
        truth = truth_terms(name)
        r = match_against_truth(truth, truth, MergeConfig().epsilon)
        perfect &= r.fully_correct and r.correct_count == r.truth_count
    checks["match(truth, truth) perfect"] = perfect

    checks["render rounding"] = (
        render_term(Term(-2.6670001, (0, 0, 1))) == "-2.667*z"
        and render_term(Term(1 + 0.0001j, (1, 1, 0))) == "1.000*x*y"
        and render_term(Term(-3, (0, 0, 0.5))) == "-3.000*z^0.5"
        and render_term(Term(0.0005, (1, 0, 0))) == "0.001*x"
        and render_term(Term(1 + 0.5j, (1.0004, 0, 0))) == "(1.000+0.500i)*x"
        and render_equation([Term(10, (0, 1, 0)), Term(-10, (1, 0, 0))]) == "10.000*y - 10.000*x"
    )
    ok = all(checks.values())
    acceptance_report(12, ok, ", ".join(f"{k}: {'ok' if v else 'FAILED'}" for k, v in checks.items()))
    assert ok
