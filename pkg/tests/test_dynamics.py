import numpy as np
import pytest

from pudyn.complex_core import NonFiniteError
from pudyn.dynamics import (
    SYSTEMS,
    TrajectoryConfig,
    generate_dataset,
    get_system,
    read_dataset_csv,
    rhs_eval,
    rk4_step,
    rollout,
    rollout_batch,
    write_dataset_csv,
)


def test_builtin_parameters():
    assert get_system("lorenz63").params == {"sigma": 10.0, "rho": 28.0, "beta": 2.667}
    assert get_system("lorenz84").params == {"a": 0.25, "b": 6.0, "F": 16.0, "G": 3.0}
    assert get_system("four_wing").params == {"a": 0.2, "b": -0.01, "c": 1.0, "d": -0.4, "e": -1.0, "f": -1.0}
    assert get_system("lorenz_fract").params == {"sigma": 35.0, "rho": 28.0, "beta": 3.0, "eta": 0.5}
    assert get_system("Lorenz-Fract") is SYSTEMS["lorenz_fract"]


def test_unknown_system_lists_builtins():
    with pytest.raises(KeyError, match="lorenz63"):
        get_system("rossler")


def test_rhs_examples():
    np.testing.assert_allclose(rhs_eval("lorenz63", [1, 1, 1]), [0, 26, -1.667])
    np.testing.assert_allclose(rhs_eval("lorenz84", [0, 0, 0]), [4, 3, 0])
    np.testing.assert_allclose(rhs_eval("lorenz_fract", [1, 1, 1]), [0, 26, -2])


@pytest.mark.parametrize("name", list(SYSTEMS))
def test_truth_terms_reproduce_rhs(name):
    s = get_system(name)
    x = np.random.default_rng(0).uniform(0.5, 3, (10, 3))
    from_terms = np.stack(
        [sum(c * np.prod(x ** np.array(e), axis=1) for c, e in eq) for eq in s.truth], axis=1
    )
    np.testing.assert_allclose(from_terms, s.rhs(x), rtol=1e-12)


def test_rk4_examples():
    assert np.array_equal(rk4_step(lambda s: 0 * s, np.array([1.0, 2.0]), 0.1), [1.0, 2.0])
    out = rk4_step(lambda s: s, np.array([1.0]), 0.1)
    assert out[0] == pytest.approx(1 + 0.1 + 0.01 / 2 + 0.001 / 6 + 0.0001 / 24, abs=1e-15)
    with pytest.raises(NonFiniteError):
        rk4_step(lambda s: s / 0.0, np.array([1.0]), 0.1)
    with pytest.raises(ValueError):
        rk4_step(lambda s: s, np.array([1.0]), 0.0)


def endpoint_error(dt):
    steps = int(round(1 / dt))
    r = rollout(lambda s: s, np.array([1.0]), dt, steps)
    return abs(r.states[-1, 0] - np.e)


def test_rk4_fourth_order_on_exponential():
    e1, e2, e4 = endpoint_error(1e-2), endpoint_error(5e-3), endpoint_error(2.5e-3)
    assert 12 <= e1 / e2 <= 20
    assert 128 <= e1 / e4 <= 512


def test_rk4_order_on_lorenz63():
    s = get_system("lorenz63")
    start = np.array([1.0, 1.0, 1.0])
    ref = rollout(s.rhs, start, 1e-5, 100_000).states[-1]
    errs = [np.abs(rollout(s.rhs, start, dt, int(round(1 / dt))).states[-1] - ref).max()
            for dt in (0.004, 0.002)]
    assert 12 <= errs[0] / errs[1] <= 20


def test_rollout_single_step_and_bound():
    s = get_system("lorenz63")
    start = np.array([1.0, 1.0, 1.0])
    assert np.array_equal(rollout(s.rhs, start, 0.001, 1).states[1], rk4_step(s.rhs, start, 0.001))
    r = rollout(s.rhs, start, 0.001, 50_000)
    assert r.ok and len(r.states) == 50_001
    assert np.abs(r.states).max() < 100


def test_rollout_reports_failure():
    r = rollout(lambda s: s**2, np.array([1.0]), 0.5, 20)
    assert not r.ok
    assert len(r.states) == r.failed_at
    with pytest.raises(ValueError):
        rollout(lambda s: s, np.array([1.0]), 0.1, 0)


def test_rollout_batch_rows_are_independent():
    s = get_system("lorenz63")
    starts = np.array([[1.0, 1, 1], [-2, 0.5, 3]])
    both = rollout_batch(s.rhs, starts, 0.001, 300).states
    for i in range(2):
        np.testing.assert_allclose(both[:, i], rollout(s.rhs, starts[i], 0.001, 300).states, rtol=0, atol=1e-12)


def test_complex_rollout():
    r = rollout(lambda s: 1j * s, np.array([1.0 + 0j]), 0.01, 100)
    assert abs(r.states[-1, 0] - np.exp(1j)) < 1e-9


def test_dataset_bookkeeping_and_targets():
    ds = generate_dataset("lorenz63", TrajectoryConfig.for_system("lorenz63", 10, 1000, seed=3))
    assert len(ds) == 1000
    assert np.array_equal(np.bincount(ds.traj), [100] * 10)
    assert np.array_equal(ds.targets, get_system("lorenz63").rhs(ds.inputs))
    assert np.all(np.abs(ds.inputs[ds.step == 0]) <= 2)


def test_dataset_floor_drops_leftovers():
    ds = generate_dataset("lorenz63", TrajectoryConfig.for_system("lorenz63", 30, 1000, seed=0))
    assert len(ds) == 30 * 33


def test_dataset_is_deterministic():
    cfg = TrajectoryConfig.for_system("lorenz63", 5, 500, seed=42)
    a, b = generate_dataset("lorenz63", cfg), generate_dataset("lorenz63", cfg)
    assert np.array_equal(a.inputs, b.inputs)
    c = generate_dataset("lorenz63", TrajectoryConfig.for_system("lorenz63", 5, 500, seed=43))
    assert not np.array_equal(a.inputs, c.inputs)


def test_trajectory_streams_do_not_depend_on_count():
    a = generate_dataset("lorenz63", TrajectoryConfig.for_system("lorenz63", 2, 20, seed=1))
    b = generate_dataset("lorenz63", TrajectoryConfig.for_system("lorenz63", 4, 40, seed=1))
    assert np.array_equal(a.inputs, b.inputs[:20])


def test_lorenz_fract_clamp_keeps_points_in_box():
    cfg = TrajectoryConfig.for_system("lorenz_fract", 10, 1000, seed=0, state_clamp=(0.0, 20.0))
    ds = generate_dataset("lorenz_fract", cfg)
    assert ds.inputs.min() >= 0 and ds.inputs.max() <= 20


def test_lorenz_fract_projection_pins_data_to_the_box():
    # projecting each step onto [0, 20] drives most trajectories onto a face of the box
    cfg = TrajectoryConfig.for_system("lorenz_fract", 30, 3000, seed=0, state_clamp=(0.0, 20.0))
    ds = generate_dataset("lorenz_fract", cfg)
    on_face = np.any((ds.inputs == 0) | (ds.inputs == 20), axis=1)
    assert on_face.mean() > 0.5


def test_lorenz_fract_free_integration_stays_nonnegative_in_z():
    ds = generate_dataset("lorenz_fract", TrajectoryConfig.for_system("lorenz_fract", 30, 3000, seed=0))
    assert get_system("lorenz_fract").state_clamp is None
    assert ds.inputs[:, 2].min() >= 0
    assert np.all(np.isfinite(ds.targets))


def test_config_validation():
    with pytest.raises(ValueError):
        TrajectoryConfig(10, 10, 0.001).validate()
    with pytest.raises(ValueError):
        TrajectoryConfig(1, 10, 0.0).validate()


def test_dataset_csv_roundtrip(tmp_path):
    ds = generate_dataset("lorenz63", TrajectoryConfig.for_system("lorenz63", 3, 30, seed=2))
    path = tmp_path / "d.csv"
    write_dataset_csv(ds, path)
    assert path.read_text().splitlines()[0] == "traj,step,t,x,y,z,dx,dy,dz"
    back = read_dataset_csv(path)
    assert np.array_equal(back.inputs, ds.inputs)
    assert np.array_equal(back.targets, ds.targets)
    assert back.dt == pytest.approx(0.001)
