import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pudyn.complex_core import NonFiniteError
from pudyn.network import (
    ModelFormatError,
    ProductUnitModel,
    backward,
    deserialize_model,
    init_model,
    load_model,
    loss_cmse,
    model_forward,
    save_model,
    serialize_model,
    unit_forward,
    unit_values,
)


def finite_difference_grads(model, x, t, h=1e-6):
    """Central differences on every Re/Im of every parameter."""
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


def random_problem(rng, n, m, d, batch):
    model = init_model(n, m, d, rng, exponent_scale=0.5, coefficient_scale=1.0)
    x = rng.uniform(0.3, 2.0, (batch, n)) * rng.choice([-1, 1], (batch, n))
    x = x + 1j * rng.normal(0, 0.3, (batch, n))
    t = rng.normal(size=(batch, d)) + 1j * rng.normal(size=(batch, d))
    return model, x, t


def test_unit_forward_examples():
    assert unit_forward([2, 3], [1, 1]) == pytest.approx(6)
    assert unit_forward([2, 3, 1], [2, 3, 0]) == pytest.approx(108)
    assert unit_forward([4], [0.5], math.log(2)) == pytest.approx(4)
    with pytest.raises(ValueError):
        unit_forward([1, 2], [1])


def test_unit_forward_overflow():
    with pytest.raises(NonFiniteError):
        unit_forward([10.0], [400.0])


def worked_example():
    # 5 x^2 y^3 + x z^0.1 - 4
    return ProductUnitModel(
        exponents=[[2, 3, 0], [1, 0, 0.1], [0, 0, 0]],
        log_biases=[0, 0, 0],
        coefficients=[[5, 1, -4]],
    )


def test_model_forward_worked_example():
    m = worked_example()
    assert model_forward(m, [1, 1, 1])[0] == pytest.approx(2)
    assert model_forward(m, [2, 1, 1])[0] == pytest.approx(18)
    m.coefficients[:] = 0
    assert np.all(model_forward(m, [3, -1, 2]) == 0)
    with pytest.raises(ValueError):
        model_forward(m, [1, 1])


def test_shared_units_match_per_output():
    rng = np.random.default_rng(3)
    m = init_model(3, 6, 4, rng)
    x = rng.normal(size=(5, 3))
    joint = model_forward(m, x)
    for v in range(4):
        single = ProductUnitModel(m.exponents, m.log_biases, m.coefficients[v:v + 1])
        assert np.max(np.abs(joint[:, v] - model_forward(single, x)[:, 0])) == 0


def test_homogeneity():
    rng = np.random.default_rng(4)
    m = init_model(3, 5, 3, rng)
    x = rng.normal(size=(4, 3))
    base = model_forward(m, x)
    m.coefficients[1] *= 2.0
    assert np.array_equal(model_forward(m, x)[:, 1], 2.0 * base[:, 1])


def test_integer_exponents_on_negative_inputs_stay_real():
    rng = np.random.default_rng(5)
    m = ProductUnitModel(
        exponents=rng.integers(-2, 4, (6, 3)),
        log_biases=np.zeros(6),
        coefficients=rng.normal(size=(3, 6)),
    )
    x = -rng.uniform(0.5, 3, (20, 3))
    y = model_forward(m, x)
    assert np.all(np.abs(y.imag) <= 1e-9 * (1 + np.abs(y.real)))


def test_loss_examples():
    assert loss_cmse([1 + 2j], [1 + 2j]) == 0
    assert loss_cmse([0], [1 + 1j]) == pytest.approx(2)
    assert loss_cmse([0, 0, 0], [1, 0, 0]) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        loss_cmse([], [])


def test_gradient_zero_coefficients_kill_exponent_grads():
    rng = np.random.default_rng(6)
    m = init_model(3, 4, 2, rng)
    m.coefficients[:] = 0
    _, g = backward(m, rng.normal(size=(7, 3)), rng.normal(size=(7, 2)))
    assert np.all(g.exponents == 0)
    assert np.all(g.log_biases == 0)


def test_gradient_single_coefficient_example():
    m = ProductUnitModel(exponents=[[0]], log_biases=[0], coefficients=[[0]])
    loss, g = backward(m, [[1.0]], [[1.0]])
    assert loss == 1
    assert g.coefficients[0, 0] == pytest.approx(-2 + 0j)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4), st.integers(1, 10), st.integers(1, 3))
def test_gradient_matches_finite_differences(seed, n, m, d):
    rng = np.random.default_rng(seed)
    model, x, t = random_problem(rng, n, m, d, batch=4)
    _, g = backward(model, x, t)
    fd = finite_difference_grads(model, x, t)
    for name, ref in fd.items():
        got = getattr(g, name)
        np.testing.assert_allclose(got, ref, rtol=1e-5, atol=1e-7)


def test_backward_shape_errors():
    m = init_model(3, 2, 3, 0)
    with pytest.raises(ValueError):
        backward(m, np.ones((2, 2)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        backward(m, np.ones((2, 3)), np.ones((2, 2)))


def test_backward_overflow_is_reported():
    m = ProductUnitModel(exponents=[[500]], log_biases=[0], coefficients=[[1]])
    with pytest.raises(NonFiniteError):
        backward(m, [[10.0]], [[1.0]])


def test_serialize_roundtrip_bit_identical(tmp_path):
    m = init_model(3, 5, 3, 11)
    m.meta["system"] = "lorenz63"
    back = deserialize_model(serialize_model(m))
    for name in ("exponents", "log_biases", "coefficients"):
        assert np.array_equal(getattr(back, name), getattr(m, name))
    assert back.meta == m.meta
    save_model(m, tmp_path / "m.json")
    assert np.array_equal(load_model(tmp_path / "m.json").coefficients, m.coefficients)


def test_deserialize_errors():
    doc = json.loads(serialize_model(init_model(3, 5, 3, 1)))
    doc["coefficients"][0] = doc["coefficients"][0][:-1]
    with pytest.raises(ModelFormatError, match="coefficients"):
        deserialize_model(json.dumps(doc))
    doc = json.loads(serialize_model(init_model(3, 5, 3, 1)))
    doc["exponents"][0][0] = ["a", 0]
    with pytest.raises(ModelFormatError, match="not numeric"):
        deserialize_model(json.dumps(doc))
    with pytest.raises(ModelFormatError, match="line 1 column"):
        deserialize_model("{ bad")


def test_model_rejects_non_finite():
    with pytest.raises(ModelFormatError):
        ProductUnitModel([[np.nan]], [0], [[1]])


def test_init_is_seeded():
    a, b = init_model(3, 5, 3, 7), init_model(3, 5, 3, 7)
    assert np.array_equal(a.exponents, b.exponents)
    assert not np.array_equal(a.exponents, init_model(3, 5, 3, 8).exponents)
