from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stablelpv.coeff import (
    Affine,
    FunctionCoefficients,
    Mlp,
    MlpSpec,
    Polynomial,
    coeff_from_dict,
    init_params,
)


def test_affine_forward():
    np.testing.assert_allclose(Affine([[2.0]], [1.0]).forward(0.5), [2.0])


def test_zero_mlp_returns_output_bias():
    net = Mlp(MlpSpec((1, 5, 5, 3)))
    phi = np.zeros(net.n_params)
    phi[-3:] = [0.3, -0.1, 0.2]
    net.set_params(phi)
    for r in (0.0, 0.4, 1.0):
        np.testing.assert_array_equal(net.forward(r), [0.3, -0.1, 0.2])


def test_parameter_counts():
    assert MlpSpec((1, 5, 5, 3)).n_params == 58
    assert Mlp((1, 5, 5, 3)).n_params == 58
    assert Affine.zeros(1, 3).n_params == 6
    assert Polynomial.zeros(2, 3, 4).n_params == 4 * 6 + 3


def test_mlp_spec_validation():
    with pytest.raises(ValueError):
        MlpSpec((3,))
    with pytest.raises(ValueError):
        MlpSpec((1, 0, 2))


def test_set_get_round_trip(rng):
    net = Mlp((2, 4, 3))
    phi = rng.normal(size=net.n_params)
    net.set_params(phi)
    np.testing.assert_array_equal(net.get_params(), phi)


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        Mlp((1, 2, 1)).set_params(np.zeros(3))
    with pytest.raises(ValueError):
        Affine.zeros(1, 2).set_params(np.zeros(5))


def test_flattening_order():
    net = Mlp((1, 2, 1))
    # layer 0: E (2x1), c (2); layer 1: E (1x2), c (1)
    net.set_params(np.arange(7, dtype=float))
    np.testing.assert_array_equal(net.weights[0], [[0.0], [1.0]])
    np.testing.assert_array_equal(net.biases[0], [2.0, 3.0])
    np.testing.assert_array_equal(net.weights[1], [[4.0, 5.0]])
    np.testing.assert_array_equal(net.biases[1], [6.0])


def test_perturbing_one_entry_changes_one_weight(rng):
    net = Mlp((1, 3, 2))
    phi = rng.normal(size=net.n_params)
    for j in range(net.n_params):
        p = phi.copy()
        p[j] += 1.0
        net.set_params(p)
        assert np.count_nonzero(net.get_params() - phi) == 1


def test_mlp_matches_manual_forward(rng):
    net = Mlp((1, 3, 2), rng.normal(size=MlpSpec((1, 3, 2)).n_params))
    r = 0.37
    h = np.tanh(net.weights[0] @ [r] + net.biases[0])
    np.testing.assert_allclose(net.forward(r), net.weights[1] @ h + net.biases[1], rtol=1e-15)


def test_mlp_gradient_matches_finite_differences(rng):
    # Output is linear in the last layer, so d out / d c_L is the identity.
    net = Mlp((1, 4, 2), rng.normal(size=MlpSpec((1, 4, 2)).n_params))
    phi = net.get_params()
    base = net.forward(0.3)
    h = 1e-7
    p = phi.copy()
    p[-2] += h
    net.set_params(p)
    np.testing.assert_allclose((net.forward(0.3) - base) / h, [1.0, 0.0], atol=1e-6)


def test_polynomial_degree_one_equals_affine(rng):
    E, c = rng.normal(size=(3, 1)), rng.normal(size=3)
    rho = rng.uniform(size=10)
    np.testing.assert_allclose(Polynomial([E], c).forward_batch(rho), Affine(E, c).forward_batch(rho))


def test_polynomial_forward():
    p = Polynomial([[[1.0]], [[2.0]]], [0.5])
    np.testing.assert_allclose(p.forward(3.0), [0.5 + 3.0 + 18.0])


def test_batch_equals_pointwise(rng):
    net = Mlp((1, 5, 5, 3), rng.normal(size=58))
    rho = rng.uniform(size=6)
    batch = net.forward_batch(rho)
    for r, row in zip(rho, batch):
        np.testing.assert_allclose(net.forward(r), row, rtol=1e-14)


def test_init_params_properties():
    spec = MlpSpec((1, 5, 5, 3))
    a, b = init_params(spec, 0), init_params(spec, 0)
    np.testing.assert_array_equal(a, b)
    assert np.any(init_params(spec, 1) != a)
    net = Mlp(spec, a)
    for E, c in zip(net.weights, net.biases):
        assert np.all(np.abs(E) <= 1 / np.sqrt(E.shape[1]))
        assert np.all(c == 0)


def test_init_params_other_families():
    aff = init_params(Affine.zeros(2, 3), 4)
    assert aff.size == 9 and np.all(aff[-3:] == 0)
    assert np.all(np.abs(aff[:6]) <= 1 / np.sqrt(2))
    poly = init_params(Polynomial.zeros(1, 2, 3), 4)
    assert poly.size == 8


@pytest.mark.parametrize("f", [
    Affine([[1.0, 2.0], [3.0, 4.0]], [5.0, 6.0]),
    Polynomial([[[1.0]], [[-2.0]]], [0.25]),
    Mlp((1, 3, 2), np.linspace(-1, 1, MlpSpec((1, 3, 2)).n_params)),
])
def test_json_round_trip(f):
    g = coeff_from_dict(f.to_dict())
    assert type(g) is type(f)
    rho = np.linspace(0, 1, 5).reshape(-1, 1).repeat(f.n_in, axis=1)
    np.testing.assert_array_equal(g.forward_batch(rho), f.forward_batch(rho))


def test_coeff_from_dict_rejects_garbage():
    with pytest.raises(ValueError):
        coeff_from_dict({"variant": "mlp"})
    with pytest.raises(ValueError):
        coeff_from_dict({"variant": "spline", "spec": {}, "phi": []})


def test_function_coefficients_not_serializable():
    f = FunctionCoefficients.constant([1.0, 2.0])
    np.testing.assert_array_equal(f.forward(0.3), [1.0, 2.0])
    assert f.n_params == 0
    with pytest.raises(TypeError):
        f.to_dict()


def test_scheduling_dimension_checked():
    with pytest.raises(ValueError):
        Affine.zeros(2, 1).forward_batch(np.zeros((3, 3)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=58, max_size=58), st.floats(0.0, 1.0))
def test_mlp_output_finite_for_finite_params(phi, rho):
    assert np.all(np.isfinite(Mlp((1, 5, 5, 3), phi).forward(rho)))
