from __future__ import annotations

import numpy as np
import pytest

from stablelpv.coeff import Affine, FunctionCoefficients, Mlp, MlpSpec, init_params
from stablelpv.datagen import MdsParams, mds_model
from stablelpv.model import (
    CoefficientVector,
    LpvIoModel,
    LpvIoStructure,
    SchedulingPoint,
    SignalSequence,
    SimulationError,
    build_max_ss,
    frozen_response,
    simulate_io,
    simulate_recurrence,
    simulate_ss,
)
from stablelpv.stabparam import StableLpvIoModel, XwFactor


def constant_model(a, b) -> LpvIoModel:
    a, b = list(a), list(b)
    return LpvIoModel(LpvIoStructure(len(a), len(b)), FunctionCoefficients.constant(a + b))


def random_model(rng, n_a: int, n_b: int) -> LpvIoModel:
    spec = MlpSpec((1, 4, n_a + n_b))
    return LpvIoModel(LpvIoStructure(n_a, n_b), Mlp(spec, 0.4 * rng.normal(size=spec.n_params)))


def random_stable_model(rng, n_a: int, n_b: int) -> StableLpvIoModel:
    """Bounded trajectories keep an absolute tolerance meaningful."""
    spec = MlpSpec((1, 4, n_a + n_b))
    xw = XwFactor(rng.normal(scale=0.5, size=n_a), rng.normal(size=n_a * (n_a - 1) // 2))
    return StableLpvIoModel(LpvIoStructure(n_a, n_b), Mlp(spec, rng.normal(size=spec.n_params)), xw)


def test_first_order_impulse_is_geometric():
    m = constant_model([0.5], [1.0])
    u = np.zeros(8)
    u[0] = 1.0
    y = simulate_io(m, u, np.zeros(8)).samples
    np.testing.assert_allclose(y, (-0.5) ** np.arange(8), rtol=0, atol=1e-15)


def test_zero_input_gives_zero_output(rng):
    m = random_model(rng, 2, 3)
    y = simulate_io(m, np.zeros(50), rng.uniform(size=50)).samples
    assert np.all(y == 0)


def test_static_gain():
    m = constant_model([], [2.0])
    assert simulate_io(m, [1.0, 1.0], [0.0, 0.0]).samples.tolist() == [2.0, 2.0]


def test_length_mismatch_rejected():
    m = constant_model([0.5], [1.0])
    with pytest.raises(ValueError):
        simulate_io(m, np.ones(5), np.zeros(4))


def test_divergence_raises():
    m = constant_model([-2.0], [1.0])
    with pytest.raises(SimulationError):
        simulate_io(m, np.ones(100), np.zeros(100))


def test_initial_conditions_enter_recurrence():
    # y_0 = -a1 y_{-1} - a2 y_{-2} + b0 u_0 + b1 u_{-1}
    a = np.array([[0.3, -0.2]])
    b = np.array([[1.0, 0.5]])
    y = simulate_recurrence(a, b, np.array([2.0]), y_init=[1.0, 4.0], u_init=[3.0])
    assert y[0] == pytest.approx(-0.3 * 1.0 + 0.2 * 4.0 + 2.0 + 1.5)


def test_structure_validation():
    with pytest.raises(ValueError):
        LpvIoStructure(-1, 1)
    with pytest.raises(ValueError):
        LpvIoStructure(2, 0)
    assert LpvIoStructure(2, 3).n_states == 4


def test_scheduling_point_bounds():
    SchedulingPoint([0.5], [(0.0, 1.0)])
    with pytest.raises(ValueError):
        SchedulingPoint([1.5], [(0.0, 1.0)])


def test_coefficient_vector_views():
    cv = CoefficientVector([0.1, 0.2], [3.0, 4.0, 5.0])
    np.testing.assert_array_equal(cv.K, [0.1, 0.2])
    np.testing.assert_array_equal(cv.L, [4.0, 5.0])
    assert cv.b0 == 3.0


def test_zero_coefficients_give_shift_chains():
    ss = build_max_ss(constant_model([0.0, 0.0], [0.0, 0.0, 0.0]))
    A = ss.A([0.3])
    expected = np.zeros((4, 4))
    expected[1, 0] = 1.0
    expected[3, 2] = 1.0
    np.testing.assert_array_equal(A, expected)


def test_state_space_needs_autoregressive_part():
    with pytest.raises(ValueError):
        build_max_ss(constant_model([], [1.0]))


@pytest.mark.parametrize("n_a,n_b", [(1, 1), (2, 1), (2, 3), (3, 2)])
def test_state_space_matches_recurrence_with_initial_state(rng, n_a, n_b):
    m = random_stable_model(rng, n_a, n_b)
    N = 200
    u = rng.normal(size=N)
    rho = rng.uniform(size=N)
    y_init = rng.normal(size=n_a)
    u_init = rng.normal(size=n_b - 1)
    ss = build_max_ss(m)
    y_io = simulate_io(m, u, rho, y_init, u_init).samples
    y_ss = simulate_ss(ss, u, rho, ss.pack_state(y_init, u_init)).samples
    assert np.max(np.abs(y_io - y_ss)) < 1e-10


def test_state_space_zero_state_zero_input():
    ss = build_max_ss(constant_model([0.4, 0.1], [1.0, 2.0]))
    assert np.all(simulate_ss(ss, np.zeros(20), np.zeros(20)).samples == 0)


def test_state_space_impulse_matches_io():
    m = constant_model([0.5], [1.0])
    u = np.zeros(10)
    u[0] = 1.0
    y = simulate_ss(build_max_ss(m), SignalSequence(u), np.zeros(10)).samples
    np.testing.assert_allclose(y, (-0.5) ** np.arange(10), atol=1e-15)


def test_frozen_response_unit_gain():
    r = frozen_response(constant_model([0.0], [1.0]), 0.0, [0.01, 0.1, 0.5])
    np.testing.assert_allclose(r, 0.0, atol=1e-12)


def test_frozen_response_first_order_low_frequency():
    r = frozen_response(constant_model([0.5], [1.0]), 0.0, [1e-6])
    assert r[0, 0] == pytest.approx(20 * np.log10(1 / 1.5), abs=1e-6)
    assert r[0, 0] == pytest.approx(-3.52, abs=5e-3)


def test_frozen_response_mass_damper_spring_dc():
    r = frozen_response(mds_model(MdsParams()), 1.0, [1e-7])
    assert r[0, 0] == pytest.approx(20 * np.log10(2.0), abs=1e-4)


def test_frozen_response_rejects_bad_frequency():
    m = constant_model([0.5], [1.0])
    with pytest.raises(ValueError):
        frozen_response(m, 0.0, [0.0])
    with pytest.raises(ValueError):
        frozen_response(m, 0.0, [0.6])


def test_model_round_trip(rng):
    m = random_model(rng, 2, 2)
    m2 = LpvIoModel.from_dict(m.to_dict())
    rho = rng.uniform(size=7)
    for x, y in zip(m.coefficient_table(rho), m2.coefficient_table(rho)):
        np.testing.assert_array_equal(x, y)


def test_affine_model_params():
    m = LpvIoModel(LpvIoStructure(1, 1), Affine.zeros(1, 2))
    m.set_params([0.1, 0.2, 0.3, 0.4])
    np.testing.assert_array_equal(m.get_params(), [0.1, 0.2, 0.3, 0.4])
    assert m.n_params == 4


def test_init_params_used_by_model(rng):
    spec = MlpSpec((1, 3, 2))
    m = LpvIoModel(LpvIoStructure(1, 1), Mlp(spec, init_params(spec, 3)))
    np.testing.assert_array_equal(m.get_params(), init_params(spec, 3))
