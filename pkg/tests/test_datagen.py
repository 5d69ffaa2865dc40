from __future__ import annotations

import numpy as np
import pytest

from stablelpv.datagen import (
    DatasetFormatError,
    MdsParams,
    generate_dataset,
    generate_validation_dataset,
    linear_scheduling,
    load_dataset,
    mds_coefficient_table,
    mds_coefficients,
    mds_model,
    multisine,
    save_dataset,
    snr_db,
)
from stablelpv.ident import IdentProblem, loss
from stablelpv.model import simulate_io
from stablelpv.stability import lti_triangle_contains

GRID = np.linspace(0.0, 1.0, 101)


def test_coefficients_at_rho_one():
    cv = mds_coefficients(MdsParams(), 1.0)
    np.testing.assert_allclose(cv.a, [-1.3125, 0.625], rtol=0, atol=1e-15)
    assert cv.b0 == pytest.approx(0.625, abs=1e-15)


def test_coefficients_at_rho_zero():
    k0 = 1 - 1 / (1 + np.exp(7.0))
    assert MdsParams().stiffness(0.0) == pytest.approx(0.9990889, abs=1e-7)
    cv = mds_coefficients(MdsParams(), 0.0)
    np.testing.assert_allclose(cv.a, [-2.1 / (1.1 + k0), 1 / (1.1 + k0)], rtol=1e-15)
    # Hand evaluation: D = 2.0990889488, -2.1 / D, 1 / D.
    assert cv.a[0] == pytest.approx(-1.00043402, abs=1e-8)
    assert cv.a[1] == pytest.approx(0.47639715, abs=1e-8)


def test_frozen_coefficients_inside_triangle():
    for a1, a2, _ in mds_coefficient_table(MdsParams(), GRID):
        assert lti_triangle_contains(a1, a2)


def test_dc_gain_identity():
    p = MdsParams()
    t = mds_coefficient_table(p, GRID)
    dc = t[:, 2] / (1 + t[:, 0] + t[:, 1])
    assert np.max(np.abs(dc - 1 / p.stiffness(GRID))) < 1e-12


def test_scheduling_outside_domain_rejected():
    with pytest.raises(ValueError):
        mds_coefficient_table(MdsParams(), [1.2])


def test_non_positive_denominator_rejected():
    with pytest.raises(ValueError):
        mds_coefficient_table(MdsParams(m=-5.0), [0.5])


def test_mds_model_matches_table():
    cv = mds_model().coefficients(0.3)
    np.testing.assert_array_equal(np.concatenate([cv.a, cv.b]), mds_coefficient_table(MdsParams(), [0.3])[0])


def test_multisine_quarter_frequency():
    u = multisine(8, f_low=0.25, n_components=1).samples
    np.testing.assert_allclose(u, [1, 0, -1, 0, 1, 0, -1, 0], atol=1e-14)


def test_multisine_first_sample_and_bound():
    u = multisine(1000).samples
    f = np.linspace(0.01, 0.1, 10)
    assert u[0] == pytest.approx(np.sin(2 * np.pi * f).sum(), rel=1e-14)
    assert np.max(np.abs(u)) <= 10


def test_multisine_needs_samples():
    with pytest.raises(ValueError):
        multisine(0)


def test_linear_scheduling():
    r = linear_scheduling(1000)
    assert r[-1] == 0.0 and r[0] == pytest.approx(0.999)
    assert np.all(np.diff(r) < 0)
    with pytest.raises(ValueError):
        linear_scheduling(0)


def test_noiseless_dataset():
    ds = generate_dataset(sigma_v=0.0)
    np.testing.assert_array_equal(ds.y, ds.y_clean)


def test_dataset_consistency():
    ds = generate_dataset()
    np.testing.assert_array_equal(ds.y, ds.y_clean + ds.v)
    y = simulate_io(mds_model(), ds.u, ds.rho).samples
    np.testing.assert_allclose(ds.y_clean, y, rtol=0, atol=1e-12)
    assert ds.N == len(ds) == 1000


def test_default_snr():
    assert abs(snr_db(generate_dataset()) - 19.5) <= 1.0
    assert abs(snr_db(generate_validation_dataset()) - 19.5) <= 1.0


def test_determinism():
    a, b = generate_dataset(seed=7), generate_dataset(seed=7)
    np.testing.assert_array_equal(a.y, b.y)
    assert np.any(generate_dataset(seed=8).v != a.v)


def test_validation_set_differs_from_training():
    t, v = generate_dataset(), generate_validation_dataset()
    assert np.any(t.u != v.u) and np.any(t.v != v.v)
    np.testing.assert_array_equal(t.rho, v.rho)


def test_dataset_length_mismatch():
    from stablelpv.datagen import Dataset

    with pytest.raises(ValueError):
        Dataset(u=[1, 2], y=[1], y_clean=[1], v=[0], rho=[0])


def test_csv_round_trip_bitwise(tmp_path):
    ds = generate_dataset(N=200, seed=3)
    path = tmp_path / "d.csv"
    save_dataset(ds, path)
    back = load_dataset(path)
    for name in ("u", "y", "y_clean", "v", "rho"):
        np.testing.assert_array_equal(getattr(back, name), getattr(ds, name))
    assert back.seed == 3 and back.sigma_v == ds.sigma_v
    assert (tmp_path / "d.json").exists()


def test_csv_round_trip_preserves_loss(tmp_path):
    from stablelpv.coeff import FunctionCoefficients
    from stablelpv.model import LpvIoModel, LpvIoStructure

    ds = generate_dataset(N=300)
    save_dataset(ds, tmp_path / "d.csv")
    model = LpvIoModel(LpvIoStructure(2, 1), FunctionCoefficients.constant([-1.2, 0.5, 0.4]))
    a = loss(IdentProblem(ds, model))
    b = loss(IdentProblem(load_dataset(tmp_path / "d.csv"), model))
    assert abs(a - b) < 1e-12


@pytest.mark.parametrize("text", [
    "",
    "k,u,y,y_clean,v\n1,0,0,0,0\n",
    "k,u,y,y_clean,v,rho\n",
    "k,u,y,y_clean,v,rho\n1,0,0,0,0\n",
    "k,u,y,y_clean,v,rho\n1,0,abc,0,0,0\n",
])
def test_malformed_csv_rejected(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(DatasetFormatError):
        load_dataset(p)


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_dataset(tmp_path / "nope.csv")
