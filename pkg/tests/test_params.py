import numpy as np
import pytest
from pydantic import ValidationError

from incomplete_mle.exceptions import ParameterValidationError, SampleError
from incomplete_mle.models.params import (
    ModelParams,
    PathStats,
    layout_for,
    pack,
    unpack,
    validate,
)
from incomplete_mle.models.schemas import ParamFile
from tests.conftest import random_params


def test_pack_worked_example(truth):
    vector = pack(truth)
    assert vector.layout.d == 24
    assert vector.values[0] == 0.5
    assert vector.labels[:2] == ["phi[1,1]", "phi[1,2]"]
    assert vector.labels[6] == "q[12,1]"
    assert vector.labels[-1] == "q[32,3]"


def test_pack_single_regime_has_only_intensities(ctmc):
    vector = pack(ctmc)
    assert vector.layout.d == 2
    assert all(label.startswith("q[") for label in vector.labels)


def test_round_trip_is_exact():
    rng = np.random.default_rng(20)
    for _ in range(1000):
        p, M = int(rng.integers(2, 5)), int(rng.integers(1, 4))
        theta = random_params(rng, p, M)
        vector = pack(theta)
        back = unpack(vector, theta.alpha)
        assert back.same_as(theta)
        assert np.array_equal(pack(back).values, vector.values)


def test_layout_is_stable():
    assert layout_for(3, 3) is layout_for(3, 3)
    layout = layout_for(3, 3)
    for i, entry in enumerate(layout.entries):
        if entry.kind == "phi":
            assert layout.phi_index(entry.x, entry.m) == i
        else:
            assert layout.q_index(entry.x, entry.y, entry.m) == i


def test_validate_accepts_worked_example(truth):
    assert validate(truth) == []


def test_validate_names_bad_phi_row(truth):
    phi = np.array(truth.phi)
    phi[0] = [0.5, 0.3, 0.1]
    with pytest.raises(ParameterValidationError) as excinfo:
        ModelParams.build(truth.alpha, phi, truth.q)
    assert any("phi row 1" in v for v in excinfo.value.violations)


def test_validate_requires_positive_intensity(truth):
    q = np.array(truth.q)
    q[0, 0, 1] = 0.0
    theta = ModelParams.build(truth.alpha, truth.phi, q, strict=False)
    assert any("q[12,1]" in v for v in validate(theta))


def test_build_rejects_last_phi_rounded_to_zero(truth):
    phi = np.array(truth.phi)
    phi[0] = [0.7, 0.3, 1e-17]
    with pytest.raises(ParameterValidationError) as excinfo:
        ModelParams.build(truth.alpha, phi, truth.q)
    assert "phi[1,3] must be strictly positive" in excinfo.value.violations


def test_build_renormalises_within_tolerance(truth):
    alpha = np.array(truth.alpha) * (1.0 + 1e-12)
    assert np.isclose(ModelParams.build(alpha, truth.phi, truth.q).alpha.sum(), 1.0, atol=1e-15)


def test_arrays_are_read_only(truth):
    with pytest.raises(ValueError):
        truth.phi[0, 0] = 0.1


def test_regime_probabilities(truth):
    probs = truth.regime_probabilities()
    assert np.isclose(probs.sum(), 1.0)
    assert np.allclose(probs, truth.phi.mean(axis=0))


def test_permute_regimes_round_trip(truth):
    permuted = truth.permute_regimes([2, 0, 1])
    assert np.array_equal(permuted.q[0], truth.q[2])
    assert np.allclose(permuted.permute_regimes([1, 2, 0]).phi, truth.phi)


def test_path_stats_invariants():
    PathStats.create([1, 0], [[0, 1], [0, 0]], [1.0, 2.0], 3.0)
    with pytest.raises(SampleError):
        PathStats.create([1, 1], [[0, 0], [0, 0]], [1.0, 2.0], 3.0)
    with pytest.raises(SampleError):
        PathStats.create([1, 0], [[0, 0], [0, 0]], [1.0, 1.0], 3.0)
    with pytest.raises(SampleError):
        PathStats.create([0, 1], [[0, 1], [0, 0]], [0.0, 3.0], 3.0)


def test_param_file_rebuilds_diagonal(truth):
    data = ParamFile.from_params(truth).model_dump()
    for m in range(3):
        for x in range(3):
            data["Q"][m][x][x] = None
    theta = ParamFile.model_validate(data).to_params()
    assert np.allclose(theta.q, truth.q)


def test_param_file_rejects_unknown_keys(truth):
    data = ParamFile.from_params(truth).model_dump()
    data["beta"] = 1
    with pytest.raises(ValidationError):
        ParamFile.model_validate(data)
