"""Fine-tuning and parameter-averaging mechanics."""

import numpy as np
import pytest

from denseq import adaptation, topology, training
from denseq.errors import CompatibilityError, ConfigurationError
from denseq.model import ModelParameters
from denseq.tensor import Rng


def toy_data(seed, n_seq=10, tlen=8, dim=4, classes=3):
    rng = Rng(seed)
    means = rng.normal(0.0, 2.0, (classes, dim))
    out = []
    for _ in range(n_seq):
        labels = rng.integers(0, classes, tlen)
        feats = means[labels] + rng.normal(0.0, 0.5, (tlen, dim))
        out.append(training.LabeledSequence(feats, labels))
    return out


def make_seed_model(spec, data, seed=1):
    schedule = training.TrainingSchedule(0.2, 0.02, epochs=4, batch_size=4, seed=seed)
    return training.train(spec, data, schedule)


SPEC = topology.build_stack("plain", 1, 5, classes=3, input_dim=4)


def test_adapt_zero_lr_returns_seed_bitwise():
    data = toy_data(1)
    seed_model = make_seed_model(SPEC, data)
    zero = training.TrainingSchedule(0.0, 0.0, epochs=1, batch_size=4, seed=2)
    adapted = adaptation.adapt(seed_model, SPEC, toy_data(2), zero)
    for name in seed_model.values:
        assert np.array_equal(adapted.values[name], seed_model.values[name])
    assert adapted.metadata["provenance"] == "adapted"
    assert adapted.metadata["parent"] == seed_model.checksum()


def test_adapt_never_mutates_seed():
    data = toy_data(3)
    seed_model = make_seed_model(SPEC, data)
    before = {k: v.copy() for k, v in seed_model.values.items()}
    schedule = training.TrainingSchedule(0.1, 0.01, epochs=2, batch_size=4, seed=4)
    adaptation.adapt(seed_model, SPEC, toy_data(4), schedule)
    for name, arr in before.items():
        assert np.array_equal(seed_model.values[name], arr)
    assert seed_model.metadata.get("provenance") == "seed"


def test_adapt_rejects_fingerprint_mismatch():
    data = toy_data(5)
    seed_model = make_seed_model(SPEC, data)
    other = topology.build_stack("plain", 2, 5, classes=3, input_dim=4)
    schedule = training.TrainingSchedule(0.1, 0.01, epochs=1, seed=1)
    with pytest.raises(CompatibilityError):
        adaptation.adapt(seed_model, other, data, schedule)


def test_adapt_on_own_data_with_tiny_lr_is_stationary():
    data = toy_data(6, n_seq=12)
    seed_model = make_seed_model(SPEC, data)
    loss_before, _ = training.evaluate(seed_model, SPEC, data)
    tiny = training.TrainingSchedule(1e-5, 1e-7, epochs=4, batch_size=4, seed=7)
    adapted = adaptation.adapt(seed_model, SPEC, data, tiny)
    loss_after, _ = training.evaluate(adapted, SPEC, data)
    assert abs(loss_after - loss_before) / loss_before < 0.01


def test_average_endpoints_bitwise():
    data = toy_data(8)
    a = make_seed_model(SPEC, data, seed=1)
    b = make_seed_model(SPEC, data, seed=2)
    at0 = adaptation.average_parameters(a, b, alpha=0.0)
    at1 = adaptation.average_parameters(a, b, alpha=1.0)
    for name in a.values:
        assert np.array_equal(at0.values[name], a.values[name])
        assert np.array_equal(at1.values[name], b.values[name])


def test_average_midpoint_arithmetic():
    values_a = {"x": np.array([0.2, 1.0])}
    values_b = {"x": np.array([0.6, 3.0])}
    a = ModelParameters(values_a, "fp")
    b = ModelParameters(values_b, "fp")
    mid = adaptation.average_parameters(a, b, alpha=0.5)
    assert np.allclose(mid.values["x"], [0.4, 2.0], atol=1e-16)


def test_average_symmetric_at_half_bitwise():
    data = toy_data(9)
    a = make_seed_model(SPEC, data, seed=3)
    b = make_seed_model(SPEC, data, seed=4)
    ab = adaptation.average_parameters(a, b, alpha=0.5)
    ba = adaptation.average_parameters(b, a, alpha=0.5)
    for name in a.values:
        assert np.array_equal(ab.values[name], ba.values[name])


def test_average_idempotent_on_same_model():
    data = toy_data(10)
    a = make_seed_model(SPEC, data, seed=5)
    for alpha in (0.0, 0.3, 0.5, 1.0):
        avg = adaptation.average_parameters(a, a, alpha=alpha)
        for name in a.values:
            assert np.array_equal(avg.values[name], a.values[name])


def test_average_metadata_carries_parent_checksums():
    data = toy_data(11)
    a = make_seed_model(SPEC, data, seed=6)
    b = make_seed_model(SPEC, data, seed=7)
    avg = adaptation.average_parameters(a, b, alpha=0.5)
    assert avg.metadata["provenance"] == "averaged"
    assert avg.metadata["parents"] == [a.checksum(), b.checksum()]


def test_average_rejects_incompatible_models():
    a = ModelParameters({"x": np.zeros(2)}, "fp1")
    b = ModelParameters({"x": np.zeros(2)}, "fp2")
    with pytest.raises(CompatibilityError):
        adaptation.average_parameters(a, b)
    c = ModelParameters({"y": np.zeros(2)}, "fp1")
    with pytest.raises(CompatibilityError):
        adaptation.average_parameters(a, c)
    d = ModelParameters({"x": np.zeros(3)}, "fp1")
    with pytest.raises(CompatibilityError):
        adaptation.average_parameters(a, d)
    with pytest.raises(ConfigurationError):
        adaptation.average_parameters(a, a, alpha=1.5)
