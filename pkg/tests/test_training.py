"""Trainer contracts: schedule shape, CE loss, SGD behavior, grad audit."""

import numpy as np
import pytest

from denseq import topology, training
from denseq.errors import (ConfigurationError, DataError, DimensionError,
                           TrainingError)
from denseq.tensor import Rng, derive_seed
from conftest import fd_grad, max_rel_err


def toy_data(seed, n_seq=12, tlen=10, dim=4, classes=3, spread=2.0):
    """Class-dependent Gaussian frames: easy enough to learn quickly."""
    rng = Rng(seed)
    means = rng.normal(0.0, spread, (classes, dim))
    out = []
    for _ in range(n_seq):
        labels = rng.integers(0, classes, tlen)
        feats = means[labels] + rng.normal(0.0, 0.5, (tlen, dim))
        out.append(training.LabeledSequence(feats, labels))
    return out


def small_spec(dim=4, classes=3, d=6):
    return topology.build_stack("plain", 1, d, classes=classes, input_dim=dim)


# ---------------------------------------------------------------- schedule

def test_lr_endpoints_exact():
    s = training.TrainingSchedule(1e-3, 1e-5, epochs=4)
    assert training.lr_at(s, 0, 100) == 1e-3
    assert training.lr_at(s, 100, 100) == 1e-5
    mid = training.lr_at(s, 50, 100)
    assert abs(mid - 1e-4) < 1e-16


def test_lr_adaptation_endpoints():
    s = training.TrainingSchedule(1e-5, 1e-7, epochs=4)
    assert training.lr_at(s, 0, 10) == 1e-5
    assert training.lr_at(s, 10, 10) == 1e-7


def test_lr_monotone_nonincreasing():
    s = training.TrainingSchedule(2e-2, 3e-4, epochs=4)
    values = [training.lr_at(s, k, 57) for k in range(58)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_lr_validation():
    s = training.TrainingSchedule(1e-3, 1e-5, epochs=1)
    with pytest.raises(ConfigurationError):
        training.lr_at(s, 0, 0)
    with pytest.raises(ConfigurationError):
        training.lr_at(s, 5, 4)
    with pytest.raises(ConfigurationError):
        training.TrainingSchedule(1e-5, 1e-3, epochs=1)
    with pytest.raises(ConfigurationError):
        training.TrainingSchedule(1e-3, 0.0, epochs=1)  # geometric cannot hit 0
    training.TrainingSchedule(0.0, 0.0, epochs=1)  # all-zero schedule is allowed


# ---------------------------------------------------------------- loss

def test_cross_entropy_uniform():
    log_probs = np.full((5, 4), np.log(0.25))
    loss, grad = training.cross_entropy_loss(log_probs, np.zeros(5, dtype=int))
    assert abs(loss - np.log(4.0)) < 1e-12
    assert grad.shape == (5, 4)


def test_cross_entropy_perfect_prediction():
    eps = 1e-12
    log_probs = np.log(np.array([[1.0 - 3 * eps, eps, eps, eps]] * 4))
    loss, _ = training.cross_entropy_loss(log_probs, np.zeros(4, dtype=int))
    assert loss < 1e-10


def test_cross_entropy_gradient_matches_fd():
    rng = Rng(5)
    logits = rng.normal(0.0, 1.0, (6, 4))
    labels = rng.integers(0, 4, 6)

    def log_softmax(z):
        shift = z.max(axis=-1, keepdims=True)
        return z - (np.log(np.exp(z - shift).sum(axis=-1, keepdims=True)) + shift)

    def loss():
        l, _ = training.cross_entropy_loss(log_softmax(logits), labels)
        return l

    _, grad = training.cross_entropy_loss(log_softmax(logits), labels)
    num = fd_grad(loss, logits)
    assert max_rel_err(grad, num) < 1e-6


def test_cross_entropy_rejects_bad_labels():
    log_probs = np.full((3, 4), np.log(0.25))
    with pytest.raises(DataError):
        training.cross_entropy_loss(log_probs, np.array([0, 1, 4]))
    with pytest.raises(DimensionError):
        training.cross_entropy_loss(log_probs, np.array([0, 1]))


# ---------------------------------------------------------------- train

def test_train_zero_lr_leaves_params_at_init():
    spec = small_spec()
    data = toy_data(1)
    schedule = training.TrainingSchedule(0.0, 0.0, epochs=1, batch_size=4, seed=3)
    model = training.train(spec, data, schedule)
    fresh = topology.build_network(spec, seed=derive_seed(3, "init"))
    for name, arr in fresh.params().items():
        assert np.array_equal(model.values[name], arr)


def test_train_deterministic_bitwise():
    spec = small_spec()
    data = toy_data(2)
    schedule = training.TrainingSchedule(0.1, 0.01, epochs=3, batch_size=4, seed=7)
    m1 = training.train(spec, data, schedule)
    m2 = training.train(spec, data, schedule)
    assert set(m1.values) == set(m2.values)
    for name in m1.values:
        assert np.array_equal(m1.values[name], m2.values[name])


def test_train_single_sequence_overfit():
    rng = Rng(11)
    labels = rng.integers(0, 3, 20)
    means = np.array([[2.0, 0.0, 0.0, 0.0], [0.0, 2.0, 0.0, 0.0], [0.0, 0.0, 2.0, 0.0]])
    feats = means[labels] + rng.normal(0.0, 0.3, (20, 4))
    data = [training.LabeledSequence(feats, labels)]
    spec = small_spec()
    schedule = training.TrainingSchedule(2.0, 0.2, epochs=300, batch_size=1, seed=1)
    model = training.train(spec, data, schedule)
    loss, err = training.evaluate(model, spec, data)
    assert loss < 0.01
    assert err == 0.0


def test_train_loss_nonincreasing_across_seeds():
    spec = small_spec()
    good = 0
    for seed in range(5):
        data = toy_data(100 + seed, n_seq=8, tlen=12)
        schedule = training.TrainingSchedule(0.2, 0.02, epochs=6, batch_size=4, seed=seed)
        model = training.train(spec, data, schedule)
        losses = [e["train_loss"] for e in model.metadata["epoch_log"]]
        if all(a >= b - 1e-12 for a, b in zip(losses, losses[1:])):
            good += 1
    assert good >= 4


def test_train_divergence_raises_with_checkpoint():
    stages = [{"kind": "affine", "in": 4, "out": 8, "relu": False},
              {"kind": "affine", "in": 8, "out": 8, "relu": False},
              {"kind": "softmax", "in": 8, "classes": 3}]
    spec = topology.ArchitectureSpec(4, stages)
    data = toy_data(9, n_seq=4, tlen=8)
    schedule = training.TrainingSchedule(1e4, 1e4, epochs=50, batch_size=4,
                                         seed=2, clip_norm=0.0)
    with pytest.raises(TrainingError) as info:
        training.train(spec, data, schedule)
    checkpoint = info.value.checkpoint
    assert checkpoint is not None
    for arr in checkpoint.values.values():
        assert np.all(np.isfinite(arr))


def test_train_validation_split_is_tail():
    data = toy_data(3, n_seq=20)
    train_part, val_part = training.split_validation(data)
    assert len(val_part) == 2
    assert val_part[0] is data[18] and val_part[1] is data[19]
    assert train_part == data[:18]


def test_train_rejects_bad_data():
    spec = small_spec()
    schedule = training.TrainingSchedule(0.1, 0.01, epochs=1)
    with pytest.raises(DataError):
        training.train(spec, [], schedule)
    bad_dim = [training.LabeledSequence(np.zeros((5, 7)), np.zeros(5, dtype=int))]
    with pytest.raises(DimensionError):
        training.train(spec, bad_dim, schedule)
    bad_label = [training.LabeledSequence(np.zeros((5, 4)), np.full(5, 9))]
    with pytest.raises(DataError):
        training.train(spec, bad_label, schedule)


def test_train_writes_metrics_csv(tmp_path):
    spec = small_spec()
    data = toy_data(4)
    schedule = training.TrainingSchedule(0.1, 0.01, epochs=2, batch_size=4, seed=5)
    path = tmp_path / "metrics.csv"
    training.train(spec, data, schedule, metrics_path=str(path))
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,lr,train_loss,val_loss,val_frame_error"
    assert len(lines) == 3


# ---------------------------------------------------------------- evaluate

def test_evaluate_perfect_and_chance():
    spec = small_spec()
    data = toy_data(21, n_seq=6, tlen=8, spread=4.0)
    schedule = training.TrainingSchedule(0.5, 0.05, epochs=60, batch_size=3, seed=4)
    model = training.train(spec, data, schedule)
    _, err = training.evaluate(model, spec, data)
    assert err < 0.05

    # zero parameters -> constant argmax 0; balanced labels -> error 0.75
    classes = 4
    spec4 = small_spec(classes=classes)
    net = topology.build_network(spec4)
    from denseq.model import ModelParameters
    zero = ModelParameters.from_network(net)
    labels = np.tile(np.arange(classes), 5)
    feats = Rng(6).normal(0.0, 1.0, (len(labels), 4))
    balanced = [training.LabeledSequence(feats, labels)]
    _, err = training.evaluate(zero, spec4, balanced)
    assert err == 0.75


def test_evaluate_matches_argmax_oracle():
    spec = small_spec()
    data = toy_data(31, n_seq=5, tlen=9)
    schedule = training.TrainingSchedule(0.1, 0.05, epochs=1, batch_size=2, seed=8)
    model = training.train(spec, data, schedule)
    _, err = training.evaluate(model, spec, data)
    net = topology.build_network(spec)
    model.load_into(net)
    wrong = total = 0
    for seq in data:
        lp = net.log_probs(seq.features)
        for t in range(len(seq)):
            total += 1
            if int(np.argmax(lp[t])) != seq.labels[t]:
                wrong += 1
    assert abs(err - wrong / total) < 1e-15


def test_evaluate_rejects_wrong_fingerprint():
    spec = small_spec()
    other = small_spec(d=7)
    data = toy_data(1, n_seq=3)
    schedule = training.TrainingSchedule(0.1, 0.01, epochs=1, seed=1)
    model = training.train(spec, data, schedule)
    from denseq.errors import CompatibilityError
    with pytest.raises(CompatibilityError):
        training.evaluate(model, other, data)


# ---------------------------------------------------------------- grad_check

def grad_check_model(spec, seed=0):
    from denseq.model import ModelParameters
    net = topology.build_network(spec, seed=seed)
    return ModelParameters.from_network(net)


def test_grad_check_linear_softmax_is_tight():
    spec = topology.ArchitectureSpec(4, [{"kind": "softmax", "in": 4, "classes": 3}])
    model = grad_check_model(spec, seed=1)
    batch = toy_data(41, n_seq=2, tlen=6)
    report = training.grad_check(spec, model, batch, epsilon=1e-4)
    assert report["max_rel_err"] < 1e-7


def test_grad_check_dense_block_stack():
    spec = topology.build_stack("dense", 3, 4, classes=3, input_dim=4, block_size=3)
    model = grad_check_model(spec, seed=2)
    batch = toy_data(42, n_seq=2, tlen=5)
    report = training.grad_check(spec, model, batch, epsilon=1e-4)
    assert report["max_rel_err"] < 1e-4


def test_grad_check_detects_corrupted_gradient():
    spec = small_spec()
    model = grad_check_model(spec, seed=3)
    batch = toy_data(43, n_seq=2, tlen=5)

    def corrupt(grads):
        name = sorted(grads)[0]
        flat = grads[name].reshape(-1)
        k = int(np.argmax(np.abs(flat)))
        flat[k] *= 2.0

    report = training.grad_check(spec, model, batch, epsilon=1e-4,
                                 mutate_grads=corrupt)
    assert report["max_rel_err"] > 0.1


def test_grad_check_epsilon_bounds():
    spec = small_spec()
    model = grad_check_model(spec)
    batch = toy_data(44, n_seq=1, tlen=4)
    with pytest.raises(ConfigurationError):
        training.grad_check(spec, model, batch, epsilon=1e-7)
    with pytest.raises(ConfigurationError):
        training.grad_check(spec, model, batch, epsilon=1e-2)


def test_grad_check_coordinate_sampling_caps_work():
    spec = small_spec()
    model = grad_check_model(spec, seed=4)
    batch = toy_data(45, n_seq=1, tlen=4)
    full = training.grad_check(spec, model, batch, epsilon=1e-4)
    capped = training.grad_check(spec, model, batch, epsilon=1e-4,
                                 max_coords_per_group=5)
    assert capped["checked"] < full["checked"]
    assert capped["max_rel_err"] <= full["max_rel_err"] + 1e-12
