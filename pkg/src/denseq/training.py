"""Frame-level cross-entropy training with geometric learning-rate decay.

The trainer is plain mini-batch SGD (momentum optional, default off) with
global-norm gradient clipping. Sequences are bucketed by length so batches
stack into dense [B, T, D] arrays without masking. Every random choice runs
off seeds derived from the schedule seed, so a run is bitwise reproducible.
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import (CompatibilityError, ConfigurationError, DataError,
                     DimensionError, TrainingError)
from .model import ModelParameters
from .tensor import DTYPE, Rng, derive_seed
from .topology import build_network

CLIP_NORM = 5.0  # survives 20..30-layer plain stacks without masking real divergence
VALIDATION_FRACTION = 0.1


class TrainingSchedule:
    """Learning-rate endpoints, epoch count, batching, and the run seed."""

    def __init__(self, lr_start, lr_end, epochs, batch_size=16, momentum=0.0,
                 seed=0, clip_norm=CLIP_NORM):
        if lr_start < lr_end or lr_end < 0:
            raise ConfigurationError("need lr_start >= lr_end >= 0")
        if lr_end == 0 and lr_start != 0:
            raise ConfigurationError("geometric decay cannot reach exactly 0")
        if epochs < 1 or batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be positive")
        if not 0.0 <= momentum < 1.0:
            raise ConfigurationError("momentum must lie in [0, 1)")
        self.lr_start = float(lr_start)
        self.lr_end = float(lr_end)
        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.momentum = float(momentum)
        self.seed = int(seed)
        self.clip_norm = float(clip_norm)

    def describe(self):
        return {"lr_start": self.lr_start, "lr_end": self.lr_end,
                "epochs": self.epochs, "batch_size": self.batch_size,
                "momentum": self.momentum, "seed": self.seed,
                "clip_norm": self.clip_norm}


class LabeledSequence:
    """A feature matrix [T, D] with one class id per frame."""

    def __init__(self, features, labels):
        self.features = np.asarray(features, dtype=DTYPE)
        self.labels = np.asarray(labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DimensionError("features must be [T, D]")
        if self.labels.ndim != 1 or len(self.labels) != len(self.features):
            raise DimensionError("labels must carry one class id per frame")

    def __len__(self):
        return len(self.features)


def lr_at(schedule, step, total_steps):
    """Geometric interpolation from lr_start to lr_end, endpoints exact."""
    if total_steps == 0:
        raise ConfigurationError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ConfigurationError(f"step {step} outside [0, {total_steps}]")
    if step == 0 or schedule.lr_start == schedule.lr_end:
        return schedule.lr_start
    if step == total_steps:
        return schedule.lr_end
    return schedule.lr_start * (schedule.lr_end / schedule.lr_start) ** (step / total_steps)


def cross_entropy_loss(log_probs, labels):
    """Mean negative log-likelihood per frame and its gradient w.r.t. logits."""
    log_probs = np.asarray(log_probs, dtype=DTYPE)
    labels = np.asarray(labels, dtype=np.int64)
    if log_probs.shape[:-1] != labels.shape:
        raise DimensionError("labels must match log_probs frames")
    classes = log_probs.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise DataError(f"label outside [0, {classes})")
    flat_lp = log_probs.reshape(-1, classes)
    flat_labels = labels.reshape(-1)
    n = len(flat_labels)
    picked = flat_lp[np.arange(n), flat_labels]
    loss = -float(picked.mean())
    grad = np.exp(flat_lp)
    grad[np.arange(n), flat_labels] -= 1.0
    grad /= n
    return loss, grad.reshape(log_probs.shape)


def _check_data(spec, data):
    if not data:
        raise DataError("no training sequences")
    classes = spec.classes
    for i, seq in enumerate(data):
        if seq.features.shape[1] != spec.input_dim:
            raise DimensionError(
                f"sequence {i}: feature dim {seq.features.shape[1]} != {spec.input_dim}")
        if len(seq) and (seq.labels.min() < 0 or seq.labels.max() >= classes):
            raise DataError(f"sequence {i}: label outside [0, {classes})")


def _length_buckets(data, indices, batch_size):
    """Greedy equal-length chunks, insertion-ordered for determinism."""
    buckets = {}
    for idx in indices:
        buckets.setdefault(len(data[idx]), []).append(idx)
    chunks = []
    for bucket in buckets.values():
        for k in range(0, len(bucket), batch_size):
            chunks.append(bucket[k:k + batch_size])
    return chunks


def _batch_arrays(data, chunk):
    x = np.stack([data[i].features for i in chunk])
    y = np.stack([data[i].labels for i in chunk])
    return x, y


def split_validation(data):
    """Fixed 10% tail as held-out data (at least one sequence when possible)."""
    if len(data) < 2:
        return list(data), []
    n_val = max(1, int(len(data) * VALIDATION_FRACTION))
    return list(data[:-n_val]), list(data[-n_val:])


def train(spec, data, schedule, metrics_path=None, init_model=None):
    """SGD over shuffled length-bucketed mini-batches; returns final params.

    The per-epoch log (lr, train loss, validation loss and frame error)
    lands in the returned metadata and optionally in a CSV. A non-finite
    loss or parameter aborts with a TrainingError carrying the last
    end-of-epoch checkpoint. ``init_model`` warm-starts from existing
    parameters instead of a fresh seeded initialization.
    """
    data = list(data)
    _check_data(spec, data)
    train_data, val_data = split_validation(data)
    net = build_network(spec, seed=derive_seed(schedule.seed, "init"))
    if init_model is not None:
        if init_model.fingerprint != spec.fingerprint():
            raise CompatibilityError("warm-start model does not match architecture")
        init_model.load_into(net)
    shuffle_rng = Rng(derive_seed(schedule.seed, "shuffle"))

    params = net.params()
    velocity = {name: np.zeros_like(arr) for name, arr in params.items()} \
        if schedule.momentum > 0 else None

    chunks_per_epoch = len(_length_buckets(train_data, range(len(train_data)),
                                           schedule.batch_size))
    total_steps = schedule.epochs * chunks_per_epoch
    checkpoint = ModelParameters.from_network(net, {"provenance": "seed", "epoch": 0})
    log = []
    step = 0
    for epoch in range(schedule.epochs):
        order = shuffle_rng.permutation(len(train_data))
        chunks = _length_buckets(train_data, order, schedule.batch_size)
        chunk_order = shuffle_rng.permutation(len(chunks))
        epoch_loss = 0.0
        epoch_frames = 0
        lr = lr_at(schedule, step, total_steps)
        for ci in chunk_order:
            lr = lr_at(schedule, step, total_steps)
            x, labels = _batch_arrays(train_data, chunks[ci])
            with np.errstate(over="ignore", invalid="ignore"):
                # divergence is detected here and reported as TrainingError
                log_probs, caches = net.forward(x)
                loss, dlogits = cross_entropy_loss(log_probs, labels)
                if not np.isfinite(loss):
                    raise TrainingError(f"loss diverged at epoch {epoch + 1}",
                                        checkpoint=checkpoint)
                grads = net.backward(caches, dlogits)
                _apply_sgd(params, grads, velocity, lr, schedule)
            frames = labels.size
            epoch_loss += loss * frames
            epoch_frames += frames
            step += 1
        for arr in params.values():
            if not np.all(np.isfinite(arr)):
                raise TrainingError(f"parameters diverged at epoch {epoch + 1}",
                                    checkpoint=checkpoint)
        checkpoint = ModelParameters.from_network(
            net, {"provenance": "seed", "epoch": epoch + 1})
        entry = {"epoch": epoch + 1, "lr": lr,
                 "train_loss": epoch_loss / max(epoch_frames, 1)}
        if val_data:
            val_loss, val_err = evaluate(checkpoint, spec, val_data)
            entry["val_loss"] = val_loss
            entry["val_frame_error"] = val_err
        log.append(entry)
    if metrics_path:
        _write_metrics(metrics_path, log)
    meta = {"provenance": "seed", "schedule": schedule.describe(), "epoch_log": log}
    return ModelParameters(params, spec.fingerprint(), meta)


def _apply_sgd(params, grads, velocity, lr, schedule):
    if schedule.clip_norm > 0:
        sq = 0.0
        for g in grads.values():
            sq += float(np.sum(g * g))
        norm = np.sqrt(sq)
        if norm > schedule.clip_norm:
            scale = schedule.clip_norm / norm
            for g in grads.values():
                g *= scale
    for name, arr in params.items():
        g = grads[name]
        if velocity is not None:
            v = velocity[name]
            v *= schedule.momentum
            v += g
            g = v
        arr -= lr * g


def _write_metrics(path, log):
    fields = ["epoch", "lr", "train_loss", "val_loss", "val_frame_error"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for entry in log:
            writer.writerow({k: entry.get(k, "") for k in fields})


def evaluate(model, spec, data):
    """Mean per-frame CE loss and frame error rate of a trained model."""
    data = list(data)
    _check_data(spec, data)
    if model.fingerprint != spec.fingerprint():
        raise CompatibilityError("model fingerprint does not match architecture")
    net = build_network(spec)
    model.load_into(net)
    total_loss = 0.0
    wrong = 0
    frames = 0
    for chunk in _length_buckets(data, range(len(data)), 32):
        x, labels = _batch_arrays(data, chunk)
        with np.errstate(over="ignore", invalid="ignore"):
            log_probs = net.log_probs(x)
            loss, _ = cross_entropy_loss(log_probs, labels)
        total_loss += loss * labels.size
        wrong += int(np.sum(np.argmax(log_probs, axis=-1) != labels))
        frames += labels.size
    return total_loss / frames, wrong / frames


def grad_check(spec, model, batch, epsilon=1e-4, max_coords_per_group=None,
               mutate_grads=None):
    """Central-difference audit of the analytic gradient on one batch.

    Reports the max relative error |a−n| / max(|a|, |n|, 1e-8) per parameter
    group. Coordinates where the difference quotient is unstable between
    step ε and ε/2 sit on a ReLU kink and are excluded (counted in the
    report). ``mutate_grads`` is a verification hook: it may corrupt the
    analytic gradients so harness tests can confirm the check catches bugs.
    ``max_coords_per_group`` caps FD cost on wide layers by auditing a
    deterministic sample of coordinates.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ConfigurationError("epsilon must lie in [1e-6, 1e-3]")
    batch = list(batch)
    _check_data(spec, batch)
    net = build_network(spec)
    model.load_into(net)
    params = net.params()
    x = np.stack([seq.features for seq in batch])
    labels = np.stack([seq.labels for seq in batch])

    def loss_value():
        log_probs = net.log_probs(x)
        flat = log_probs.reshape(-1, log_probs.shape[-1])
        picked = flat[np.arange(flat.shape[0]), labels.reshape(-1)]
        return -float(picked.mean())

    log_probs, caches = net.forward(x)
    _, dlogits = cross_entropy_loss(log_probs, labels)
    grads = net.backward(caches, dlogits)
    if mutate_grads is not None:
        mutate_grads(grads)

    per_group = {}
    skipped = 0
    checked = 0
    coord_rng = Rng(derive_seed(0, "grad-check-coords"))
    for name, arr in params.items():
        flat = arr.reshape(-1)
        gflat = grads[name].reshape(-1)
        count = flat.size
        if max_coords_per_group is not None and count > max_coords_per_group:
            coords = coord_rng.permutation(count)[:max_coords_per_group]
        else:
            coords = np.arange(count)
        worst = 0.0
        for k in coords:
            orig = flat[k]
            flat[k] = orig + epsilon
            fp = loss_value()
            flat[k] = orig - epsilon
            fm = loss_value()
            flat[k] = orig + epsilon / 2
            fp2 = loss_value()
            flat[k] = orig - epsilon / 2
            fm2 = loss_value()
            flat[k] = orig
            num = (fp - fm) / (2 * epsilon)
            num_half = (fp2 - fm2) / epsilon
            ana = gflat[k]
            # difference quotients that disagree with each other flag a
            # non-smooth point (ReLU kink inside the FD bracket)
            gap = abs(num - num_half)
            if gap > 0.25 * max(abs(num), abs(num_half), 1e-8):
                skipped += 1
                continue
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
            checked += 1
        per_group[name] = worst
    return {"per_group": per_group,
            "max_rel_err": max(per_group.values()) if per_group else 0.0,
            "checked": checked, "skipped_kinks": skipped}
