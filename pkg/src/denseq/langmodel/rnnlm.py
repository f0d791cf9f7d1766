"""Recurrent language model with a variance penalty on the log partition.

The model is an embedding, a stack of LSTM layers, and a softmax over the
vocabulary.  Training minimizes cross entropy plus lam * V, where V is the
variance of the per-token log normalizer across the batch.  Driving V down
pushes the softmax toward self-normalized outputs, which lets rescoring
use raw logits as approximate log probabilities.
"""

import math

import numpy as np

from ..errors import ConfigurationError, DataError, TrainingError
from ..layers import Embedding, LstmLayer, SoftmaxOutput
from ..tensor import Rng, derive_seed
from ..training import TrainingSchedule, _apply_sgd, lr_at
from .ngram import SENT_END, SENT_START, UNK

RnnLmSchedule = TrainingSchedule


class RnnLm:
    """Embedding -> stacked LSTMs -> softmax over a fixed string vocabulary."""

    def __init__(self, vocab, emb_dim=32, hidden_dim=64, n_layers=2):
        if n_layers < 1:
            raise ConfigurationError("need at least one recurrent layer")
        self.vocab = sorted(set(vocab) | {SENT_START, SENT_END, UNK})
        self.word_ids = {w: i for i, w in enumerate(self.vocab)}
        self.emb_dim = emb_dim
        self.hidden_dim = hidden_dim
        self.n_layers = n_layers
        self.emb = Embedding(len(self.vocab), emb_dim)
        self.layers = [LstmLayer(emb_dim if i == 0 else hidden_dim, hidden_dim)
                       for i in range(n_layers)]
        self.out = SoftmaxOutput(hidden_dim, len(self.vocab))

    def init_params(self, seed):
        self.emb.init_params(Rng(derive_seed(seed, "emb")))
        for i, layer in enumerate(self.layers):
            layer.init_params(Rng(derive_seed(seed, "lstm", i)))
        self.out.init_params(Rng(derive_seed(seed, "out")))

    def _units(self):
        units = [("emb", self.emb)]
        units += [("l%d" % i, layer) for i, layer in enumerate(self.layers)]
        units.append(("out", self.out))
        return units

    def params(self):
        flat = {}
        for prefix, unit in self._units():
            for name, arr in unit.params().items():
                flat[f"{prefix}.{name}"] = arr
        return flat

    def word_id(self, word):
        return self.word_ids.get(word, self.word_ids[UNK])

    def encode(self, words):
        return np.array([self.word_id(w) for w in words], dtype=np.int64)

    def forward(self, ids):
        """ids [B, T] int -> (log_probs [B, T, vocab], caches)."""
        caches = []
        x = ids
        for _, unit in self._units():
            x, cache = unit.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, caches, dlogits):
        grads = {}
        dy = dlogits
        units = self._units()
        for (prefix, unit), cache in zip(reversed(units), reversed(caches)):
            dy, unit_grads = unit.backward(cache, dy)
            for name, g in unit_grads.items():
                grads[f"{prefix}.{name}"] = g
        return grads


def _check_corpus(corpus):
    corpus = [list(s) for s in corpus]
    if not corpus:
        raise DataError("training corpus is empty")
    for sentence in corpus:
        for w in sentence:
            if w in (SENT_START, SENT_END):
                raise DataError("sentence boundary tokens may not appear in text: %r" % w)
    return corpus


def _batch_loss(model, ids, targets, lam):
    """Forward pass, combined loss, and the matching logit gradient.

    The partition-variance gradient is exact: with m the batch mean of
    log Z, d/dlogits of mean((log Z - m)^2) is (2/N)(log Z_t - m) * softmax,
    because the deviations around their own mean sum to zero.
    """
    log_probs, caches = model.forward(ids)
    n_tok = targets.size
    picked = np.take_along_axis(log_probs, targets[..., None], axis=-1)
    ce = -float(picked.mean())
    probs = caches[-1]["probs"]
    dlogits = probs.copy()
    rows = dlogits.reshape(n_tok, -1)
    rows[np.arange(n_tok), targets.reshape(-1)] -= 1.0
    dlogits /= n_tok
    log_z = caches[-1]["log_z"]
    dev = log_z - log_z.mean()
    v = float((dev * dev).mean())
    if lam != 0.0:
        dlogits = dlogits + lam * (2.0 / n_tok) * dev[..., None] * probs
        loss = ce + lam * v
    else:
        # reported only; the update is untouched so lam=0 is exactly plain CE
        loss = ce
    return loss, ce, v, dlogits, caches


def train_rnnlm(corpus, schedule, emb_dim=32, hidden_dim=64, n_layers=2, lam=0.0):
    """Train the recurrent LM; returns (model, per-epoch history).

    With lam == 0 the variance term is skipped entirely, so the run is
    bitwise identical to plain cross-entropy training under the same seed.
    """
    if lam < 0.0:
        raise ConfigurationError("variance penalty weight must be nonnegative")
    corpus = _check_corpus(corpus)
    vocab = set()
    for sentence in corpus:
        vocab.update(sentence)
    model = RnnLm(vocab, emb_dim=emb_dim, hidden_dim=hidden_dim, n_layers=n_layers)
    model.init_params(derive_seed(schedule.seed, "rnnlm-init"))

    inputs = [model.encode([SENT_START] + s) for s in corpus]
    targets = [model.encode(s + [SENT_END]) for s in corpus]
    shuffle_rng = Rng(derive_seed(schedule.seed, "shuffle"))
    params = model.params()
    velocity = {name: np.zeros_like(arr) for name, arr in params.items()} \
        if schedule.momentum > 0 else None

    def chunked(order):
        buckets = {}
        for idx in order:
            buckets.setdefault(len(inputs[idx]), []).append(idx)
        chunks = []
        for bucket in buckets.values():
            for k in range(0, len(bucket), schedule.batch_size):
                chunks.append(bucket[k:k + schedule.batch_size])
        return chunks

    total_steps = schedule.epochs * len(chunked(range(len(inputs))))
    history = []
    step = 0
    for epoch in range(schedule.epochs):
        order = shuffle_rng.permutation(len(inputs))
        chunks = chunked(order)
        chunk_order = shuffle_rng.permutation(len(chunks))
        epoch_loss = 0.0
        epoch_ce = 0.0
        epoch_var = 0.0
        epoch_tokens = 0
        lr = lr_at(schedule, step, total_steps)
        for ci in chunk_order:
            lr = lr_at(schedule, step, total_steps)
            chunk = chunks[ci]
            ids = np.stack([inputs[i] for i in chunk])
            tgt = np.stack([targets[i] for i in chunk])
            with np.errstate(over="ignore", invalid="ignore"):
                loss, ce, v, dlogits, caches = _batch_loss(model, ids, tgt, lam)
                if not math.isfinite(loss):
                    raise TrainingError(f"language model diverged at epoch {epoch + 1}")
                grads = model.backward(caches, dlogits)
                _apply_sgd(params, grads, velocity, lr, schedule)
            epoch_loss += loss * tgt.size
            epoch_ce += ce * tgt.size
            epoch_var += v * tgt.size
            epoch_tokens += tgt.size
            step += 1
        for arr in params.values():
            if not np.all(np.isfinite(arr)):
                raise TrainingError(f"language model diverged at epoch {epoch + 1}")
        history.append({"epoch": epoch + 1, "lr": lr,
                        "loss": epoch_loss / epoch_tokens,
                        "ce": epoch_ce / epoch_tokens,
                        "logz_var": epoch_var / epoch_tokens})
    return model, history


def logz_variance(model, corpus):
    """Variance of the log normalizer over every token position in corpus."""
    corpus = _check_corpus(corpus)
    values = []
    for sentence in corpus:
        ids = model.encode([SENT_START] + sentence)[None, :]
        _, caches = model.forward(ids)
        values.append(caches[-1]["log_z"].reshape(-1))
    flat = np.concatenate(values)
    return float(((flat - flat.mean()) ** 2).mean())


def rnnlm_logprob(model, history, word):
    """Natural-log P(word | history); OOV tokens map to the unknown symbol."""
    ids = model.encode([SENT_START] + list(history))[None, :]
    log_probs, _ = model.forward(ids)
    return float(log_probs[0, -1, model.word_id(word)])


def sentence_logprob(model, words):
    """Total and per-token natural-log probability of words plus end token."""
    words = list(words)
    ids = model.encode([SENT_START] + words)[None, :]
    tgt = model.encode(words + [SENT_END])
    log_probs, _ = model.forward(ids)
    per_token = [float(log_probs[0, t, tgt[t]]) for t in range(len(tgt))]
    return sum(per_token), per_token
