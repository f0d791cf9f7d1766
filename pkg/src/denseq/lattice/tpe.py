"""Combination-weight search with a tree-structured Parzen estimator.

Observations are (weight vector -> dev WER).  Each iteration splits the
history at the gamma quantile, fits per-dimension Gaussian kernel densities
l(x) over the good set and g(x) over the bad set, samples candidates from
l, and evaluates the one maximizing l/g.  A uniform random search with the
same budget serves as the reference baseline.
"""

import math
from collections import namedtuple

import numpy as np

from ..errors import ConfigurationError, DataError, DenseqError, OptimizationError
from ..tensor import Rng, derive_seed
from .decode import edit_distance, mbr_decode
from .graph import lattice_union


class CombinationWeights:
    """Per-system scale factors plus shared decode knobs."""

    def __init__(self, system_weights, lm_scale=1.0, word_penalty=0.0):
        self.system_weights = tuple(float(w) for w in system_weights)
        if not self.system_weights:
            raise ConfigurationError("need at least one system weight")
        if any(w < 0 for w in self.system_weights):
            raise ConfigurationError("system weights must be nonnegative")
        if not any(w > 0 for w in self.system_weights):
            raise ConfigurationError("at least one system weight must be positive")
        self.lm_scale = float(lm_scale)
        self.word_penalty = float(word_penalty)

    def __len__(self):
        return len(self.system_weights)

    def __repr__(self):
        return (f"CombinationWeights({list(self.system_weights)}, "
                f"lm_scale={self.lm_scale}, word_penalty={self.word_penalty})")


TuneResult = namedtuple("TuneResult", ["weights", "best_wer", "flat_objective", "history"])


def combination_wer(vector, systems, refs):
    """Dev WER of decoding the weighted union, one utterance at a time.

    Evaluation failures count as an infinite objective rather than aborting
    the surrounding search loop.
    """
    total_dist = 0
    total_ref = 0
    try:
        for u, ref in enumerate(refs):
            union = lattice_union([system[u] for system in systems], vector)
            hyp = mbr_decode(union)
            total_dist += edit_distance(ref, hyp.words)[0]
            total_ref += len(ref)
    except DenseqError:
        return math.inf
    if total_ref == 0:
        return math.inf
    return total_dist / total_ref


def _check_dev_set(systems, refs, budget):
    if not systems:
        raise ConfigurationError("need at least one system")
    if budget < 10:
        raise ConfigurationError("tuning budget must be at least 10")
    for i, system in enumerate(systems):
        if len(system) != len(refs):
            raise DataError(
                f"system {i} has {len(system)} lattices for {len(refs)} references")
    if not refs:
        raise DataError("empty development set")


def _silverman(values):
    n = len(values)
    if n < 2:
        return 0.25
    std = float(np.std(values))
    q75, q25 = np.percentile(values, [75, 25])
    spread = min(std, (q75 - q25) / 1.34) if q75 > q25 else std
    h = 0.9 * spread * n ** (-0.2)
    return h if h > 1e-3 else 0.25


def _log_kde(x, centers, bandwidth):
    z = (x - np.asarray(centers)) / bandwidth
    log_terms = -0.5 * z * z - math.log(bandwidth * math.sqrt(2 * math.pi))
    shift = log_terms.max()
    return shift + math.log(np.exp(log_terms - shift).sum()) - math.log(len(centers))


def _finish(history, label):
    finite = [(wer, x) for x, wer in history if math.isfinite(wer)]
    if not finite:
        raise OptimizationError(f"{label} found no finite objective in budget")
    best_wer, best_x = min(finite, key=lambda t: (t[0], t[1]))
    wers = [w for w, _ in finite]
    flat = max(wers) == min(wers)
    return TuneResult(CombinationWeights(best_x), best_wer, flat, history)


def tune_weights_tpe(systems, refs, budget, seed=0, gamma=0.25, n_candidates=24,
                     warmup=10, bounds=(0.0, 2.0)):
    """Search system weights in ``bounds`` minimizing dev WER via TPE.

    Runs ``warmup`` uniform draws, then proposes the best of
    ``n_candidates`` samples from the good-set density per iteration.
    Returns the best observation with a flat-objective flag (a single
    system's WER cannot respond to its own scale, and the flag reports
    that).
    """
    _check_dev_set(systems, refs, budget)
    d = len(systems)
    lo, hi = bounds
    rng = Rng(derive_seed(seed, "tpe"))
    history = []

    def observe(x):
        wer = combination_wer(tuple(x), systems, refs)
        history.append((tuple(x), wer))

    for _ in range(min(warmup, budget)):
        observe(rng.uniform(lo, hi, (d,)))
    while len(history) < budget:
        finite = [(x, w) for x, w in history if math.isfinite(w)]
        if len(finite) < 2:
            observe(rng.uniform(lo, hi, (d,)))
            continue
        finite.sort(key=lambda t: (t[1], t[0]))
        n_good = math.ceil(gamma * len(finite))
        good = np.array([x for x, _ in finite[:n_good]])
        bad = np.array([x for x, _ in finite[n_good:]])
        h_good = [_silverman(good[:, j]) for j in range(d)]
        h_bad = [_silverman(bad[:, j]) for j in range(d)]
        best_cand = None
        best_score = -math.inf
        for _ in range(n_candidates):
            x = np.empty(d)
            for j in range(d):
                center = good[int(rng.integers(0, len(good))), j]
                x[j] = min(max(center + rng.normal(0.0, h_good[j]), lo), hi)
            score = sum(_log_kde(x[j], good[:, j], h_good[j])
                        - _log_kde(x[j], bad[:, j], h_bad[j]) for j in range(d))
            if score > best_score:
                best_score = score
                best_cand = x
        observe(best_cand)
    return _finish(history, "weight tuning")


def random_search_weights(systems, refs, budget, seed=0, bounds=(0.0, 2.0)):
    """Uniform random search baseline with the same evaluation protocol."""
    _check_dev_set(systems, refs, budget)
    d = len(systems)
    lo, hi = bounds
    rng = Rng(derive_seed(seed, "random-search"))
    history = []
    for _ in range(budget):
        x = rng.uniform(lo, hi, (d,))
        history.append((tuple(x), combination_wer(tuple(x), systems, refs)))
    return _finish(history, "random search")
