"""Decoding: edit distance, MAP and MBR hypotheses, N-best, LM rescoring.

Ties anywhere in decoding break toward the lexicographically smallest word
sequence and then the fewest words, so every decode is deterministic.
"""

import math
from collections import namedtuple

import numpy as np

from ..errors import ConfigurationError, DataError
from ..langmodel.ngram import SENT_START, NGramModel, ngram_logprob
from ..langmodel.rnnlm import RnnLm, sentence_logprob
from .graph import Lattice

Hypothesis = namedtuple("Hypothesis", ["words", "score", "confidences"])
Hypothesis.__new__.__defaults__ = (None,)

# exhaustive-enumeration guard; desk-scale lattices stay far below this
MAX_PATHS = 100_000


def edit_distance(ref, hyp):
    """Levenshtein alignment counts: (distance, substitutions, insertions, deletions).

    Unit costs; insertions are extra hypothesis words, deletions are missed
    reference words.  On cost ties the traceback prefers match/substitution,
    then deletion, then insertion.
    """
    ref = tuple(ref)
    hyp = tuple(hyp)
    rows = len(ref) + 1
    cols = len(hyp) + 1
    dp = [[(0, 0, 0, 0)] * cols for _ in range(rows)]
    for i in range(1, rows):
        dp[i][0] = (i, 0, 0, i)
    for j in range(1, cols):
        dp[0][j] = (j, 0, j, 0)
    for i in range(1, rows):
        for j in range(1, cols):
            d, s, ins, dl = dp[i - 1][j - 1]
            if ref[i - 1] == hyp[j - 1]:
                best = (d, s, ins, dl)
            else:
                best = (d + 1, s + 1, ins, dl)
            d, s, ins, dl = dp[i - 1][j]
            if d + 1 < best[0]:
                best = (d + 1, s, ins, dl + 1)
            d, s, ins, dl = dp[i][j - 1]
            if d + 1 < best[0]:
                best = (d + 1, s, ins + 1, dl)
            dp[i][j] = best
    return dp[rows - 1][cols - 1]


def _arc_paths(lat, acoustic_scale, lm_scale, limit=MAX_PATHS):
    """Complete paths as (arc index tuple, weighted score), exhaustively."""
    if not lat.arcs:
        return [((), 0.0)]
    weight = [acoustic_scale * a.ac + lm_scale * a.lm for a in lat.arcs]
    done = []
    stack = [(lat.start, (), 0.0)]
    while stack:
        u, ks, g = stack.pop()
        if u == lat.end:
            done.append((ks, g))
            if len(done) > limit:
                raise DataError(f"more than {limit} lattice paths; not a desk-scale lattice")
            continue
        for k in lat._out[u]:
            stack.append((lat.arcs[k].dst, ks + (k,), g + weight[k]))
    return done


def _path_words(lat, arc_idxs):
    return tuple(lat.words[lat.arcs[k].word] for k in arc_idxs
                 if lat.arcs[k].word is not None)


def nbest_paths(lat, n, acoustic_scale=1.0, lm_scale=1.0):
    """Top-n complete paths by weighted total score, as Hypothesis objects."""
    scored = [(-g, _path_words(lat, ks), len(ks), ks, g)
              for ks, g in _arc_paths(lat, acoustic_scale, lm_scale)]
    scored.sort(key=lambda row: (row[0], row[1], row[2]))
    return [Hypothesis(words, score) for _, words, _, _, score in scored[:n]]


def map_decode(lat, acoustic_scale=1.0, lm_scale=1.0):
    """Single best path (maximum a posteriori under the current scores)."""
    if not lat.arcs:
        raise DataError("empty lattice")
    return nbest_paths(lat, 1, acoustic_scale, lm_scale)[0]


def _sequence_posteriors(lat, acoustic_scale, lm_scale, max_exact, nbest):
    """Posterior mass per distinct word sequence.

    Exact over all paths when the lattice has at most max_exact distinct
    sequences; otherwise the posterior-weighted top-``nbest`` paths stand in
    for the full distribution (renormalized).
    """
    paths = _arc_paths(lat, acoustic_scale, lm_scale)
    scores = np.array([g for _, g in paths])
    seqs = [_path_words(lat, ks) for ks, _ in paths]
    if len(set(seqs)) > max_exact:
        order = sorted(range(len(paths)), key=lambda i: (-scores[i], seqs[i]))[:nbest]
        scores = scores[order]
        seqs = [seqs[i] for i in order]
    shift = scores.max()
    z = shift + math.log(np.exp(scores - shift).sum())
    posts = {}
    for seq, g in zip(seqs, scores):
        posts[seq] = posts.get(seq, 0.0) + math.exp(g - z)
    return posts


def mbr_decode(lat, acoustic_scale=1.0, lm_scale=1.0, max_exact=10_000, nbest=200):
    """Sequence with minimum expected edit distance under path posteriors.

    Candidates are the lattice's own distinct word sequences.  The returned
    hypothesis score is the expected edit distance (the risk) of the chosen
    sequence.
    """
    if not lat.arcs:
        raise DataError("empty lattice")
    posts = _sequence_posteriors(lat, acoustic_scale, lm_scale, max_exact, nbest)
    best = None
    for cand in posts:
        risk = sum(p * edit_distance(cand, seq)[0] for seq, p in posts.items())
        key = (risk, cand, len(cand))
        if best is None or key < best:
            best = key
    risk, words, _ = best
    return Hypothesis(words, risk)


def _expand_ngram(lat, scorer, lm_scale):
    """Split nodes by (n-1)-word history and rescore each word arc.

    Path scores end with the sentence-end probability, carried on a fresh
    epsilon arc into a single super-end node.
    """
    ctx = scorer.order - 1
    init = (SENT_START,) if ctx > 0 else ()
    states = {(lat.start, init): 0}
    nodes = [(0, lat.node_time(lat.start))]
    arcs = []
    queue = [(lat.start, init)]
    end_states = []
    if lat.start == lat.end:
        end_states.append(((lat.start, init), 0))
    while queue:
        state = queue.pop(0)
        u, hist = state
        sid = states[state]
        for k in lat._out[u]:
            a = lat.arcs[k]
            if a.word is None:
                nxt = (a.dst, hist)
                lm = 0.0
            else:
                word = lat.words[a.word]
                nxt = (a.dst, (hist + (word,))[-ctx:] if ctx > 0 else ())
                lm = lm_scale * ngram_logprob(scorer, hist, word)
            if nxt not in states:
                states[nxt] = len(nodes)
                nodes.append((states[nxt], lat.node_time(a.dst)))
                queue.append(nxt)
                if a.dst == lat.end:
                    end_states.append((nxt, states[nxt]))
            arcs.append((sid, states[nxt], a.word, a.ac, lm))
    end_id = len(nodes)
    nodes.append((end_id, lat.node_time(lat.end)))
    for (u, hist), sid in end_states:
        lm = lm_scale * ngram_logprob(scorer, hist, "</s>")
        arcs.append((sid, end_id, None, 0.0, lm))
    return Lattice(nodes, arcs, lat.words)


def _rescore_nbest_rnn(lat, scorer, lm_scale, nbest):
    """Push per-token recurrent-LM scores back onto the top-N paths."""
    ranked = sorted(_arc_paths(lat, 1.0, 1.0),
                    key=lambda row: (-row[1], _path_words(lat, row[0])))[:nbest]
    ids = {w: i for i, w in lat.words.items()}
    nodes = [(0, lat.node_time(lat.start))]
    arcs = []
    end_marks = []
    next_id = 1
    for ks, _ in ranked:
        word_arcs = [lat.arcs[k] for k in ks if lat.arcs[k].word is not None]
        words = [lat.words[a.word] for a in word_arcs]
        _, per_token = sentence_logprob(scorer, words)
        prev = 0
        for a, lp in zip(word_arcs, per_token):
            nodes.append((next_id, lat.node_time(a.dst)))
            arcs.append((prev, next_id, a.word, a.ac, lm_scale * lp))
            prev = next_id
            next_id += 1
        end_marks.append((prev, lm_scale * per_token[-1]))
    end_id = next_id
    nodes.append((end_id, lat.node_time(lat.end)))
    for prev, lp in end_marks:
        arcs.append((prev, end_id, None, 0.0, lp))
    return Lattice(nodes, arcs, lat.words)


def rescore_lattice(lat, scorer, lm_scale=1.0, nbest=50):
    """Replace arc LM scores with a language model's context-aware scores.

    An n-gram scorer expands nodes so each carries a unique history; a
    recurrent scorer rescores the top-N paths and rebuilds the lattice from
    them.  Replacement (not accumulation) makes n-gram rescoring idempotent
    on path scores.
    """
    if not lat.arcs:
        raise DataError("empty lattice")
    if nbest < 1:
        raise ConfigurationError("nbest must be at least 1")
    if isinstance(scorer, NGramModel):
        return _expand_ngram(lat, scorer, lm_scale)
    if isinstance(scorer, RnnLm):
        return _rescore_nbest_rnn(lat, scorer, lm_scale, nbest)
    raise DataError(f"unsupported scorer type: {type(scorer).__name__}")
