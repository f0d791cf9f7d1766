"""Lattice structure, text io, relabeling, union, and arc posteriors.

A lattice is a DAG with a unique source and sink, integer time indices that
never decrease along an arc, and a word table mapping integer ids to
strings.  Arcs carry separate acoustic and LM log-scores (base e).  Epsilon
arcs (word None) mark structural links that carry no word.
"""

import math
from collections import namedtuple

import numpy as np

from ..errors import (
    CompatibilityError,
    ConfigurationError,
    DataError,
    NumericError,
    StructureError,
    VocabularyError,
)

Node = namedtuple("Node", ["id", "time"])
Arc = namedtuple("Arc", ["src", "dst", "word", "ac", "lm"])

EPS = "<eps>"


class Lattice:
    """Immutable word lattice; start and end are derived, not declared.

    The unique node without incoming arcs is the start, the unique node
    without outgoing arcs is the end; construction rejects graphs where
    either is ambiguous, cyclic graphs, and arcs that no start-to-end path
    uses.
    """

    def __init__(self, nodes, arcs, words):
        self.nodes = tuple(Node(int(n[0]), int(n[1])) for n in nodes)
        self.arcs = tuple(Arc(int(a[0]), int(a[1]),
                              None if a[2] is None else int(a[2]),
                              float(a[3]), float(a[4])) for a in arcs)
        self.words = {int(i): str(w) for i, w in dict(words).items()}
        self._validate()

    def _validate(self):
        ids = [n.id for n in self.nodes]
        if not ids:
            raise StructureError("lattice has no nodes")
        if len(set(ids)) != len(ids):
            raise StructureError("duplicate node ids")
        for i, w in self.words.items():
            if not w or any(c.isspace() for c in w) or w == EPS:
                raise DataError(f"unusable word table entry {i}: {w!r}")
        self._time = {n.id: n.time for n in self.nodes}
        self._out = {n.id: [] for n in self.nodes}
        self._in = {n.id: [] for n in self.nodes}
        for k, a in enumerate(self.arcs):
            if a.src not in self._time or a.dst not in self._time:
                raise StructureError(f"arc {k} references unknown node")
            if a.word is not None and a.word not in self.words:
                raise VocabularyError(f"arc {k} references unknown word id {a.word}",
                                      words=(str(a.word),))
            if not (math.isfinite(a.ac) and math.isfinite(a.lm)):
                raise NumericError(f"arc {k} has a non-finite score")
            if self._time[a.dst] < self._time[a.src]:
                raise StructureError(f"arc {k} goes backward in time")
            self._out[a.src].append(k)
            self._in[a.dst].append(k)

        if not self.arcs:
            if len(self.nodes) != 1:
                raise StructureError("multiple nodes but no arcs")
            self.start = self.end = self.nodes[0].id
            self._topo = [self.start]
            return

        sources = [n.id for n in self.nodes if not self._in[n.id]]
        sinks = [n.id for n in self.nodes if not self._out[n.id]]
        if len(sources) != 1 or len(sinks) != 1:
            raise StructureError(
                f"need exactly one source and one sink, found {len(sources)}/{len(sinks)}")
        self.start, self.end = sources[0], sinks[0]

        # Kahn topological order doubles as the cycle check
        degree = {n.id: len(self._in[n.id]) for n in self.nodes}
        queue = [self.start]
        topo = []
        while queue:
            u = queue.pop()
            topo.append(u)
            for k in self._out[u]:
                v = self.arcs[k].dst
                degree[v] -= 1
                if degree[v] == 0:
                    queue.append(v)
        if len(topo) != len(self.nodes):
            raise StructureError("lattice contains a cycle")
        self._topo = topo

        fwd = {self.start}
        for u in topo:
            if u in fwd:
                for k in self._out[u]:
                    fwd.add(self.arcs[k].dst)
        bwd = {self.end}
        for u in reversed(topo):
            if u in bwd:
                for k in self._in[u]:
                    bwd.add(self.arcs[k].src)
        for k, a in enumerate(self.arcs):
            if a.src not in fwd or a.dst not in bwd:
                raise StructureError(f"arc {k} lies on no start-to-end path")

    def node_time(self, node_id):
        return self._time[node_id]

    def arc_word(self, arc):
        """Word string for an arc, or None for epsilon arcs."""
        return None if arc.word is None else self.words[arc.word]


def write_lattice(lat, path):
    """Line-based text serialization; scores kept to 9 significant digits.

    Writing, parsing, and writing again reproduces the file byte for byte
    (the first write is where sub-9-digit precision is dropped).
    """
    lines = [f"LATTICE v1 {len(lat.nodes)} {len(lat.arcs)}"]
    for i in sorted(lat.words):
        lines.append(f"W {i} {lat.words[i]}")
    for n in sorted(lat.nodes):
        lines.append(f"N {n.id} {n.time}")
    for a in lat.arcs:
        word = EPS if a.word is None else lat.words[a.word]
        lines.append("A %d %d %s %.9g %.9g" % (a.src, a.dst, word, a.ac, a.lm))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_lattice(path):
    with open(path, "r", encoding="utf-8") as fh:
        rows = [ln.split() for ln in fh if ln.strip()]
    if not rows or rows[0][:2] != ["LATTICE", "v1"] or len(rows[0]) != 4:
        raise DataError("not a v1 lattice file")
    try:
        n_nodes, n_arcs = int(rows[0][2]), int(rows[0][3])
        words = {}
        nodes = []
        raw_arcs = []
        for row in rows[1:]:
            tag = row[0]
            if tag == "W" and len(row) == 3:
                words[int(row[1])] = row[2]
            elif tag == "N" and len(row) == 3:
                nodes.append((int(row[1]), int(row[2])))
            elif tag == "A" and len(row) == 6:
                raw_arcs.append(row[1:])
            else:
                raise DataError(f"unrecognized lattice line: {' '.join(row)}")
    except ValueError as exc:
        raise DataError(f"malformed lattice field: {exc}")
    if len(nodes) != n_nodes or len(raw_arcs) != n_arcs:
        raise DataError(
            f"header declares {n_nodes} nodes / {n_arcs} arcs, "
            f"found {len(nodes)} / {len(raw_arcs)}")
    ids = {w: i for i, w in words.items()}
    if len(ids) != len(words):
        raise DataError("word table maps two ids to the same word")
    arcs = []
    for src, dst, word, ac, lm in raw_arcs:
        if word == EPS:
            wid = None
        elif word in ids:
            wid = ids[word]
        else:
            raise VocabularyError(f"arc word not in table: {word}", words=(word,))
        arcs.append((int(src), int(dst), wid, float(ac), float(lm)))
    return Lattice(nodes, arcs, words)


def relabel_words(lat, mapping, table):
    """Rewrite arc word ids onto a shared table; structure is untouched.

    mapping sends old word ids to ids of ``table``.  Any arc word id the
    mapping misses is an error that names the offending words.
    """
    used = {a.word for a in lat.arcs if a.word is not None}
    missing = sorted(used - set(mapping))
    if missing:
        raise VocabularyError(
            "mapping misses words: " + " ".join(lat.words[i] for i in missing),
            words=tuple(lat.words[i] for i in missing))
    bad_targets = sorted({mapping[i] for i in used} - set(table))
    if bad_targets:
        raise VocabularyError(f"mapping targets missing from shared table: {bad_targets}",
                              words=tuple(str(t) for t in bad_targets))
    arcs = [Arc(a.src, a.dst, None if a.word is None else mapping[a.word], a.ac, a.lm)
            for a in lat.arcs]
    return Lattice(lat.nodes, arcs, table)


def lattice_union(lats, weights):
    """Frame every lattice between fresh super-start/end nodes.

    System i keeps its internal structure; both of its score fields are
    scaled by weight i.  The linking epsilon arcs carry no word and zero
    scores, so the union's path multiset is exactly the rescaled inputs'.
    """
    lats = list(lats)
    if not lats:
        raise DataError("no lattices to combine")
    system_weights = list(getattr(weights, "system_weights", weights))
    if len(system_weights) != len(lats):
        raise ConfigurationError(
            f"{len(system_weights)} weights for {len(lats)} systems")
    if any(w < 0 for w in system_weights) or not any(w > 0 for w in system_weights):
        raise ConfigurationError("system weights must be nonnegative, one positive")
    shared = lats[0].words
    for l in lats[1:]:
        if l.words != shared:
            raise CompatibilityError("lattices do not share a word table")

    t_lo = min(n.time for l in lats for n in l.nodes)
    t_hi = max(n.time for l in lats for n in l.nodes)
    nodes = [(0, t_lo)]
    arcs = []
    next_id = 1
    for l, w in zip(lats, system_weights):
        remap = {}
        for n in l.nodes:
            remap[n.id] = next_id
            nodes.append((next_id, n.time))
            next_id += 1
        for a in l.arcs:
            arcs.append((remap[a.src], remap[a.dst], a.word, w * a.ac, w * a.lm))
        arcs.append((0, remap[l.start], None, 0.0, 0.0))
        arcs.append((remap[l.end], -1, None, 0.0, 0.0))  # -1: super-end, id known later
    end_id = next_id
    nodes.append((end_id, t_hi))
    fixed = [(s, end_id if d == -1 else d, w, ac, lm) for s, d, w, ac, lm in arcs]
    return Lattice(nodes, fixed, shared)


def _log_add(a, b):
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    return np.logaddexp(a, b)


def forward_backward(lat, acoustic_scale=1.0, lm_scale=1.0):
    """Arc posteriors from log-space alpha/beta over the scaled scores.

    Returns one posterior per arc, aligned with lat.arcs.  Complete-path
    posteriors sum to one by construction.
    """
    weight = [acoustic_scale * a.ac + lm_scale * a.lm for a in lat.arcs]
    alpha = {n.id: -math.inf for n in lat.nodes}
    beta = dict(alpha)
    alpha[lat.start] = 0.0
    for u in lat._topo:
        if alpha[u] == -math.inf:
            continue
        for k in lat._out[u]:
            dst = lat.arcs[k].dst
            alpha[dst] = _log_add(alpha[dst], alpha[u] + weight[k])
    beta[lat.end] = 0.0
    for u in reversed(lat._topo):
        if beta[u] == -math.inf:
            continue
        for k in lat._in[u]:
            src = lat.arcs[k].src
            beta[src] = _log_add(beta[src], beta[u] + weight[k])
    z = alpha[lat.end]
    if not math.isfinite(z):
        raise StructureError("end node unreachable from start")
    return np.array([math.exp(alpha[a.src] + weight[k] + beta[a.dst] - z)
                     for k, a in enumerate(lat.arcs)])


def enumerate_paths(lat, limit=None):
    """All complete paths as (word tuple, acoustic total, lm total).

    Epsilon arcs contribute no words.  With ``limit`` set, returns None as
    soon as more complete paths than that exist.
    """
    if not lat.arcs:
        return [((), 0.0, 0.0)]
    done = []
    stack = [(lat.start, (), 0.0, 0.0)]
    while stack:
        u, words, ac, lm = stack.pop()
        if u == lat.end:
            done.append((words, ac, lm))
            if limit is not None and len(done) > limit:
                return None
            continue
        for k in lat._out[u]:
            a = lat.arcs[k]
            w = words if a.word is None else words + (lat.words[a.word],)
            stack.append((a.dst, w, ac + a.ac, lm + a.lm))
    return done
