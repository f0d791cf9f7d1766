"""Backoff n-gram language models with absolute discounting.

Probabilities are estimated by interpolated absolute discounting and stored
in backoff form: a stored entry carries the full interpolated conditional,
and each context carries a backoff weight equal to its interpolation mass.
Under that convention the conditional distribution at every context sums to
one exactly, before and after pruning.

Storage is in log10 (matching the ARPA text format); the scoring API
returns natural logs so the values combine directly with acoustic scores.
"""

import math

from ..errors import ConfigurationError, DataError

SENT_START = "<s>"
SENT_END = "</s>"
UNK = "<unk>"

LN10 = math.log(10.0)

# Floor for log10 probabilities that are exactly zero (start-of-sentence
# token as a predicted word, unseen words under a zero discount).
LOG10_FLOOR = -99.0

# Per-order pruning thresholds used by default when a caller does not
# supply any: tighter at low orders, looser at high orders.
DEFAULT_PRUNE_THRESHOLDS = {2: 1.0e-8, 3: 1.0e-7, 4: 1.0e-6}


class NGramModel:
    """Backoff n-gram model over string tokens.

    probs[k] maps a (k-1)-word context tuple to {word: log10 prob} for the
    stored k-grams.  bows maps a context tuple (length 1..order-1) to its
    log10 backoff weight; a context with no entry backs off with weight 1.
    """

    def __init__(self, order, vocab, probs, bows):
        if order < 1:
            raise ConfigurationError("n-gram order must be >= 1")
        self.order = order
        self.vocab = sorted(vocab)
        self.vocab_set = set(self.vocab)
        self.probs = probs
        self.bows = bows

    def map_word(self, word):
        """Map out-of-vocabulary tokens to the unknown-word symbol."""
        return word if word in self.vocab_set else UNK

    def entry_count(self, k):
        return sum(len(words) for words in self.probs.get(k, {}).values())

    def entries(self, k):
        """Iterate (context, word, log10 prob) over stored order-k entries."""
        for ctx, words in self.probs.get(k, {}).items():
            for w, lp in words.items():
                yield ctx, w, lp

    def logprob10(self, context, word):
        """log10 P(word | context) with backoff; context is a word tuple."""
        word = self.map_word(word)
        ctx = tuple(self.map_word(w) for w in context)
        if len(ctx) > self.order - 1:
            ctx = ctx[len(ctx) - (self.order - 1):]
        return self._lookup(ctx, word)

    def _lookup(self, ctx, word):
        table = self.probs.get(len(ctx) + 1, {})
        stored = table.get(ctx)
        if stored is not None and word in stored:
            return stored[word]
        if not ctx:
            # Unigrams cover the whole vocabulary, so this is unreachable
            # for mapped words; keep a floor for defensive callers.
            return LOG10_FLOOR
        bow = self.bows.get(ctx, 0.0)
        return bow + self._lookup(ctx[1:], word)


def ngram_logprob(model, context, word):
    """Natural-log P(word | context) under the backoff model."""
    return model.logprob10(context, word) * LN10


def _collect_counts(corpus, order):
    counts = {k: {} for k in range(1, order + 1)}
    n_sentences = 0
    for sentence in corpus:
        for w in sentence:
            if not isinstance(w, str) or not w:
                raise DataError("corpus tokens must be nonempty strings")
            if w in (SENT_START, SENT_END):
                raise DataError("sentence boundary tokens may not appear in text: %r" % w)
        padded = [SENT_START] + list(sentence) + [SENT_END]
        n_sentences += 1
        for i in range(1, len(padded)):
            for k in range(1, order + 1):
                if i - k + 1 < 0:
                    break
                gram = tuple(padded[i - k + 1:i + 1])
                table = counts[k]
                table[gram] = table.get(gram, 0) + 1
    if n_sentences == 0:
        raise DataError("training corpus is empty")
    return counts, n_sentences


def train_ngram(corpus, order, discount=0.75):
    """Estimate a backoff n-gram model by interpolated absolute discounting.

    corpus is an iterable of token sequences (no boundary tokens; they are
    added here).  Each stored conditional is (count - discount)/total plus
    the context's interpolation mass times the lower-order probability; the
    interpolation mass is kept as the context's backoff weight.
    """
    if order < 1:
        raise ConfigurationError("n-gram order must be >= 1")
    if not 0.0 <= discount < 1.0:
        raise ConfigurationError("discount must lie in [0, 1)")
    corpus = [list(s) for s in corpus]
    counts, n_sentences = _collect_counts(corpus, order)

    words = set()
    for sentence in corpus:
        words.update(sentence)
    vocab = sorted(words | {SENT_START, SENT_END, UNK})
    predictable = [w for w in vocab if w != SENT_START]

    probs = {k: {} for k in range(1, order + 1)}
    bows = {}

    # Unigrams: discounted relative frequency plus a uniform share of the
    # discount mass, so every predictable word has positive probability.
    total = sum(counts[1].values())
    n_seen = sum(1 for c in counts[1].values() if c > 0)
    uniform_mass = discount * n_seen / len(predictable)
    unigrams = {}
    for w in predictable:
        c = counts[1].get((w,), 0)
        p = (max(c - discount, 0.0) + uniform_mass) / total
        unigrams[w] = math.log10(p) if p > 0.0 else LOG10_FLOOR
    unigrams[SENT_START] = LOG10_FLOOR
    probs[1][()] = unigrams

    def lower_prob(ctx, w):
        table = probs[len(ctx) + 1]
        stored = table.get(ctx)
        if stored is not None and w in stored:
            return 10.0 ** stored[w]
        if not ctx:
            return 10.0 ** LOG10_FLOOR
        bow = bows.get(ctx, 0.0)
        return 10.0 ** bow * lower_prob(ctx[1:], w)

    for k in range(2, order + 1):
        grouped = {}
        for gram, c in counts[k].items():
            grouped.setdefault(gram[:-1], {})[gram[-1]] = c
        for ctx in sorted(grouped):
            events = grouped[ctx]
            total_ctx = sum(events.values())
            lam = discount * len(events) / total_ctx
            stored = {}
            for w, c in events.items():
                p = (c - discount) / total_ctx + lam * lower_prob(ctx[1:], w)
                stored[w] = math.log10(p) if p > 0.0 else LOG10_FLOOR
            probs[k][ctx] = stored
            bows[ctx] = math.log10(lam) if lam > 0.0 else LOG10_FLOOR
    model = NGramModel(order, vocab, probs, bows)
    model.n_sentences = n_sentences
    model.n_events = total
    return model


def _context_prob(model, ctx, start_weight):
    """Model probability of a context via the chain rule.

    Contexts anchored at the sentence-start token are weighted by
    start_weight instead of the (floored) unigram start probability, so
    sentence-initial entries compete on the same scale as the rest.
    """
    p = 1.0
    hist = []
    for w in ctx:
        if w == SENT_START and not hist:
            p *= start_weight
        else:
            p *= 10.0 ** model._lookup(tuple(hist[-(model.order - 1):]), w)
        hist.append(w)
    return p


def _removal_divergence(model, ctx, word):
    """KL divergence of the context distribution after dropping one entry.

    Removing (ctx, word) moves the word onto the backoff path and rescales
    the whole backoff region; only those two pieces change, so the
    divergence has a closed two-term form.
    """
    stored = model.probs[len(ctx) + 1][ctx]
    p_here = 10.0 ** stored[word]
    stored_mass = sum(10.0 ** lp for lp in stored.values())
    lower = {w: 10.0 ** model._lookup(ctx[1:], w) for w in stored}
    lower_mass = sum(lower.values())

    num = 1.0 - stored_mass
    den = 1.0 - lower_mass
    num_new = num + p_here
    den_new = den + lower[word]
    if den_new <= 0.0 or num_new <= 0.0:
        return math.inf
    alpha_new = num_new / den_new
    p_new = alpha_new * lower[word]
    div = p_here * (math.log(p_here) - math.log(p_new))
    if num > 0.0 and den > 0.0:
        alpha_old = num / den
        div += num * (math.log(alpha_old) - math.log(alpha_new))
    elif num > 0.0:
        return math.inf
    return div


def prune_ngram(model, thresholds=None):
    """Drop low-value entries and rebuild backoff weights.

    thresholds maps order -> minimum weighted divergence; an entry at order
    k is removed when P(context) times the divergence of its removal falls
    strictly below thresholds[k].  Every entry is scored against the
    unpruned model in one pass, so the removal set grows monotonically with
    the thresholds.  Entries that still serve as the context of a surviving
    higher-order entry are never removed.
    """
    if thresholds is None:
        thresholds = DEFAULT_PRUNE_THRESHOLDS
    for k, theta in thresholds.items():
        if not isinstance(k, int) or k < 2:
            raise ConfigurationError("prunable orders start at 2, got %r" % (k,))
        if theta < 0.0:
            raise ConfigurationError("pruning thresholds must be nonnegative")

    n_sent = getattr(model, "n_sentences", None)
    n_ev = getattr(model, "n_events", None)
    start_weight = (n_sent / n_ev) if (n_sent and n_ev) else 10.0 ** model.probs[1][()].get(SENT_END, LOG10_FLOOR)

    new_probs = {1: {(): dict(model.probs[1][()])}}
    kept_contexts = set()
    for k in range(model.order, 1, -1):
        theta = thresholds.get(k, 0.0)
        kept = {}
        for ctx, w, lp in model.entries(k):
            protected = ctx + (w,) in kept_contexts
            if not protected and theta > 0.0:
                score = _context_prob(model, ctx, start_weight) * _removal_divergence(model, ctx, w)
                if score < theta:
                    continue
            kept.setdefault(ctx, {})[w] = lp
        new_probs[k] = kept
        kept_contexts = set(kept)

    pruned = NGramModel(model.order, model.vocab, new_probs, {})
    if n_sent is not None:
        pruned.n_sentences = n_sent
        pruned.n_events = n_ev

    # Rebuild backoff weights bottom-up: each context's weight depends on
    # lower-order probabilities, which are final once shorter contexts are
    # rebuilt (stored conditionals never change, only the weights).
    for k in range(2, model.order + 1):
        for ctx in sorted(new_probs[k]):
            stored = new_probs[k][ctx]
            num = 1.0 - sum(10.0 ** lp for lp in stored.values())
            den = 1.0 - sum(10.0 ** pruned._lookup(ctx[1:], w) for w in stored)
            if num > 0.0 and den > 0.0:
                pruned.bows[ctx] = math.log10(num / den)
            else:
                pruned.bows[ctx] = LOG10_FLOOR
    return pruned


def write_arpa(model, path):
    """Serialize the model in the textual ARPA format.

    Floats are written with repr, which emits the shortest decimal that
    parses back to the identical binary value, so write -> parse -> write
    reproduces the file byte for byte.
    """
    lines = ["", "\\data\\"]
    counts = {1: len(model.probs[1][()])}
    for k in range(2, model.order + 1):
        counts[k] = model.entry_count(k)
    for k in range(1, model.order + 1):
        lines.append("ngram %d=%d" % (k, counts[k]))
    for k in range(1, model.order + 1):
        lines.append("")
        lines.append("\\%d-grams:" % k)
        entries = []
        for ctx, w, lp in model.entries(k):
            entries.append((ctx + (w,), lp))
        for gram, lp in sorted(entries):
            line = "%s\t%s" % (repr(lp), " ".join(gram))
            if gram in model.bows:
                line += "\t%s" % repr(model.bows[gram])
            lines.append(line)
    lines.append("")
    lines.append("\\end\\")
    lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))


def parse_arpa(path):
    """Read a model previously written by write_arpa (or any ARPA file)."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = [ln.strip() for ln in fh]
    lines = [ln for ln in raw if ln]
    try:
        start = lines.index("\\data\\")
    except ValueError:
        raise DataError("not an ARPA file: missing \\data\\ header")
    declared = {}
    i = start + 1
    while i < len(lines) and lines[i].startswith("ngram "):
        body = lines[i][len("ngram "):]
        k_txt, n_txt = body.split("=")
        declared[int(k_txt)] = int(n_txt)
        i += 1
    if not declared:
        raise DataError("ARPA header declares no n-gram sections")
    order = max(declared)

    probs = {k: {} for k in range(1, order + 1)}
    bows = {}
    vocab = set()
    section = None
    seen = {k: 0 for k in declared}
    for ln in lines[i:]:
        if ln == "\\end\\":
            section = None
            continue
        if ln.startswith("\\") and ln.endswith("-grams:"):
            section = int(ln[1:-len("-grams:")])
            if section not in declared:
                raise DataError("undeclared ARPA section: %d-grams" % section)
            continue
        if section is None:
            continue
        fields = ln.split("\t") if "\t" in ln else ln.split()
        if "\t" in ln:
            if len(fields) == 2:
                lp_txt, gram_txt = fields
                bow_txt = None
            elif len(fields) == 3:
                lp_txt, gram_txt, bow_txt = fields
            else:
                raise DataError("malformed ARPA entry: %r" % ln)
            gram = tuple(gram_txt.split())
        else:
            if len(fields) == section + 1:
                lp_txt, gram, bow_txt = fields[0], tuple(fields[1:]), None
            elif len(fields) == section + 2:
                lp_txt, gram, bow_txt = fields[0], tuple(fields[1:-1]), fields[-1]
            else:
                raise DataError("malformed ARPA entry: %r" % ln)
        if len(gram) != section:
            raise DataError("entry arity does not match its section: %r" % ln)
        probs[section].setdefault(gram[:-1], {})[gram[-1]] = float(lp_txt)
        if bow_txt is not None:
            bows[gram] = float(bow_txt)
        if section == 1:
            vocab.add(gram[0])
        seen[section] += 1
    for k, n in declared.items():
        if seen[k] != n:
            raise DataError("ARPA section %d-grams has %d entries, header says %d" % (k, seen[k], n))
    return NGramModel(order, vocab, probs, bows)
