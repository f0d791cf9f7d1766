"""Language models: backoff n-grams and a recurrent LM with log-Z regularization."""

from .ngram import (
    DEFAULT_PRUNE_THRESHOLDS,
    SENT_END,
    SENT_START,
    UNK,
    NGramModel,
    ngram_logprob,
    parse_arpa,
    prune_ngram,
    train_ngram,
    write_arpa,
)
from .rnnlm import (
    RnnLm,
    RnnLmSchedule,
    logz_variance,
    rnnlm_logprob,
    sentence_logprob,
    train_rnnlm,
)

__all__ = [
    "DEFAULT_PRUNE_THRESHOLDS",
    "SENT_END",
    "SENT_START",
    "UNK",
    "NGramModel",
    "ngram_logprob",
    "parse_arpa",
    "prune_ngram",
    "train_ngram",
    "write_arpa",
    "RnnLm",
    "RnnLmSchedule",
    "logz_variance",
    "rnnlm_logprob",
    "sentence_logprob",
    "train_rnnlm",
]
