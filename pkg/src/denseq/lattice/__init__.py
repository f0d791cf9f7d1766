"""Word lattices: io, union, posteriors, MBR decoding, rescoring, weight tuning."""

from .graph import (
    EPS,
    Arc,
    Lattice,
    Node,
    enumerate_paths,
    forward_backward,
    lattice_union,
    parse_lattice,
    relabel_words,
    write_lattice,
)
from .decode import (
    Hypothesis,
    edit_distance,
    map_decode,
    mbr_decode,
    nbest_paths,
    rescore_lattice,
)
from .tpe import CombinationWeights, TuneResult, random_search_weights, tune_weights_tpe

__all__ = [
    "EPS",
    "Arc",
    "Lattice",
    "Node",
    "enumerate_paths",
    "forward_backward",
    "lattice_union",
    "parse_lattice",
    "relabel_words",
    "write_lattice",
    "Hypothesis",
    "edit_distance",
    "map_decode",
    "mbr_decode",
    "nbest_paths",
    "rescore_lattice",
    "CombinationWeights",
    "TuneResult",
    "random_search_weights",
    "tune_weights_tpe",
]
