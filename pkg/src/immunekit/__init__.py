"""Artificial immune system algorithms: negative selection, clonal
selection, idiotypic networks and the Dendritic Cell Algorithm."""

from .encoding import (
    BitString,
    FlowRecord,
    RatingProfile,
    euclidean_distance,
    flow_match,
    hamming_similarity,
    longest_contiguous_match,
    pearson,
)

__version__ = "0.1.0"

__all__ = [
    "BitString",
    "FlowRecord",
    "RatingProfile",
    "euclidean_distance",
    "flow_match",
    "hamming_similarity",
    "longest_contiguous_match",
    "pearson",
]
