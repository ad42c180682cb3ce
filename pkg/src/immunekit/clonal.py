"""Clonal selection with somatic hypermutation over bit strings."""

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from . import _kernels
from .encoding import BitString, as_bits

Seed = Union[int, np.random.Generator, None]


def _rng(seed: Seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class ClonalConfig:
    clone_factor: float = 1.0
    max_clones: int = 10
    base_mutation_rate: float = 0.5
    population_size: int = 10
    replacement_fraction: float = 0.1

    def __post_init__(self):
        if not self.clone_factor > 0:
            raise ValueError("clone_factor must be positive")
        if self.max_clones < 1:
            raise ValueError("max_clones must be >= 1")
        if not 0 < self.base_mutation_rate <= 1:
            raise ValueError("base_mutation_rate must lie in (0, 1]")
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if not 0 < self.replacement_fraction <= 1:
            raise ValueError("replacement_fraction must lie in (0, 1]")


def clone_count(rank: int, config: ClonalConfig) -> int:
    """Clones granted to the individual at ``rank`` (1 = best).

    ``min(max_clones, round(clone_factor * population_size / rank))`` with
    halves rounded up, so the count reaches 0 once the ratio drops below 0.5.
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    raw = config.clone_factor * config.population_size / rank
    return min(config.max_clones, math.floor(raw + 0.5))


def hypermutate(pattern, normalized_affinity: float, config: ClonalConfig, seed: Seed = None) -> BitString:
    """Flip each bit with probability ``base_mutation_rate * (1 - normalized_affinity)``.

    One uniform draw is consumed per bit, so replaying
    ``default_rng(seed).random(len(pattern)) < p`` reproduces the flip mask.
    """
    if not 0.0 <= normalized_affinity <= 1.0:
        raise ValueError("normalized_affinity must lie in [0, 1]")
    bits = as_bits(pattern)
    p = config.base_mutation_rate * (1.0 - normalized_affinity)
    flips = _rng(seed).random(bits.size) < p
    return BitString(bits ^ flips.astype(np.uint8))


def _mutate_rows(rows, probs, rng):
    flips = rng.random(rows.shape) < probs[:, None]
    return rows ^ flips.astype(np.uint8)


_AFFINITY_KINDS = {"hamming": _kernels.HAMMING, "contiguous": _kernels.CONTIGUOUS}


def _score(population, antigen, affinity):
    if isinstance(affinity, str):
        return _kernels.affinity_matrix(population, antigen[None], _AFFINITY_KINDS[affinity])[:, 0]
    return np.array([affinity(BitString(row), BitString(antigen)) for row in population], dtype=float)


def clonal_step(
    population,
    antigen,
    affinity: Union[str, Callable] = "hamming",
    config: ClonalConfig = ClonalConfig(),
    seed: Seed = None,
) -> np.ndarray:
    """One generation of clonal selection against a single antigen.

    ``population`` is an ``(n, L)`` array (or a sequence of bit strings);
    ``affinity`` is ``"hamming"``, ``"contiguous"`` or any callable on two
    ``BitString`` values returning a count in ``[0, L]``. The population is
    ranked, cloned by rank, hypermutated inversely to affinity, truncated
    back to its size with the current best always retained, and its worst
    ``replacement_fraction`` is refreshed with random strings.
    """
    rng = _rng(seed)
    pop = np.array([as_bits(p) for p in population], dtype=np.uint8) if not isinstance(
        population, np.ndarray) else np.asarray(population, dtype=np.uint8)
    if pop.ndim != 2 or pop.shape[0] == 0:
        raise ValueError("population must be a non-empty collection of bit strings")
    ag = as_bits(antigen)
    length = pop.shape[1]
    if ag.size != length:
        raise ValueError("antigen length differs from population strings")
    size = pop.shape[0]

    scores = _score(pop, ag, affinity)
    order = np.argsort(-scores, kind="stable")

    counts = [clone_count(rank, config) for rank in range(1, size + 1)]
    parent_idx = np.repeat(order, counts)
    if parent_idx.size:
        parents = pop[parent_idx]
        norm = np.clip(scores[parent_idx] / length, 0.0, 1.0)
        clones = _mutate_rows(parents, config.base_mutation_rate * (1.0 - norm), rng)
        clone_scores = _score(clones, ag, affinity)
        pool = np.vstack([pop[order], clones])
        pool_scores = np.concatenate([scores[order], clone_scores])
    else:
        pool, pool_scores = pop[order], scores[order]

    # stable sort keeps existing members ahead of equally good clones
    keep = np.argsort(-pool_scores, kind="stable")[:size]
    nxt = pool[keep].copy()

    n_replace = min(math.floor(config.replacement_fraction * len(nxt) + 0.5), len(nxt) - 1)
    if n_replace > 0:
        nxt[-n_replace:] = rng.integers(0, 2, size=(n_replace, length), dtype=np.uint8)
    return nxt


def best_affinity(population, antigen, affinity="hamming") -> float:
    pop = np.asarray(population, dtype=np.uint8)
    return float(_score(pop, as_bits(antigen), affinity).max())


def random_population(size: int, length: int, seed: Seed = None) -> np.ndarray:
    return _rng(seed).integers(0, 2, size=(size, length), dtype=np.uint8)
