"""Negative selection: detector generation, censoring, monitoring and memory.

Detectors are random bit strings that survive censoring against a self
set. Mature detectors watch a stream of observations; once a detector has
matched ``activation_threshold`` times it is activated and raises alerts.
An operator decision then either promotes it to a memory detector (never
expires, fires on the first match) or retires it.
"""

import enum
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import _kernels
from .clonal import ClonalConfig, hypermutate
from .encoding import BitString, as_bits

DEFAULT_LIFESPAN = 1000
DEFAULT_ACTIVATION_THRESHOLD = 3
REPAIR_ATTEMPTS = 5

# flip probability for a candidate that exactly matches self
REPAIR_CONFIG = ClonalConfig(base_mutation_rate=0.5)


class RuleKind(str, enum.Enum):
    R_CONTIGUOUS = "r-contiguous"
    HAMMING = "hamming-threshold"


_KERNEL_KIND = {RuleKind.R_CONTIGUOUS: _kernels.CONTIGUOUS, RuleKind.HAMMING: _kernels.HAMMING}


@dataclass(frozen=True)
class MatchRule:
    kind: RuleKind
    r: int

    def __post_init__(self):
        object.__setattr__(self, "kind", RuleKind(self.kind))
        if self.r < 1:
            raise ValueError("threshold r must be a positive integer")

    def check_length(self, length: int):
        if self.r > length:
            raise ValueError(f"threshold r={self.r} exceeds string length {length}")

    @property
    def kernel_kind(self) -> int:
        return _KERNEL_KIND[self.kind]

    def matches(self, a, b, care=None) -> bool:
        a, b = as_bits(a), as_bits(b)
        if a.size != b.size:
            raise ValueError(f"length mismatch: {a.size} vs {b.size}")
        self.check_length(a.size)
        c = None if care is None else np.asarray(care, dtype=bool)[None]
        return bool(_kernels.match_any(a[None], b[None], self.kernel_kind, self.r, c)[0])


class State(str, enum.Enum):
    IMMATURE = "immature"
    MATURE = "mature"
    ACTIVATED = "activated"
    MEMORY = "memory"
    RETIRED = "retired"


_ORDER = [State.IMMATURE, State.MATURE, State.ACTIVATED, State.MEMORY]


@dataclass
class Detector:
    id: int
    pattern: BitString
    state: State = State.MATURE
    age: int = 0
    match_count: int = 0
    activation_threshold: int = DEFAULT_ACTIVATION_THRESHOLD
    lifespan: float = DEFAULT_LIFESPAN

    def _advance(self, new: State):
        if new is not State.RETIRED and _ORDER.index(new) <= _ORDER.index(self.state):
            raise ValueError(f"detector {self.id}: cannot move {self.state.value} -> {new.value}")
        self.state = new


class DetectorGenerationError(RuntimeError):
    """Attempt budget ran out; ``detectors`` holds the ones found so far."""

    def __init__(self, message, detectors):
        super().__init__(message)
        self.detectors = detectors


def _self_matrix(self_set) -> np.ndarray:
    rows = [as_bits(s) for s in self_set]
    if not rows:
        raise ValueError("self set must be non-empty")
    if len({r.size for r in rows}) != 1:
        raise ValueError("self set strings must share one length")
    return np.vstack(rows)


def censor(candidate, self_set, rule: MatchRule) -> bool:
    """True to keep the candidate, False to eliminate it (it matches self)."""
    selfs = _self_matrix(self_set)
    cand = as_bits(candidate)
    if cand.size != selfs.shape[1]:
        raise ValueError("candidate length differs from self set")
    rule.check_length(cand.size)
    return not _kernels.match_any(cand[None], selfs, rule.kernel_kind, rule.r)[0]


def _repair(candidate, selfs, rule, rng):
    """Hypermutate a self-matching candidate until it passes censoring.

    The closer the candidate sits to self, the harder it is mutated.
    """
    length = candidate.size
    for _ in range(REPAIR_ATTEMPTS):
        closeness = _kernels.affinity_matrix(candidate[None], selfs, rule.kernel_kind).max() / length
        candidate = hypermutate(candidate, 1.0 - closeness, REPAIR_CONFIG, rng).bits
        if not _kernels.match_any(candidate[None], selfs, rule.kernel_kind, rule.r)[0]:
            return candidate
    return None


def generate_detectors(
    self_set,
    target_count: int,
    rule: MatchRule,
    seed=None,
    repair: bool = False,
    max_attempts: int = 100_000,
    activation_threshold: int = DEFAULT_ACTIVATION_THRESHOLD,
    lifespan: float = DEFAULT_LIFESPAN,
) -> List[Detector]:
    """Draw uniform random candidates and keep those that do not match self.

    Duplicates are skipped. Every drawn candidate counts towards
    ``max_attempts``; repair mutations do not. Raises
    ``DetectorGenerationError`` if the budget runs out first.
    """
    if target_count < 1:
        raise ValueError("target_count must be >= 1")
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    selfs = _self_matrix(self_set)
    length = selfs.shape[1]
    rule.check_length(length)
    rng = np.random.default_rng(seed)

    found: List[np.ndarray] = []
    seen = set()
    attempts = 0
    while len(found) < target_count and attempts < max_attempts:
        batch = min(max_attempts - attempts, max(64, 4 * (target_count - len(found))))
        cands = rng.integers(0, 2, size=(batch, length), dtype=np.uint8)
        hit = _kernels.match_any(cands, selfs, rule.kernel_kind, rule.r)
        for cand, bad in zip(cands, hit):
            attempts += 1
            if bad:
                cand = _repair(cand, selfs, rule, rng) if repair else None
                if cand is None:
                    continue
            key = cand.tobytes()
            if key in seen:
                continue
            seen.add(key)
            found.append(cand)
            if len(found) == target_count:
                break

    detectors = [
        Detector(i, BitString(bits), activation_threshold=activation_threshold, lifespan=lifespan)
        for i, bits in enumerate(found)
    ]
    if len(detectors) < target_count:
        raise DetectorGenerationError(
            f"found {len(detectors)} of {target_count} detectors in {attempts} attempts; "
            "self covers too much of the string space",
            detectors,
        )
    return detectors


def monitor(detectors: Sequence[Detector], observed, rule: MatchRule, care=None) -> List[Tuple[int, bool]]:
    """Present one observation to every live detector.

    Returns ``(detector_id, alerted)`` for each detector that matched, in
    detector order. A match increments ``match_count``; once the count
    reaches the activation threshold the detector becomes activated and
    every such match is an alert.
    """
    live = [d for d in detectors if d.state is not State.RETIRED]
    obs = as_bits(observed)
    if not live:
        return []
    pats = np.vstack([d.pattern.bits for d in live])
    if pats.shape[1] != obs.size:
        raise ValueError(f"observation length {obs.size} differs from detector length {pats.shape[1]}")
    rule.check_length(obs.size)
    c = None if care is None else np.asarray(care, dtype=bool)[None]
    hits = _kernels.match_any(pats, obs[None], rule.kernel_kind, rule.r, c)
    out = []
    for det, hit in zip(live, hits):
        if not hit:
            continue
        det.match_count += 1
        alerted = det.match_count >= det.activation_threshold
        if alerted and det.state is State.MATURE:
            det._advance(State.ACTIVATED)
        out.append((det.id, alerted))
    return out


def promote(detector: Detector, confirmed: bool) -> Detector:
    """Apply the operator's verdict on an activated detector."""
    if detector.state is not State.ACTIVATED:
        raise ValueError(f"detector {detector.id} is {detector.state.value}, not activated")
    if confirmed:
        detector._advance(State.MEMORY)
        detector.lifespan = math.inf
        detector.activation_threshold = 1
    else:
        detector._advance(State.RETIRED)
    return detector


def age_and_expire(detectors: Iterable[Detector], ticks: int = 1) -> List[Detector]:
    """Age every detector and drop retired ones and those past their lifespan."""
    survivors = []
    for det in detectors:
        det.age += ticks
        if det.state is State.RETIRED:
            continue
        if det.state is not State.MEMORY and det.age > det.lifespan:
            continue
        survivors.append(det)
    return survivors


def coverage(detectors: Sequence[Detector], rule: MatchRule, length: Optional[int] = None) -> np.ndarray:
    """Boolean mask over all ``2**L`` strings: matched by at least one detector.

    Index ``k`` corresponds to the string whose binary value is ``k``.
    """
    live = [d.pattern.bits for d in detectors if d.state is not State.RETIRED]
    if live:
        length = live[0].size
    elif length is None:
        raise ValueError("length is required for an empty detector set")
    rule.check_length(length)
    space = _kernels.universe(length)
    if not live:
        return np.zeros(len(space), dtype=bool)
    return _kernels.match_any(space, np.vstack(live), rule.kernel_kind, rule.r)
