"""Shared representations and affinity measures.

Antigens and antibodies use one encoding per workload: fixed-length bit
strings for detectors, sparse rating profiles for the recommender, and
flow records for network traffic. Affinities are returned as plain
numbers; the function that produced them determines their kind.
"""

import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Optional, Sequence, Union

import numpy as np

from . import _kernels

SCORE_RANGE = (0, 5)


class BitString:
    """Immutable fixed-length binary pattern."""

    __slots__ = ("_bits",)

    def __init__(self, bits):
        if isinstance(bits, BitString):
            arr = bits._bits
        elif isinstance(bits, str):
            if not bits or set(bits) - {"0", "1"}:
                raise ValueError(f"not a bit string: {bits!r}")
            arr = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")
        else:
            arr = np.asarray(bits)
            if arr.ndim != 1 or arr.size == 0:
                raise ValueError("bit string must be a non-empty 1-d sequence")
            if not np.isin(arr, (0, 1)).all():
                raise ValueError("bit string elements must be 0 or 1")
        arr = np.array(arr, dtype=np.uint8)
        arr.flags.writeable = False
        self._bits = arr

    @property
    def bits(self) -> np.ndarray:
        return self._bits

    def complement(self) -> "BitString":
        return BitString(1 - self._bits)

    def __len__(self):
        return self._bits.size

    def __iter__(self):
        return iter(self._bits.tolist())

    def __getitem__(self, idx):
        return int(self._bits[idx])

    def __eq__(self, other):
        if not isinstance(other, BitString):
            return NotImplemented
        return self._bits.size == other._bits.size and bool((self._bits == other._bits).all())

    def __hash__(self):
        return hash(self._bits.tobytes())

    def __str__(self):
        return "".join("1" if b else "0" for b in self._bits)

    def __repr__(self):
        return f"BitString('{self}')"


BitLike = Union[BitString, str, Sequence[int], np.ndarray]


def as_bits(x: BitLike) -> np.ndarray:
    """Coerce to a validated read-only ``uint8`` array."""
    return x.bits if isinstance(x, BitString) else BitString(x).bits


def _pair(a: BitLike, b: BitLike):
    a, b = as_bits(a), as_bits(b)
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    return a, b


def _care_row(care, length):
    if care is None:
        return None
    care = np.asarray(care, dtype=bool)
    if care.shape != (length,):
        raise ValueError("care mask must match string length")
    return care[None, :]


def hamming_similarity(a: BitLike, b: BitLike, care=None) -> int:
    """Number of positions where ``a`` and ``b`` agree.

    Positions where ``care`` is False are don't-cares and count as agreeing.
    """
    a, b = _pair(a, b)
    m = _kernels.affinity_matrix_np(a[None], b[None], _kernels.HAMMING, _care_row(care, a.size))
    return int(m[0, 0])


def longest_contiguous_match(a: BitLike, b: BitLike, care=None) -> int:
    """Length of the longest run of consecutive agreeing positions."""
    a, b = _pair(a, b)
    m = _kernels.affinity_matrix_np(a[None], b[None], _kernels.CONTIGUOUS, _care_row(care, a.size))
    return int(m[0, 0])


def euclidean_distance(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("vectors must be finite")
    return float(np.linalg.norm(a - b))


@dataclass(frozen=True)
class RatingProfile:
    """One user's votes, ``item_id -> integer score``."""

    user_id: Hashable
    votes: Mapping[Hashable, int] = field(default_factory=dict)
    score_range: tuple = SCORE_RANGE

    def __post_init__(self):
        lo, hi = self.score_range
        votes = dict(self.votes)
        for item, score in votes.items():
            if isinstance(score, bool) or int(score) != score:
                raise ValueError(f"score for {item!r} is not an integer: {score!r}")
            if not lo <= score <= hi:
                raise ValueError(f"score {score} for {item!r} outside [{lo}, {hi}]")
        object.__setattr__(self, "votes", votes)

    @classmethod
    def from_pairs(cls, user_id, pairs, score_range=SCORE_RANGE):
        votes = {}
        for item, score in pairs:
            if item in votes:
                raise ValueError(f"duplicate item {item!r} for user {user_id!r}")
            votes[item] = score
        return cls(user_id, votes, score_range)

    @property
    def mean(self) -> float:
        return sum(self.votes.values()) / len(self.votes) if self.votes else 0.0

    def __len__(self):
        return len(self.votes)


def pearson(u: RatingProfile, v: RatingProfile, penalty_cutoff: int = 5) -> float:
    """Pearson correlation over the items both users voted on.

    Each user's mean is taken over all of that user's votes, not just the
    overlap. No overlap, or constant votes on the overlap for either user,
    gives 0. With fewer than ``penalty_cutoff`` common items the result is
    damped by ``n / penalty_cutoff``.
    """
    if penalty_cutoff < 1:
        raise ValueError("penalty_cutoff must be a positive integer")
    common = u.votes.keys() & v.votes.keys()
    n = len(common)
    if n == 0:
        return 0.0
    uo = [u.votes[i] for i in common]
    vo = [v.votes[i] for i in common]
    if min(uo) == max(uo) or min(vo) == max(vo):
        return 0.0
    ubar, vbar = u.mean, v.mean
    # fsum keeps the result independent of set iteration order
    num = math.fsum((a - ubar) * (b - vbar) for a, b in zip(uo, vo))
    su = math.fsum((a - ubar) ** 2 for a in uo)
    sv = math.fsum((b - vbar) ** 2 for b in vo)
    r = num / math.sqrt(su * sv)
    r *= min(1.0, n / penalty_cutoff)
    return max(-1.0, min(1.0, r))


# ---------------------------------------------------------------------------
# Flow records
# ---------------------------------------------------------------------------

FLOW_FIELDS = ("protocol", "src_ip", "src_port", "dst_ip", "dst_port")


@dataclass(frozen=True)
class FlowRecord:
    """One connection summary. ``None`` in any field is a wildcard."""

    protocol: Optional[str]
    src_ip: Optional[str]
    src_port: Optional[int]
    dst_ip: Optional[str]
    dst_port: Optional[int]

    def __post_init__(self):
        for name in ("src_port", "dst_port"):
            port = getattr(self, name)
            if port is not None and not (isinstance(port, int) and 0 <= port <= 65535):
                raise ValueError(f"{name} out of range: {port!r}")

    def wildcards(self):
        return tuple(f for f in FLOW_FIELDS if getattr(self, f) is None)


def flow_match(a: FlowRecord, b: FlowRecord) -> bool:
    """Field-wise equality where a wildcard on either side matches anything."""
    for name in FLOW_FIELDS:
        x, y = getattr(a, name), getattr(b, name)
        if x is not None and y is not None and x != y:
            return False
    return True

