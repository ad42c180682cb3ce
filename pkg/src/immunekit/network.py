"""Idiotypic immune network recommender.

The target user is the single antigen; other users join as antibodies
whose concentrations evolve by explicit Euler steps of

    dx_i/dt = k1 m_i x_i y - (k2 / n) sum_{j != i} m_ij x_i x_j - k3 x_i

where ``m_i`` is the Pearson affinity to the antigen and ``m_ij`` the
affinity between antibodies. The suppression term is only active when the
network is idiotypic; without it the law reduces to stimulation minus
decay.
"""

import itertools
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np

from .encoding import RatingProfile, pearson


@dataclass(frozen=True)
class NetworkParams:
    k1: float = 2.0  # stimulation
    k2: float = 1.0  # suppression
    k3: float = 1.0  # death rate
    y: float = 1.0  # antigen concentration
    capacity: int = 10
    dt: float = 1.0
    concentration_floor: float = 0.05
    saturation_cap: float = 10.0
    initial_concentration: float = 1.0
    stabilisation_window: int = 10
    penalty_cutoff: int = 5
    reflect_negative: bool = False

    def __post_init__(self):
        if not (self.k1 > 0 and self.k2 >= 0 and self.k3 > 0 and self.y > 0):
            raise ValueError("rates must satisfy k1 > 0, k2 >= 0, k3 > 0, y > 0")
        if self.capacity < 1 or self.stabilisation_window < 1 or self.penalty_cutoff < 1:
            raise ValueError("capacity, stabilisation_window and penalty_cutoff must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.concentration_floor < self.initial_concentration < self.saturation_cap:
            raise ValueError("need 0 < concentration_floor < initial_concentration < saturation_cap")


def euler_step(x, m, pair, params: NetworkParams, idiotypic: bool) -> np.ndarray:
    """Advance concentrations ``x`` by one step and clamp to ``[0, cap]``.

    ``m`` holds antigen affinities, ``pair`` the symmetric antibody affinity
    matrix whose diagonal is ignored. Every update reads the previous
    concentration vector.
    """
    x = np.asarray(x, dtype=float)
    m = np.asarray(m, dtype=float)
    rate = params.k1 * m * params.y - params.k3
    if params.reflect_negative:
        rate = params.k1 * np.abs(m) * params.y - params.k3
    dx = rate * x
    n = x.size
    if idiotypic and n > 1 and params.k2 > 0:
        off = np.array(pair, dtype=float)
        np.fill_diagonal(off, 0.0)
        dx -= (params.k2 / n) * x * (off @ x)
    return np.clip(x + params.dt * dx, 0.0, params.saturation_cap)


@dataclass
class Antibody:
    profile: RatingProfile
    concentration: float
    iterations_present: int = 0

    @property
    def id(self):
        return self.profile.user_id


class NetworkExhausted(RuntimeError):
    """The candidate pool ran out and no antibody survived."""

    def __init__(self, message, network):
        super().__init__(message)
        self.network = network


@dataclass
class ImmuneNetwork:
    antigen: RatingProfile
    params: NetworkParams = field(default_factory=NetworkParams)
    idiotypic_enabled: bool = False
    antibodies: List[Antibody] = field(default_factory=list)
    affinity: Dict[Hashable, float] = field(default_factory=dict)
    pair_affinity: Dict[frozenset, float] = field(default_factory=dict)
    iterations: int = 0
    quiet_iterations: int = 0

    @property
    def full(self) -> bool:
        return len(self.antibodies) >= self.params.capacity

    def __len__(self):
        return len(self.antibodies)

    def ids(self):
        return [ab.id for ab in self.antibodies]

    def concentrations(self) -> np.ndarray:
        return np.array([ab.concentration for ab in self.antibodies], dtype=float)

    def add_antibody(self, candidate: RatingProfile) -> "ImmuneNetwork":
        if self.full:
            raise ValueError("network is at capacity; iterate before adding")
        if candidate.user_id in self.affinity:
            raise ValueError(f"user {candidate.user_id!r} is already an antibody")
        cutoff = self.params.penalty_cutoff
        if self.idiotypic_enabled:
            for ab in self.antibodies:
                key = frozenset((ab.id, candidate.user_id))
                self.pair_affinity[key] = pearson(ab.profile, candidate, cutoff)
        self.affinity[candidate.user_id] = pearson(candidate, self.antigen, cutoff)
        self.antibodies.append(Antibody(candidate, self.params.initial_concentration))
        return self

    def pair_matrix(self) -> np.ndarray:
        ids = self.ids()
        out = np.eye(len(ids))
        for a, b in itertools.combinations(range(len(ids)), 2):
            key = frozenset((ids[a], ids[b]))
            if key not in self.pair_affinity:
                self.pair_affinity[key] = pearson(
                    self.antibodies[a].profile, self.antibodies[b].profile, self.params.penalty_cutoff)
            out[a, b] = out[b, a] = self.pair_affinity[key]
        return out

    def iterate(self) -> List[Hashable]:
        """One Euler step; returns the ids of antibodies that fell below the floor."""
        self.iterations += 1
        if not self.antibodies:
            self.quiet_iterations += 1
            return []
        m = np.array([self.affinity[i] for i in self.ids()])
        pair = self.pair_matrix() if self.idiotypic_enabled else None
        x = euler_step(self.concentrations(), m, pair, self.params, self.idiotypic_enabled)
        kept, dropped = [], []
        for ab, xi in zip(self.antibodies, x):
            if xi < self.params.concentration_floor:
                dropped.append(ab.id)
                self._forget(ab.id)
            else:
                ab.concentration = float(xi)
                ab.iterations_present += 1
                kept.append(ab)
        self.antibodies = kept
        self.quiet_iterations = 0 if dropped else self.quiet_iterations + 1
        return dropped

    def _forget(self, user_id):
        del self.affinity[user_id]
        for key in [k for k in self.pair_affinity if user_id in k]:
            del self.pair_affinity[key]

    def is_stabilised(self) -> bool:
        return self.quiet_iterations >= self.params.stabilisation_window

    def mean_pair_affinity(self) -> float:
        """Mean Pearson affinity over all antibody pairs; NaN with fewer than two."""
        n = len(self.antibodies)
        if n < 2:
            return float("nan")
        pair = self.pair_matrix()
        return float(pair[np.triu_indices(n, 1)].mean())

    def predict(self, item_id) -> Optional[float]:
        """Concentration-weighted vote average, or None without usable voters.

        Voters contribute with weight ``concentration * m_i``. Only positive
        weights count unless ``reflect_negative`` is set, in which case an
        anti-correlated voter contributes its reflected vote with weight
        ``concentration * |m_i|``.
        """
        lo, hi = self.antigen.score_range
        num = den = 0.0
        for ab in self.antibodies:
            vote = ab.profile.votes.get(item_id)
            if vote is None:
                continue
            m = self.affinity[ab.id]
            if self.params.reflect_negative and m < 0:
                m, vote = -m, hi + lo - vote
            w = ab.concentration * m
            if w <= 0:
                continue
            num += w * vote
            den += w
        if den == 0:
            return None
        return min(hi, max(lo, num / den))

    def recommend(self, top_k: int) -> List[Tuple[Hashable, float]]:
        """Items the antigen has not voted on, best prediction first."""
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        seen = self.antigen.votes.keys()
        items = {i for ab in self.antibodies for i in ab.profile.votes} - seen
        scored = [(i, self.predict(i)) for i in items]
        scored = [(i, s) for i, s in scored if s is not None]
        scored.sort(key=lambda t: (-t[1], str(t[0])))
        return scored[:top_k]


def run(
    antigen: RatingProfile,
    pool: Sequence[RatingProfile],
    params: NetworkParams = NetworkParams(),
    idiotypic_enabled: bool = False,
    seed=None,
    shuffle: bool = False,
    max_iterations: int = 100_000,
) -> ImmuneNetwork:
    """Fill, iterate and refill the network until it stabilises.

    Candidates are taken in pool order (shuffled with ``seed`` when
    ``shuffle`` is set). While the network is full and unstable it iterates;
    each drop-out makes room for the next candidate. If the pool runs dry
    first, the remaining antibodies keep iterating until the network is
    stable or empty.
    """
    pool = [p for p in pool if p.user_id != antigen.user_id]
    if not pool:
        raise ValueError("candidate pool is empty")
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(pool))
        pool = [pool[i] for i in order]

    net = ImmuneNetwork(antigen, params, idiotypic_enabled)
    candidates = iter(pool)
    while not net.full:
        nxt = next(candidates, None)
        if nxt is None:
            break
        net.add_antibody(nxt)
        while net.full and not net.is_stabilised():
            if net.iterations >= max_iterations:
                return net
            net.iterate()

    while net.antibodies and not net.is_stabilised() and net.iterations < max_iterations:
        net.iterate()
    if not net.antibodies:
        raise NetworkExhausted("candidate pool exhausted and no antibody survived", net)
    return net
