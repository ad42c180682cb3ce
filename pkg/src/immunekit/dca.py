"""Dendritic Cell Algorithm.

A population of cells samples antigens from one stream and accumulates
transformed signals (PAMP, danger, safe) from another. When a cell's
costimulation total reaches its migration threshold it presents every
antigen it holds, in a mature context if its mature output exceeds its
semi-mature output and semi-mature otherwise, then starts over with a new
threshold. Per-antigen mature fractions become anomaly scores.
"""

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

SEMI = "semi"
MATURE = "mature"

# rows: csm, semi, mat; columns: pamp, danger, safe
DEFAULT_WEIGHTS = np.array(
    [[2.0, 1.0, 2.0],
     [0.0, 0.0, 3.0],
     [2.0, 1.0, -3.0]]
)
DEFAULT_THRESHOLD_RANGE = (5.0, 15.0)


class SignalFrame(NamedTuple):
    tick: int
    pamp: float
    danger: float
    safe: float


class AntigenEvent(NamedTuple):
    tick: int
    antigen_type: Hashable


@dataclass
class AntigenVerdict:
    antigen_type: Hashable
    presentations_mature: int
    presentations_total: int
    anomaly_score: float
    classification: str


def _check_weights(weights):
    w = np.asarray(weights, dtype=float)
    if w.shape != (3, 3) or not np.isfinite(w).all():
        raise ValueError("weights must be a finite 3x3 table")
    return w


def signal_transform(frame, weights=DEFAULT_WEIGHTS) -> Tuple[float, float, float]:
    """``(csm, semi, mat)`` increments for one frame of signals."""
    w = _check_weights(weights)
    if isinstance(frame, SignalFrame):
        sig = np.array([frame.pamp, frame.danger, frame.safe], dtype=float)
    else:
        sig = np.asarray(frame, dtype=float)
    csm, semi, mat = w @ sig
    return float(csm), float(semi), float(mat)


@dataclass
class DendriticCell:
    migration_threshold: float
    state: str = "immature"
    csm: float = 0.0
    semi_signal: float = 0.0
    mat_signal: float = 0.0
    antigen_store: list = field(default_factory=list)

    def context(self) -> str:
        # ties go to semi-mature
        return MATURE if self.mat_signal > self.semi_signal else SEMI

    def reset(self, threshold: float):
        self.state = "immature"
        self.csm = self.semi_signal = self.mat_signal = 0.0
        self.antigen_store = []
        self.migration_threshold = threshold


class DCPopulation:
    """Cell population plus the sampling cursor and threshold generator.

    ``thresholds`` fixes the initial migration thresholds; later ones are
    drawn uniformly from ``threshold_range`` with the seeded generator.
    ``sampling`` is ``"round-robin"`` (default) or ``"random"``.
    """

    def __init__(
        self,
        size: int,
        threshold_range=DEFAULT_THRESHOLD_RANGE,
        weights=DEFAULT_WEIGHTS,
        seed=None,
        thresholds: Optional[Sequence[float]] = None,
        sampling: str = "round-robin",
    ):
        if size < 1:
            raise ValueError("population must hold at least one cell")
        lo, hi = threshold_range
        if not 0 < lo <= hi:
            raise ValueError("threshold range must satisfy 0 < lo <= hi")
        if sampling not in ("round-robin", "random"):
            raise ValueError(f"unknown sampling mode {sampling!r}")
        self.threshold_range = (float(lo), float(hi))
        self.weights = _check_weights(weights)
        self.sampling = sampling
        self.rng = np.random.default_rng(seed)
        self.cursor = 0
        if thresholds is None:
            thresholds = [self._draw() for _ in range(size)]
        elif len(thresholds) != size:
            raise ValueError("need one initial threshold per cell")
        self.cells = [DendriticCell(float(t)) for t in thresholds]

    def _draw(self) -> float:
        lo, hi = self.threshold_range
        return lo if lo == hi else float(self.rng.uniform(lo, hi))

    def _target(self) -> int:
        if self.sampling == "random":
            return int(self.rng.integers(len(self.cells)))
        idx = self.cursor % len(self.cells)
        self.cursor += 1
        return idx

    def step(self, frame, events: Sequence = ()) -> List[Tuple[Hashable, str]]:
        """Sample ``events``, accumulate ``frame`` and migrate ready cells.

        Returns the presentations ``(antigen_type, context)`` in cell order.
        """
        for ev in events:
            self.cells[self._target()].antigen_store.append(
                ev.antigen_type if isinstance(ev, AntigenEvent) else ev)
        d_csm, d_semi, d_mat = signal_transform(frame, self.weights)
        presented = []
        for cell in self.cells:
            cell.csm += d_csm
            cell.semi_signal += d_semi
            cell.mat_signal += d_mat
            if cell.csm >= cell.migration_threshold:
                ctx = cell.context()
                cell.state = "mature" if ctx == MATURE else "semi-mature"
                presented.extend((ag, ctx) for ag in cell.antigen_store)
                cell.reset(self._draw())
        return presented

    def flush(self) -> List[Tuple[Hashable, str]]:
        """Present whatever is still stored, as semi-mature."""
        presented = []
        for cell in self.cells:
            presented.extend((ag, SEMI) for ag in cell.antigen_store)
            cell.antigen_store = []
        return presented


def align_streams(signals: Sequence[SignalFrame], antigens: Sequence[AntigenEvent]):
    """Yield ``(tick, frame, events)`` for every tick from the first frame on.

    Signals are held constant between frames; events are attached to the
    tick they carry. Frames must have strictly increasing ticks and no
    event may precede the first frame.
    """
    signals = list(signals)
    if not signals:
        if antigens:
            raise ValueError("antigen events given without any signal frames")
        return
    ticks = [f.tick for f in signals]
    if any(b <= a for a, b in zip(ticks, ticks[1:])):
        raise ValueError("signal ticks must be strictly increasing")
    by_tick = defaultdict(list)
    for ev in antigens:
        if ev.tick < ticks[0]:
            raise ValueError(f"antigen event at tick {ev.tick} precedes the first signal frame")
        by_tick[ev.tick].append(ev)
    last = max([ticks[-1], *by_tick.keys()])
    k = 0
    for t in range(ticks[0], last + 1):
        while k + 1 < len(signals) and signals[k + 1].tick <= t:
            k += 1
        yield t, signals[k], by_tick.get(t, [])


def verdicts(presentations, anomaly_cutoff: float = 0.5) -> List[AntigenVerdict]:
    counts = defaultdict(lambda: [0, 0])
    for ag, ctx in presentations:
        counts[ag][1] += 1
        if ctx == MATURE:
            counts[ag][0] += 1
    out = []
    for ag in sorted(counts, key=str):
        mature, total = counts[ag]
        score = mature / total
        label = "anomalous" if score > anomaly_cutoff else "normal"
        out.append(AntigenVerdict(ag, mature, total, score, label))
    return out


def run_stream(
    signals: Sequence[SignalFrame],
    antigens: Sequence[AntigenEvent],
    population_size: int = 10,
    threshold_range=DEFAULT_THRESHOLD_RANGE,
    weights=DEFAULT_WEIGHTS,
    anomaly_cutoff: float = 0.5,
    seed=None,
    sampling: str = "round-robin",
    thresholds: Optional[Sequence[float]] = None,
    log: Optional[list] = None,
) -> List[AntigenVerdict]:
    """Run the whole stream and score each antigen type.

    Pass a list as ``log`` to receive every ``(tick, antigen_type, context)``
    presentation, including the end-of-stream flush.
    """
    pop = DCPopulation(population_size, threshold_range, weights, seed, thresholds, sampling)
    presentations = []
    tick = None
    for tick, frame, events in align_streams(signals, antigens):
        for ag, ctx in pop.step(frame, events):
            presentations.append((tick, ag, ctx))
    for ag, ctx in pop.flush():
        presentations.append((tick, ag, ctx))
    if log is not None:
        log.extend(presentations)
    return verdicts([(ag, ctx) for _, ag, ctx in presentations], anomaly_cutoff)
