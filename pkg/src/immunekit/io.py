"""Delimited-text loaders, flow serialization and synthetic workloads.

Every loader rejects bad input with a ``DataError`` naming the 1-based
line number and the offending column. Generators are deterministic given
their spec and seed and return a manifest of the ground truth they built.
"""

import csv
import io as _io
import ipaddress
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .dca import AntigenEvent, SignalFrame
from .encoding import FLOW_FIELDS, SCORE_RANGE, BitString, FlowRecord, RatingProfile, as_bits


class DataError(ValueError):
    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.row = row
        self.column = column


def _rows(source, delimiter):
    """Yield ``(line_number, fields)`` skipping blank lines."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="") as fh:
            yield from _rows(fh, delimiter)
        return
    for n, row in enumerate(csv.reader(source, delimiter=delimiter), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        yield n, [c.strip() for c in row]


def _open_out(dest):
    if isinstance(dest, (str, os.PathLike)):
        return open(dest, "w", newline="")
    return _NoClose(dest)


class _NoClose:
    def __init__(self, fh):
        self.fh = fh

    def __enter__(self):
        return self.fh

    def __exit__(self, *exc):
        return False


# ---------------------------------------------------------------------------
# Ratings
# ---------------------------------------------------------------------------

RATING_COLUMNS = ("user_id", "item_id", "score")


@dataclass
class RatingsTable:
    profiles: Dict[str, RatingProfile]
    item_catalog: frozenset
    score_range: Tuple[int, int] = SCORE_RANGE

    def __post_init__(self):
        for p in self.profiles.values():
            missing = p.votes.keys() - self.item_catalog
            if missing:
                raise ValueError(f"user {p.user_id!r} voted on items outside the catalog: {sorted(missing)}")

    def __len__(self):
        return len(self.profiles)

    @property
    def vote_count(self) -> int:
        return sum(len(p) for p in self.profiles.values())


def load_ratings(source, delimiter=",", score_range=SCORE_RANGE) -> RatingsTable:
    """Parse ``user_id,item_id,score`` rows (an optional header is skipped)."""
    lo, hi = score_range
    votes: Dict[str, Dict[str, int]] = {}
    for n, row in _rows(source, delimiter):
        if tuple(c.lower() for c in row) == RATING_COLUMNS:
            continue
        if len(row) != 3:
            raise DataError(f"expected 3 columns, got {len(row)}", row=n)
        user, item, raw = row
        if not user:
            raise DataError("empty user id", row=n, column="user_id")
        if not item:
            raise DataError("empty item id", row=n, column="item_id")
        try:
            score = int(raw)
        except ValueError:
            raise DataError(f"score {raw!r} is not an integer", row=n, column="score") from None
        if not lo <= score <= hi:
            raise DataError(f"score {score} outside [{lo}, {hi}]", row=n, column="score")
        user_votes = votes.setdefault(user, {})
        if item in user_votes:
            raise DataError(f"duplicate vote by {user!r} on {item!r}", row=n, column="item_id")
        user_votes[item] = score
    profiles = {u: RatingProfile(u, v, tuple(score_range)) for u, v in votes.items()}
    catalog = frozenset(i for v in votes.values() for i in v)
    return RatingsTable(profiles, catalog, tuple(score_range))


def write_ratings(table: RatingsTable, dest, delimiter=","):
    with _open_out(dest) as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(RATING_COLUMNS)
        for p in table.profiles.values():
            for item, score in p.votes.items():
                w.writerow((p.user_id, item, score))


# ---------------------------------------------------------------------------
# Flows
# ---------------------------------------------------------------------------

WILDCARD = "*"
PROTOCOLS = {"icmp": 1, "igmp": 2, "tcp": 6, "udp": 17, "gre": 47, "esp": 50, "sctp": 132}
_PROTOCOL_NAMES = {v: k for k, v in PROTOCOLS.items()}
FIELD_WIDTHS = {"protocol": 8, "src_ip": 32, "src_port": 16, "dst_ip": 32, "dst_port": 16}
LABELS = ("self", "nonself")


@dataclass
class FlowLog:
    records: List[FlowRecord]
    labels: Optional[List[str]] = None

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.records):
            raise ValueError("label count does not match record count")

    def __len__(self):
        return len(self.records)

    def self_records(self) -> List[FlowRecord]:
        if self.labels is None:
            return list(self.records)
        return [r for r, lab in zip(self.records, self.labels) if lab == "self"]


def canonical_protocol(token: str) -> str:
    tok = token.strip().lower()
    if tok in PROTOCOLS:
        return tok
    if tok.isdigit() and 0 <= int(tok) <= 255:
        return _PROTOCOL_NAMES.get(int(tok), tok)
    raise ValueError(f"unknown protocol {token!r}")


def _parse_field(name, raw, allow_wildcard):
    if raw == WILDCARD:
        if not allow_wildcard:
            raise ValueError("wildcard not permitted")
        return None
    if name == "protocol":
        return canonical_protocol(raw)
    if name.endswith("_ip"):
        return str(ipaddress.IPv4Address(raw))
    if not raw.isdigit() or not 0 <= int(raw) <= 65535:
        raise ValueError(f"invalid port {raw!r}")
    return int(raw)


def load_flows(source, delimiter=",", allow_wildcards=FLOW_FIELDS) -> FlowLog:
    """Parse ``protocol,src_ip,src_port,dst_ip,dst_port[,label]`` rows.

    ``*`` is a wildcard in any field listed in ``allow_wildcards``. The
    label column is optional but must be present on all rows or none.
    """
    records, labels = [], []
    width = None
    for n, row in _rows(source, delimiter):
        if row[0].lower() == "protocol":
            continue
        if len(row) not in (5, 6):
            raise DataError(f"expected 5 or 6 columns, got {len(row)}", row=n)
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DataError("label column present on some rows only", row=n)
        values = {}
        for name, raw in zip(FLOW_FIELDS, row):
            try:
                values[name] = _parse_field(name, raw, name in allow_wildcards)
            except ValueError as exc:
                raise DataError(str(exc), row=n, column=name) from None
        records.append(FlowRecord(**values))
        if width == 6:
            if row[5] not in LABELS:
                raise DataError(f"label must be one of {LABELS}", row=n, column="label")
            labels.append(row[5])
    return FlowLog(records, labels if width == 6 else None)


def format_flow(record: FlowRecord) -> List[str]:
    return [WILDCARD if getattr(record, f) is None else str(getattr(record, f)) for f in FLOW_FIELDS]


def write_flows(log: FlowLog, dest, delimiter=","):
    with _open_out(dest) as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(FLOW_FIELDS + (("label",) if log.labels is not None else ()))
        for i, rec in enumerate(log.records):
            row = format_flow(rec)
            if log.labels is not None:
                row.append(log.labels[i])
            w.writerow(row)


@dataclass(frozen=True)
class FlowEncoding:
    """Which fields go into the bit string, in order, and at what width.

    A width below a field's natural size keeps only its low-order bits;
    such encodings are no longer injective.
    """

    fields: Tuple[str, ...] = FLOW_FIELDS
    widths: Mapping[str, int] = field(default_factory=lambda: dict(FIELD_WIDTHS))

    def __post_init__(self):
        for f in self.fields:
            if f not in FIELD_WIDTHS:
                raise ValueError(f"unknown flow field {f!r}")
            if not 1 <= self.widths.get(f, 0) <= FIELD_WIDTHS[f]:
                raise ValueError(f"width for {f} must lie in [1, {FIELD_WIDTHS[f]}]")

    @classmethod
    def parse(cls, text: str) -> "FlowEncoding":
        """From ``"dst_port:10,protocol"``; a bare name keeps the full width."""
        fields, widths = [], {}
        for part in text.split(","):
            part = part.strip()
            name, _, w = part.partition(":")
            fields.append(name)
            widths[name] = int(w) if w else FIELD_WIDTHS.get(name, 0)
        return cls(tuple(fields), widths)

    def describe(self) -> str:
        return ",".join(f"{f}:{self.widths[f]}" for f in self.fields)

    @property
    def length(self) -> int:
        return sum(self.widths[f] for f in self.fields)


FULL_ENCODING = FlowEncoding()


def _field_int(name, value):
    if name == "protocol":
        return PROTOCOLS[value] if value in PROTOCOLS else int(value)
    if name.endswith("_ip"):
        return int(ipaddress.IPv4Address(value))
    return int(value)


def _bits_of(value, width):
    return [(value >> k) & 1 for k in range(width - 1, -1, -1)]


def serialize_flow(record: FlowRecord, encoding: FlowEncoding = FULL_ENCODING) -> BitString:
    """Pack the record big-endian, field by field. Wildcards become zeros."""
    out = []
    for name in encoding.fields:
        width = encoding.widths[name]
        value = getattr(record, name)
        v = 0 if value is None else _field_int(name, value) & ((1 << width) - 1)
        out.extend(_bits_of(v, width))
    return BitString(out)


def flow_care_mask(record: FlowRecord, encoding: FlowEncoding = FULL_ENCODING) -> np.ndarray:
    """False over the bits of wildcard fields, True elsewhere."""
    out = []
    for name in encoding.fields:
        out.extend([getattr(record, name) is not None] * encoding.widths[name])
    return np.array(out, dtype=bool)


def deserialize_flow(bits, care=None) -> FlowRecord:
    """Inverse of ``serialize_flow`` under the full encoding."""
    arr = as_bits(bits)
    if arr.size != FULL_ENCODING.length:
        raise ValueError(f"expected {FULL_ENCODING.length} bits, got {arr.size}")
    care = np.ones(arr.size, dtype=bool) if care is None else np.asarray(care, dtype=bool)
    values = {}
    pos = 0
    for name in FLOW_FIELDS:
        width = FIELD_WIDTHS[name]
        chunk = arr[pos:pos + width]
        if not care[pos:pos + width].any():
            values[name] = None
        else:
            v = int("".join(map(str, chunk.tolist())), 2)
            if name == "protocol":
                values[name] = _PROTOCOL_NAMES.get(v, str(v))
            elif name.endswith("_ip"):
                values[name] = str(ipaddress.IPv4Address(v))
            else:
                values[name] = v
        pos += width
    return FlowRecord(**values)


# ---------------------------------------------------------------------------
# DCA streams
# ---------------------------------------------------------------------------

def load_signals(source, delimiter=",") -> List[SignalFrame]:
    frames = []
    for n, row in _rows(source, delimiter):
        if row[0].lower() == "tick":
            continue
        if len(row) != 4:
            raise DataError(f"expected 4 columns, got {len(row)}", row=n)
        try:
            tick = int(row[0])
        except ValueError:
            raise DataError(f"tick {row[0]!r} is not an integer", row=n, column="tick") from None
        vals = []
        for name, raw in zip(("pamp", "danger", "safe"), row[1:]):
            try:
                v = float(raw)
            except ValueError:
                raise DataError(f"{raw!r} is not a number", row=n, column=name) from None
            if not np.isfinite(v) or v < 0:
                raise DataError(f"{name} must be finite and non-negative", row=n, column=name)
            vals.append(v)
        frames.append(SignalFrame(tick, *vals))
    return frames


def load_antigens(source, delimiter=",") -> List[AntigenEvent]:
    events = []
    for n, row in _rows(source, delimiter):
        if row[0].lower() == "tick":
            continue
        if len(row) != 2:
            raise DataError(f"expected 2 columns, got {len(row)}", row=n)
        try:
            tick = int(row[0])
        except ValueError:
            raise DataError(f"tick {row[0]!r} is not an integer", row=n, column="tick") from None
        if not row[1]:
            raise DataError("empty antigen type", row=n, column="antigen_type")
        events.append(AntigenEvent(tick, row[1]))
    return events


def write_signals(frames, dest):
    with _open_out(dest) as fh:
        fh.write("tick,pamp,danger,safe\n")
        for f in frames:
            fh.write(f"{f.tick},{f.pamp!r},{f.danger!r},{f.safe!r}\n")


def write_antigens(events, dest):
    with _open_out(dest) as fh:
        fh.write("tick,antigen_type\n")
        for e in events:
            fh.write(f"{e.tick},{e.antigen_type}\n")


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def write_manifest(manifest: Mapping[str, object], dest):
    """``key=value`` lines; sequences are comma-joined."""
    with _open_out(dest) as fh:
        for key, value in manifest.items():
            if isinstance(value, (list, tuple)):
                value = ",".join(str(v) for v in value)
            fh.write(f"{key}={value}\n")


def read_manifest(source) -> Dict[str, str]:
    if isinstance(source, (str, os.PathLike)):
        source = Path(source).read_text().splitlines()
    out = {}
    for line in source:
        line = line.strip()
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def manifest_list(value: str) -> List[str]:
    return [v for v in value.split(",") if v]


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClusterSpec:
    """A group of users sharing a taste prototype.

    ``noise`` is the standard deviation added to the prototype before
    rounding; ``center`` reuses the prototype of an earlier cluster.
    """

    size: int
    noise: float = 0.5
    density: float = 0.5
    center: Optional[int] = None


# A tight cluster plus sparse voters sharing its taste: sparse users overlap
# the first cluster's members but rarely each other.
DIVERSITY_CLUSTERS = (
    ClusterSpec(20, noise=0.3, density=0.7),
    ClusterSpec(40, noise=0.5, density=0.15, center=0),
)
DIVERSITY_USERS = 100
DIVERSITY_ITEMS = 40


def synth_ratings(users: int, items: int, clusters: Sequence[ClusterSpec], seed=None,
                  score_range=SCORE_RANGE) -> Tuple[RatingsTable, Dict[str, object]]:
    """Users drawn around per-cluster taste prototypes.

    Users beyond the clustered ones each get a private prototype. User
    order is shuffled so clusters interleave in the file.
    """
    clusters = list(clusters)
    total = sum(c.size for c in clusters)
    if users < 1 or items < 2:
        raise ValueError("need at least one user and two items")
    if total > users:
        raise ValueError(f"clusters need {total} users but only {users} requested")
    for k, c in enumerate(clusters):
        if c.size < 1 or c.noise < 0 or not 0 < c.density <= 1:
            raise ValueError(f"cluster {k}: size >= 1, noise >= 0, density in (0, 1] required")
        if c.center is not None and not 0 <= c.center < k:
            raise ValueError(f"cluster {k}: center must name an earlier cluster")

    rng = np.random.default_rng(seed)
    lo, hi = score_range
    protos = []
    for c in clusters:
        protos.append(protos[c.center] if c.center is not None else rng.uniform(lo, hi, items))

    assignment = []
    for k, c in enumerate(clusters):
        assignment += [k] * c.size
    assignment += [-1] * (users - total)
    assignment = [assignment[i] for i in rng.permutation(users)]

    item_ids = [f"i{j:03d}" for j in range(items)]
    profiles = {}
    members: Dict[int, List[str]] = {k: [] for k in range(len(clusters))}
    dispersed = []
    for n, k in enumerate(assignment):
        uid = f"u{n:03d}"
        if k >= 0:
            proto, noise, density = protos[k], clusters[k].noise, clusters[k].density
            members[k].append(uid)
        else:
            proto, noise, density = rng.uniform(lo, hi, items), 0.5, 0.5
            dispersed.append(uid)
        voted = np.flatnonzero(rng.random(items) < density)
        if voted.size < 2:
            voted = np.sort(rng.choice(items, size=2, replace=False))
        scores = np.clip(np.rint(proto[voted] + noise * rng.standard_normal(voted.size)), lo, hi)
        profiles[uid] = RatingProfile(uid, {item_ids[j]: int(s) for j, s in zip(voted, scores)}, tuple(score_range))

    catalog = frozenset(i for p in profiles.values() for i in p.votes)
    table = RatingsTable(profiles, catalog, tuple(score_range))
    manifest: Dict[str, object] = {
        "kind": "ratings",
        "seed": seed,
        "users": users,
        "items": items,
        "votes": table.vote_count,
    }
    for k in range(len(clusters)):
        manifest[f"cluster.{k}"] = members[k]
    manifest["dispersed"] = dispersed
    for uid, p in profiles.items():
        manifest[f"votes.{uid}"] = len(p)
    return table, manifest


@dataclass(frozen=True)
class TrafficSpec:
    rows: int
    src_net: str = "10.0.0.0/24"
    dst_hosts: Tuple[str, ...] = ("10.0.1.10", "10.0.1.11")
    dst_ports: Tuple[int, ...] = (25, 53, 80, 443)
    protocols: Tuple[str, ...] = ("tcp",)


DEFAULT_ATTACK = TrafficSpec(rows=0, src_net="203.0.113.0/24", dst_ports=(23, 4444, 6667, 31337))


def synth_flows(self_spec: TrafficSpec, attack_spec: TrafficSpec = DEFAULT_ATTACK,
                seed=None) -> Tuple[FlowLog, Dict[str, object]]:
    """Self traffic with attack rows spliced in at random positions."""
    for name, spec in (("self", self_spec), ("attack", attack_spec)):
        if spec.rows < 0:
            raise ValueError(f"{name} rows must be non-negative")
        if spec.rows and not (spec.dst_hosts and spec.dst_ports and spec.protocols):
            raise ValueError(f"{name} spec needs hosts, ports and protocols")
    if attack_spec.rows and set(attack_spec.dst_ports) & set(self_spec.dst_ports):
        raise ValueError("attack ports overlap self ports; attack rows would be indistinguishable")

    rng = np.random.default_rng(seed)

    def draw(spec):
        net = ipaddress.IPv4Network(spec.src_net)
        hosts = max(net.num_addresses - 2, 1)
        return FlowRecord(
            protocol=canonical_protocol(spec.protocols[rng.integers(len(spec.protocols))]),
            src_ip=str(net.network_address + 1 + int(rng.integers(hosts))),
            src_port=int(rng.integers(1024, 65536)),
            dst_ip=str(ipaddress.IPv4Address(spec.dst_hosts[rng.integers(len(spec.dst_hosts))])),
            dst_port=int(spec.dst_ports[rng.integers(len(spec.dst_ports))]),
        )

    total = self_spec.rows + attack_spec.rows
    attack_rows = sorted(rng.choice(total, size=attack_spec.rows, replace=False).tolist()) if total else []
    attack_set = set(attack_rows)
    records, labels = [], []
    for i in range(total):
        bad = i in attack_set
        records.append(draw(attack_spec if bad else self_spec))
        labels.append("nonself" if bad else "self")
    manifest = {
        "kind": "flows",
        "seed": seed,
        "rows": total,
        "self_rows": self_spec.rows,
        "attack_rows": attack_rows,
        "attack_ports": list(attack_spec.dst_ports) if attack_spec.rows else [],
    }
    return FlowLog(records, labels), manifest


@dataclass(frozen=True)
class PhaseSpec:
    length: int
    kind: str  # "safe" or "danger"
    antigens: Tuple[str, ...]
    events_per_tick: int = 1


_PHASE_SIGNALS = {
    # (low, high) uniform bounds for pamp, danger, safe
    "safe": ((0.0, 0.2), (0.0, 0.5), (2.0, 4.0)),
    "danger": ((1.0, 2.0), (1.0, 3.0), (0.0, 0.3)),
}


def synth_dca_stream(phases: Sequence[PhaseSpec], seed=None):
    """Signal and antigen streams from consecutive safe/danger phases.

    Returns ``(signals, antigens, manifest)``; the manifest lists every
    antigen type of a danger phase as anomalous.
    """
    phases = list(phases)
    if not phases:
        raise ValueError("at least one phase is required")
    kinds: Dict[str, str] = {}
    for p in phases:
        if p.kind not in _PHASE_SIGNALS:
            raise ValueError(f"unknown phase kind {p.kind!r}")
        if p.length < 1 or p.events_per_tick < 0:
            raise ValueError("phase length must be >= 1 and events_per_tick >= 0")
        if p.events_per_tick and not p.antigens:
            raise ValueError("a phase emitting events needs antigen types")
        for ag in p.antigens:
            if kinds.setdefault(ag, p.kind) != p.kind:
                raise ValueError(f"antigen {ag!r} appears in both safe and danger phases")

    rng = np.random.default_rng(seed)
    signals, antigens = [], []
    tick = 0
    k = 0
    for p in phases:
        bounds = _PHASE_SIGNALS[p.kind]
        for _ in range(p.length):
            vals = [float(rng.uniform(lo, hi)) for lo, hi in bounds]
            signals.append(SignalFrame(tick, *vals))
            for _ in range(p.events_per_tick):
                antigens.append(AntigenEvent(tick, p.antigens[k % len(p.antigens)]))
                k += 1
            tick += 1
    manifest = {
        "kind": "dca",
        "seed": seed,
        "ticks": tick,
        "anomalous": sorted(a for a, kd in kinds.items() if kd == "danger"),
        "normal": sorted(a for a, kd in kinds.items() if kd == "safe"),
    }
    return signals, antigens, manifest


def two_phase_stream(seed=None, length=200):
    """The standard check: ``length`` safe ticks of antigen A, then danger ticks of B."""
    return synth_dca_stream([PhaseSpec(length, "safe", ("A",)), PhaseSpec(length, "danger", ("B",))], seed)


def text_source(text: str):
    """Wrap literal file contents so loaders can read them."""
    return _io.StringIO(text)
