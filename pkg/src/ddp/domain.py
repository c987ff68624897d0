"""Core value types: disease catalog, events, sequences and graph snapshots.

Times are in days from the sequence origin. All types are immutable after
construction.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_JITTER = 1e-6


class DataError(ValueError):
    """Raised for malformed or inconsistent event data."""


@dataclass(frozen=True)
class DiseaseCatalog:
    codes: tuple[str, ...]

    def __post_init__(self):
        codes = tuple(str(c) for c in self.codes)
        if not codes:
            raise DataError("catalog must contain at least one code")
        if len(set(codes)) != len(codes):
            raise DataError("catalog codes must be unique")
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(codes)})

    @property
    def K(self) -> int:
        return len(self.codes)

    def __len__(self):
        return len(self.codes)

    def __contains__(self, code):
        return code in self._index

    def index(self, code: str) -> int:
        try:
            return self._index[code]
        except KeyError:
            raise DataError(f"unknown code {code!r}") from None

    def code(self, idx: int) -> str:
        return self.codes[idx]

    def to_json(self) -> str:
        return json.dumps(list(self.codes))

    @classmethod
    def from_json(cls, text: str) -> "DiseaseCatalog":
        return cls(tuple(json.loads(text)))


@dataclass(frozen=True)
class Event:
    t: float
    type_idx: int

    def __post_init__(self):
        if not math.isfinite(self.t) or self.t < 0:
            raise DataError(f"event time must be finite and >= 0, got {self.t}")
        if self.type_idx < 0:
            raise DataError(f"negative type index {self.type_idx}")


@dataclass(frozen=True)
class EventSequence:
    """One patient's time-ordered diagnoses.

    ``context`` holds the static exogenous features, ``horizon_T`` the end of
    the observation window. Events are strictly increasing in time; use
    :func:`canonicalize_sequence` to build one from raw, possibly tied, data.
    """

    patient_id: str
    events: tuple[Event, ...]
    context: tuple[float, ...] = ()
    horizon_T: float = 0.0

    def __post_init__(self):
        events = tuple(self.events)
        object.__setattr__(self, "events", events)
        object.__setattr__(self, "context", tuple(float(c) for c in self.context))
        prev = -math.inf
        for ev in events:
            if not ev.t > prev:
                raise DataError(f"events of {self.patient_id!r} are not strictly increasing in time")
            prev = ev.t
        if events and events[-1].t > self.horizon_T:
            raise DataError(f"event at t={events[-1].t} exceeds horizon_T={self.horizon_T}")
        if not math.isfinite(self.horizon_T) or self.horizon_T < 0:
            raise DataError("horizon_T must be finite and >= 0")

    def __len__(self):
        return len(self.events)

    @property
    def times(self) -> np.ndarray:
        return np.array([e.t for e in self.events], dtype=float)

    @property
    def types(self) -> np.ndarray:
        return np.array([e.type_idx for e in self.events], dtype=int)

    @property
    def context_array(self) -> np.ndarray:
        return np.array(self.context, dtype=float)

    def check_catalog(self, K: int):
        for ev in self.events:
            if ev.type_idx >= K:
                raise DataError(f"type index {ev.type_idx} out of range for K={K}")


@dataclass(frozen=True)
class GraphSnapshot:
    """A weighted graph over the catalog at time ``t`` (``None`` if timeless).

    ``edges`` maps ``(src, dst)`` index pairs to nonnegative weights.
    Undirected graphs store each pair once with ``src < dst``.
    """

    t: float | None
    labels: tuple[bool, ...]
    edges: Mapping[tuple[int, int], float] = field(default_factory=dict)
    directed: bool = True

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(bool(x) for x in self.labels))
        K = len(self.labels)
        edges = {}
        for (u, v), w in self.edges.items():
            if not (0 <= u < K and 0 <= v < K):
                raise DataError(f"edge ({u}, {v}) outside catalog of size {K}")
            if w < 0:
                raise DataError(f"negative edge weight {w} on ({u}, {v})")
            edges[(int(u), int(v))] = float(w)
        object.__setattr__(self, "edges", edges)

    @property
    def K(self) -> int:
        return len(self.labels)

    def dense(self) -> np.ndarray:
        out = np.zeros((self.K, self.K))
        for (u, v), w in self.edges.items():
            out[u, v] = w
        return out

    def to_dict(self, catalog: DiseaseCatalog | None = None) -> dict:
        name = (lambda i: catalog.code(i)) if catalog is not None else (lambda i: i)
        return {
            "t": self.t,
            "labels": list(self.labels),
            "edges": [{"src": name(u), "dst": name(v), "w": w} for (u, v), w in sorted(self.edges.items())],
        }


# ---------------------------------------------------------------------------
# Construction and validation


def _raw_events(record) -> list[tuple[float, str]]:
    if isinstance(record, Mapping):
        items = record.get("events", [])
    else:
        items = record
    out = []
    for item in items:
        if isinstance(item, Mapping):
            out.append((float(item["t"]), str(item["code"])))
        else:
            t, code = item
            out.append((float(t), str(code)))
    return out


def build_catalog(sequences: Iterable) -> DiseaseCatalog:
    """Collect every code seen in raw records, deduplicated and sorted."""
    codes = set()
    for rec in sequences:
        codes.update(code for _, code in _raw_events(rec))
    if not codes:
        raise DataError("no events")
    return DiseaseCatalog(tuple(sorted(codes)))


def canonicalize_sequence(
    raw: Sequence,
    catalog: DiseaseCatalog,
    *,
    patient_id: str = "",
    context: Sequence[float] = (),
    horizon_T: float | None = None,
    tie_policy: str = "code",
    jitter_eps: float = DEFAULT_JITTER,
    time_scale: float = 1.0,
) -> EventSequence:
    """Sort raw ``(t, code)`` pairs into a strictly ordered sequence.

    Exact ties are ordered by ``tie_policy`` (``"code"``: lexicographic code
    order, ``"input"``: order of appearance) and then separated by adding
    ``k * jitter_eps`` to the k-th member of the tie group. Times are divided
    by ``time_scale`` first. Already canonical input is returned unchanged,
    so the operation is idempotent.
    """
    if tie_policy not in ("code", "input"):
        raise ValueError(f"unknown tie_policy {tie_policy!r}")
    if jitter_eps <= 0:
        raise ValueError("jitter_eps must be positive")
    pairs = []
    for pos, (t, code) in enumerate(_raw_events(raw)):
        if not math.isfinite(t):
            raise DataError(f"non-finite timestamp in {patient_id!r}")
        if t < 0:
            raise DataError(f"negative timestamp {t} in {patient_id!r}")
        pairs.append((t / time_scale, code, pos))
    if tie_policy == "code":
        pairs.sort(key=lambda p: (p[0], p[1], p[2]))
    else:
        pairs.sort(key=lambda p: (p[0], p[2]))

    events = []
    k = 0
    for j, (t, code, _) in enumerate(pairs):
        k = k + 1 if j > 0 and t == pairs[j - 1][0] else 0
        t_adj = t + k * jitter_eps
        if events and t_adj <= events[-1].t:
            # a long tie group ran into the next distinct time
            t_adj = events[-1].t + jitter_eps
        events.append(Event(t_adj, catalog.index(code)))

    if horizon_T is None:
        horizon = events[-1].t if events else 0.0
    else:
        horizon = horizon_T / time_scale
        if events and events[-1].t > horizon:
            raw_max = pairs[-1][0]
            if raw_max > horizon:
                raise DataError(f"event at t={raw_max} beyond horizon_T={horizon} in {patient_id!r}")
            # only the jitter crossed the horizon
            horizon = events[-1].t
    return EventSequence(patient_id, tuple(events), tuple(context), float(horizon))


def history_prefix(seq: EventSequence, t: float) -> EventSequence:
    """Events strictly before ``t``; context, id and window are kept."""
    if not 0 <= t <= seq.horizon_T:
        raise DataError(f"t={t} outside observation window [0, {seq.horizon_T}]")
    return EventSequence(seq.patient_id, tuple(e for e in seq.events if e.t < t), seq.context, seq.horizon_T)


def labels_at(seq: EventSequence, K: int, t: float, inclusive: bool = True) -> tuple[bool, ...]:
    """Occurrence flags of each type at time ``t``."""
    flags = [False] * K
    for e in seq.events:
        if e.t < t or (inclusive and e.t == t):
            flags[e.type_idx] = True
    return tuple(flags)


# ---------------------------------------------------------------------------
# JSONL ingestion


def parse_record(obj, lineno: int | None = None) -> dict:
    where = f"line {lineno}" if lineno is not None else "record"
    if not isinstance(obj, Mapping):
        raise DataError(f"{where}: expected a JSON object")
    try:
        pid = str(obj["patient_id"])
        events = [{"t": float(e["t"]), "code": str(e["code"])} for e in obj.get("events", [])]
        context = [float(c) for c in obj.get("context", [])]
        horizon = obj.get("horizon_T")
        horizon = float(horizon) if horizon is not None else None
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{where}: malformed record ({exc})") from None
    return {"patient_id": pid, "events": events, "context": context, "horizon_T": horizon}


def read_jsonl(path) -> list[dict]:
    """Read raw records; a malformed line raises :class:`DataError` naming it."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            records.append(parse_record(obj, lineno))
    return records


def encode_records(
    records: Iterable[Mapping],
    catalog: DiseaseCatalog,
    *,
    drop_unknown: bool = False,
    jitter_eps: float = DEFAULT_JITTER,
    time_scale: float = 1.0,
) -> tuple[list[EventSequence], int]:
    """Turn raw records into canonical sequences over ``catalog``.

    Returns the sequences and the number of events dropped because their code
    is absent from the catalog (only when ``drop_unknown``).
    """
    seqs, dropped = [], 0
    n_ctx = None
    for rec in records:
        rec = parse_record(rec)
        events = rec["events"]
        if drop_unknown:
            kept = [e for e in events if e["code"] in catalog]
            dropped += len(events) - len(kept)
            events = kept
        if n_ctx is None:
            n_ctx = len(rec["context"])
        elif len(rec["context"]) != n_ctx:
            raise DataError(f"context length mismatch for {rec['patient_id']!r}")
        seqs.append(
            canonicalize_sequence(
                events,
                catalog,
                patient_id=rec["patient_id"],
                context=rec["context"],
                horizon_T=rec["horizon_T"],
                jitter_eps=jitter_eps,
                time_scale=time_scale,
            )
        )
    return seqs, dropped


def sequence_to_record(seq: EventSequence, catalog: DiseaseCatalog) -> dict:
    return {
        "patient_id": seq.patient_id,
        "events": [{"t": e.t, "code": catalog.code(e.type_idx)} for e in seq.events],
        "context": list(seq.context),
        "horizon_T": seq.horizon_T,
    }


def dumps_jsonl(seqs: Iterable[EventSequence], catalog: DiseaseCatalog) -> str:
    return "".join(json.dumps(sequence_to_record(s, catalog)) + "\n" for s in seqs)
