"""Group parsed events into log-key sequences (by session id or time window)."""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

NORMAL, ANOMALOUS, UNKNOWN = "normal", "anomalous", "unknown"
LABELS = (NORMAL, ANOMALOUS, UNKNOWN)
HDFS_SESSION_PATTERN = r"(blk_-?\d+)"


@dataclass
class LogSequence:
    keys: list[int]
    group_id: str
    label: str = UNKNOWN

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def is_short(self) -> bool:
        """Fewer than two keys: kept, but offers little context to the detector."""
        return len(self.keys) < 2

    def to_record(self) -> dict:
        return {"group_id": self.group_id, "label": self.label, "keys": list(self.keys)}

    @classmethod
    def from_record(cls, rec: Mapping) -> "LogSequence":
        return cls(keys=[int(k) for k in rec["keys"]], group_id=str(rec["group_id"]),
                   label=rec.get("label", UNKNOWN))


@dataclass
class GroupingResult:
    sequences: list[LogSequence] = field(default_factory=list)
    dropped: int = 0

    def __iter__(self):
        return iter(self.sequences)

    def __len__(self):
        return len(self.sequences)


def _get(event, name, default=None):
    if isinstance(event, Mapping):
        return event.get(name, default)
    return getattr(event, name, default)


def group_by_session(events: Iterable, session_pattern: str = HDFS_SESSION_PATTERN,
                     labels: Mapping[str, str] | None = None) -> GroupingResult:
    """One sequence per distinct session key, ordered by first appearance.

    The key comes from an event's ``session_key`` if present, otherwise from
    the first ``session_pattern`` match in its ``content``.  ``labels`` maps
    session keys to ``normal``/``anomalous``.
    """
    pattern = re.compile(session_pattern)
    groups: dict[str, list[tuple[int, int]]] = {}
    dropped = 0
    for order, ev in enumerate(events):
        key = _get(ev, "session_key")
        if key is None:
            m = pattern.search(_get(ev, "content", "") or "")
            key = m.group(1) if m and m.groups() else (m.group(0) if m else None)
        if key is None:
            dropped += 1
            continue
        line_no = _get(ev, "line_no", order)
        groups.setdefault(key, []).append((line_no, int(_get(ev, "template_id"))))
    if not groups:
        logger.warning("session pattern %r matched no events (%d dropped)", session_pattern, dropped)
    result = GroupingResult(dropped=dropped)
    for key, members in groups.items():
        members.sort(key=lambda x: x[0])
        label = (labels or {}).get(key, UNKNOWN)
        result.sequences.append(LogSequence([tid for _, tid in members], key, label))
    result.sequences.sort(key=lambda s: min(ln for ln, _ in groups[s.group_id]))
    return result


def group_by_time_window(events: Iterable, window_seconds: float,
                         step_seconds: float | None = None,
                         labelled: bool = True) -> GroupingResult:
    """Cut the event stream into fixed windows ``[t0 + i*step, t0 + i*step + width)``.

    ``step_seconds`` defaults to the width (tumbling windows).  A window is
    anomalous iff any member event carries ``alert=True``; with
    ``labelled=False`` all windows are ``unknown``.
    """
    if window_seconds <= 0:
        raise ValueError("window_seconds must be positive")
    step = window_seconds if step_seconds is None else step_seconds
    if step <= 0:
        raise ValueError("step_seconds must be positive")
    timed = []
    dropped = 0
    for order, ev in enumerate(events):
        ts = _get(ev, "timestamp")
        try:
            ts = float(ts)
        except (TypeError, ValueError):
            ts = math.nan
        if not math.isfinite(ts):
            dropped += 1
            continue
        timed.append((ts, _get(ev, "line_no", order), int(_get(ev, "template_id")),
                      bool(_get(ev, "alert", False))))
    result = GroupingResult(dropped=dropped)
    if not timed:
        return result
    timed.sort(key=lambda x: (x[0], x[1]))
    t0 = timed[0][0]
    windows: dict[int, list] = {}
    for ev in timed:
        offset = ev[0] - t0
        last = int(offset // step)
        first = max(0, int(math.floor((offset - window_seconds) / step)) + 1)
        for i in range(first, last + 1):
            windows.setdefault(i, []).append(ev)
    for i in sorted(windows):
        members = windows[i]
        if labelled:
            label = ANOMALOUS if any(e[3] for e in members) else NORMAL
        else:
            label = UNKNOWN
        result.sequences.append(LogSequence([e[2] for e in members], f"w{i}", label))
    return result


def write_sequences(sequences: Sequence[LogSequence], fh) -> None:
    for seq in sequences:
        fh.write(json.dumps(seq.to_record()) + "\n")


def read_sequences(fh) -> list[LogSequence]:
    return [LogSequence.from_record(json.loads(line)) for line in fh if line.strip()]
