"""Detection metrics, a synthetic labeled corpus, and DIST-embedding export."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .seeding import substream
from .sequencer import ANOMALOUS, NORMAL, LogSequence

# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    """Confusion counts with anomalous as the positive class.

    Scores are percentages; ``None`` where the denominator is zero.
    """

    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self) -> float | None:
        return 100.0 * self.tp / (self.tp + self.fp) if self.tp + self.fp else None

    @property
    def recall(self) -> float | None:
        return 100.0 * self.tp / (self.tp + self.fn) if self.tp + self.fn else None

    @property
    def f1(self) -> float | None:
        return f1_score(self.precision, self.recall)

    def to_record(self) -> dict:
        rnd = lambda x: None if x is None else round(x, 2)  # noqa: E731
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
                "precision": rnd(self.precision), "recall": rnd(self.recall), "f1": rnd(self.f1)}


def f1_score(precision: float | None, recall: float | None) -> float | None:
    """Harmonic mean of two percentages."""
    if precision is None or recall is None:
        return None
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _as_flag(x) -> bool:
    if isinstance(x, str):
        if x not in (NORMAL, ANOMALOUS):
            raise ValueError(f"label must be normal/anomalous, got {x!r}")
        return x == ANOMALOUS
    if hasattr(x, "is_anomalous"):
        return bool(x.is_anomalous)
    return bool(x)


def compute_metrics(predictions: Iterable, labels: Iterable) -> Metrics:
    """``predictions``: verdicts or booleans; ``labels``: label strings or booleans."""
    pred = np.array([_as_flag(p) for p in predictions], dtype=bool)
    true = np.array([_as_flag(t) for t in labels], dtype=bool)
    if pred.shape != true.shape:
        raise ValueError("predictions and labels differ in length")
    return Metrics(tp=int((pred & true).sum()), fp=int((pred & ~true).sum()),
                   fn=int((~pred & true).sum()), tn=int((~pred & ~true).sum()))


def _fmt(x: float | None) -> str:
    return "n/a" if x is None else f"{x:.2f}"


def format_report(metrics: Metrics, config: dict | None = None, title: str = "detection") -> str:
    lines = [f"== {title} ==",
             f"precision  {_fmt(metrics.precision)}",
             f"recall     {_fmt(metrics.recall)}",
             f"f1         {_fmt(metrics.f1)}",
             f"tp={metrics.tp} fp={metrics.fp} fn={metrics.fn} tn={metrics.tn}"]
    if config:
        lines.append("-- config --")
        lines.extend(f"{k} = {config[k]}" for k in sorted(config))
    lines.append("-- record --")
    lines.append(json.dumps({"metrics": metrics.to_record(), "config": config or {}}, sort_keys=True))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

ANOMALY_TYPES = ("shuffle", "rare_key", "splice")


@dataclass(frozen=True)
class SyntheticSpec:
    """Cyclic grammar with optional branch and rare keys.

    Keys ``0..n_cycle-1`` follow a fixed cycle.  Branch key ``n_cycle+i``
    may stand in for the cycle key at branch point ``i`` (probability
    ``branch_prob``); rare keys may replace cycle key 0 (probability
    ``rare_prob``).
    """

    n_keys: int = 20
    seq_len: int | tuple[int, int] = 20
    n_branches: int = 4
    branch_prob: float = 0.3
    n_rare: int = 2
    rare_prob: float = 0.05
    n_train: int = 2000
    n_val: int = 200
    n_test: int = 1200
    anomaly_rate: float = 1 / 6
    anomaly_types: tuple[str, ...] = ANOMALY_TYPES
    seed: int = 0

    def __post_init__(self):
        if self.n_keys - self.n_branches - self.n_rare < 2:
            raise ValueError("grammar needs at least two cycle keys")
        if self.n_branches > self.n_cycle - 1:
            raise ValueError("too many branch points for the cycle length")
        bad = set(self.anomaly_types) - set(ANOMALY_TYPES)
        if bad:
            raise ValueError(f"unknown anomaly types {sorted(bad)}")
        if not 0.0 <= self.anomaly_rate <= 1.0:
            raise ValueError("anomaly_rate must lie in [0, 1]")

    @property
    def n_cycle(self) -> int:
        return self.n_keys - self.n_branches - self.n_rare

    @property
    def length_range(self) -> tuple[int, int]:
        if isinstance(self.seq_len, int):
            return self.seq_len, self.seq_len
        return tuple(self.seq_len)


@dataclass
class SyntheticGrammar:
    spec: SyntheticSpec

    @property
    def branch_points(self) -> list[int]:
        n, b = self.spec.n_cycle, self.spec.n_branches
        return [1 + (i * (n - 1)) // b for i in range(b)]

    @property
    def rare_keys(self) -> list[int]:
        start = self.spec.n_cycle + self.spec.n_branches
        return list(range(start, start + self.spec.n_rare))

    def allowed(self, phase: int) -> set[int]:
        keys = {phase}
        bp = self.branch_points
        if phase in bp:
            keys.add(self.spec.n_cycle + bp.index(phase))
        if phase == 0:
            keys.update(self.rare_keys)
        return keys

    def is_grammatical(self, keys: Sequence[int]) -> bool:
        n = self.spec.n_cycle
        allowed = [self.allowed(p) for p in range(n)]
        return any(all(k in allowed[(s + t) % n] for t, k in enumerate(keys)) for s in range(n))

    def generate(self, rng: np.random.Generator, length: int | None = None, start: int | None = None) -> list[int]:
        spec = self.spec
        lo, hi = spec.length_range
        length = int(rng.integers(lo, hi + 1)) if length is None else length
        start = int(rng.integers(spec.n_cycle)) if start is None else start
        bp = self.branch_points
        out = []
        for t in range(length):
            phase = (start + t) % spec.n_cycle
            key = phase
            if phase in bp and rng.random() < spec.branch_prob:
                key = spec.n_cycle + bp.index(phase)
            elif phase == 0 and spec.n_rare and rng.random() < spec.rare_prob:
                key = self.rare_keys[int(rng.integers(spec.n_rare))]
            out.append(key)
        return out

    # -- anomalies ---------------------------------------------------------
    def _shuffle(self, rng, keys):
        for _ in range(100):
            cand = list(rng.permutation(keys))
            if not self.is_grammatical(cand):
                return cand
        return None

    def _rare_key(self, rng, keys, start):
        n = self.spec.n_cycle
        slots = [t for t in range(len(keys)) if (start + t) % n != 0]
        if not slots:
            return None
        k = min(2, len(slots))
        pool = self.rare_keys or [self.spec.n_keys + j for j in range(2)]
        cand = list(keys)
        for t in rng.choice(slots, size=k, replace=False):
            cand[int(t)] = pool[int(rng.integers(len(pool)))]
        return cand if not self.is_grammatical(cand) else None

    def _splice(self, rng, keys, start):
        L = len(keys)
        if L < 4:
            return None
        n = self.spec.n_cycle
        for _ in range(100):
            cut = int(rng.integers(L // 4, 3 * L // 4 + 1))
            other = self.generate(rng, length=L, start=(start + int(rng.integers(1, n))) % n)
            cand = keys[:cut] + other[cut:]
            if not self.is_grammatical(cand):
                return cand
        return None

    def make_anomaly(self, rng: np.random.Generator, kind: str) -> list[int]:
        for _ in range(1000):
            start = int(rng.integers(self.spec.n_cycle))
            keys = self.generate(rng, start=start)
            if kind == "shuffle":
                cand = self._shuffle(rng, keys)
            elif kind == "rare_key":
                cand = self._rare_key(rng, keys, start)
            elif kind == "splice":
                cand = self._splice(rng, keys, start)
            else:
                raise ValueError(f"unknown anomaly type {kind!r}")
            if cand is not None:
                return [int(k) for k in cand]
        raise RuntimeError(f"could not build a {kind} anomaly with this grammar")


@dataclass
class SyntheticCorpus:
    train: list[LogSequence]
    val: list[LogSequence]
    test: list[LogSequence]
    spec: SyntheticSpec
    anomaly_kinds: dict[str, str] = field(default_factory=dict)  # group_id -> anomaly type

    @property
    def grammar(self) -> SyntheticGrammar:
        return SyntheticGrammar(self.spec)


def _labeled_split(grammar: SyntheticGrammar, rng, n: int, rate: float, prefix: str, kinds: dict):
    n_anom = int(round(rate * n))
    items = [(grammar.generate(rng), NORMAL, None) for _ in range(n - n_anom)]
    types = grammar.spec.anomaly_types
    for i in range(n_anom):
        kind = types[i % len(types)]
        items.append((grammar.make_anomaly(rng, kind), ANOMALOUS, kind))
    order = rng.permutation(len(items))
    out = []
    for j, idx in enumerate(order):
        keys, label, kind = items[idx]
        gid = f"{prefix}-{j}"
        if kind:
            kinds[gid] = kind
        out.append(LogSequence(keys, gid, label))
    return out


def generate_synthetic_corpus(spec: SyntheticSpec | None = None, seed: int | None = None) -> SyntheticCorpus:
    """Normal training data plus labeled validation/test splits with exact anomaly counts."""
    spec = spec or SyntheticSpec()
    if seed is not None:
        spec = SyntheticSpec(**{**asdict(spec), "seed": seed})
    grammar = SyntheticGrammar(spec)
    rng = substream(spec.seed, "synth")
    train = [LogSequence(grammar.generate(rng), f"train-{i}", NORMAL) for i in range(spec.n_train)]
    kinds: dict[str, str] = {}
    val = _labeled_split(grammar, rng, spec.n_val, spec.anomaly_rate, "val", kinds)
    test = _labeled_split(grammar, rng, spec.n_test, spec.anomaly_rate, "test", kinds)
    return SyntheticCorpus(train, val, test, spec, kinds)


# ---------------------------------------------------------------------------
# embedding export
# ---------------------------------------------------------------------------


def export_embeddings(trained, sequences: Sequence[LogSequence]) -> list[dict]:
    """One record per sequence with its h_DIST (averaged over chunks)."""
    from .trainer import dist_embeddings
    from .vocab import encode

    chunks, owner = [], []
    for i, seq in enumerate(sequences):
        for c in encode(seq, trained.vocab, trained.model_config.max_len):
            chunks.append(c)
            owner.append(i)
    h = dist_embeddings(trained.params, chunks).astype(np.float64)
    owner = np.asarray(owner)
    records = []
    for i, seq in enumerate(sequences):
        vec = h[owner == i].mean(axis=0)
        records.append({"group_id": seq.group_id, "label": seq.label, "h_dist": vec.tolist()})
    return records


def write_embeddings(records: Sequence[dict], fh, delimiter: str = ",") -> None:
    """Header row ``group_id,label,h0..h{d-1}`` then one row per record."""
    writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
    width = len(records[0]["h_dist"]) if records else 0
    writer.writerow(["group_id", "label"] + [f"h{i}" for i in range(width)])
    for rec in records:
        writer.writerow([rec["group_id"], rec["label"]] + [repr(float(x)) for x in rec["h_dist"]])


def read_embeddings(fh, delimiter: str = ",") -> list[dict]:
    reader = csv.reader(fh, delimiter=delimiter)
    next(reader, None)
    return [{"group_id": row[0], "label": row[1], "h_dist": [float(x) for x in row[2:]]} for row in reader]
