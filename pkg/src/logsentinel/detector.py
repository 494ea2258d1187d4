"""Anomaly detection with top-g candidate sets and an r threshold.

Each test sequence is masked, the model predicts a distribution at every
masked position, and the observed key counts as anomalous when it is not
among the ``g`` most likely keys.  A sequence with more than ``r``
anomalous keys is anomalous.  The alternative ``distance`` mode thresholds
the squared distance of h_DIST to the training center.

Scoring records the rank of each true key, so verdicts for any ``(g, r)``
are derived without re-running the model; :func:`tune` relies on that.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import model as M
from .evaluation import Metrics, compute_metrics
from .seeding import substream, text_key
from .sequencer import ANOMALOUS, NORMAL, LogSequence
from .trainer import TrainedModel, dist_embeddings
from .vocab import N_RESERVED, UNK, EncodedSequence, apply_masking, encode, exhaustive_strata, stack

MODES = ("topg_r", "distance")
MASKINGS = ("seeded", "exhaustive")


@dataclass
class DetectionConfig:
    mask_ratio: float = 0.5
    g: int = 5
    r: int = 0
    mode: str = "topg_r"
    distance_threshold: float = math.inf
    masking: str = "seeded"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.masking not in MASKINGS:
            raise ValueError(f"masking must be one of {MASKINGS}")
        if self.g < 1:
            raise ValueError("g must be at least 1")
        if self.r < 0:
            raise ValueError("r must be non-negative")
        if not 0.0 < self.mask_ratio <= 1.0:
            raise ValueError("mask_ratio must lie in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MaskJudgment:
    chunk: int
    position: int
    true_id: int
    rank: int  # 0-based rank of the true key among known keys; -1 for UNK

    def in_candidates(self, g: int) -> bool:
        return self.true_id != UNK and self.rank < g


@dataclass
class ScoredSequence:
    group_id: str
    label: str
    judgments: list[MaskJudgment]
    distance: float

    @property
    def masked_count(self) -> int:
        return len(self.judgments)

    def anomalous_key_count(self, g: int) -> int:
        return sum(not j.in_candidates(g) for j in self.judgments)


@dataclass
class Verdict:
    group_id: str
    anomalous_key_count: int
    masked_count: int
    distance: float
    is_anomalous: bool
    details: list[dict] = field(default_factory=list)

    def to_record(self) -> dict:
        return {"group_id": self.group_id, "anomalous_key_count": self.anomalous_key_count,
                "masked_count": self.masked_count, "distance": self.distance,
                "is_anomalous": self.is_anomalous}


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------


def true_key_ranks(probs: np.ndarray, true_ids: Sequence[int]) -> np.ndarray:
    """Rank of each true id among known keys (ids >= 4), ties by ascending id.

    Rank < g  <=>  the key is in the top-g candidate set.  UNK gets -1.
    """
    probs = np.atleast_2d(probs)
    known = probs[:, N_RESERVED:]
    ranks = np.empty(len(true_ids), dtype=np.int64)
    for i, t in enumerate(true_ids):
        if t < N_RESERVED:
            ranks[i] = -1
            continue
        p = known[i, t - N_RESERVED]
        higher = int((known[i] > p).sum())
        ties_before = int((known[i, : t - N_RESERVED] == p).sum())
        ranks[i] = higher + ties_before
    return ranks


def top_g(probs: np.ndarray, g: int) -> np.ndarray:
    """Ids of the ``g`` most likely known keys (ties by ascending id)."""
    known = probs[N_RESERVED:]
    order = np.lexsort((np.arange(len(known)), -known))
    return order[:g] + N_RESERVED


def score_masks(enc: EncodedSequence, params: M.ModelParams, g: int | None = None) -> list[dict]:
    """Judge every MASK position of one masked encoding.

    Returns dicts ``{position, true_id, rank, in_candidate_set}``; the
    last is only present when ``g`` is given.
    """
    if not enc.mask_positions:
        raise ValueError("sequence has no masked positions")
    H = M.encode(enc, params)
    probs = M.softmax(H[enc.mask_positions].astype(np.float64) @ params["head.weight"].astype(np.float64).T
                      + params["head.bias"].astype(np.float64))
    ranks = true_key_ranks(probs, enc.mask_labels)
    out = []
    for pos, tid, rank in zip(enc.mask_positions, enc.mask_labels, ranks):
        item = {"position": int(pos), "true_id": int(tid), "rank": int(rank)}
        if g is not None:
            item["in_candidate_set"] = MaskJudgment(0, pos, tid, int(rank)).in_candidates(g)
        out.append(item)
    return out


def _masked_variants(chunk: EncodedSequence, config: DetectionConfig) -> list[EncodedSequence]:
    if chunk.n_real < 1:
        return []
    if config.masking == "exhaustive":
        return [apply_masking(chunk, config.mask_ratio, positions=s)
                for s in exhaustive_strata(chunk.n_real, config.mask_ratio)]
    rng = substream(config.seed, "detect", text_key(chunk.group_id), chunk.chunk_index)
    return [apply_masking(chunk, config.mask_ratio, rng)]


def score_sequences(trained: TrainedModel, sequences: Sequence[LogSequence], config: DetectionConfig,
                    batch_size: int = 256) -> list[ScoredSequence]:
    """Run the model once over all masked variants of all sequences."""
    params = trained.params
    max_len = trained.model_config.max_len
    head_w = params["head.weight"].astype(np.float64)
    head_b = params["head.bias"].astype(np.float64)

    items: list[tuple[int, EncodedSequence]] = []
    chunks_of: list[list[EncodedSequence]] = []
    for si, seq in enumerate(sequences):
        chunks = encode(seq, trained.vocab, max_len)
        chunks_of.append(chunks)
        for chunk in chunks:
            items.extend((si, v) for v in _masked_variants(chunk, config))

    judgments: list[list[MaskJudgment]] = [[] for _ in sequences]
    for start in range(0, len(items), batch_size):
        part = items[start:start + batch_size]
        ids, attn = stack([v for _, v in part])
        H = M.forward(params, ids, attn)
        rows = np.concatenate([np.full(len(v.mask_positions), b) for b, (_, v) in enumerate(part)])
        cols = np.concatenate([v.mask_positions for _, v in part])
        labels = np.concatenate([v.mask_labels for _, v in part])
        probs = M.softmax(H[rows, cols].astype(np.float64) @ head_w.T + head_b)
        ranks = true_key_ranks(probs, labels)
        k = 0
        for si, v in part:
            for pos, tid in zip(v.mask_positions, v.mask_labels):
                judgments[si].append(MaskJudgment(v.chunk_index, int(pos), int(tid), int(ranks[k])))
                k += 1

    flat = [c for cs in chunks_of for c in cs]
    owner = np.array([si for si, cs in enumerate(chunks_of) for _ in cs], dtype=np.int64)
    h = dist_embeddings(params, flat, batch_size).astype(np.float64)
    dist = ((h - trained.center.c) ** 2).sum(axis=1)
    out = []
    for si, seq in enumerate(sequences):
        js = sorted(judgments[si], key=lambda j: (j.chunk, j.position))
        out.append(ScoredSequence(seq.group_id, seq.label, js, float(dist[owner == si].mean())))
    return out


def make_verdict(scored: ScoredSequence, config: DetectionConfig, with_details: bool = False) -> Verdict:
    count = scored.anomalous_key_count(config.g)
    if config.mode == "topg_r":
        flag = count > config.r
    else:
        flag = scored.distance > config.distance_threshold
    details = []
    if with_details:
        details = [{"chunk": j.chunk, "position": j.position, "true_id": j.true_id,
                    "in_candidate_set": j.in_candidates(config.g)} for j in scored.judgments]
    return Verdict(scored.group_id, count, scored.masked_count, scored.distance, bool(flag), details)


def score_sequence(trained: TrainedModel, seq: LogSequence, config: DetectionConfig) -> Verdict:
    return make_verdict(score_sequences(trained, [seq], config)[0], config, with_details=True)


def detect(trained: TrainedModel, sequences: Sequence[LogSequence], config: DetectionConfig) -> list[Verdict]:
    scored = score_sequences(trained, sequences, config)
    return sorted((make_verdict(s, config) for s in scored), key=lambda v: v.group_id)


# ---------------------------------------------------------------------------
# tuning
# ---------------------------------------------------------------------------


def _f1_or_zero(m: Metrics) -> float:
    return m.f1 if m.f1 is not None else 0.0


def _check_labels(scored: Sequence[ScoredSequence]) -> list[bool]:
    labels = [s.label for s in scored]
    if any(lab not in (NORMAL, ANOMALOUS) for lab in labels):
        raise ValueError("validation sequences must be labeled normal/anomalous")
    if len(set(labels)) < 2:
        raise ValueError("validation set holds a single class; tuning needs both normal and "
                         "anomalous sequences (add labeled anomalies to the validation split)")
    return [lab == ANOMALOUS for lab in labels]


def tune(scored: Sequence[ScoredSequence], base: DetectionConfig,
         g_values: Iterable[int] | None = None, r_values: Iterable[int] | None = None,
         n_keys: int | None = None) -> tuple[DetectionConfig, Metrics]:
    """Grid search maximizing validation F1; ties go to the smallest g, then r.

    In ``distance`` mode the threshold is searched over midpoints of the
    sorted validation distances instead.
    """
    truth = _check_labels(scored)
    if base.mode == "distance":
        d = np.unique([s.distance for s in scored])
        cands = np.concatenate([[d[0] - 1.0], (d[:-1] + d[1:]) / 2.0, [d[-1] + 1.0]])
        best = None
        for thr in cands:
            m = compute_metrics([s.distance > thr for s in scored], truth)
            if best is None or _f1_or_zero(m) > _f1_or_zero(best[1]):
                best = (float(thr), m)
        cfg = DetectionConfig(**{**base.to_dict(), "distance_threshold": best[0]})
        return cfg, best[1]

    max_masks = max((s.masked_count for s in scored), default=0)
    if g_values is None:
        upper = n_keys if n_keys is not None else 1 + max(
            (j.rank for s in scored for j in s.judgments), default=0)
        g_values = range(1, max(1, upper) + 1)
    r_values = list(range(0, max_masks + 1) if r_values is None else r_values)
    best = None
    for g in sorted(set(g_values)):
        counts = np.array([s.anomalous_key_count(g) for s in scored])
        for r in sorted(set(r_values)):
            m = compute_metrics(counts > r, truth)
            if best is None or _f1_or_zero(m) > _f1_or_zero(best[2]):
                best = (g, r, m)
    cfg = DetectionConfig(**{**base.to_dict(), "g": best[0], "r": best[1]})
    return cfg, best[2]


def evaluate(scored: Sequence[ScoredSequence], config: DetectionConfig) -> Metrics:
    verdicts = [make_verdict(s, config) for s in scored]
    return compute_metrics(verdicts, [s.label for s in scored])


def write_verdicts(verdicts: Sequence[Verdict], fh, config: DetectionConfig | None = None) -> None:
    for v in sorted(verdicts, key=lambda v: v.group_id):
        fh.write(json.dumps(v.to_record(), sort_keys=True) + "\n")
    if config is not None:
        n_anom = sum(v.is_anomalous for v in verdicts)
        fh.write(json.dumps({"summary": {"n_sequences": len(verdicts), "n_anomalous": n_anom,
                                         "config": config.to_dict()}}, sort_keys=True) + "\n")
