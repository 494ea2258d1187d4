"""Log-key vocabulary, DIST-prefixed encoding with chunking, and masking."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .sequencer import LogSequence

PAD, DIST, MASK, UNK = 0, 1, 2, 3
RESERVED = {"[PAD]": PAD, "[DIST]": DIST, "[MASK]": MASK, "[UNK]": UNK}
N_RESERVED = len(RESERVED)


class Vocab:
    """Bijection between template ids and token ids; ids below 4 are reserved."""

    def __init__(self, keys: Iterable[int] = ()):
        self.key_to_id: dict[int, int] = {}
        self.id_to_key: dict[int, int] = {}
        for key in keys:
            self.add(key)

    def add(self, key: int) -> int:
        key = int(key)
        if key not in self.key_to_id:
            idx = N_RESERVED + len(self.key_to_id)
            self.key_to_id[key] = idx
            self.id_to_key[idx] = key
        return self.key_to_id[key]

    def __len__(self) -> int:
        return N_RESERVED + len(self.key_to_id)

    @property
    def n_keys(self) -> int:
        return len(self.key_to_id)

    def __contains__(self, key) -> bool:
        return int(key) in self.key_to_id

    def lookup(self, key: int) -> int:
        return self.key_to_id.get(int(key), UNK)

    def keys(self) -> list[int]:
        return [self.id_to_key[i] for i in range(N_RESERVED, len(self))]

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.keys() == other.keys()

    def __repr__(self) -> str:
        return f"Vocab(n_keys={self.n_keys})"


def build_vocab(sequences: Iterable[LogSequence | Sequence[int]]) -> Vocab:
    """Assign ids to training keys in order of first appearance."""
    vocab = Vocab()
    n_seq = 0
    for seq in sequences:
        n_seq += 1
        for key in (seq.keys if isinstance(seq, LogSequence) else seq):
            vocab.add(key)
    if n_seq == 0 or vocab.n_keys == 0:
        raise ValueError("cannot build a vocabulary from an empty training set")
    return vocab


@dataclass
class EncodedSequence:
    ids: np.ndarray
    attn_mask: np.ndarray
    group_id: str = ""
    chunk_index: int = 0
    mask_positions: list[int] = field(default_factory=list)
    mask_labels: list[int] = field(default_factory=list)

    @property
    def n_real(self) -> int:
        """Real (non-DIST, non-PAD) token count."""
        return int(self.attn_mask.sum()) - 1

    @property
    def length(self) -> int:
        return int(self.attn_mask.sum())


def encode(seq: LogSequence | Sequence[int], vocab: Vocab, max_len: int = 512) -> list[EncodedSequence]:
    """``[DIST] + ids`` padded to ``max_len``; long sequences are split into
    consecutive chunks of at most ``max_len - 1`` keys, each with its own DIST.
    """
    if max_len < 2:
        raise ValueError("max_len must be at least 2")
    keys = seq.keys if isinstance(seq, LogSequence) else list(seq)
    group_id = seq.group_id if isinstance(seq, LogSequence) else ""
    width = max_len - 1
    chunks = [keys[i:i + width] for i in range(0, len(keys), width)] or [[]]
    out = []
    for ci, chunk in enumerate(chunks):
        ids = np.full(max_len, PAD, dtype=np.int64)
        ids[0] = DIST
        ids[1:1 + len(chunk)] = [vocab.lookup(k) for k in chunk]
        attn = np.zeros(max_len, dtype=bool)
        attn[:1 + len(chunk)] = True
        out.append(EncodedSequence(ids=ids, attn_mask=attn, group_id=group_id, chunk_index=ci))
    return out


def decode(chunks: Sequence[EncodedSequence], vocab: Vocab) -> list[int | None]:
    """Inverse of :func:`encode`; UNK positions decode to ``None``."""
    out: list[int | None] = []
    for enc in sorted(chunks, key=lambda c: c.chunk_index):
        ids = enc.ids.copy()
        for pos, label in zip(enc.mask_positions, enc.mask_labels):
            ids[pos] = label
        for i in ids[1:enc.length]:
            out.append(vocab.id_to_key.get(int(i)))
    return out


def n_masked(n_real: int, ratio: float) -> int:
    """``max(1, round(ratio * n_real))`` with halves rounded up."""
    return max(1, int(np.floor(ratio * n_real + 0.5)))


def apply_masking(enc: EncodedSequence, ratio: float, rng: np.random.Generator | None = None,
                  positions: Sequence[int] | None = None) -> EncodedSequence:
    """Return a copy with some real positions replaced by MASK.

    Either samples ``n_masked(T, ratio)`` positions with ``rng`` or masks the
    explicit ``positions`` (used by exhaustive detection passes).
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError("mask ratio must lie in (0, 1]")
    T = enc.n_real
    if T < 1:
        raise ValueError("sequence has no maskable position")
    if positions is None:
        if rng is None:
            raise ValueError("either rng or explicit positions are required")
        k = min(n_masked(T, ratio), T)
        positions = np.sort(rng.choice(np.arange(1, T + 1), size=k, replace=False))
    positions = [int(p) for p in positions]
    if any(p < 1 or p > T for p in positions):
        raise ValueError("mask positions must address real, non-DIST tokens")
    ids = enc.ids.copy()
    labels = [int(ids[p]) for p in positions]
    ids[positions] = MASK
    return replace(enc, ids=ids, attn_mask=enc.attn_mask.copy(),
                   mask_positions=positions, mask_labels=labels)


def exhaustive_strata(n_real: int, ratio: float) -> list[list[int]]:
    """Split positions ``1..n_real`` into ``ceil(1/ratio)`` disjoint strata.

    Position ``p`` goes to stratum ``(p - 1) % n_pass``; empty strata are dropped.
    """
    n_pass = int(np.ceil(1.0 / ratio - 1e-12))
    strata = [[p for p in range(1, n_real + 1) if (p - 1) % n_pass == s] for s in range(n_pass)]
    return [s for s in strata if s]


def stack(batch: Sequence[EncodedSequence], trim: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Stack encodings into ``(B, L)`` arrays, trimming shared trailing PAD."""
    ids = np.stack([e.ids for e in batch])
    attn = np.stack([e.attn_mask for e in batch])
    if trim:
        width = int(attn.sum(axis=1).max())
        ids, attn = ids[:, :width], attn[:, :width]
    return ids, attn
