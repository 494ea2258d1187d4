"""Self-supervised training: masked key prediction plus hypersphere volume loss.

The objective for a batch of N sequences is

    L = -(1/N) sum_j sum_i log p_j(true key at mask i)  +  alpha/N sum_j ||h_DIST_j - c||^2

where ``c`` is the mean h_DIST over the training set, recomputed from the
current model at the start of every epoch and held constant within it.
h_DIST for the hypersphere term is taken from the unmasked sequence.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import model as M
from .seeding import substream
from .sequencer import LogSequence
from .vocab import EncodedSequence, Vocab, apply_masking, build_vocab, encode, stack

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Loss or gradients went non-finite; ``last_good`` holds the previous params."""

    def __init__(self, message: str, last_good: M.ModelParams | None = None, epoch: int = -1):
        super().__init__(message)
        self.last_good = last_good
        self.epoch = epoch


@dataclass
class TrainConfig:
    alpha: float = 0.1
    mask_ratio: float = 0.5
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    center_update: str = "per_epoch"  # or "fixed": frozen after warmup_epochs
    warmup_epochs: int = 0
    use_mlkp: bool = True             # False trains the hypersphere term alone

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not 0.0 < self.mask_ratio <= 1.0:
            raise ValueError("mask_ratio must lie in (0, 1]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.center_update not in ("per_epoch", "fixed"):
            raise ValueError("center_update must be 'per_epoch' or 'fixed'")
        if not self.use_mlkp and self.alpha == 0:
            raise ValueError("nothing to optimize: use_mlkp is off and alpha is 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Center:
    c: np.ndarray
    computed_at_epoch: int = -1


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def mlkp_loss(probs: np.ndarray, labels: Sequence[int], sequence_index: Sequence[int] | None = None,
              n_sequences: int | None = None) -> float:
    """Cross entropy summed over each sequence's masks, averaged over sequences.

    ``probs`` is ``(n_masks, V)``; ``sequence_index[i]`` names the sequence
    mask ``i`` belongs to (default: every mask from its own sequence).
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("no masked positions in batch")
    if n_sequences is None:
        n_sequences = len(set(sequence_index)) if sequence_index is not None else len(labels)
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.log(picked).sum() / n_sequences)


def vhm_loss(h_dist: np.ndarray, center: np.ndarray) -> float:
    """Mean squared distance of sequence representations to the center."""
    h_dist = np.atleast_2d(h_dist)
    return float(((h_dist - center) ** 2).sum(axis=1).mean())


def total_loss(mlkp: float, vhm: float, alpha: float) -> float:
    return mlkp + alpha * vhm


def _log_softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class Batch:
    """Masked inputs for the prediction task plus the unmasked originals."""

    ids: np.ndarray          # (B, L) masked
    attn: np.ndarray         # (B, L)
    clean_ids: np.ndarray    # (B, L) unmasked
    rows: np.ndarray         # (n_masks,) batch row of each mask
    cols: np.ndarray         # (n_masks,) position of each mask
    labels: np.ndarray       # (n_masks,) true token id

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def make_batch(chunks: Sequence[EncodedSequence], ratio: float, rng: np.random.Generator) -> Batch:
    masked = [apply_masking(c, ratio, rng) for c in chunks]
    ids, attn = stack(masked)
    clean_ids, _ = stack(chunks)
    rows = np.concatenate([np.full(len(m.mask_positions), i) for i, m in enumerate(masked)])
    cols = np.concatenate([m.mask_positions for m in masked])
    labels = np.concatenate([m.mask_labels for m in masked])
    return Batch(ids, attn, clean_ids, rows.astype(np.int64), cols.astype(np.int64), labels.astype(np.int64))


def loss_and_grads(params: M.ModelParams, batch: Batch, center: np.ndarray | None, alpha: float,
                   use_mlkp: bool = True, need_grads: bool = True):
    """Return ``(mlkp, vhm, total, grads)`` for one batch (grads ``None`` if not requested)."""
    N = batch.size
    with_vhm = alpha > 0 and center is not None
    if use_mlkp and with_vhm:
        ids = np.concatenate([batch.ids, batch.clean_ids])
        attn = np.concatenate([batch.attn, batch.attn])
    elif use_mlkp:
        ids, attn = batch.ids, batch.attn
    else:
        ids, attn = batch.clean_ids, batch.attn
    H, cache = M.forward(params, ids, attn, keep_cache=True)
    dH = np.zeros_like(H)

    mlkp = 0.0
    if use_mlkp:
        hm = H[batch.rows, batch.cols]
        logp = _log_softmax(M.mlkp_logits(hm, params))
        picked = logp[np.arange(len(batch.labels)), batch.labels]
        mlkp = float(-picked.sum() / N)
        if need_grads:
            dlogits = np.exp(logp)
            dlogits[np.arange(len(batch.labels)), batch.labels] -= 1.0
            dlogits /= N
            head_grad_w = dlogits.T @ hm
            head_grad_b = dlogits.sum(axis=0)
            np.add.at(dH, (batch.rows, batch.cols), dlogits @ params["head.weight"])

    vhm = 0.0
    if with_vhm:
        h_dist = H[N:, 0] if use_mlkp else H[:, 0]
        diff = h_dist - center
        vhm = float((diff * diff).sum(axis=1).mean())
        if need_grads:
            g = (2.0 * alpha / N) * diff
            if use_mlkp:
                dH[N:, 0] += g
            else:
                dH[:, 0] += g

    total = total_loss(mlkp, vhm, alpha)
    if not need_grads:
        return mlkp, vhm, total, None
    grads = M.backward(params, cache, dH)
    if use_mlkp:
        grads["head.weight"] = head_grad_w.astype(H.dtype)
        grads["head.bias"] = head_grad_b.astype(H.dtype)
    else:
        grads["head.weight"] = np.zeros_like(params["head.weight"])
        grads["head.bias"] = np.zeros_like(params["head.bias"])
    return mlkp, vhm, total, grads


# ---------------------------------------------------------------------------
# center and optimizer
# ---------------------------------------------------------------------------


def dist_embeddings(params: M.ModelParams, chunks: Sequence[EncodedSequence],
                    batch_size: int = 256) -> np.ndarray:
    """h_DIST of every (unmasked) chunk, in input order."""
    out = []
    for i in range(0, len(chunks), batch_size):
        ids, attn = stack(chunks[i:i + batch_size])
        out.append(M.forward(params, ids, attn)[:, 0])
    return np.concatenate(out) if out else np.zeros((0, params.config.d_o))


def compute_center(params: M.ModelParams, chunks: Sequence[EncodedSequence], epoch: int = -1,
                   batch_size: int = 256) -> Center:
    if len(chunks) == 0:
        raise ValueError("cannot compute a center from an empty training set")
    h = dist_embeddings(params, chunks, batch_size).astype(np.float64)
    return Center(c=h.mean(axis=0), computed_at_epoch=epoch)


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name in sorted(grads):
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            tensors[name] -= (self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)).astype(tensors[name].dtype)


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


@dataclass
class TrainedModel:
    params: M.ModelParams
    center: Center
    vocab: Vocab
    train_config: TrainConfig
    loss_curve: list[dict] = field(default_factory=list)

    @property
    def model_config(self) -> M.ModelConfig:
        return self.params.config


def encode_all(sequences: Sequence[LogSequence], vocab: Vocab, max_len: int) -> list[EncodedSequence]:
    return [c for s in sequences for c in encode(s, vocab, max_len) if c.n_real >= 1]


def fit(sequences: Sequence[LogSequence], config: TrainConfig | None = None,
        model_config: M.ModelConfig | dict | None = None, vocab: Vocab | None = None,
        on_epoch: Callable[[int, dict, TrainedModel], bool | None] | None = None) -> TrainedModel:
    """Train on normal sequences.

    ``model_config`` may be a dict of :class:`ModelConfig` fields without
    ``vocab_size``; it is filled from the vocabulary.  ``on_epoch`` is called
    after every epoch and may return True to stop training early.
    """
    config = config or TrainConfig()
    if not sequences:
        raise ValueError("empty training set")
    vocab = vocab or build_vocab(sequences)
    if model_config is None:
        model_config = {}
    if isinstance(model_config, dict):
        model_config = M.ModelConfig(vocab_size=len(vocab), **model_config)
    if model_config.vocab_size != len(vocab):
        raise ValueError("model vocab_size does not match the vocabulary")

    chunks = encode_all(sequences, vocab, model_config.max_len)
    params = M.init_params(model_config, substream(config.seed, "init"))
    shuffle_rng = substream(config.seed, "shuffle")
    mask_rng = substream(config.seed, "masking")
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    trained = TrainedModel(params, compute_center(params, chunks, 0), vocab, config)
    best_mlkp, stale = math.inf, 0

    for epoch in range(1, config.epochs + 1):
        if config.center_update == "per_epoch" or epoch <= config.warmup_epochs + 1:
            trained.center = compute_center(params, chunks, epoch)
        c = trained.center.c.astype(params["embedding"].dtype)
        order = shuffle_rng.permutation(len(chunks))
        sums = np.zeros(3)
        n_batches = 0
        last_good = params.copy()
        for start in range(0, len(chunks), config.batch_size):
            batch = make_batch([chunks[i] for i in order[start:start + config.batch_size]],
                               config.mask_ratio, mask_rng)
            mlkp, vhm, total, grads = loss_and_grads(params, batch, c, config.alpha, config.use_mlkp)
            if not math.isfinite(total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                bad = sorted(k for k, g in grads.items() if not np.all(np.isfinite(g)))
                raise TrainingDiverged(
                    f"non-finite loss/gradient at epoch {epoch} (loss={total}, tensors={bad})",
                    last_good=last_good, epoch=epoch)
            opt.step(params.tensors, grads)
            sums += (mlkp, vhm, total)
            n_batches += 1
        mean = sums / max(n_batches, 1)
        record = {"epoch": epoch, "mlkp": float(mean[0]), "vhm": float(mean[1]), "total": float(mean[2])}
        trained.loss_curve.append(record)
        logger.info("epoch %d mlkp=%.4f vhm=%.4f total=%.4f", epoch, *mean)

        if config.use_mlkp and config.alpha > 0:
            if record["mlkp"] < best_mlkp - 1e-4:
                best_mlkp, stale = record["mlkp"], 0
            else:
                stale += 1
            if stale >= 10 and record["vhm"] < 1e-6:
                warnings.warn("sequence representations collapsed onto the center while the "
                              "prediction loss stalls; alpha is probably too large", RuntimeWarning)
                stale = 0
        if on_epoch is not None and on_epoch(epoch, record, trained):
            break  # callback asked to stop early

    if config.center_update == "per_epoch" or epoch <= config.warmup_epochs:
        trained.center = compute_center(params, chunks, epoch)
    return trained


def masked_accuracy(trained: TrainedModel, sequences: Sequence[LogSequence], ratio: float | None = None,
                    seed: int = 0) -> float:
    """Top-1 accuracy of masked key prediction on ``sequences``."""
    ratio = ratio or trained.train_config.mask_ratio
    chunks = encode_all(sequences, trained.vocab, trained.model_config.max_len)
    rng = substream(seed, "masking", 1)
    hits = total = 0
    for i in range(0, len(chunks), 256):
        batch = make_batch(chunks[i:i + 256], ratio, rng)
        H = M.forward(trained.params, batch.ids, batch.attn)
        pred = M.mlkp_logits(H[batch.rows, batch.cols], trained.params).argmax(axis=1)
        hits += int((pred == batch.labels).sum())
        total += len(batch.labels)
    return hits / total
