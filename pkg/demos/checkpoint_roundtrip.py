"""
Saving and loading a trained model
==================================

A checkpoint holds the vocabulary, both configs, the center and every
tensor as little-endian float32, sealed with a SHA-256 digest.
"""

import tempfile
from pathlib import Path

import numpy as np

from logsentinel import checkpoint
from logsentinel.evaluation import SyntheticSpec, generate_synthetic_corpus
from logsentinel.trainer import TrainConfig, fit

corpus = generate_synthetic_corpus(SyntheticSpec(n_keys=10, n_branches=2, n_rare=1, seq_len=10, n_train=100), seed=0)
trained = fit(corpus.train, TrainConfig(epochs=2), dict(d=8, d_o=16, d_ff=32, n_heads=2, max_len=16))

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "model.ckpt"
    checkpoint.save(path, trained)
    blob = path.read_bytes()
    print(f"{len(blob)} bytes, magic {blob[:4]!r}")
    loaded, _ = checkpoint.load(path)
    same = all(np.array_equal(loaded.params[k], v) for k, v in trained.params.tensors.items())
    print("tensors identical:", same)

    # flip one bit and the digest no longer matches
    broken = bytearray(blob)
    broken[200] ^= 1
    try:
        checkpoint.loads(bytes(broken))
    except checkpoint.CheckpointError as err:
        print("rejected:", err)
