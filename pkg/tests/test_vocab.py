import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from logsentinel.sequencer import LogSequence
from logsentinel.vocab import (DIST, MASK, PAD, UNK, Vocab, apply_masking, build_vocab, decode, encode,
                               exhaustive_strata, n_masked, stack)


def test_reserved_ids_and_first_appearance_order():
    assert (PAD, DIST, MASK, UNK) == (0, 1, 2, 3)
    a, b, c = 17, 3, 9  # template ids; vocabulary ids follow first appearance
    v = build_vocab([[a, b], [a, c]])
    assert [v.lookup(k) for k in (a, b, c)] == [4, 5, 6]
    assert len(v) == 7 and v.n_keys == 3


def test_encode_pads_and_prepends_dist():
    v = build_vocab([[17, 3]])
    (enc,) = encode([17, 3], v, max_len=5)
    assert enc.ids.tolist() == [DIST, 4, 5, PAD, PAD]
    assert enc.attn_mask.tolist() == [True, True, True, False, False]
    assert enc.n_real == 2


def test_long_sequence_chunks():
    keys = list(range(1000))
    v = build_vocab([keys])
    chunks = encode(LogSequence(keys, "g"), v, max_len=512)
    assert [c.n_real for c in chunks] == [511, 489]
    assert all(c.ids[0] == DIST for c in chunks)
    assert [c.chunk_index for c in chunks] == [0, 1]
    assert decode(chunks, v) == keys


def test_unseen_key_is_unk():
    v = build_vocab([[1, 2]])
    (enc,) = encode([1, 99], v, max_len=4)
    assert enc.ids.tolist() == [DIST, 4, UNK, PAD]
    assert decode([enc], v) == [1, None]


def test_empty_training_set_rejected():
    with pytest.raises(ValueError):
        build_vocab([])


@pytest.mark.parametrize("T,ratio,expected", [(10, 0.5, 5), (1, 0.5, 1), (3, 0.5, 2), (5, 0.15, 1),
                                              (10, 0.15, 2), (20, 0.15, 3), (7, 1.0, 7)])
def test_mask_counts(T, ratio, expected):
    assert n_masked(T, ratio) == expected


def test_masking_is_seeded_and_preserves_structure():
    v = build_vocab([list(range(10))])
    (enc,) = encode(list(range(10)), v, max_len=16)
    a = apply_masking(enc, 0.5, np.random.default_rng(3))
    b = apply_masking(enc, 0.5, np.random.default_rng(3))
    assert a.mask_positions == b.mask_positions
    assert len(a.mask_positions) == 5
    assert (a.ids[a.mask_positions] == MASK).all()
    assert a.mask_labels == enc.ids[a.mask_positions].tolist()
    assert a.ids[0] == DIST and (a.ids[11:] == PAD).all()
    np.testing.assert_array_equal(a.attn_mask, enc.attn_mask)
    assert enc.mask_positions == [] and MASK not in enc.ids  # original untouched


def test_full_ratio_masks_every_real_position():
    v = build_vocab([[1, 2, 3]])
    (enc,) = encode([1, 2, 3], v, max_len=6)
    m = apply_masking(enc, 1.0, np.random.default_rng(0))
    assert m.mask_positions == [1, 2, 3]
    assert m.ids.tolist() == [DIST, MASK, MASK, MASK, PAD, PAD]


def test_masking_rejects_bad_input():
    v = build_vocab([[1]])
    (enc,) = encode([1], v, max_len=4)
    with pytest.raises(ValueError):
        apply_masking(enc, 0.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        apply_masking(enc, 0.5, positions=[0])


def test_exhaustive_strata_cover_once():
    assert exhaustive_strata(5, 0.5) == [[1, 3, 5], [2, 4]]
    assert exhaustive_strata(2, 0.15) == [[1], [2]]


def test_stack_trims_shared_padding():
    v = build_vocab([[1, 2, 3]])
    encs = [encode([1], v, 8)[0], encode([1, 2, 3], v, 8)[0]]
    ids, attn = stack(encs)
    assert ids.shape == (2, 4) and attn.shape == (2, 4)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=1, max_size=60), st.integers(2, 20),
       st.floats(0.05, 1.0), st.integers(0, 2**31 - 1))
def test_property_round_trip_and_masking(keys, max_len, ratio, seed):
    v = build_vocab([keys])
    chunks = encode(keys, v, max_len)
    assert decode(chunks, v) == keys
    assert all(c.ids[0] == DIST and len(c.ids) == max_len for c in chunks)
    masked = [apply_masking(c, ratio, np.random.default_rng(seed)) for c in chunks]
    assert decode(masked, v) == keys
    for c, m in zip(chunks, masked):
        assert len(m.mask_positions) == min(n_masked(c.n_real, ratio), c.n_real)
        changed = np.flatnonzero(c.ids != m.ids).tolist()
        assert changed == sorted(m.mask_positions)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 100), st.floats(0.05, 1.0))
def test_property_strata_partition(T, ratio):
    strata = exhaustive_strata(T, ratio)
    flat = sorted(p for s in strata for p in s)
    assert flat == list(range(1, T + 1))
    assert len(strata) <= int(np.ceil(1 / ratio - 1e-12))
