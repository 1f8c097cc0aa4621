import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from revlab.datasets import (DatasetError, build_bilinear_pairs, build_cot3, build_four_token, build_reversal3,
                             dataset_from_dict, dataset_to_dict, dumps_dataset, load_dataset, save_dataset)
from revlab.numerics import Rng


def test_reversal_sizes():
    ds = build_reversal3(800, 140, 30, 30, Rng(0))
    assert (len(ds.train), len(ds.test)) == (340, 60)


def test_reversal_single_pair():
    ds = build_reversal3(10, 1, 0, 0, Rng(0))
    a, b = ds.A[0], ds.B[0]
    assert ds.train == [(a, ds.fwd, b), (b, ds.bwd, a)]
    assert ds.test == []


def test_reversal_capacity():
    with pytest.raises(DatasetError):
        build_reversal3(6, 2, 1, 1, Rng(0))


def test_cot_sizes_and_errors():
    ds = build_cot3(800, 140, 60, Rng(0))
    assert (len(ds.train), len(ds.test)) == (540, 60)
    assert len(build_cot3(20, 1, 0, Rng(0)).train) == 3
    assert build_cot3(20, 1, 0, Rng(0)).test == []
    # 3 * 2 + 2 = 8 tokens exactly fill M = 8; one fewer does not fit
    assert len(build_cot3(8, 1, 1, Rng(0)).train) == 5
    with pytest.raises(DatasetError):
        build_cot3(7, 1, 1, Rng(0))


def test_four_token_examples():
    ds = build_four_token(100, 10, 5, Rng(0))
    assert (len(ds.train), len(ds.test)) == (25, 5)
    assert all(len(s) == 4 for s in ds.train + ds.test)
    ds = build_four_token(100, 0, 1, Rng(0))
    a, b = ds.A[0], ds.B[0]
    assert ds.train == [(a, ds.R1, ds.R2, b)]
    assert ds.test == [(b, ds.R1, ds.R2, a)]


def test_bilinear_pairs_examples():
    D = build_bilinear_pairs(64, 8, 512, Rng(0))
    assert (len(D.train), len(D.test)) == (15, 1)
    D = build_bilinear_pairs(4, 2, 16, Rng(0))
    (x1, x2), (y1, y2) = D.X, D.Y
    assert D.train == [(x1, y1), (x2, y2), (y2, x2)]
    assert D.test == [(y1, x1)]
    with pytest.raises(DatasetError):
        build_bilinear_pairs(3, 2, 8, Rng(0))


sizes = st.tuples(st.integers(0, 6), st.integers(0, 4), st.integers(0, 4), st.integers(0, 1000))


@given(sizes)
def test_reversal_test_first_tokens_never_trained(p):
    n, t1, t2, seed = p
    ds = build_reversal3(2 * (n + t1 + t2) + 2, n, t1, t2, Rng(seed))
    assert not {s[0] for s in ds.test} & {s[0] for s in ds.train}


@given(sizes)
def test_cot_indirect_token_never_follows_held_out_first_token(p):
    n, t, _, seed = p
    ds = build_cot3(3 * (n + t) + 2, n, t, Rng(seed))
    held_out = {ds.A[i] for i in ds.I_test}
    assert not any(s[0] in held_out and s[1] == ds.indirect for s in ds.train)


@settings(max_examples=20)
@given(sizes)
def test_construction_is_deterministic(p):
    n, t1, t2, seed = p
    M = 2 * (n + t1 + t2) + 5
    assert dumps_dataset(build_reversal3(M, n, t1, t2, Rng(seed))) == dumps_dataset(
        build_reversal3(M, n, t1, t2, Rng(seed)))


@pytest.mark.parametrize("ds", [
    build_reversal3(100, 5, 2, 2, Rng(1)),
    build_cot3(100, 5, 3, Rng(1)),
    build_four_token(100, 5, 3, Rng(1)),
    build_bilinear_pairs(16, 3, 8, Rng(1)),
])
def test_round_trip(tmp_path, ds):
    path = save_dataset(ds, tmp_path / "ds.json")
    back = load_dataset(path)
    assert dataset_to_dict(back) == dataset_to_dict(ds)


def test_truncated_file(tmp_path):
    text = dumps_dataset(build_reversal3(100, 5, 2, 2, Rng(1)))
    p = tmp_path / "bad.json"
    p.write_text(text[: len(text) // 2])
    with pytest.raises(DatasetError, match="malformed JSON at line"):
        load_dataset(p)


def test_header_m_mismatch():
    obj = dataset_to_dict(build_reversal3(100, 5, 2, 2, Rng(1)))
    obj["M"] = 10
    with pytest.raises(DatasetError):
        dataset_from_dict(obj)


def test_tampered_sequences_are_rejected():
    obj = json.loads(dumps_dataset(build_reversal3(100, 5, 2, 2, Rng(1))))
    obj["test"][0][2] = obj["train"][0][2]
    with pytest.raises(DatasetError, match="test\\[0\\]"):
        dataset_from_dict(obj)


def test_missing_field_named():
    obj = dataset_to_dict(build_cot3(100, 2, 2, Rng(1)))
    del obj["I_test"]
    with pytest.raises(DatasetError, match="I_test"):
        dataset_from_dict(obj)


def test_negative_sizes_rejected():
    with pytest.raises(DatasetError):
        build_reversal3(100, -1, 0, 0, Rng(0))
