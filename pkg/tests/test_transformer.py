import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from revlab.datasets import build_cot3, build_four_token, build_reversal3
from revlab.numerics import Rng, finite_diff_grad, rel_err
from revlab.oracles import predict_Y_row
from revlab.transformer import (ReparamModel, attention_overlap, attention_weights, context_matrix, context_vector,
                                grad_YZ, log_likelihood, logit_report, neumann_correction, next_token_prob,
                                overlap_attention, sgd_train, w_equivalent_y_direction, w_model, w_train)


def test_attention_examples():
    Z = np.zeros((5, 5))
    np.testing.assert_array_equal(attention_weights(Z, (0, 1, 2, 3)), [0.5, 0.5])
    np.testing.assert_array_equal(attention_weights(Z, (0, 1, 3)), [1.0])
    Z[2, 0] = math.log(3)
    np.testing.assert_allclose(attention_weights(Z, (0, 1, 2, 4)), [0.75, 0.25], atol=1e-15)


def test_context_vector_examples():
    np.testing.assert_array_equal(context_vector((3, 1, 0), np.array([1.0]), 5), np.eye(5)[3])
    f = context_vector((0, 1, 2, 4), np.array([0.5, 0.5]), 5)
    np.testing.assert_allclose(f, (np.eye(5)[0] + np.eye(5)[1]) / math.sqrt(2), atol=1e-15)
    c = 0.1
    cp = c / (c + math.sqrt(1 - c * c))
    f = context_vector((0, 1, 2, 4), np.array([1 - cp, cp]), 5)
    np.testing.assert_allclose(f[[0, 1]], [math.sqrt(1 - c * c), c], atol=1e-15)


def test_next_token_prob_examples():
    m = ReparamModel.zeros(7)
    np.testing.assert_array_equal(next_token_prob(m, (1, 2, 3)), np.full(7, 1 / 7))
    m = ReparamModel.zeros(4)
    m.Y[1] = [-0.25, -0.25, 0.75, -0.25]
    p = next_token_prob(m, (1, 0, 2))
    assert p[2] == pytest.approx(math.exp(0.75) / (math.exp(0.75) + 3 * math.exp(-0.25)), abs=1e-15)
    assert p[2] == pytest.approx(0.47537, abs=1e-5)
    m.Z[:] = Rng(0).normal(size=(4, 4))
    np.testing.assert_array_equal(next_token_prob(m, (1, 3, 2)), next_token_prob(ReparamModel(m.Y, np.zeros((4, 4))), (1, 3, 2)))


seqs = st.lists(st.integers(0, 7), min_size=3, max_size=4)


@given(seqs, st.integers(0, 1000))
def test_zero_init_uniform_and_normalised(seq, seed):
    assert (next_token_prob(ReparamModel.zeros(8), seq) == 1 / 8).all()
    r = Rng(seed)
    m = ReparamModel(r.normal(size=(8, 8)), r.normal(size=(8, 8)))
    assert abs(next_token_prob(m, seq).sum() - 1) <= 1e-12


def test_grad_examples():
    dY, dZ = grad_YZ(ReparamModel.zeros(4), (1, 0, 2), eta_Y=1.0, eta_Z=1.0)
    expected = np.zeros((4, 4))
    expected[1] = [-0.25, -0.25, 0.75, -0.25]
    np.testing.assert_allclose(dY, expected, atol=1e-15)
    assert not dZ.any()


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=4, max_size=4), st.integers(0, 10_000))
def test_gradients_match_finite_differences(seq, seed):
    r = Rng(seed)
    Y, Z = r.normal(size=(6, 6)), r.normal(size=(6, 6))
    dY, dZ = grad_YZ(ReparamModel(Y, Z), seq, eta_Y=1.0, eta_Z=1.0)
    fY = finite_diff_grad(lambda A: log_likelihood(ReparamModel(A, Z), seq), Y)
    fZ = finite_diff_grad(lambda A: log_likelihood(ReparamModel(Y, A), seq), Z)
    assert rel_err(dY, fY) <= 1e-5
    if np.linalg.norm(fZ) > 1e-8:
        assert rel_err(dZ, fZ) <= 1e-5
    else:
        assert np.abs(dZ).max() <= 1e-8


@given(st.lists(st.integers(0, 5), min_size=3, max_size=3), st.integers(0, 10_000))
def test_dz_is_exactly_zero_for_two_context_positions(seq, seed):
    r = Rng(seed)
    _, dZ = grad_YZ(ReparamModel(r.normal(size=(6, 6)), r.normal(size=(6, 6))), seq, 1.0, 1.0)
    assert not dZ.any()


def test_sparse_training_matches_dense_gradient():
    ds = build_four_token(20, 3, 2, Rng(4))
    m = ReparamModel(Rng(1).normal(0.1, (20, 20)), Rng(2).normal(0.1, (20, 20)))
    dense = m.copy()
    sgd_train(m, ds, 0.5, 0.05, steps=len(ds.train), live_z=True)
    for s in ds.train:
        dY, dZ = grad_YZ(dense, s, 0.5, 0.05)
        dense.Y += dY
        dense.Z += dZ
    np.testing.assert_allclose(m.Y, dense.Y, atol=1e-13)
    np.testing.assert_allclose(m.Z, dense.Z, atol=1e-13)


def test_one_step_closed_form():
    ds = build_reversal3(4, 1, 0, 0, Rng(0))
    m = ReparamModel.zeros(4)
    sgd_train(m, ds, 1.0, steps=1)
    a, b = ds.A[0], ds.B[0]
    row = np.full(4, -0.25)
    row[b] = 0.75
    np.testing.assert_allclose(m.Y[a], row, atol=1e-15)


@pytest.fixture(scope="module")
def reversal_run():
    ds = build_reversal3(60, 8, 3, 3, Rng(7))
    m = ReparamModel.zeros(60)
    rec = sgd_train(m, ds, 0.5, steps=len(ds.train) * 100)
    return ds, m, rec


def test_test_probability_exactly_uniform(reversal_run):
    _, _, rec = reversal_run
    assert (rec.probs("test") == 1 / 60).all()


def test_nonzero_rows_are_train_first_tokens(reversal_run):
    ds, m, _ = reversal_run
    nonzero = set(np.flatnonzero(np.any(m.Y != 0, axis=1)).tolist())
    assert nonzero == {s[0] for s in ds.train}


def test_rows_follow_closed_form(reversal_run):
    ds, m, rec = reversal_run
    for s in ds.train:
        k = rec.row_updates[s[0]]
        assert k == 100
        pred = predict_Y_row(int(k), 60, 0.5, s[-1])
        assert rel_err(m.Y[s[0]], pred) <= 1e-9


def test_shuffled_order_uses_per_row_counts():
    ds = build_reversal3(40, 5, 2, 2, Rng(3))
    m = ReparamModel.zeros(40)
    rec = sgd_train(m, ds, 0.5, steps=len(ds.train) * 7 + 3, order="shuffled", rng=Rng(3, "shuffle"))
    for s in ds.train:
        pred = predict_Y_row(int(rec.row_updates[s[0]]), 40, 0.5, s[-1])
        assert rel_err(m.Y[s[0]], pred) <= 1e-9
    with pytest.raises(ValueError):
        sgd_train(ReparamModel.zeros(40), ds, 0.5, steps=2, order="shuffled")


def test_w_train_one_step_and_uniform_test():
    ds = build_four_token(4, 0, 1, Rng(0))
    wm = w_model(ds)
    w_train(wm, ds, 1.0, steps=1)
    label = ds.train[0][-1]
    row = np.full(4, -0.25)
    row[label] = 0.75
    np.testing.assert_allclose(wm.W[wm.row_of[label]], row, atol=1e-15)
    ds = build_four_token(50, 6, 3, Rng(1))
    wm = w_model(ds, overlap_attention(ds, 0.1))
    rec = w_train(wm, ds, 0.5, steps=len(ds.train) * 30)
    assert (rec.probs("test") == 1 / 50).all()


def test_w_and_y_training_coincide_for_one_hot_contexts():
    ds = build_reversal3(30, 4, 2, 2, Rng(9))
    m = ReparamModel.zeros(30)
    wm = w_model(ds)
    sgd_train(m, ds, 0.5, steps=len(ds.train) * 20)
    w_train(wm, ds, 0.5, steps=len(ds.train) * 20)
    for s in ds.train:
        assert m.Y[s[0]].tobytes() == wm.W[wm.row_of[s[-1]]].tobytes()


def test_attention_overlap_examples():
    E, lam = attention_overlap(np.eye(6)[:, :4])
    assert not E.any() and lam == 0.0
    for c, N, expected in ((0.1, 5, 0.04), (0.01, 20, 1.9e-3)):
        ds = build_four_token(2 * N + 2, N, 0, Rng(0))
        F, _ = context_matrix(ds, overlap_attention(ds, c))
        F = F[:, [ds.train.index((ds.A[i], ds.R1, ds.R2, ds.B[i])) for i in range(N)]]
        np.testing.assert_allclose(F[ds.R1], c, atol=1e-15)
        _, lam = attention_overlap(F)
        assert abs(lam - expected) <= 1e-10
        assert abs(lam - c * c * (N - 1)) <= 1e-10


def test_neumann_correction_and_y_direction():
    ds = build_four_token(30, 5, 2, Rng(0))
    F, _ = context_matrix(ds, overlap_attention(ds, 0.2))
    E = F.T @ F - np.eye(F.shape[1])
    Ep = neumann_correction(E)
    np.testing.assert_allclose((np.eye(len(E)) + E) @ (np.eye(len(E)) + Ep), np.eye(len(E)), atol=1e-12)
    u = w_equivalent_y_direction(F, 0)
    target = np.zeros(F.shape[1])
    target[0] = 1.0
    np.testing.assert_allclose(F.T @ u, target, atol=1e-12)


def test_logit_report_structure(reversal_run):
    ds, m, _ = reversal_run
    for mat, _, _ in logit_report(ReparamModel.zeros(60), ds).values():
        assert not mat.any()
    rep = logit_report(m, ds)
    assert not rep["val_unseen"][0].any()
    for name in ("train_fwd", "train_rev", "val_seen"):
        mat = rep[name][0]
        assert (np.diag(mat) > 0).all()
        assert (mat[~np.eye(len(mat), dtype=bool)] < 0).all()


def test_cot_logit_blocks():
    ds = build_cot3(50, 4, 3, Rng(2))
    m = ReparamModel.zeros(50)
    sgd_train(m, ds, 0.5, steps=len(ds.train) * 40)
    rep = logit_report(m, ds)
    assert set(rep) == {"train_ab", "train_bc", "train_ac", "val_ab", "val_bc", "val_ac"}
    assert (np.diag(rep["val_ab"][0]) > 0).all() and (np.diag(rep["val_bc"][0]) > 0).all()
    assert (np.diag(rep["val_ac"][0]) < 0).all()
