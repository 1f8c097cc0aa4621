import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from revlab.bilinear import (BilinearParams, FlowError, bilinear_next_prob, forward_loss, init_theta,
                             integrate_flow, loss_gradient, ode_bound_check, ode_trajectories, pair_probs,
                             reversal_loss, separation_check, stop_time_and_floor)
from revlab.datasets import BilinearPairs, build_bilinear_pairs
from revlab.embeddings import EmbeddingSet
from revlab.numerics import Rng, finite_diff_grad, rel_err


def one_hot_pair():
    return BilinearPairs(EmbeddingSet.one_hot(2), X=[0], Y=[1])


def test_next_prob_examples():
    E = EmbeddingSet.gaussian(10, 6, Rng(0))
    np.testing.assert_allclose(bilinear_next_prob(BilinearParams(np.zeros((6, 6))), E, 3), 0.1, atol=1e-15)
    Theta = np.zeros((2, 2))
    Theta[0, 1] = math.log(3)
    p = bilinear_next_prob(BilinearParams(Theta), EmbeddingSet.one_hot(2), 0)
    assert p[1] == pytest.approx(0.75, abs=1e-15)
    p = bilinear_next_prob(BilinearParams(Rng(1).normal(size=(6, 6))), E, 2)
    assert abs(p.sum() - 1) <= 1e-12


def test_losses_at_zero():
    D = build_bilinear_pairs(64, 8, 32, Rng(0))
    P = BilinearParams(np.zeros((32, 32)))
    assert forward_loss(P, D) == pytest.approx(math.log(64), abs=1e-12)
    assert reversal_loss(P, D) == pytest.approx(4.15888, abs=1e-5)


def test_reversal_loss_at_half_uniform():
    # one-hot, m=4: logits (a, 0, 0, 0) with a chosen so the target gets 1/(2m)
    D = BilinearPairs(EmbeddingSet.one_hot(4), X=[0], Y=[1])
    Theta = np.zeros((4, 4))
    Theta[1, 2] = math.log(5.0)  # p(target 0 | 1) = 1 / (3 + 5) = 1/8
    assert reversal_loss(BilinearParams(Theta), D) == pytest.approx(math.log(8), abs=1e-12)


def test_perfect_fit_has_zero_loss_and_vanishing_gradient():
    D = one_hot_pair()
    losses, norms = [], []
    for a in (5.0, 10.0, 20.0):
        Theta = np.zeros((2, 2))
        Theta[0, 1] = a
        losses.append(forward_loss(BilinearParams(Theta), D))
        norms.append(np.linalg.norm(loss_gradient(BilinearParams(Theta), D)))
    assert losses[-1] < 1e-8 and norms[0] > norms[1] > norms[2]


def test_gradient_one_hot_closed_form():
    G = loss_gradient(BilinearParams(np.zeros((2, 2))), one_hot_pair())
    np.testing.assert_allclose(G, [[0.5, -0.5], [0.0, 0.0]], atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_gradient_matches_finite_differences(seed):
    r = Rng(seed)
    D = build_bilinear_pairs(8, 3, 8, r.substream("data"))
    Theta = r.substream("theta").normal(0.5, (8, 8))
    G = loss_gradient(BilinearParams(Theta), D)
    F = finite_diff_grad(lambda T: forward_loss(BilinearParams(T), D), Theta)
    assert rel_err(G, F) <= 1e-5


def test_one_step_asymmetry_one_hot():
    D = BilinearPairs(EmbeddingSet.one_hot(4), X=[0], Y=[2])
    traj = integrate_flow(BilinearParams(np.zeros((4, 4))), D, dt=0.1, steps=1, checkpoint_every=1)
    T1 = traj.final_theta
    np.testing.assert_allclose(T1, -0.1 * loss_gradient(BilinearParams(np.zeros((4, 4))), D), atol=1e-15)
    assert T1[0, 2] > 0 and T1[2, 0] == 0.0


def test_init_theta_modes():
    assert not init_theta("gaussian", 0.0, Rng(0), 5).Theta.any()
    D = build_bilinear_pairs(64, 8, 512, Rng(0))
    P = init_theta("gaussian", 1e-3, Rng(0, "init"), 512)
    p = pair_probs(P.Theta, D, D.train)
    assert (p > 1 / 128).all() and (p < 1 / 32).all()
    init_theta("pretrained", 0.0, Rng(0), 512, pairs=D, theta=np.zeros((512, 512)))
    bad = np.zeros((512, 512))
    bad += 50 * np.outer(D.embeddings.V[D.X[0]], D.embeddings.V[D.Y[0]])
    with pytest.raises(ValueError):
        init_theta("pretrained", 0.0, Rng(0), 512, pairs=D, theta=bad)
    with pytest.raises(ValueError):
        init_theta("uniform", 1e-3, Rng(0), 4)


@pytest.fixture(scope="module")
def small_run():
    D = build_bilinear_pairs(32, 4, 128, Rng(5, "data"))
    P0 = init_theta("gaussian", 1e-3, Rng(5, "init"), 128)
    return D, P0, integrate_flow(P0, D, dt=0.1, steps=1500, checkpoint_every=25)


def test_flow_loss_nonincreasing_and_separation(small_run):
    _, _, traj = small_run
    assert all(b <= a for a, b in zip(traj.train_loss, traj.train_loss[1:]))
    rep = separation_check(traj, 0.1)
    assert rep.margins[0] == 0.0
    assert rep.holds


def test_halving_dt_changes_loss_little(small_run):
    D, P0, traj = small_run
    half = integrate_flow(P0, D, dt=0.05, steps=3000, checkpoint_every=3000)
    assert abs(half.train_loss[-1] - traj.train_loss[-1]) < 0.01 * traj.train_loss[-1]


def test_rk4_agrees_with_euler(small_run):
    D, P0, traj = small_run
    rk = integrate_flow(P0, D, dt=0.1, steps=1500, checkpoint_every=1500, method="rk4")
    assert abs(rk.train_loss[-1] - traj.train_loss[-1]) < 0.01 * traj.train_loss[-1]


def test_stop_time_examples(small_run):
    _, _, traj = small_run
    assert stop_time_and_floor(traj, traj.train_loss[0] + 1) == (0.0, traj.rev_loss[0])
    with pytest.raises(FlowError):
        stop_time_and_floor(traj, 1e-12)
    tau, rev = stop_time_and_floor(traj, 0.5 * traj.train_loss[0])
    assert 0 < tau < traj.times[-1] and rev > 0


def test_separation_constant_reversal():
    from revlab.bilinear import BilinearTrajectory
    t = BilinearTrajectory(times=[0, 1, 2], train_loss=[4.0, 2.0, 0.1], rev_loss=[4.0, 4.0, 4.0])
    assert separation_check(t, 0.5).holds


def test_stop_loss_ends_run():
    D = build_bilinear_pairs(16, 3, 32, Rng(2))
    P0 = init_theta("gaussian", 1e-3, Rng(3), 32)
    traj = integrate_flow(P0, D, dt=0.1, steps=100_000, checkpoint_every=1000, stop_loss=1.0)
    assert traj.train_loss[-1] <= 1.0 < traj.train_loss[-2]


def test_ode_bound_examples():
    c1, c2, c3 = 0.5, 0.7, 2.0
    t, f1, f2 = ode_trajectories(c1, c2, c3, 2.0, 1.5, 10.0)
    eq = ode_bound_check(t, f1, f2, c1, c2, c3)
    assert eq.passed and abs(eq.f1_slack) < 1e-9 and abs(eq.f2_slack) < 1e-9
    t, g1, g2 = ode_trajectories(c1, c2, c3, 2.0, 1.5, 10.0, f1_rate=2.0, f2_rate=0.0)
    rep = ode_bound_check(t, g1, g2, c1, c2, c3)
    assert rep.passed
    np.testing.assert_allclose(g2, 1.5)
    assert (g1[1:] < rep.f1_bound[1:]).all()
    t, h1, h2 = ode_trajectories(c1, c2, c3, 2.0, 1.5, 10.0, f1_rate=0.5)
    assert not ode_bound_check(t, h1, h2, c1, c2, c3).passed
