"""Bilinear next-token model p(y|x) = softmax_y(x^T Theta y) under gradient flow."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from .datasets import BilinearPairs
from .embeddings import EmbeddingSet
from .numerics import Rng, log_softmax, softmax


class FlowError(RuntimeError):
    pass


@dataclass
class BilinearParams:
    Theta: np.ndarray
    sigma0: float = 0.0

    def __post_init__(self):
        self.Theta = np.asarray(self.Theta, dtype=np.float64)
        if not np.all(np.isfinite(self.Theta)):
            raise ValueError("Theta has non-finite entries")


def _logits(Theta: np.ndarray, V: np.ndarray, inputs) -> np.ndarray:
    return V[inputs] @ Theta @ V.T


def bilinear_next_prob(P: BilinearParams, E: EmbeddingSet, x: int) -> np.ndarray:
    if not 0 <= x < E.m:
        raise ValueError(f"token {x} out of range for m={E.m}")
    return softmax(_logits(P.Theta, E.V, [x])[0])


def pair_probs(Theta: np.ndarray, D: BilinearPairs, pairs) -> np.ndarray:
    """p_Theta(target | input) for each (input, target) pair."""
    inputs = [a for a, _ in pairs]
    targets = [b for _, b in pairs]
    lp = log_softmax(_logits(Theta, D.embeddings.V, inputs))
    return np.exp(lp[np.arange(len(pairs)), targets])


def _nll(Theta: np.ndarray, D: BilinearPairs, pairs) -> float:
    inputs = [a for a, _ in pairs]
    targets = [b for _, b in pairs]
    lp = log_softmax(_logits(Theta, D.embeddings.V, inputs))
    return float(-lp[np.arange(len(pairs)), targets].mean())


def forward_loss(P: BilinearParams, D: BilinearPairs) -> float:
    """Mean negative log-likelihood over the 2n-1 training pairs."""
    return _nll(P.Theta, D, D.train)


def reversal_loss(P: BilinearParams, D: BilinearPairs) -> float:
    """-log p(x_1 | y_1) on the single held-out reversed pair."""
    return _nll(P.Theta, D, D.test)


def _loss_and_grad(Theta: np.ndarray, D: BilinearPairs) -> tuple[float, np.ndarray]:
    V = D.embeddings.V
    pairs = D.train
    inputs = [a for a, _ in pairs]
    targets = [b for _, b in pairs]
    Xin = V[inputs]
    lp = log_softmax(Xin @ Theta @ V.T)
    loss = float(-lp[np.arange(len(pairs)), targets].mean())
    resid = V[targets] - np.exp(lp) @ V  # target embedding minus its expectation
    return loss, -(Xin.T @ resid) / len(pairs)


def loss_gradient(P: BilinearParams, D: BilinearPairs) -> np.ndarray:
    return _loss_and_grad(P.Theta, D)[1]


def init_theta(mode: str, sigma: float, rng: Rng, d: int, *, pairs: BilinearPairs | None = None,
               theta: np.ndarray | None = None) -> BilinearParams:
    """Gaussian init (``mode="gaussian"``) or a vetted pretrained matrix (``mode="pretrained"``).

    A pretrained candidate must put every training-direction probability,
    and the held-out reversed one, strictly inside (1/(2m), 2/m).
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if mode == "gaussian":
        Theta = np.zeros((d, d)) if sigma == 0 else rng.normal(sigma, (d, d))
        return BilinearParams(Theta, sigma)
    if mode == "pretrained":
        if pairs is None or theta is None:
            raise ValueError("pretrained mode needs both the dataset and a candidate theta")
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (d, d):
            raise ValueError(f"candidate theta has shape {theta.shape}, expected {(d, d)}")
        m = pairs.m
        probs = pair_probs(theta, pairs, pairs.train + pairs.test)
        bad = np.flatnonzero((probs <= 1 / (2 * m)) | (probs >= 2 / m))
        if bad.size:
            raise ValueError(f"pretrained theta violates the (1/(2m), 2/m) window on pairs {bad.tolist()}")
        return BilinearParams(theta, 0.0)
    raise ValueError(f"unknown init mode {mode!r}")


@dataclass
class BilinearTrajectory:
    times: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    rev_loss: list = field(default_factory=list)
    train_probs: list = field(default_factory=list)  # per checkpoint, one entry per train pair
    rev_prob: list = field(default_factory=list)
    final_theta: np.ndarray | None = None
    dt_final: float = 0.0

    def record(self, t: float, Theta: np.ndarray, D: BilinearPairs, step: int = 0):
        self.times.append(float(t))
        self.steps.append(int(step))
        self.train_loss.append(_nll(Theta, D, D.train))
        self.rev_loss.append(_nll(Theta, D, D.test))
        self.train_probs.append(pair_probs(Theta, D, D.train))
        self.rev_prob.append(float(pair_probs(Theta, D, D.test)[0]))

    @property
    def min_train_prob(self) -> list:
        return [float(p.min()) for p in self.train_probs]

    def rows(self):
        for t, a, b, p, r in zip(self.times, self.train_loss, self.rev_loss, self.min_train_prob, self.rev_prob):
            yield t, a, b, p, r

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "train_loss", "rev_loss", "min_train_prob", "rev_prob"])
            for row in self.rows():
                w.writerow([repr(float(v)) for v in row])
        return path


def _rk4_step(Theta, D, dt):
    k1 = -_loss_and_grad(Theta, D)[1]
    k2 = -_loss_and_grad(Theta + 0.5 * dt * k1, D)[1]
    k3 = -_loss_and_grad(Theta + 0.5 * dt * k2, D)[1]
    k4 = -_loss_and_grad(Theta + dt * k3, D)[1]
    return Theta + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_flow(P0: BilinearParams, D: BilinearPairs, dt: float = 0.1, steps: int = 1000,
                   checkpoint_every: int = 10, method: str = "euler", stop_loss: float | None = None,
                   min_dt: float = 1e-6, tol: float = 1e-12) -> BilinearTrajectory:
    """Discretize dTheta/dt = -grad L(Theta).

    A step that raises the training loss by more than ``tol`` is retried with
    half the step size; ``dt`` stays halved afterwards. With ``stop_loss``
    the run also ends after the first step whose loss is <= stop_loss (that
    step is always checkpointed).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if method not in ("euler", "rk4"):
        raise ValueError(f"unknown method {method!r}")
    Theta = P0.Theta.copy()
    loss, grad = _loss_and_grad(Theta, D)
    if not math.isfinite(loss):
        raise FlowError("initial loss is not finite")
    traj = BilinearTrajectory()
    traj.record(0.0, Theta, D)
    t = 0.0
    for k in range(1, steps + 1):
        while True:
            cand = Theta - dt * grad if method == "euler" else _rk4_step(Theta, D, dt)
            new_loss, new_grad = _loss_and_grad(cand, D)
            if math.isfinite(new_loss) and new_loss <= loss + tol:
                break
            dt *= 0.5
            if dt < min_dt:
                raise FlowError(f"training loss increased at step {k} even with dt={dt:.3g}")
        Theta, loss, grad = cand, new_loss, new_grad
        t += dt
        done = stop_loss is not None and loss <= stop_loss
        if k % checkpoint_every == 0 or k == steps or done:
            traj.record(t, Theta, D, k)
        if done:
            break
    traj.final_theta = Theta
    traj.dt_final = dt
    return traj


@dataclass
class SeparationReport:
    eps: float
    margins: list
    worst_margin: float
    first_violation_time: float | None

    @property
    def holds(self) -> bool:
        return self.first_violation_time is None


def separation_check(traj: BilinearTrajectory, eps: float, tol: float = 1e-12) -> SeparationReport:
    """Check rev(t)/rev(0) >= (L(t)/L(0))**eps at every checkpoint."""
    if len(traj.times) < 2:
        raise ValueError("need at least two checkpoints")
    L0, R0 = traj.train_loss[0], traj.rev_loss[0]
    margins = [r / R0 - (l / L0) ** eps for l, r in zip(traj.train_loss, traj.rev_loss)]
    first = next((t for t, mg in zip(traj.times, margins) if mg < -tol), None)
    return SeparationReport(eps, margins, float(min(margins)), first)


def stop_time_and_floor(traj: BilinearTrajectory, c: float) -> tuple[float, float]:
    """First time the training loss reaches ``c`` (linear interpolation), and the reversal loss then."""
    if not c > 0:
        raise ValueError("c must be positive")
    L, R, T = traj.train_loss, traj.rev_loss, traj.times
    if L[0] <= c:
        return T[0], R[0]
    for k in range(1, len(L)):
        if L[k] <= c:
            w = (L[k - 1] - c) / (L[k - 1] - L[k])
            return T[k - 1] + w * (T[k] - T[k - 1]), R[k - 1] + w * (R[k] - R[k - 1])
    raise FlowError(f"training loss never reached {c}; final loss {L[-1]}")


# -- ODE comparison bounds ---------------------------------------------------

@dataclass
class OdeBoundReport:
    f1_bound: np.ndarray
    f2_bound: np.ndarray
    f1_slack: float  # min over t of bound - f1 (>= 0 when the upper bound holds)
    f2_slack: float  # min over t of f2 - bound (>= 0 when the lower bound holds)
    tol: float

    @property
    def passed(self) -> bool:
        return self.f1_slack >= -self.tol and self.f2_slack >= -self.tol


def ode_bound_check(t, f1, f2, c1: float, c2: float, c3: float, tol: float = 1e-9) -> OdeBoundReport:
    """Compare sampled trajectories with 1/(c1 t + 1/f1(0)) and f2(0)(1 + t/c3)^(-c2).

    The caller guarantees f1' <= -c1 f1^2 and f2' >= -c2 f2/(t + c3), and
    ``t[0] == 0``.
    """
    t, f1, f2 = (np.asarray(a, dtype=np.float64) for a in (t, f1, f2))
    if t[0] != 0.0:
        raise ValueError("samples must start at t = 0")
    b1 = 1.0 / (c1 * t + 1.0 / f1[0])
    b2 = f2[0] * (1.0 + t / c3) ** (-c2)
    scale1 = np.maximum(1.0, np.abs(b1))
    scale2 = np.maximum(1.0, np.abs(b2))
    return OdeBoundReport(b1, b2, float(((b1 - f1) / scale1).min()), float(((f2 - b2) / scale2).min()), tol)


def ode_trajectories(c1: float, c2: float, c3: float, f1_0: float, f2_0: float, t_end: float,
                     n: int = 201, f1_rate: float = 1.0, f2_rate: float = 1.0):
    """Numerically integrate f1' = -f1_rate*c1*f1^2 and f2' = -f2_rate*c2*f2/(t+c3).

    ``f1_rate >= 1`` and ``f2_rate <= 1`` satisfy the differential
    inequalities; rate 1 is the equality case.
    """
    t = np.linspace(0.0, t_end, n)

    def rhs(s, y):
        return [-f1_rate * c1 * y[0] ** 2, -f2_rate * c2 * y[1] / (s + c3)]

    sol = solve_ivp(rhs, (0.0, t_end), [f1_0, f2_0], t_eval=t, method="DOP853", rtol=1e-12, atol=1e-14)
    if not sol.success:
        raise FlowError(sol.message)
    return t, sol.y[0], sol.y[1]
