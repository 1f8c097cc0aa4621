"""Reparameterized one-layer transformer: Y drives logits, Z drives attention.

For a sequence ``(x_1, ..., x_T, x_{T+1})`` the query ``x_T`` attends over
the contextual tokens ``x_1 .. x_{T-1}`` (never itself) with weights
``b = softmax(Z[x_T, x_t])``; the context vector is ``f = LN(X^T b)`` and the
next-token distribution is ``softmax(Y^T f)``. Training maximizes
``log p(x_{T+1})`` one sequence at a time.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import CotDataset, FourTokenDataset, ReversalDataset
from .numerics import Rng, l2_normalize, log_softmax, softmax, top_eigenvalue


class TrainingError(RuntimeError):
    pass


@dataclass
class ReparamModel:
    Y: np.ndarray
    Z: np.ndarray

    @classmethod
    def zeros(cls, M: int) -> "ReparamModel":
        return cls(np.zeros((M, M)), np.zeros((M, M)))

    @property
    def M(self) -> int:
        return self.Y.shape[0]

    def copy(self) -> "ReparamModel":
        return ReparamModel(self.Y.copy(), self.Z.copy())


def _split(seq):
    if len(seq) < 3:
        raise ValueError(f"need at least one contextual token plus query and label, got {tuple(seq)}")
    return list(seq[:-2]), seq[-2], seq[-1]


def attention_weights(Z: np.ndarray, seq) -> np.ndarray:
    ctx, q, _ = _split(seq)
    return softmax(Z[q, ctx])


def _aggregate(seq, b: np.ndarray, M: int) -> np.ndarray:
    v = np.zeros(M)
    np.add.at(v, list(seq[:-2]), b)
    return v


def context_vector(seq, b, M: int) -> np.ndarray:
    """LN(X^T b): the unit-norm attention-weighted sum of one-hot contexts."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (len(seq) - 2,):
        raise ValueError("attention weights do not match the number of contextual tokens")
    return l2_normalize(_aggregate(seq, b, M))


def next_token_prob(model: ReparamModel, seq) -> np.ndarray:
    f = context_vector(seq, attention_weights(model.Z, seq), model.M)
    return softmax(f @ model.Y)


def log_likelihood(model: ReparamModel, seq) -> float:
    """log p(x_{T+1} | x_1..x_T), the per-sequence training objective."""
    f = context_vector(seq, attention_weights(model.Z, seq), model.M)
    return float(log_softmax(f @ model.Y)[seq[-1]])


def grad_YZ(model: ReparamModel, seq, eta_Y: float = 1.0, eta_Z: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Learning-rate-scaled ascent directions for Y and Z on one sequence.

    dY = eta_Y f (e_label - alpha)^T
    dZ = eta_Z e_q (e_label - alpha)^T Y^T P_perp(v) / ||v|| X^T diag(b) X,  v = X^T b
    """
    M = model.M
    ctx, q, label = _split(seq)
    b = softmax(model.Z[q, ctx])
    v = _aggregate(seq, b, M)
    nv = np.linalg.norm(v)
    f = v / nv
    alpha = softmax(f @ model.Y)
    r = -alpha
    r[label] += 1.0
    dY = eta_Y * np.outer(f, r)
    g = model.Y @ r
    g = (g - f * (f @ g)) / nv  # P_perp(v) is symmetric
    # row vector g^T X^T diag(b) X: contributions land on the context token columns
    row = np.zeros(M)
    np.add.at(row, ctx, b * g[ctx])
    dZ = np.zeros((M, M))
    dZ[q] = eta_Z * row
    return dY, dZ


@dataclass
class TrainRecord:
    steps: list = field(default_factory=list)
    train_probs: list = field(default_factory=list)  # per checkpoint: prob of the true label, per train seq
    test_probs: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)  # step -> Y copy
    train_tags: list = field(default_factory=list)
    test_tags: list = field(default_factory=list)
    row_updates: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def add(self, step: int, train_p, test_p):
        if self.steps and step <= self.steps[-1]:
            raise ValueError("checkpoint steps must increase")
        self.steps.append(int(step))
        self.train_probs.append(np.asarray(train_p, dtype=np.float64))
        self.test_probs.append(np.asarray(test_p, dtype=np.float64))

    def probs(self, split: str, tag: str | None = None) -> np.ndarray:
        """(checkpoints x sequences) label probabilities, optionally filtered by tag."""
        data = np.array(self.train_probs if split == "train" else self.test_probs)
        tags = self.train_tags if split == "train" else self.test_tags
        if tag is None:
            return data
        cols = [k for k, t in enumerate(tags) if t == tag]
        return data[:, cols] if data.size else data

    def mean_nll(self, split: str, tag: str | None = None) -> np.ndarray:
        p = self.probs(split, tag)
        if p.ndim < 2 or p.shape[1] == 0:
            return np.full(len(self.steps), np.nan)
        return -np.log(p).mean(axis=1)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "mean_train_nll", "mean_test_nll", "min_train_prob", "max_test_prob"])
            tr, te = self.mean_nll("train"), self.mean_nll("test")
            for k, s in enumerate(self.steps):
                mn = float(self.train_probs[k].min()) if self.train_probs[k].size else math.nan
                mx = float(self.test_probs[k].max()) if self.test_probs[k].size else math.nan
                w.writerow([s, repr(float(tr[k])), repr(float(te[k])), repr(mn), repr(mx)])
        return path


def _label_probs(prob_fn, seqs) -> np.ndarray:
    return np.array([prob_fn(s)[s[-1]] for s in seqs])


def _order(n: int, order: str, rng: Rng | None, epoch: int) -> np.ndarray:
    if order == "cyclic":
        return np.arange(n)
    if order == "shuffled":
        if rng is None:
            raise ValueError("shuffled order needs an rng")
        return rng.substream(f"epoch-{epoch}").permutation(n)
    raise ValueError(f"unknown order {order!r}")


def _schedule(checkpoint_every: int, snapshot_every: int | None):
    if checkpoint_every < 1:
        raise ValueError("checkpoint_every must be >= 1")
    return checkpoint_every, snapshot_every


def sgd_train(model: ReparamModel, dataset, eta_Y: float, eta_Z: float | None = None, steps: int = 1,
              order: str = "cyclic", checkpoint_every: int | None = None, snapshot_every: int | None = None,
              rng: Rng | None = None, live_z: bool = True) -> TrainRecord:
    """Batch-1 SGD ascent on log p(label) over ``dataset.train``; mutates ``model``.

    ``eta_Z`` defaults to 0 for three-token data and ``eta_Y / 100`` otherwise.
    With ``live_z=False`` attention weights are taken from a snapshot of Z
    refreshed at the start of every epoch (Z itself still trains).
    Checkpoints default to once per epoch, plus step 0.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    train = list(dataset.train)
    n = len(train)
    if n == 0:
        raise ValueError("empty training set")
    T = len(train[0]) - 1
    if eta_Z is None:
        eta_Z = 0.0 if T == 2 else eta_Y / 100.0
    checkpoint_every, snapshot_every = _schedule(checkpoint_every or n, snapshot_every)
    M = model.M
    rec = TrainRecord(train_tags=list(dataset.train_tags), test_tags=list(dataset.test_tags),
                      meta={"eta_Y": eta_Y, "eta_Z": eta_Z, "order": order, "N": n, "M": M})
    rec.row_updates = np.zeros(M, dtype=np.int64)

    def evaluate(step):
        rec.add(step, _label_probs(lambda s: next_token_prob(model, s), train),
                _label_probs(lambda s: next_token_prob(model, s), dataset.test))
        if snapshot_every and step % snapshot_every == 0:
            rec.snapshots[step] = model.Y.copy()

    evaluate(0)
    Z_att = model.Z
    perm = None
    for step in range(1, steps + 1):
        epoch, pos = divmod(step - 1, n)
        if pos == 0:
            perm = _order(n, order, rng, epoch)
            Z_att = model.Z if live_z else model.Z.copy()
        seq = train[perm[pos]]
        toks = _sparse_step(model, Z_att, seq, eta_Y, eta_Z)
        if toks is None:
            raise TrainingError(f"non-finite update at step {step} on sequence {seq}")
        rec.row_updates[toks] += 1
        if step % checkpoint_every == 0 or step == steps:
            evaluate(step)
    return rec


def _sparse_step(model: ReparamModel, Z_att: np.ndarray, seq, eta_Y: float, eta_Z: float):
    """One ascent step touching only the rows of Y owned by contextual tokens.

    Same arithmetic as :func:`grad_YZ` restricted to the nonzero support of
    the context vector; returns the updated Y rows, or None if the update is
    not finite (the model is then left untouched).
    """
    ctx, q, label = _split(seq)
    b = softmax(Z_att[q, ctx])
    toks, inv = np.unique(ctx, return_inverse=True)
    v = np.bincount(inv, weights=b, minlength=len(toks))
    nv = np.linalg.norm(v)
    f = v / nv
    Yc = model.Y[toks]
    alpha = softmax(f @ Yc)
    r = -alpha
    r[label] += 1.0
    dY = eta_Y * np.outer(f, r)
    dz = None
    if eta_Z:
        g = Yc @ r
        g = (g - f * (f @ g)) / nv
        dz = eta_Z * np.bincount(inv, weights=b * g[inv], minlength=len(toks))
    if not (np.all(np.isfinite(dY)) and (dz is None or np.all(np.isfinite(dz)))):
        return None
    model.Y[toks] += dY
    if dz is not None:
        model.Z[q, toks] += dz
    return toks


# -- four-token W-dynamics ---------------------------------------------------

@dataclass
class WModel:
    """W = F^T Y, one row per label token; F columns are unit context vectors."""

    W: np.ndarray  # (K, M)
    F: np.ndarray  # (M, K)
    labels: list  # row k of W belongs to the sequence whose label is labels[k]

    def __post_init__(self):
        norms = np.linalg.norm(self.F, axis=0)
        if not np.allclose(norms, 1.0, rtol=0, atol=1e-12):
            raise ValueError("context vectors must have unit l2 norm")
        self.row_of = {tok: k for k, tok in enumerate(self.labels)}
        if len(self.row_of) != len(self.labels):
            raise ValueError("each label token may own only one W row")

    @property
    def K(self) -> int:
        return self.W.shape[0]

    def prob(self, seq) -> np.ndarray:
        return softmax(self.W[self.row_of[seq[-1]]])


def context_matrix(dataset: FourTokenDataset, Z: np.ndarray) -> tuple[np.ndarray, list]:
    """F with one column per label, each the context vector of the sequence carrying that label."""
    seqs = list(dataset.train) + list(dataset.test)
    cols = [context_vector(s, attention_weights(Z, s), dataset.M) for s in seqs]
    return np.array(cols).T, [s[-1] for s in seqs]


def overlap_attention(dataset: FourTokenDataset, c: float) -> np.ndarray:
    """Z that makes every context vector sqrt(1-c^2) e_entity + c e_R1.

    The query R2 gives R1 the score ln(c / sqrt(1 - c^2)) and every entity 0.
    """
    if not 0 < c < 1:
        raise ValueError("c must lie in (0, 1)")
    Z = np.zeros((dataset.M, dataset.M))
    Z[dataset.R2, dataset.R1] = math.log(c / math.sqrt(1.0 - c * c))
    return Z


def w_model(dataset: FourTokenDataset, Z: np.ndarray | None = None) -> WModel:
    Z = np.zeros((dataset.M, dataset.M)) if Z is None else Z
    F, labels = context_matrix(dataset, Z)
    return WModel(np.zeros((len(labels), dataset.M)), F, labels)


def w_train(wm: WModel, dataset: FourTokenDataset, eta_Y: float, steps: int, order: str = "cyclic",
            checkpoint_every: int | None = None, snapshot_every: int | None = None,
            rng: Rng | None = None) -> TrainRecord:
    """Batch-1 ascent directly on W; only the label's row moves: w += eta (e_label - softmax(w))."""
    train = list(dataset.train)
    n = len(train)
    if steps < 1 or n == 0:
        raise ValueError("need steps >= 1 and a non-empty training set")
    checkpoint_every, snapshot_every = _schedule(checkpoint_every or n, snapshot_every)
    M = dataset.M
    rec = TrainRecord(train_tags=list(dataset.train_tags), test_tags=list(dataset.test_tags),
                      meta={"eta_Y": eta_Y, "order": order, "N": n, "M": M, "trainer": "W"})
    rec.row_updates = np.zeros(wm.K, dtype=np.int64)

    def evaluate(step):
        rec.add(step, _label_probs(wm.prob, train), _label_probs(wm.prob, dataset.test))
        if snapshot_every and step % snapshot_every == 0:
            rec.snapshots[step] = wm.W.copy()

    evaluate(0)
    perm = None
    for step in range(1, steps + 1):
        epoch, pos = divmod(step - 1, n)
        if pos == 0:
            perm = _order(n, order, rng, epoch)
        label = train[perm[pos]][-1]
        k = wm.row_of[label]
        r = -softmax(wm.W[k])
        r[label] += 1.0
        wm.W[k] += eta_Y * r
        rec.row_updates[k] += 1
        if step % checkpoint_every == 0 or step == steps:
            evaluate(step)
    return rec


def attention_overlap(F: np.ndarray, tol: float = 1e-10) -> tuple[np.ndarray, float]:
    """E = F^T F - I and its largest eigenvalue (power iteration)."""
    F = np.asarray(F, dtype=np.float64)
    if not np.allclose(np.linalg.norm(F, axis=0), 1.0, rtol=0, atol=1e-12):
        raise ValueError("context vectors must have unit l2 norm")
    E = F.T @ F - np.eye(F.shape[1])
    E = 0.5 * (E + E.T)
    return E, top_eigenvalue(E, tol=tol)


def neumann_correction(E: np.ndarray) -> np.ndarray:
    """E' = (I + E)^{-1} - I."""
    n = E.shape[0]
    return np.linalg.inv(np.eye(n) + E) - np.eye(n)


def w_equivalent_y_direction(F: np.ndarray, n: int) -> np.ndarray:
    """Left factor u = f_n + F E' e_n = F (I + E)^{-1} e_n of the Y update that reproduces a W update on row n.

    It satisfies F^T u = e_n, so eta u (e_n - alpha)^T added to Y changes only
    row n of W = F^T Y, by exactly eta (e_n - alpha)^T.
    """
    E = F.T @ F - np.eye(F.shape[1])
    return F[:, n] + F @ neumann_correction(E)[:, n]


# -- logit matrices ----------------------------------------------------------

def logit_report(model: ReparamModel, dataset) -> dict:
    """Blocks of Y ordered by pair index, laid out for weight heat maps.

    Reversal data gives ``train_fwd`` (Y[A_i, B_j]), ``train_rev`` (Y[B_i, A_j]),
    ``val_seen`` and ``val_unseen`` over the held-out pairs, where "seen" is
    the direction present in training. Chain-of-thought data gives the three
    A->B, B->C, A->C blocks for training and held-out triples.
    """
    Y = model.Y

    def block(rows, cols):
        return Y[np.ix_(rows, cols)].copy()

    if isinstance(dataset, ReversalDataset):
        A, B = dataset.A, dataset.B
        tr = dataset.I_train
        seen_in = [A[i] for i in dataset.I_test1] + [B[i] for i in dataset.I_test2]
        seen_out = [B[i] for i in dataset.I_test1] + [A[i] for i in dataset.I_test2]
        return {
            "train_fwd": (block([A[i] for i in tr], [B[i] for i in tr]), [A[i] for i in tr], [B[i] for i in tr]),
            "train_rev": (block([B[i] for i in tr], [A[i] for i in tr]), [B[i] for i in tr], [A[i] for i in tr]),
            "val_seen": (block(seen_in, seen_out), seen_in, seen_out),
            "val_unseen": (block(seen_out, seen_in), seen_out, seen_in),
        }
    if isinstance(dataset, CotDataset):
        out = {}
        for split, idx in (("train", dataset.I_train), ("val", dataset.I_test)):
            a = [dataset.A[i] for i in idx]
            b = [dataset.B[i] for i in idx]
            c = [dataset.C[i] for i in idx]
            out[f"{split}_ab"] = (block(a, b), a, b)
            out[f"{split}_bc"] = (block(b, c), b, c)
            out[f"{split}_ac"] = (block(a, c), a, c)
        return out
    raise TypeError(f"logit_report does not support {type(dataset).__name__}")


def logit_report_json(report: dict) -> dict:
    return {name: {"rows": [int(r) for r in rows], "cols": [int(c) for c in cols],
                   "values": [[float(v) for v in row] for row in mat]}
            for name, (mat, rows, cols) in report.items()}
