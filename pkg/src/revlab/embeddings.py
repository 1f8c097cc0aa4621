"""Gaussian token embeddings and Monte-Carlo checks of their concentration."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import NumericsError, Rng, gauss_matrix


@dataclass
class EmbeddingSet:
    V: np.ndarray  # (m, d), row i embeds token i

    def __post_init__(self):
        self.V = np.asarray(self.V, dtype=np.float64)
        if self.V.ndim != 2 or self.V.shape[0] < 1 or self.V.shape[1] < 1:
            raise ValueError(f"embedding matrix must be 2-D and non-empty, got {self.V.shape}")

    @property
    def m(self) -> int:
        return self.V.shape[0]

    @property
    def d(self) -> int:
        return self.V.shape[1]

    @classmethod
    def gaussian(cls, m: int, d: int, rng: Rng) -> "EmbeddingSet":
        """Rows i.i.d. N(0, I/d), so E||v||^2 = 1."""
        if m < 2 or d < 1:
            raise ValueError(f"need m >= 2 and d >= 1, got m={m}, d={d}")
        return cls(gauss_matrix(rng, m, d, 1.0 / d))

    @classmethod
    def one_hot(cls, m: int) -> "EmbeddingSet":
        return cls(np.eye(m))


def gram_matrix(E: EmbeddingSet) -> np.ndarray:
    G = E.V @ E.V.T
    return 0.5 * (G + G.T)


def check_almost_orthonormal(E: EmbeddingSet, eps: float) -> tuple[bool, float]:
    """Return ``(max_dev <= eps, max_dev)`` with max_dev = max |<v_i, v_j> - delta_ij|."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    dev = float(np.abs(gram_matrix(E) - np.eye(E.m)).max())
    return dev <= eps, dev


def min_dim_for_eps(n: int, eps: float, delta: float) -> int:
    """Smallest integer d with d >= 16 ln(2 n^2 / delta) / eps^2."""
    if n < 2 or not 0 < eps <= 1 or not 0 < delta < 1:
        raise ValueError("need n >= 2, eps in (0, 1] and delta in (0, 1)")
    return math.ceil(16.0 * math.log(2.0 * n * n / delta) / eps**2)


@dataclass
class TailCheck:
    t: int
    x: float
    trials: int
    upper_emp: float
    lower_emp: float
    bound: float

    def stderr(self, p: float) -> float:
        return math.sqrt(p * (1.0 - p) / self.trials)

    @property
    def passed(self) -> bool:
        slack = 3.0 * self.stderr(min(self.bound, 1.0))
        return self.upper_emp <= self.bound + slack and self.lower_emp <= self.bound + slack


def chi_sq_tail_check(t: int, x: float, trials: int, rng: Rng, chunk: int = 10_000) -> TailCheck:
    """Empirical frequencies of both chi-square tail events against exp(-x).

    Upper event: sum of t squared standard normals >= t + 2 sqrt(t x) + 2x.
    Lower event: the same sum <= t - 2 sqrt(t x).
    """
    if t < 1 or x < 0 or trials < 1:
        raise ValueError("need t >= 1, x >= 0, trials >= 1")
    hi = t + 2.0 * math.sqrt(t * x) + 2.0 * x
    lo = t - 2.0 * math.sqrt(t * x)
    n_hi = n_lo = 0
    done = 0
    while done < trials:
        k = min(chunk, trials - done)
        s = np.square(rng.normal(size=(k, t))).sum(axis=1)
        n_hi += int(np.count_nonzero(s >= hi))
        n_lo += int(np.count_nonzero(s <= lo))
        done += k
    return TailCheck(t, x, trials, n_hi / trials, n_lo / trials, math.exp(-x))


def almost_normal_check(d: int, v: float, trials: int, rng: Rng) -> tuple[float, float]:
    """Empirical P(| ||x||^2 - 1 | >= v) for x ~ N(0, I/d), and the bound 2 exp(-v^2 d / 16)."""
    if not 0 < v < 0.5:
        raise ValueError("v must lie in (0, 1/2)")
    sq = np.square(rng.normal(math.sqrt(1.0 / d), (trials, d))).sum(axis=1)
    return float(np.mean(np.abs(sq - 1.0) >= v)), 2.0 * math.exp(-v * v * d / 16.0)


def cosine_report(E: EmbeddingSet) -> np.ndarray:
    norms = np.linalg.norm(E.V, axis=1)
    if np.any(norms == 0):
        raise NumericsError(f"zero-norm embedding rows: {np.flatnonzero(norms == 0).tolist()}")
    U = E.V / norms[:, None]
    C = U @ U.T
    C = 0.5 * (C + C.T)
    np.fill_diagonal(C, 1.0)
    return C


def write_matrix_csv(C: np.ndarray, path, labels=None) -> Path:
    """Dense matrix as CSV; the header row carries the column token ids."""
    path = Path(path)
    labels = list(range(C.shape[1])) if labels is None else list(labels)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["token", *labels])
        for lab, row in zip(labels, C):
            w.writerow([lab, *(repr(float(v)) for v in row)])
    return path
