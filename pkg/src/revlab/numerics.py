"""Dense float64 kernel shared by every model in the package.

Everything here is a pure function of its inputs except :class:`Rng`, which
wraps a counter-based Philox generator keyed by ``(seed, label)`` so that
independent components (dataset, init, shuffle, ...) draw from independent,
reproducible substreams.
"""

from __future__ import annotations

import hashlib
from typing import Callable

import numpy as np

FD_STEP = 1e-5


class NumericsError(ValueError):
    pass


def _as_vec(v) -> np.ndarray:
    return np.asarray(v, dtype=np.float64)


def softmax(logits) -> np.ndarray:
    """Max-shifted softmax over the last axis."""
    z = _as_vec(logits)
    if z.size == 0 or z.shape[-1] == 0:
        raise NumericsError("softmax of an empty vector")
    if not np.all(np.isfinite(z)):
        raise NumericsError("softmax input contains non-finite entries")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = _as_vec(logits)
    if z.size == 0 or z.shape[-1] == 0:
        raise NumericsError("log_softmax of an empty vector")
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def l2_normalize(v) -> np.ndarray:
    v = _as_vec(v)
    norm = np.linalg.norm(v)
    if not norm > 0.0:
        raise NumericsError("cannot l2-normalize a zero vector")
    return v / norm


def one_hot(x: int, M: int) -> np.ndarray:
    if not 0 <= x < M:
        raise NumericsError(f"token {x} out of range for vocabulary of size {M}")
    e = np.zeros(M)
    e[x] = 1.0
    return e


def _philox_key(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}\x00{label}".encode()).digest()
    return int.from_bytes(digest[:16], "little")


class Rng:
    """Seeded generator with labelled substreams.

    ``Rng(7).substream("init")`` always yields the same bits, and never the
    same bits as ``Rng(7).substream("dataset")``.
    """

    def __init__(self, seed: int, label: str = ""):
        self.seed = int(seed)
        self.label = label
        self.generator = np.random.Generator(np.random.Philox(key=_philox_key(self.seed, label)))

    def substream(self, label: str) -> "Rng":
        return Rng(self.seed, f"{self.label}/{label}" if self.label else label)

    def normal(self, scale: float = 1.0, size=None) -> np.ndarray:
        return self.generator.normal(0.0, scale, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, label={self.label!r})"


def gauss_matrix(rng: Rng, rows: int, cols: int, variance: float) -> np.ndarray:
    """I.i.d. N(0, variance) entries."""
    if not variance > 0:
        raise NumericsError(f"variance must be positive, got {variance}")
    return rng.normal(np.sqrt(variance), (rows, cols))


def finite_diff_grad(f: Callable[[np.ndarray], float], X, h: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    if not h > 0:
        raise NumericsError("finite-difference step must be positive")
    X = np.array(X, dtype=np.float64)
    grad = np.zeros_like(X)
    flat = X.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = f(X)
        flat[k] = orig - h
        fm = f(X)
        flat[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericsError(f"non-finite function value at flat index {k}")
        gflat[k] = (fp - fm) / (2.0 * h)
    return grad


def rel_err(a, b) -> float:
    """Norm-wise relative error of ``a`` against reference ``b``."""
    a = _as_vec(a)
    b = _as_vec(b)
    denom = max(np.linalg.norm(b), np.finfo(float).tiny)
    return float(np.linalg.norm(a - b) / denom)


def top_eigenvalue(A, tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Largest (algebraic) eigenvalue of a symmetric matrix by power iteration.

    The matrix is shifted just past its Gershgorin radius so every eigenvalue is
    positive; the dominant eigenvalue of the shifted matrix is then the
    algebraically largest one of ``A``.
    """
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n):
        raise NumericsError("top_eigenvalue needs a square matrix")
    if not np.allclose(A, A.T, rtol=0, atol=1e-12):
        raise NumericsError("top_eigenvalue needs a symmetric matrix")
    radius = float(np.abs(A).sum(axis=1).max())
    if radius == 0.0:
        return 0.0
    shift = 1.001 * radius  # strictly positive definite, so B @ x never vanishes
    B = A + shift * np.eye(n)
    x = Rng(0, "power-iteration").normal(size=n)
    x /= np.linalg.norm(x)
    lam = float(x @ B @ x)
    for _ in range(max_iter):
        y = B @ x
        x = y / np.linalg.norm(y)
        lam_new = float(x @ B @ x)
        if abs(lam_new - lam) <= tol * 1e-2 and np.linalg.norm(B @ x - lam_new * x) <= tol:
            lam = lam_new
            break
        lam = lam_new
    else:
        raise NumericsError("power iteration did not converge")
    return lam - shift
