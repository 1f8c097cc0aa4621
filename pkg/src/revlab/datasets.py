"""Synthetic datasets for the reversal, chain-of-thought and four-token runs.

Token ids come from one random permutation of the vocabulary: entities are
sliced off the front, relation tokens take the last two slots. Pair indices
are 0-based; ``I_train`` is always ``0 .. N_train-1`` and the test index sets
follow it in order.

Every sequence is a tuple of token ids whose last entry is the label. Each
dataset also carries a parallel list of *tags* naming the family and index
set a sequence came from (``"fwd/train"``, ``"ac/test"``, ...), so trainers
and reports can slice curves without knowing the dataset layout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .embeddings import EmbeddingSet
from .numerics import Rng

SCHEMA_VERSION = 1

Sequence = tuple  # tuple[int, ...]; last token is the label


class DatasetError(ValueError):
    pass


def _check_capacity(needed: int, M: int, kind: str):
    if needed > M:
        raise DatasetError(f"{kind}: vocabulary of size {M} too small, need {needed} distinct tokens")


def _check_sizes(**sizes):
    for name, v in sizes.items():
        if int(v) != v or v < 0:
            raise DatasetError(f"{name} must be a nonnegative integer, got {v!r}")


@dataclass
class ReversalDataset:
    M: int
    A: list
    B: list
    fwd: int
    bwd: int
    I_train: list
    I_test1: list
    I_test2: list
    seed: Union[int, None] = None
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)
    train_tags: list = field(default_factory=list)
    test_tags: list = field(default_factory=list)

    kind = "reversal3"

    def __post_init__(self):
        if not self.train and not self.test:
            self._populate()

    def _populate(self):
        A, B, f, b = self.A, self.B, self.fwd, self.bwd
        for tag, idx, seq in (
            ("fwd/train", self.I_train, lambda i: (A[i], f, B[i])),
            ("bwd/train", self.I_train, lambda i: (B[i], b, A[i])),
            ("fwd/test1", self.I_test1, lambda i: (A[i], f, B[i])),
            ("bwd/test2", self.I_test2, lambda i: (B[i], b, A[i])),
        ):
            for i in idx:
                self.train.append(seq(i))
                self.train_tags.append(tag)
        for tag, idx, seq in (
            ("bwd/test1", self.I_test1, lambda i: (B[i], b, A[i])),
            ("fwd/test2", self.I_test2, lambda i: (A[i], f, B[i])),
        ):
            for i in idx:
                self.test.append(seq(i))
                self.test_tags.append(tag)

    def validate(self):
        n = len(self.A)
        if len(self.B) != n:
            raise DatasetError("A and B entity lists differ in length")
        tokens = [*self.A, *self.B, self.fwd, self.bwd]
        _check_capacity(len(tokens), self.M, self.kind)
        if len(set(tokens)) != len(tokens):
            raise DatasetError("entity and relation tokens must be pairwise distinct")
        if sorted([*self.I_train, *self.I_test1, *self.I_test2]) != list(range(n)):
            raise DatasetError("index sets must partition the pair indices")
        _validate_sequences(self, 3)
        if len(self.train) != 2 * len(self.I_train) + len(self.I_test1) + len(self.I_test2):
            raise DatasetError("train size does not match index sets")
        if len(self.test) != len(self.I_test1) + len(self.I_test2):
            raise DatasetError("test size does not match index sets")
        firsts = {s[0] for s in self.train}
        clash = [s for s in self.test if s[0] in firsts]
        if clash:
            raise DatasetError(f"test first tokens also start train sequences: {clash[:3]}")


@dataclass
class CotDataset:
    M: int
    A: list
    B: list
    C: list
    direct: int
    indirect: int
    I_train: list
    I_test: list
    seed: Union[int, None] = None
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)
    train_tags: list = field(default_factory=list)
    test_tags: list = field(default_factory=list)

    kind = "cot3"

    def __post_init__(self):
        if not self.train and not self.test:
            self._populate()

    def _populate(self):
        A, B, C, r, s = self.A, self.B, self.C, self.direct, self.indirect
        ab = lambda i: (A[i], r, B[i])  # noqa: E731
        bc = lambda i: (B[i], r, C[i])  # noqa: E731
        ac = lambda i: (A[i], s, C[i])  # noqa: E731
        for tag, idx, seq in (
            ("ab/train", self.I_train, ab),
            ("bc/train", self.I_train, bc),
            ("ac/train", self.I_train, ac),
            ("ab/test", self.I_test, ab),
            ("bc/test", self.I_test, bc),
        ):
            for i in idx:
                self.train.append(seq(i))
                self.train_tags.append(tag)
        for i in self.I_test:
            self.test.append(ac(i))
            self.test_tags.append("ac/test")

    def validate(self):
        n = len(self.A)
        if not len(self.B) == len(self.C) == n:
            raise DatasetError("A, B, C entity lists differ in length")
        tokens = [*self.A, *self.B, *self.C, self.direct, self.indirect]
        _check_capacity(len(tokens), self.M, self.kind)
        if len(set(tokens)) != len(tokens):
            raise DatasetError("entity and relation tokens must be pairwise distinct")
        if sorted([*self.I_train, *self.I_test]) != list(range(n)):
            raise DatasetError("index sets must partition the triple indices")
        _validate_sequences(self, 3)
        if len(self.train) != 3 * len(self.I_train) + 2 * len(self.I_test):
            raise DatasetError("train size does not match index sets")
        if len(self.test) != len(self.I_test):
            raise DatasetError("test size does not match index sets")
        held_out = {self.A[i] for i in self.I_test}
        leaks = [s for s in self.train if s[0] in held_out and s[1] == self.indirect]
        if leaks:
            raise DatasetError(f"indirect relation leaks into train for held-out triples: {leaks[:3]}")


@dataclass
class FourTokenDataset:
    M: int
    A: list
    B: list
    R1: int
    R2: int
    I_train: list
    I_test: list
    seed: Union[int, None] = None
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)
    train_tags: list = field(default_factory=list)
    test_tags: list = field(default_factory=list)

    kind = "four_token"

    def __post_init__(self):
        if not self.train and not self.test:
            self._populate()

    def _populate(self):
        A, B, r1, r2 = self.A, self.B, self.R1, self.R2
        for tag, idx, seq in (
            ("fwd/train", self.I_train, lambda i: (A[i], r1, r2, B[i])),
            ("bwd/train", self.I_train, lambda i: (B[i], r1, r2, A[i])),
            ("fwd/test", self.I_test, lambda i: (A[i], r1, r2, B[i])),
        ):
            for i in idx:
                self.train.append(seq(i))
                self.train_tags.append(tag)
        for i in self.I_test:
            self.test.append((B[i], r1, r2, A[i]))
            self.test_tags.append("bwd/test")

    @property
    def labels(self) -> list:
        """Label token of every train then test sequence; each entity appears once."""
        return [s[-1] for s in self.train] + [s[-1] for s in self.test]

    def validate(self):
        n = len(self.A)
        if len(self.B) != n:
            raise DatasetError("A and B entity lists differ in length")
        tokens = [*self.A, *self.B, self.R1, self.R2]
        _check_capacity(len(tokens), self.M, self.kind)
        if len(set(tokens)) != len(tokens):
            raise DatasetError("entity and relation tokens must be pairwise distinct")
        if sorted([*self.I_train, *self.I_test]) != list(range(n)):
            raise DatasetError("index sets must partition the pair indices")
        _validate_sequences(self, 4)
        if len(self.train) != 2 * len(self.I_train) + len(self.I_test):
            raise DatasetError("train size does not match index sets")
        if len(self.test) != len(self.I_test):
            raise DatasetError("test size does not match index sets")


@dataclass
class BilinearPairs:
    embeddings: EmbeddingSet
    X: list
    Y: list
    seed: Union[int, None] = None

    kind = "bilinear"

    @property
    def n(self) -> int:
        return len(self.X)

    @property
    def m(self) -> int:
        return self.embeddings.m

    @property
    def train(self) -> list:
        """(x_i, y_i) for every i, then (y_i, x_i) for i >= 1 (0-based)."""
        return [(x, y) for x, y in zip(self.X, self.Y)] + [(y, x) for x, y in zip(self.X[1:], self.Y[1:])]

    @property
    def test(self) -> list:
        return [(self.Y[0], self.X[0])]

    def validate(self):
        if len(self.X) != len(self.Y) or not self.X:
            raise DatasetError("X and Y must be non-empty and of equal length")
        if set(self.X) & set(self.Y):
            raise DatasetError("X and Y token sets must be disjoint")
        if len(set(self.X)) != len(self.X) or len(set(self.Y)) != len(self.Y):
            raise DatasetError("X and Y tokens must be distinct")
        bad = [t for t in (*self.X, *self.Y) if not 0 <= t < self.m]
        if bad:
            raise DatasetError(f"tokens out of range for m={self.m}: {bad[:5]}")


Dataset = Union[ReversalDataset, CotDataset, FourTokenDataset, BilinearPairs]


def _validate_sequences(ds, length: int):
    for split in ("train", "test"):
        seqs = getattr(ds, split)
        tags = getattr(ds, f"{split}_tags")
        if len(tags) != len(seqs):
            raise DatasetError(f"{split}: {len(seqs)} sequences but {len(tags)} tags")
        for k, s in enumerate(seqs):
            if len(s) != length:
                raise DatasetError(f"{split}[{k}]: expected length {length}, got {len(s)}")
            for tok in s:
                if not 0 <= tok < ds.M:
                    raise DatasetError(f"{split}[{k}]: token {tok} out of range for M={ds.M}")


def _ints(a) -> list:
    return [int(v) for v in a]


def build_reversal3(M: int, N_train: int, N_test1: int, N_test2: int, rng: Rng) -> ReversalDataset:
    _check_sizes(N_train=N_train, N_test1=N_test1, N_test2=N_test2)
    N = N_train + N_test1 + N_test2
    _check_capacity(2 * N + 2, M, "reversal3")
    perm = _ints(rng.permutation(M))
    ds = ReversalDataset(
        M=M, A=perm[:N], B=perm[N:2 * N], fwd=perm[-2], bwd=perm[-1],
        I_train=list(range(N_train)),
        I_test1=list(range(N_train, N_train + N_test1)),
        I_test2=list(range(N_train + N_test1, N)),
        seed=rng.seed,
    )
    ds.validate()
    return ds


def build_cot3(M: int, N_train: int, N_test: int, rng: Rng) -> CotDataset:
    _check_sizes(N_train=N_train, N_test=N_test)
    N = N_train + N_test
    _check_capacity(3 * N + 2, M, "cot3")
    perm = _ints(rng.permutation(M))
    ds = CotDataset(
        M=M, A=perm[:N], B=perm[N:2 * N], C=perm[2 * N:3 * N], direct=perm[-2], indirect=perm[-1],
        I_train=list(range(N_train)), I_test=list(range(N_train, N)), seed=rng.seed,
    )
    ds.validate()
    return ds


def build_four_token(M: int, N_train: int, N_test: int, rng: Rng) -> FourTokenDataset:
    _check_sizes(N_train=N_train, N_test=N_test)
    N = N_train + N_test
    _check_capacity(2 * N + 2, M, "four_token")
    perm = _ints(rng.permutation(M))
    ds = FourTokenDataset(
        M=M, A=perm[:N], B=perm[N:2 * N], R1=perm[-2], R2=perm[-1],
        I_train=list(range(N_train)), I_test=list(range(N_train, N)), seed=rng.seed,
    )
    ds.validate()
    return ds


def build_bilinear_pairs(m: int, n: int, d: int, rng: Rng) -> BilinearPairs:
    if n < 1 or 2 * n > m:
        raise DatasetError(f"bilinear: need 1 <= n and 2n <= m, got n={n}, m={m}")
    if d < 1:
        raise DatasetError("bilinear: d must be >= 1")
    E = EmbeddingSet.gaussian(m, d, rng.substream("embeddings"))
    perm = _ints(rng.substream("pairs").permutation(m))
    ds = BilinearPairs(E, X=perm[:n], Y=perm[n:2 * n], seed=rng.seed)
    ds.validate()
    return ds


# -- serialization -----------------------------------------------------------

_FIELDS = {
    "reversal3": ("A", "B", "fwd", "bwd", "I_train", "I_test1", "I_test2"),
    "cot3": ("A", "B", "C", "direct", "indirect", "I_train", "I_test"),
    "four_token": ("A", "B", "R1", "R2", "I_train", "I_test"),
}
_CLASSES = {"reversal3": ReversalDataset, "cot3": CotDataset, "four_token": FourTokenDataset}


def dataset_to_dict(ds: Dataset) -> dict:
    if isinstance(ds, BilinearPairs):
        return {
            "schema_version": SCHEMA_VERSION, "kind": ds.kind, "m": ds.m, "d": ds.embeddings.d,
            "seed": ds.seed, "X": list(ds.X), "Y": list(ds.Y),
            "embeddings": [[float(v) for v in row] for row in ds.embeddings.V],
            "train": [list(s) for s in ds.train], "test": [list(s) for s in ds.test],
        }
    out = {"schema_version": SCHEMA_VERSION, "kind": ds.kind, "M": ds.M, "seed": ds.seed}
    for name in _FIELDS[ds.kind]:
        out[name] = getattr(ds, name)
    out["train"] = [list(s) for s in ds.train]
    out["train_tags"] = list(ds.train_tags)
    out["test"] = [list(s) for s in ds.test]
    out["test_tags"] = list(ds.test_tags)
    return out


def dumps_dataset(ds: Dataset) -> str:
    return json.dumps(dataset_to_dict(ds), indent=1) + "\n"


def save_dataset(ds: Dataset, path) -> Path:
    path = Path(path)
    path.write_text(dumps_dataset(ds))
    return path


def _require(obj: dict, key: str, typ, where: str):
    if key not in obj:
        raise DatasetError(f"{where}: missing field {key!r}")
    v = obj[key]
    if typ is int and (isinstance(v, bool) or not isinstance(v, int)):
        raise DatasetError(f"{where}: field {key!r} must be an integer, got {v!r}")
    if typ is list and not isinstance(v, list):
        raise DatasetError(f"{where}: field {key!r} must be a list")
    return v


def _int_list(obj, key, where) -> list:
    v = _require(obj, key, list, where)
    for k, t in enumerate(v):
        if isinstance(t, bool) or not isinstance(t, int):
            raise DatasetError(f"{where}: {key}[{k}] must be an integer, got {t!r}")
    return v


def dataset_from_dict(obj: dict, where: str = "<dict>") -> Dataset:
    if not isinstance(obj, dict):
        raise DatasetError(f"{where}: top level must be a JSON object")
    version = _require(obj, "schema_version", int, where)
    if version != SCHEMA_VERSION:
        raise DatasetError(f"{where}: unsupported schema_version {version}")
    kind = obj.get("kind")
    seed = obj.get("seed")
    if kind == "bilinear":
        V = np.array(_require(obj, "embeddings", list, where), dtype=np.float64)
        m, d = _require(obj, "m", int, where), _require(obj, "d", int, where)
        if V.shape != (m, d):
            raise DatasetError(f"{where}: embeddings shape {V.shape} does not match header (m={m}, d={d})")
        ds = BilinearPairs(EmbeddingSet(V), _int_list(obj, "X", where), _int_list(obj, "Y", where), seed=seed)
        try:
            ds.validate()
        except DatasetError as e:
            raise DatasetError(f"{where}: {e}") from None
        return ds
    if kind not in _FIELDS:
        raise DatasetError(f"{where}: unknown dataset kind {kind!r}")
    M = _require(obj, "M", int, where)
    kwargs = {"M": M, "seed": seed}
    for name in _FIELDS[kind]:
        if name.startswith("I_") or name in ("A", "B", "C"):
            kwargs[name] = _int_list(obj, name, where)
        else:
            kwargs[name] = _require(obj, name, int, where)
    for split in ("train", "test"):
        seqs = _require(obj, split, list, where)
        out = []
        for k, s in enumerate(seqs):
            if not isinstance(s, list) or any(isinstance(t, bool) or not isinstance(t, int) for t in s):
                raise DatasetError(f"{where}: {split}[{k}] must be a list of integers")
            out.append(tuple(s))
        kwargs[split] = out
        kwargs[f"{split}_tags"] = list(_require(obj, f"{split}_tags", list, where))
    file_seqs = {k: kwargs.pop(k) for k in ("train", "test", "train_tags", "test_tags")}
    ds = _CLASSES[kind](**kwargs)
    try:
        ds.validate()
    except DatasetError as e:
        raise DatasetError(f"{where}: {e}") from None
    for key, expected in file_seqs.items():
        actual = getattr(ds, key)
        if actual != expected:
            k = next((i for i, (a, b) in enumerate(zip(actual, expected)) if a != b), min(len(actual), len(expected)))
            raise DatasetError(f"{where}: {key}[{k}] does not match the entity maps and index sets")
    return ds


def load_dataset(path) -> Dataset:
    path = Path(path)
    text = path.read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path}: malformed JSON at line {e.lineno}, column {e.colno}: {e.msg}") from None
    return dataset_from_dict(obj, str(path))
