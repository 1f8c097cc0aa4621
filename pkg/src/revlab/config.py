"""Experiment configuration: JSON files validated into :class:`ExperimentConfig`."""

from __future__ import annotations

import dataclasses
import difflib
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

CONFIG_VERSION = 1
KINDS = ("reversal3", "cot3", "four_token", "bilinear", "lemma_suite")

# common spellings that difflib would not map on its own
ALIASES = {"lr": "eta_y", "learning_rate": "eta_y", "eta": "eta_y", "vocab": "M", "vocab_size": "M",
           "n_pairs": "n_train", "pairs": "n_train", "epochs_per_run": "epochs", "output": "out_dir"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    schema_version: int = CONFIG_VERSION
    # token-sequence runs
    M: int = 800
    n_train: int = 140
    n_test: int = 60
    n_test1: int | None = None
    n_test2: int | None = None
    eta_y: float = 0.5
    eta_z: float | None = None
    epochs: int | None = None
    steps: int | None = None
    checkpoint_every: int | None = None
    order: str = "cyclic"
    trainer: str = "w"
    overlap_c: float | None = 0.1
    live_z: bool = False
    # bilinear runs
    m: int = 64
    n: int = 8
    d: int = 512
    sigma: float = 1e-3
    dt: float = 0.1
    method: str = "euler"
    target_ratio: float = 0.01
    max_steps: int = 200_000
    flow_checkpoint_every: int = 50
    separation_eps: float = 0.1
    floor_ratio: float = 0.9
    # lemma suite
    orthonormal_d: int | None = None
    chi_trials: int = 100_000
    # bookkeeping
    required: list | None = None
    out_dir: str | None = None

    def resolved(self) -> "ExperimentConfig":
        """Copy with every derived default filled in."""
        c = dataclasses.replace(self)
        if c.kind == "reversal3":
            if c.n_test1 is None and c.n_test2 is None:
                c.n_test1 = c.n_test // 2
                c.n_test2 = c.n_test - c.n_test1
            elif c.n_test1 is None or c.n_test2 is None:
                raise ConfigError("give both n_test1 and n_test2, or neither")
            c.n_test = c.n_test1 + c.n_test2
        if c.kind in ("reversal3", "cot3", "four_token"):
            if c.steps is None:
                epochs = c.epochs if c.epochs is not None else 50 * math.ceil(math.log(c.M))
                c.epochs = epochs
                c.steps = epochs * self.train_size(c)
            if c.checkpoint_every is None:
                c.checkpoint_every = self.train_size(c)
        return c

    @staticmethod
    def train_size(c: "ExperimentConfig") -> int:
        if c.kind == "reversal3":
            return 2 * c.n_train + c.n_test1 + c.n_test2
        if c.kind == "cot3":
            return 3 * c.n_train + 2 * c.n_test
        if c.kind == "four_token":
            return 2 * c.n_train + c.n_test
        raise ConfigError(f"{c.kind} has no token training set")

    def snapshot(self) -> dict:
        """Resolved config as a plain dict, without the output location."""
        d = dataclasses.asdict(self.resolved())
        d.pop("out_dir")
        return d

    def hash(self) -> str:
        blob = json.dumps(self.snapshot(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _suggest(key: str) -> str:
    if key in ALIASES:
        return f'; did you mean "{ALIASES[key]}"?'
    close = difflib.get_close_matches(key, FIELDS, n=1)
    return f'; did you mean "{close[0]}"?' if close else ""


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _check_type(key: str, value):
    if value is None:
        if key in ("kind", "seed") or FIELDS[key].default is not None:
            raise ConfigError(f"{key}: may not be null")
        return
    default = FIELDS[key].default
    annot = str(FIELDS[key].type)
    if key == "kind":
        if value not in KINDS:
            raise ConfigError(f"kind: must be one of {', '.join(KINDS)}, got {value!r}")
    elif key == "required":
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError("required: must be a list of check names")
    elif key == "out_dir":
        if not isinstance(value, str):
            raise ConfigError("out_dir: must be a string")
    elif "bool" in annot:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: must be true or false")
    elif "int" in annot and "float" not in annot:
        if not _is_int(value):
            raise ConfigError(f"{key}: must be an integer, got {value!r}")
    elif "float" in annot:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{key}: must be a finite number, got {value!r}")
    elif isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key}: must be a string")


def _validate(c: ExperimentConfig):
    def positive(*names):
        for nm in names:
            v = getattr(c, nm)
            if v is not None and not v > 0:
                raise ConfigError(f"{nm}: must be positive, got {v}")

    def nonneg(*names):
        for nm in names:
            v = getattr(c, nm)
            if v is not None and v < 0:
                raise ConfigError(f"{nm}: must be nonnegative, got {v}")

    if c.schema_version != CONFIG_VERSION:
        raise ConfigError(f"schema_version: unsupported version {c.schema_version}")
    positive("eta_y", "epochs", "steps", "checkpoint_every", "M", "dt", "max_steps", "flow_checkpoint_every",
             "separation_eps", "target_ratio", "chi_trials", "orthonormal_d", "m", "n", "d")
    nonneg("eta_z", "n_train", "n_test", "n_test1", "n_test2", "sigma", "seed")
    if c.order not in ("cyclic", "shuffled"):
        raise ConfigError(f"order: must be 'cyclic' or 'shuffled', got {c.order!r}")
    if c.trainer not in ("w", "y"):
        raise ConfigError(f"trainer: must be 'w' or 'y', got {c.trainer!r}")
    if c.method not in ("euler", "rk4"):
        raise ConfigError(f"method: must be 'euler' or 'rk4', got {c.method!r}")
    if c.overlap_c is not None and not 0 < c.overlap_c < 1:
        raise ConfigError("overlap_c: must lie in (0, 1)")
    r = c.resolved()
    if c.kind == "reversal3":
        need = 2 * (r.n_train + r.n_test1 + r.n_test2) + 2
    elif c.kind == "cot3":
        need = 3 * (r.n_train + r.n_test) + 2
    elif c.kind == "four_token":
        need = 2 * (r.n_train + r.n_test) + 2
    else:
        need = 0
    if need > c.M:
        raise ConfigError(f"M: vocabulary of {c.M} tokens cannot hold the {need} tokens this dataset needs")
    if c.kind in ("reversal3", "cot3", "four_token") and ExperimentConfig.train_size(r) == 0:
        raise ConfigError("n_train/n_test: the training set would be empty")
    if c.kind == "bilinear" and 2 * c.n > c.m:
        raise ConfigError(f"n: 2n must not exceed m ({c.m})")


def config_from_dict(obj: dict) -> ExperimentConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    unknown = [k for k in obj if k not in FIELDS]
    if unknown:
        k = unknown[0]
        raise ConfigError(f'unknown key "{k}"{_suggest(k)}')
    for key in ("kind", "seed"):
        if key not in obj:
            raise ConfigError(f"{key}: is required")
    for k, v in obj.items():
        _check_type(k, v)
    cfg = ExperimentConfig(**obj)
    _validate(cfg)
    return cfg


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: malformed JSON at line {e.lineno}, column {e.colno}: {e.msg}") from None
    return config_from_dict(obj)


def with_overrides(cfg: ExperimentConfig, **overrides) -> ExperimentConfig:
    d = dataclasses.asdict(cfg)
    d.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(d)
