"""Run one configured experiment and write its self-describing artifact directory."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bilinear as bl
from .config import ExperimentConfig
from .datasets import build_bilinear_pairs, build_cot3, build_four_token, build_reversal3, dataset_to_dict
from .lemmas import lemma_suite
from .numerics import Rng
from .oracles import Check, cot_bound_report, reversal_bound_report, row_oracle_error
from .svg import render_svg_lines
from .transformer import (ReparamModel, attention_overlap, context_matrix, logit_report, logit_report_json,
                          overlap_attention, sgd_train, w_model, w_train)

log = logging.getLogger(__name__)

CURVES_HEADER = ["step", "metric", "value", "split"]
ORACLE_TOL = 1e-9
EXACT_TOL = 1e-12


@dataclass
class RunArtifacts:
    out_dir: Path
    config_hash: str
    files: dict = field(default_factory=dict)  # logical name -> path
    checks: list = field(default_factory=list)
    required: set | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if self.is_required(c))

    def is_required(self, c: Check) -> bool:
        return c.required if self.required is None else c.name in self.required


@dataclass
class _Result:
    checks: list
    dataset: dict | None = None
    curves: list = field(default_factory=list)  # (step, metric, value, split)
    logits: dict | None = None
    plots: dict = field(default_factory=dict)  # file name -> (curves, kwargs)
    extra: dict = field(default_factory=dict)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n"


def _curves_csv(rows, config_hash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash: {config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVES_HEADER)
    for step, metric, value, split in rows:
        w.writerow([int(step), metric, repr(float(value)), split])
    return buf.getvalue()


def read_curves_csv(path) -> list:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames != CURVES_HEADER:
        raise ValueError(f"{path}: expected header {','.join(CURVES_HEADER)}")
    return [(int(r["step"]), r["metric"], float(r["value"]), r["split"]) for r in reader]


def curves_to_series(rows, metric: str) -> tuple[list, dict]:
    """Pivot long-format rows into (steps, {split: values}) for one metric."""
    steps = sorted({s for s, m, _, _ in rows if m == metric})
    series = {}
    for s, m, v, split in rows:
        if m == metric:
            series.setdefault(split, {})[s] = v
    return steps, {k: [d.get(s, float("nan")) for s in steps] for k, d in series.items()}


def _record_curves(rec, splits_by_tag: bool = True) -> list:
    rows = []
    tr_nll, te_nll = rec.mean_nll("train"), rec.mean_nll("test")
    tags = [("train", t) for t in dict.fromkeys(rec.train_tags)] + [("test", t) for t in dict.fromkeys(rec.test_tags)]
    per_tag = {(sp, t): rec.mean_nll(sp, t) for sp, t in tags} if splits_by_tag else {}
    for k, step in enumerate(rec.steps):
        rows.append((step, "nll", tr_nll[k], "train"))
        if rec.test_probs[k].size:
            rows.append((step, "nll", te_nll[k], "test"))
        rows.append((step, "min_prob", float(rec.train_probs[k].min()), "train"))
        if rec.test_probs[k].size:
            rows.append((step, "max_prob", float(rec.test_probs[k].max()), "test"))
        for (sp, t), v in per_tag.items():
            rows.append((step, "nll", v[k], f"{sp}:{t}"))
    return rows


def _nll_plot(rows, title):
    steps, series = curves_to_series(rows, "nll")
    keep = {k: v for k, v in series.items() if k in ("train", "test")}
    return keep, {"x": steps, "title": title, "ylabel": "negative log-likelihood"}


def _zero_row_check(model: ReparamModel, ds) -> Check:
    nonzero = set(np.flatnonzero(np.any(model.Y != 0.0, axis=1)).tolist())
    firsts = {s[0] for s in ds.train}
    return Check("nonzero_rows_are_train_first_tokens", nonzero <= firsts,
                 {"nonzero_rows": len(nonzero), "train_first_tokens": len(firsts),
                  "unexpected": sorted(nonzero - firsts)[:10]})


def _run_reversal3(cfg: ExperimentConfig, rng: Rng) -> _Result:
    ds = build_reversal3(cfg.M, cfg.n_train, cfg.n_test1, cfg.n_test2, rng.substream("dataset"))
    model = ReparamModel.zeros(cfg.M)
    rec = sgd_train(model, ds, cfg.eta_y, cfg.eta_z, cfg.steps, cfg.order, cfg.checkpoint_every,
                    rng=rng.substream("shuffle"))
    N = len(ds.train)
    checks = reversal_bound_report(rec, cfg.M, N, cfg.eta_y, tol=EXACT_TOL)
    err = row_oracle_error(model.Y, {s[0]: s[-1] for s in ds.train}, rec.row_updates, cfg.eta_y)
    checks.append(Check("row_oracle_equivalence", err <= ORACLE_TOL, {"max_rel_err": err, "tol": ORACLE_TOL}))
    checks.append(_zero_row_check(model, ds))
    final = float(rec.train_probs[-1].min())
    checks.append(Check("train_prob_final", final >= 0.99, {"min_train_prob": final, "target": 0.99}))
    rows = _record_curves(rec)
    return _Result(checks, dataset_to_dict(ds), rows, logit_report_json(logit_report(model, ds)),
                   {"curves.svg": _nll_plot(rows, "reversal: train vs. held-out direction")})


def _run_cot3(cfg: ExperimentConfig, rng: Rng) -> _Result:
    ds = build_cot3(cfg.M, cfg.n_train, cfg.n_test, rng.substream("dataset"))
    model = ReparamModel.zeros(cfg.M)
    rec = sgd_train(model, ds, cfg.eta_y, cfg.eta_z, cfg.steps, cfg.order, cfg.checkpoint_every,
                    rng=rng.substream("shuffle"))
    N = len(ds.train)
    checks = cot_bound_report(rec, cfg.M, N, cfg.eta_y, tol=EXACT_TOL)
    rows_tr = {ds.A[i]: ds.B[i] for i in ds.I_test} | {ds.B[i]: ds.C[i] for i in ds.I_test + ds.I_train}
    err = row_oracle_error(model.Y, rows_tr, rec.row_updates, cfg.eta_y)
    checks.append(Check("row_oracle_equivalence", err <= ORACLE_TOL, {"max_rel_err": err, "tol": ORACLE_TOL}))
    checks.append(_zero_row_check(model, ds))
    rows = _record_curves(rec)
    steps, series = curves_to_series(rows, "nll")
    fam = {k.split(":", 1)[1]: v for k, v in series.items() if ":" in k}
    plot = ({k: fam[k] for k in ("ab/test", "bc/test", "ac/test") if k in fam},
            {"x": steps, "title": "chain of thought: held-out triples", "ylabel": "negative log-likelihood"})
    return _Result(checks, dataset_to_dict(ds), rows, logit_report_json(logit_report(model, ds)),
                   {"curves.svg": plot, "curves_all.svg": _nll_plot(rows, "chain of thought: all sequences")})


def _run_four_token(cfg: ExperimentConfig, rng: Rng) -> _Result:
    ds = build_four_token(cfg.M, cfg.n_train, cfg.n_test, rng.substream("dataset"))
    Z = overlap_attention(ds, cfg.overlap_c) if cfg.overlap_c is not None else np.zeros((cfg.M, cfg.M))
    checks = []
    F, _ = context_matrix(ds, Z)
    E, lam = attention_overlap(F)
    extra = {"lambda1": lam}
    if cfg.overlap_c is not None:
        predicted = cfg.overlap_c**2 * (F.shape[1] - 1)
        checks.append(Check("overlap_top_eigenvalue", abs(lam - predicted) <= 1e-10,
                            {"lambda1": lam, "predicted": predicted, "N": F.shape[1]}))
    if cfg.trainer == "w":
        wm = w_model(ds, Z)
        rec = w_train(wm, ds, cfg.eta_y, cfg.steps, cfg.order, cfg.checkpoint_every, rng=rng.substream("shuffle"))
        dev = float(np.abs(rec.probs("test") - 1.0 / cfg.M).max())
        checks.append(Check("test_prob_uniform", dev <= EXACT_TOL, {"max_abs_dev_from_1_over_M": dev}))
        train_rows = {wm.row_of[s[-1]]: s[-1] for s in ds.train}
        err = row_oracle_error(wm.W, train_rows, rec.row_updates, cfg.eta_y)
        checks.append(Check("row_oracle_equivalence", err <= ORACLE_TOL, {"max_rel_err": err, "tol": ORACLE_TOL}))
    else:
        model = ReparamModel(np.zeros((cfg.M, cfg.M)), Z.copy())
        rec = sgd_train(model, ds, cfg.eta_y, cfg.eta_z, cfg.steps, cfg.order, cfg.checkpoint_every,
                        rng=rng.substream("shuffle"), live_z=cfg.live_z)
        test_max = float(rec.probs("test").max())
        checks.append(Check("test_prob_max", test_max <= 2.0 / cfg.M,
                            {"max_test_prob": test_max, "uniform": 1.0 / cfg.M}, required=False))
    final = float(rec.train_probs[-1].min())
    checks.append(Check("train_prob_final", final >= 0.99, {"min_train_prob": final, "target": 0.99},
                        required=cfg.trainer == "w"))
    rows = _record_curves(rec)
    return _Result(checks, dataset_to_dict(ds), rows, None,
                   {"curves.svg": _nll_plot(rows, "four-token reversal")}, extra)


def _run_bilinear(cfg: ExperimentConfig, rng: Rng) -> _Result:
    D = build_bilinear_pairs(cfg.m, cfg.n, cfg.d, rng.substream("dataset"))
    P0 = bl.init_theta("gaussian", cfg.sigma, rng.substream("init"), cfg.d)
    L0 = bl.forward_loss(P0, D)
    target = cfg.target_ratio * L0
    traj = bl.integrate_flow(P0, D, cfg.dt, cfg.max_steps, cfg.flow_checkpoint_every, cfg.method, stop_loss=target)
    sep = bl.separation_check(traj, cfg.separation_eps)
    checks = [Check("separation", sep.holds, {"eps": cfg.separation_eps, "worst_margin": sep.worst_margin,
                                              "first_violation_time": sep.first_violation_time})]
    reached = traj.train_loss[-1] <= target
    detail = {"target_loss": target, "final_loss": traj.train_loss[-1]}
    if reached:
        tau, rev = bl.stop_time_and_floor(traj, target)
        floor = cfg.floor_ratio * traj.rev_loss[0]
        detail.update({"tau": tau, "rev_at_tau": rev, "floor": floor})
        checks.append(Check("reversal_floor", rev >= floor, detail))
    else:
        checks.append(Check("reversal_floor", False, detail))
    mono = bool(np.all(np.diff(traj.train_loss) <= 0))
    checks.append(Check("train_loss_nonincreasing", mono, {"checkpoints": len(traj.times)}))
    rows = []
    for step, t, a, b, p, r in zip(traj.steps, traj.times, traj.train_loss, traj.rev_loss,
                                   traj.min_train_prob, traj.rev_prob):
        rows += [(step, "time", t, "flow"), (step, "loss", a, "train"), (step, "loss", b, "reversal"),
                 (step, "min_prob", p, "train"), (step, "prob", r, "reversal")]
    steps, series = curves_to_series(rows, "loss")
    plot = (series, {"x": steps, "title": "bilinear model: forward vs. reversal loss", "ylabel": "loss"})
    return _Result(checks, dataset_to_dict(D), rows, None, {"curves.svg": plot},
                   {"dt_final": traj.dt_final, "L0": L0})


def _run_lemmas(cfg: ExperimentConfig, rng: Rng) -> _Result:
    rep = lemma_suite(cfg.seed, orthonormal_d=cfg.orthonormal_d, trials=cfg.chi_trials)
    checks = [Check(c["name"], c["passed"], c["detail"], c["required"]) for c in rep["checks"]]
    return _Result(checks)


RUNNERS = {"reversal3": _run_reversal3, "cot3": _run_cot3, "four_token": _run_four_token,
           "bilinear": _run_bilinear, "lemma_suite": _run_lemmas}


def default_out_dir(cfg: ExperimentConfig) -> Path:
    root = Path(os.environ.get("LAB_OUT_DIR", "runs"))
    return root / f"{cfg.kind}-seed{cfg.seed}-{cfg.hash()[:10]}"


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RunArtifacts:
    cfg = cfg.resolved()
    h = cfg.hash()
    out = Path(out_dir or cfg.out_dir or default_out_dir(cfg))
    out.mkdir(parents=True, exist_ok=True)
    log.info("running %s (seed %d) into %s", cfg.kind, cfg.seed, out)
    try:
        res = RUNNERS[cfg.kind](cfg, Rng(cfg.seed))
    except Exception as e:
        raise RuntimeError(f"{cfg.kind} run (seed {cfg.seed}, config {h[:10]}) failed: {e}") from e
    art = RunArtifacts(out, h, checks=res.checks, required=set(cfg.required) if cfg.required is not None else None)

    def write(name: str, text: str):
        p = out / name
        p.write_text(text)
        art.files[name] = p

    write("config.json", _dump_json({"config_hash": h, "config": cfg.snapshot()}))
    if res.dataset is not None:
        write("dataset.json", _dump_json({"config_hash": h, **res.dataset}))
    if res.curves:
        write("curves.csv", _curves_csv(res.curves, h))
    if res.logits is not None:
        write("logits.json", _dump_json({"config_hash": h, "matrices": res.logits}))
    write("oracle.json", _dump_json({
        "config_hash": h, "kind": cfg.kind, "passed": art.passed, "extra": res.extra,
        "checks": [{**c.to_dict(), "required": art.is_required(c)} for c in res.checks]}))
    for name, (series, kwargs) in res.plots.items():
        write(name, render_svg_lines(series, comment=f"config_hash: {h}", **kwargs))
    digests = {name: hashlib.sha256(p.read_bytes()).hexdigest() for name, p in sorted(art.files.items())}
    write("manifest.json", _dump_json({"config_hash": h, "kind": cfg.kind, "seed": cfg.seed, "files": digests}))
    return art


def regenerate_plots(run_dir) -> list:
    """Rebuild the NLL/loss SVG from a stored curves.csv."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    rows = read_curves_csv(run_dir / "curves.csv")
    metric = "loss" if manifest["kind"] == "bilinear" else "nll"
    steps, series = curves_to_series(rows, metric)
    out = []
    main = {k: v for k, v in series.items() if ":" not in k}
    p = run_dir / "curves.svg"
    p.write_text(render_svg_lines(main, x=steps, title=f"{manifest['kind']} curves", ylabel=metric,
                                  comment=f"config_hash: {manifest['config_hash']}"))
    out.append(p)
    tagged = {k: v for k, v in series.items() if ":" in k}
    if tagged:
        p = run_dir / "curves_by_family.svg"
        p.write_text(render_svg_lines(tagged, x=steps, title=f"{manifest['kind']} curves by family",
                                      ylabel=metric, comment=f"config_hash: {manifest['config_hash']}"))
        out.append(p)
    return out
