"""Experiment orchestration: roster training, attack sweeps, transfer and reports.

Layout of an output directory::

    models/<kind>-s<seed>.pnbw        trained weights (+ .loss.csv trace)
    attacks/<threat>/<cell>.npz       generated attacks (x_clean, x_final, ...)
    cells/<threat>/<cell>.npz         scores behind one DetectionReport
    report/                           JSON, CSV and histogram outputs

Whitebox artifacts are the only input to blackbox runs.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attacks import EVADE, UNTARGETED, AttackConfig, attack, success_predicate
from .config import (
    BLACKBOX,
    DNN,
    EVADE_BLACKBOX,
    EVADE_WHITEBOX,
    MCDP,
    WHITEBOX,
    ExperimentConfig,
)
from .estimators import MCDropoutClassifier, PriorNetworkClassifier, SoftmaxClassifier
from .exceptions import ModelFileError, PnbenchError
from .losses import write_loss_trace
from .metrics import roc
from .models import load_model, save_model

logger = logging.getLogger(__name__)

_MODE_OF = {WHITEBOX: UNTARGETED, BLACKBOX: UNTARGETED, EVADE_WHITEBOX: EVADE, EVADE_BLACKBOX: EVADE}
_SOURCE_OF = {BLACKBOX: WHITEBOX, EVADE_BLACKBOX: EVADE_WHITEBOX}
_TINY_SCORE = 1e-12


@dataclass
class ResultCell:
    threat: str
    model: str
    seed: int
    family: str
    mode: str
    epsilon: float
    iterations: int
    source_seed: int | None = None
    natural_scores: np.ndarray | None = field(default=None, repr=False)
    attack_scores: np.ndarray | None = field(default=None, repr=False)
    success: np.ndarray | None = field(default=None, repr=False)
    error: str | None = None

    @property
    def cell_id(self):
        src = "" if self.source_seed is None else f"-from{self.source_seed}"
        return (f"{self.threat}__{self.model}__s{self.seed}{src}__{self.family}__{self.mode}"
                f"__eps{self.epsilon!r}__it{self.iterations}")

    @property
    def ok(self):
        return self.error is None

    @property
    def report(self):
        if not self.ok:
            return None
        return roc(self.natural_scores, self.attack_scores, self.success)

    def meta(self):
        return {"threat": self.threat, "model": self.model, "seed": self.seed,
                "source_seed": self.source_seed, "family": self.family, "mode": self.mode,
                "epsilon": self.epsilon, "iterations": self.iterations, "error": self.error}

    def save(self, path):
        arrays = {}
        if self.ok:
            arrays = {"natural_scores": self.natural_scores, "attack_scores": self.attack_scores,
                      "success": self.success}
        np.savez(path, meta=np.array(json.dumps(self.meta(), sort_keys=True)), **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            arrays = {k: z[k] for k in ("natural_scores", "attack_scores", "success") if k in z}
        return cls(**meta, **arrays)


# ---------------------------------------------------------------- workspace


class Workspace:
    def __init__(self, out_dir):
        self.root = str(out_dir)

    def path(self, *parts):
        p = os.path.join(self.root, *parts)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        return p

    def model_path(self, kind, seed):
        return self.path("models", f"{kind}-s{seed}.pnbw")

    def artifact_path(self, threat, cell_id):
        return self.path("attacks", threat, f"{cell_id}.npz")

    def cell_path(self, threat, cell_id):
        return self.path("cells", threat, f"{cell_id}.npz")

    def list_dir(self, *parts):
        d = os.path.join(self.root, *parts)
        if not os.path.isdir(d):
            return []
        return sorted(os.path.join(d, f) for f in os.listdir(d) if f.endswith(".npz"))


def _workspace(config, out_dir=None):
    return Workspace(out_dir or config.out_dir)


# ---------------------------------------------------------------- roster


_NET_PARAMS = {"n_samples", "attack_samples"}


def _estimator_params(spec):
    return {k: v for k, v in spec.params.items() if k not in _NET_PARAMS}


def _make_estimator(spec, seed):
    params = dict(_estimator_params(spec), uncertainty_measure=spec.measure, random_state=seed)
    if spec.kind == DNN:
        return SoftmaxClassifier(**params)
    return PriorNetworkClassifier(**params)


def _wrap_network(config, kind, seed, network):
    spec = config.spec(kind)
    params = dict(_estimator_params(spec), uncertainty_measure=spec.measure, random_state=seed)
    if kind == DNN:
        return SoftmaxClassifier.from_network(network, **params)
    return PriorNetworkClassifier.from_network(network, **params)


def _mcdp(config, seed, dnn):
    spec = config.spec(MCDP)
    return MCDropoutClassifier.from_fitted(
        dnn, n_samples=spec.params["n_samples"], attack_samples=spec.params["attack_samples"],
        uncertainty_measure=spec.measure, random_state=seed)


class Roster:
    """Trained estimators keyed by (kind, seed).  MCDP shares its base DNN's weights."""

    def __init__(self, config, networks):
        self.config = config
        self.networks = networks

    def keys(self):
        out = []
        for spec in self.config.roster:
            out.extend((spec.kind, s) for s in spec.seeds)
        return out

    def estimator(self, kind, seed):
        """A fresh estimator around a private copy of the weights."""
        if kind == MCDP:
            base = self.config.spec(MCDP).base
            return _mcdp(self.config, seed, self.estimator(base, seed))
        return _wrap_network(self.config, kind, seed, self.networks[(kind, seed)].copy())


def train_roster(config, out_dir=None, retrain=False):
    """Train (or load cached) weights for every non-MCDP roster entry.

    Returns ``(roster, failures)`` where failures is a list of messages.
    """
    ws = _workspace(config, out_dir)
    train, _, ood_train, _ = config.dataset.build()
    networks, failures = {}, []
    for spec in config.roster:
        if spec.kind == MCDP:
            continue
        for seed in spec.seeds:
            path = ws.model_path(spec.kind, seed)
            if not retrain and os.path.exists(path):
                try:
                    networks[(spec.kind, seed)] = load_model(path)
                    continue
                except ModelFileError as exc:
                    logger.warning("retraining %s seed %d: %s", spec.kind, seed, exc)
            est = _make_estimator(spec, seed)
            try:
                if spec.kind == DNN:
                    est.fit(train.inputs, train.labels)
                else:
                    est.fit(train.inputs, train.labels, ood_train.inputs)
            except PnbenchError as exc:
                failures.append(f"train {spec.kind} seed {seed}: {exc}")
                continue
            save_model(est.network_, path)
            write_loss_trace(est.loss_curve_, path[: -len(".pnbw")] + ".loss.csv")
            networks[(spec.kind, seed)] = est.network_
    return Roster(config, networks), failures


def _available(roster, kind, seed):
    base = roster.config.spec(MCDP).base if kind == MCDP else kind
    return (base, seed) in roster.networks


# ---------------------------------------------------------------- execution


def _pool_map(fn, tasks, workers):
    """Ordered map over ``tasks`` on a bounded pool; results come back in task order."""
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


class _NaturalCache:
    def __init__(self, roster, x):
        self.roster, self.x, self.values = roster, x, {}

    def get(self, kind, seed, est):
        key = (kind, seed)
        if key not in self.values:
            self.values[key] = est.uncertainty(self.x)
        return self.values[key]


def _failed(threat, kind, seed, point, mode, exc, source=None):
    fam, eps, it = point
    return ResultCell(threat, kind, seed, fam, mode, eps, it, source, error=f"{type(exc).__name__}: {exc}")


def _generate(config, roster, threat, points, out_dir=None):
    ws = _workspace(config, out_dir)
    _, test, _, _ = config.dataset.build()
    x = test.inputs
    mode = _MODE_OF[threat]
    grid = config.attacks if threat == WHITEBOX else config.evade
    tasks = [(kind, seed, p) for kind, seed in roster.keys() for p in points]
    naturals = {}
    for kind, seed in roster.keys():
        if _available(roster, kind, seed):
            naturals[(kind, seed)] = roster.estimator(kind, seed).uncertainty(x)

    def run(task):
        kind, seed, (fam, eps, it) = task
        cell = ResultCell(threat, kind, seed, fam, mode, eps, it)
        if not _available(roster, kind, seed):
            cell.error = "model not trained"
            return cell, None
        try:
            est = roster.estimator(kind, seed)
            cfg = AttackConfig(family=fam, epsilon=eps, iterations=it, momentum=grid.momentum,
                               step_size=grid.step_size, mode=mode)
            out = attack(est, x, cfg)
            cell.natural_scores = naturals[(kind, seed)]
            cell.attack_scores = est.uncertainty(out.x_final)
            cell.success = out.success
            return cell, out
        except PnbenchError as exc:
            return _failed(threat, kind, seed, (fam, eps, it), mode, exc), None

    cells = []
    for cell, out in _pool_map(run, tasks, config.workers):
        if out is not None:
            path = ws.artifact_path(threat, cell.cell_id)
            np.savez(path, x_clean=out.x_clean, x_final=out.x_final, success=out.success,
                     target_class=out.target_class, meta=np.array(json.dumps(cell.meta(), sort_keys=True)))
            write_artifact_csv(out, path[: -len(".npz")] + ".csv")
        cell.save(ws.cell_path(threat, cell.cell_id))
        cells.append(cell)
    return cells


def write_artifact_csv(outcome, path):
    """One row per attacked input; adversarial columns are empty for the failure marker."""
    cfg = outcome.config
    d = outcome.x_clean.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "mode", "family", "epsilon", "iterations", "success", "target_class"]
                   + [f"clean_{j}" for j in range(d)] + [f"adv_{j}" for j in range(d)])
        for i, x_adv in enumerate(outcome.x_adv):
            adv = [""] * d if x_adv is None else [_num(v) for v in x_adv]
            w.writerow([i, cfg.mode, cfg.family, _num(cfg.epsilon), outcome.iterations,
                        int(outcome.success[i]), int(outcome.target_class[i])]
                       + [_num(v) for v in outcome.x_clean[i]] + adv)


def run_whitebox(config, roster=None, out_dir=None):
    """Untargeted attacks against each model-seed, scored by the same model-seed."""
    roster = roster or train_roster(config, out_dir)[0]
    return _generate(config, roster, WHITEBOX, config.attacks.points(), out_dir)


def run_detection_evading(config, roster=None, out_dir=None):
    """Detection-evading attacks swept over iteration counts at a fixed epsilon."""
    roster = roster or train_roster(config, out_dir)[0]
    return _generate(config, roster, EVADE_WHITEBOX, config.evade.points(), out_dir)


def run_blackbox(config, roster=None, out_dir=None, threat=BLACKBOX):
    """Replay stored whitebox attacks of seed s against every other seed of the same kind.

    Success is re-judged on the target model: for untargeted attacks the
    target's prediction must change, for evading attacks it must equal the
    stored target class.
    """
    ws = _workspace(config, out_dir)
    roster = roster or train_roster(config, out_dir)[0]
    source = _SOURCE_OF[threat]
    mode = _MODE_OF[threat]
    points = config.attacks.points() if threat == BLACKBOX else config.evade.points()
    tasks = []
    for spec in config.roster:
        for src in spec.seeds:
            for tgt in spec.seeds:
                if tgt != src:
                    tasks.extend((spec.kind, src, tgt, p) for p in points)
    naturals = {}

    def run(task):
        kind, src, tgt, (fam, eps, it) = task
        cell = ResultCell(threat, kind, tgt, fam, mode, eps, it, source_seed=src)
        origin = ResultCell(source, kind, src, fam, mode, eps, it)
        path = os.path.join(ws.root, "attacks", source, f"{origin.cell_id}.npz")
        if not os.path.exists(path):
            cell.error = f"missing whitebox artifact {origin.cell_id}"
            return cell
        if not _available(roster, kind, tgt):
            cell.error = "model not trained"
            return cell
        try:
            with np.load(path) as z:
                x_clean, x_final, target_class = z["x_clean"], z["x_final"], z["target_class"]
            est = roster.estimator(kind, tgt)
            target = target_class if mode == EVADE else None
            cell.success = success_predicate(est, x_clean, x_final, mode, target)
            cell.natural_scores = naturals[(kind, tgt)]
            cell.attack_scores = est.uncertainty(x_final)
            return cell
        except (PnbenchError, OSError, KeyError) as exc:
            return _failed(threat, kind, tgt, (fam, eps, it), mode, exc, src)

    _, test, _, _ = config.dataset.build()
    for kind, seed in roster.keys():
        if _available(roster, kind, seed):
            naturals[(kind, seed)] = roster.estimator(kind, seed).uncertainty(test.inputs)
    cells = _pool_map(run, tasks, config.workers)
    for cell in cells:
        cell.save(ws.cell_path(threat, cell.cell_id))
    return cells


def evaluate(config, roster=None, out_dir=None):
    """Re-score stored whitebox artifacts of the configured roster and refresh their cells."""
    ws = _workspace(config, out_dir)
    roster = roster or train_roster(config, out_dir)[0]
    wanted = set(roster.keys())
    cells = []
    for threat in (WHITEBOX, EVADE_WHITEBOX):
        for path in ws.list_dir("attacks", threat):
            with np.load(path) as z:
                meta = json.loads(str(z["meta"]))
                x_clean, x_final, success = z["x_clean"], z["x_final"], z["success"]
            meta.pop("error", None)
            cell = ResultCell(**meta)
            if (cell.model, cell.seed) not in wanted:
                continue
            if not _available(roster, cell.model, cell.seed):
                cell.error = "model not trained"
            else:
                est = roster.estimator(cell.model, cell.seed)
                cell.natural_scores = est.uncertainty(x_clean)
                cell.attack_scores = est.uncertainty(x_final)
                cell.success = success
            cell.save(ws.cell_path(threat, cell.cell_id))
            cells.append(cell)
    return cells


def load_cells(out_dir):
    ws = Workspace(out_dir)
    cells = []
    cells_root = os.path.join(ws.root, "cells")
    if os.path.isdir(cells_root):
        for threat in sorted(os.listdir(cells_root)):
            cells.extend(ResultCell.load(p) for p in ws.list_dir("cells", threat))
    return cells


# ---------------------------------------------------------------- report


_AGG_KEYS = ("threat", "model", "family", "mode", "epsilon", "iterations")
_STATS = ("auc", "eer_jsr", "success_rate")


def _num(v):
    return repr(float(v))


def _histogram(cell, bins):
    nat = np.log10(np.maximum(cell.natural_scores, _TINY_SCORE))
    adv = np.log10(np.maximum(cell.attack_scores, _TINY_SCORE))
    lo, hi = float(min(nat.min(), adv.min())), float(max(nat.max(), adv.max()))
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    return (edges, np.histogram(nat, edges)[0], np.histogram(adv, edges)[0],
            np.histogram(adv[cell.success], edges)[0])


def _sort_key(cell):
    src = -1 if cell.source_seed is None else cell.source_seed
    return (cell.threat, cell.model, cell.family, cell.mode, cell.epsilon, cell.iterations, cell.seed, src)


def aggregate(cells):
    """Mean and population std of AUC, EER-JSR and success rate per grid point."""
    groups = {}
    for cell in cells:
        if cell.ok:
            key = tuple(getattr(cell, k) for k in _AGG_KEYS)
            groups.setdefault(key, []).append(cell.report.scalars())
    rows = []
    for key in sorted(groups):
        vals = groups[key]
        row = dict(zip(_AGG_KEYS, key))
        row["n"] = len(vals)
        for s in _STATS:
            v = np.array([r[s] for r in vals])
            row[f"{s}_mean"] = float(v.mean())
            row[f"{s}_std"] = float(v.std())
        row["auc_below_half"] = int(sum(r["auc_below_half"] for r in vals))
        rows.append(row)
    by_key = {tuple(r[k] for k in _AGG_KEYS): r for r in rows}
    for r in rows:
        src = _SOURCE_OF.get(r["threat"])
        r["success_le_whitebox"] = ""
        if src is not None:
            twin = by_key.get((src,) + tuple(r[k] for k in _AGG_KEYS[1:]))
            if twin is not None:
                r["success_le_whitebox"] = str(r["success_rate_mean"] <= twin["success_rate_mean"]).lower()
    return rows


def report(cells, out_dir, bins=30):
    """Write per-cell JSON/CSV/histograms plus the aggregate and failure tables.

    Output is a pure function of the cells, so re-running is byte-identical.
    Returns the list of written paths.
    """
    if not cells:
        raise PnbenchError("nothing to report: no cells")
    ws = Workspace(out_dir)
    written = []
    cells = sorted(cells, key=_sort_key)
    for cell in cells:
        if not cell.ok:
            continue
        rep = cell.report
        base = ws.path("report", "cells", cell.threat, cell.cell_id)
        with open(base + ".json", "w") as fh:
            json.dump({**cell.meta(), **rep.scalars()}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        rep.to_csv(base + ".thresholds.csv")
        edges, nat, adv, adv_ok = _histogram(cell, bins)
        with open(base + ".hist.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["log10_lo", "log10_hi", "natural", "adversarial", "adversarial_successful"])
            for i in range(bins):
                w.writerow([_num(edges[i]), _num(edges[i + 1]), int(nat[i]), int(adv[i]), int(adv_ok[i])])
        written += [base + ".json", base + ".thresholds.csv", base + ".hist.csv"]
    rows = aggregate(cells)
    agg = ws.path("report", "aggregate.csv")
    cols = list(_AGG_KEYS) + ["n"] + [f"{s}_{m}" for s in _STATS for m in ("mean", "std")]
    cols += ["auc_below_half", "success_le_whitebox"]
    with open(agg, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_num(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
    fail = ws.path("report", "failures.csv")
    with open(fail, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", "error"])
        for cell in cells:
            if not cell.ok:
                w.writerow([cell.cell_id, cell.error])
    return written + [agg, fail]


def run_all(config, out_dir=None, retrain=False):
    """Train, attack, transfer, evade and report.  Returns ``(cells, failures)``."""
    roster, failures = train_roster(config, out_dir, retrain=retrain)
    cells = []
    threats = config.threat_models
    if WHITEBOX in threats or BLACKBOX in threats:
        cells += run_whitebox(config, roster, out_dir)
    if BLACKBOX in threats:
        cells += run_blackbox(config, roster, out_dir, BLACKBOX)
    if EVADE_WHITEBOX in threats or EVADE_BLACKBOX in threats:
        cells += run_detection_evading(config, roster, out_dir)
    if EVADE_BLACKBOX in threats:
        cells += run_blackbox(config, roster, out_dir, EVADE_BLACKBOX)
    cells = [c for c in cells if c.threat in threats]
    report(cells, out_dir or config.out_dir, config.histogram_bins)
    failures += [f"{c.cell_id}: {c.error}" for c in cells if not c.ok]
    return cells, failures


__all__ = [
    "ExperimentConfig",
    "ResultCell",
    "Roster",
    "aggregate",
    "evaluate",
    "load_cells",
    "report",
    "run_all",
    "run_blackbox",
    "run_detection_evading",
    "run_whitebox",
    "train_roster",
]

