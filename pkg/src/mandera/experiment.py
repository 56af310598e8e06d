"""Experiment configuration and the replicate runner behind ``simulate``.

A config is one JSON document::

    {
      "mode": "federated",            # or "detection" (synthetic model matrices)
      "fl": {...FLConfig fields...},
      "attack": {"kind": "SignFlip", "ratio_r": 3.0, ...},
      "defense": {"rule": "ManderaThenMean", "assumed_f": null, "trim_beta": null},
      "synthetic": {"p": 10000, "rho": 0.7, "noise_var": 1e-4},
      "grid": {"n0": [5, 10], "attacks": ["Gaussian", "SignFlip"]},
      "replicates": 3,
      "seed": 0,
      "output_dir": "results"
    }

Unknown keys anywhere are rejected. Every replicate gets its own seed derived
from ``(seed, cell, replicate)``, so outputs do not depend on ``threads``.
"""

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ._validation import ValidationError
from .aggregation import AggregationRule
from .attacks import AttackKind, AttackSpec
from .detect import mandera
from .fl.sim import FLConfig, run_federated
from .matrix_io import atomic_write
from .metrics import ConfusionCounts, box_stats, metrics
from .theory import make_gradient_model, synth_attacked

log = logging.getLogger(__name__)

MODES = ("federated", "detection")
METRIC_NAMES = ("precision", "recall", "detection_accuracy", "f1", "final_accuracy")
_TOP_KEYS = {"mode", "fl", "attack", "defense", "synthetic", "grid", "replicates", "seed",
             "output_dir"}
_ATTACK_KEYS = {"kind", "malicious_set", "gaussian_variance", "ratio_r", "label_map"}
_DEFENSE_KEYS = {"rule", "assumed_f", "trim_beta"}
_SYNTH_KEYS = {"p", "rho", "noise_var", "sample_size"}
_GRID_KEYS = {"n0", "attacks"}


@dataclass(frozen=True)
class SyntheticSpec:
    p: int = 10_000
    rho: float = 0.7
    noise_var: float = 1e-4
    sample_size: int = 100


@dataclass(frozen=True)
class ExperimentConfig:
    fl: FLConfig = field(default_factory=FLConfig)
    attack: AttackSpec = field(default_factory=AttackSpec)
    defense: AggregationRule = field(default_factory=AggregationRule)
    replicates: int = 1
    seed: int = 0
    output_dir: str = "results"
    mode: str = "federated"
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    grid_n0: tuple = None
    grid_attacks: tuple = None

    def __post_init__(self):
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")
        if self.mode == "detection":
            bad = [k.value for k in self.attack_kinds()
                   if k in (AttackKind.LABEL_FLIP, AttackKind.NONE)]
            if bad:
                raise ValidationError(f"detection mode needs a message-level attack, got {bad}")
        for n0 in self.n0_values():
            FLConfig(**{**asdict(self.fl), "n0": n0})

    def n0_values(self):
        return self.grid_n0 if self.grid_n0 is not None else (self.fl.n0,)

    def attack_kinds(self):
        return self.grid_attacks if self.grid_attacks is not None else (self.attack.kind,)

    def cells(self):
        """``(n0, attack kind)`` pairs, n0-major."""
        return [(n0, kind) for n0 in self.n0_values() for kind in self.attack_kinds()]

    def to_dict(self):
        fl = {k: v for k, v in asdict(self.fl).items() if k != "seed"}
        d = {"mode": self.mode, "fl": fl,
             "attack": {k: v for k, v in asdict(self.attack).items() if k != "seed"},
             "defense": {"rule": self.defense.kind.value, "assumed_f": self.defense.assumed_f,
                         "trim_beta": self.defense.trim_beta},
             "synthetic": asdict(self.synthetic),
             "replicates": self.replicates, "seed": self.seed, "output_dir": self.output_dir}
        d["attack"]["kind"] = self.attack.kind.value
        d["attack"]["malicious_set"] = list(self.attack.malicious_set)
        if self.attack.label_map is not None:
            d["attack"]["label_map"] = list(self.attack.label_map)
        if self.grid_n0 is not None or self.grid_attacks is not None:
            d["grid"] = {"n0": list(self.n0_values()),
                         "attacks": [k.value for k in self.attack_kinds()]}
        return d


def _reject_unknown(block, allowed, where):
    if not isinstance(block, dict):
        raise ValidationError(f"{where} must be a JSON object")
    extra = sorted(set(block) - set(allowed))
    if extra:
        raise ValidationError(f"unknown key(s) in {where}: {', '.join(extra)}")


def parse_config(doc):
    """Build an :class:`ExperimentConfig` from a decoded JSON document."""
    _reject_unknown(doc, _TOP_KEYS, "config")
    fl_block = doc.get("fl", {})
    # per-replicate seeds come from the top-level seed
    _reject_unknown(fl_block, {f.name for f in fields(FLConfig)} - {"seed"}, "fl")
    attack_block = doc.get("attack", {})
    _reject_unknown(attack_block, _ATTACK_KEYS, "attack")
    defense_block = doc.get("defense", {})
    _reject_unknown(defense_block, _DEFENSE_KEYS, "defense")
    synth_block = doc.get("synthetic", {})
    _reject_unknown(synth_block, _SYNTH_KEYS, "synthetic")
    grid = doc.get("grid")
    try:
        fl = FLConfig(**fl_block)
        attack = AttackSpec(**attack_block)
        defense = AggregationRule(defense_block.get("rule", "Mean"),
                                  defense_block.get("assumed_f"), defense_block.get("trim_beta"))
        grid_n0 = grid_attacks = None
        if grid is not None:
            _reject_unknown(grid, _GRID_KEYS, "grid")
            if "n0" in grid:
                grid_n0 = tuple(int(x) for x in grid["n0"])
            if "attacks" in grid:
                grid_attacks = tuple(AttackKind(a) for a in grid["attacks"])
            if (grid_n0 is not None and not grid_n0) or (grid_attacks is not None and not grid_attacks):
                raise ValidationError("grid lists must not be empty")
        return ExperimentConfig(
            fl=fl, attack=attack, defense=defense,
            replicates=int(doc.get("replicates", 1)), seed=int(doc.get("seed", 0)),
            output_dir=str(doc.get("output_dir", "results")), mode=doc.get("mode", "federated"),
            synthetic=SyntheticSpec(**synth_block), grid_n0=grid_n0, grid_attacks=grid_attacks)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"invalid config: {exc}") from exc


def load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(doc)


def replicate_seed(seed, cell, replicate):
    return int(np.random.SeedSequence([seed, cell, replicate]).generate_state(1)[0])


@dataclass
class ReplicateResult:
    cell: int
    n0: int
    attack: str
    replicate: int
    seed: int
    status: str = "ok"
    counts: ConfusionCounts = None
    final_accuracy: float = float("nan")
    #: rows of (node, e, s, predicted, truth)
    moments: list = field(default_factory=list)
    runlog_jsonl: str = None
    summary_csv: str = None


def _run_detection(cfg, n0, kind, seed):
    model_seed, data_seed = np.random.SeedSequence(seed).spawn(2)
    syn = cfg.synthetic
    n = cfg.fl.n
    model = make_gradient_model(n, n0, syn.p, rho=syn.rho, noise_var=syn.noise_var,
                                sample_size=syn.sample_size, seed=model_seed)
    M = synth_attacked(model, kind, seed=data_seed, r=cfg.attack.ratio_r,
                       attack_variance=cfg.attack.gaussian_variance)
    det = mandera(M)
    truth = np.zeros(n, dtype=bool)
    truth[model.malicious] = True
    rows = [(i, float(det.points[i, 0]), float(det.points[i, 1]), int(det.labels[i]), int(truth[i]))
            for i in range(n)]
    return ConfusionCounts.from_labels(det.labels, truth), float("nan"), rows, None, None


def _run_federated(cfg, n0, kind, seed):
    fl = replace(cfg.fl, n0=n0, seed=seed)
    attack = replace(cfg.attack, kind=kind)
    if kind != AttackKind.NONE and len(attack.malicious_set) != n0:
        attack = attack.with_malicious(())
    runlog = run_federated(fl, attack, cfg.defense)
    counts = None
    for rec in runlog.records:
        if rec.confusion is not None:
            counts = rec.confusion if counts is None else counts + rec.confusion
    rows = []
    last = runlog.records[-1]
    if last.moments is not None:
        truth = np.zeros(fl.n, dtype=bool)
        truth[runlog.malicious] = True
        labels = last.detection["labels"]
        rows = [(i, float(last.moments[i, 0]), float(last.moments[i, 1]), int(labels[i]),
                 int(truth[i])) for i in range(fl.n)]
    return counts, runlog.final_accuracy, rows, runlog.to_jsonl(), runlog.summary_csv()


def _run_one(cfg, task):
    cell, n0, kind, rep = task
    seed = replicate_seed(cfg.seed, cell, rep)
    result = ReplicateResult(cell, n0, kind.value, rep, seed)
    runner = _run_detection if cfg.mode == "detection" else _run_federated
    try:
        (result.counts, result.final_accuracy, result.moments,
         result.runlog_jsonl, result.summary_csv) = runner(cfg, n0, kind, seed)
    except Exception as exc:  # a failed replicate must not abort the grid
        log.warning("replicate %d of cell (n0=%d, %s) failed: %s", rep, n0, kind.value, exc)
        result.status = f"error: {type(exc).__name__}: {exc}"
    return result


def _fmt(x):
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else repr(float(x))


def _metric_values(res):
    if res.counts is None:
        vals = [None] * 4
    else:
        vals = list(metrics(res.counts))
    return dict(zip(METRIC_NAMES, vals + [res.final_accuracy]))


def replicates_csv(results, rule):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n0", "attack", "rule", "replicate", "seed", "status", "tp", "fp", "fn", "tn",
                *METRIC_NAMES])
    for r in results:
        c = r.counts
        counts = ["", "", "", ""] if c is None else [c.tp, c.fp, c.fn, c.tn]
        vals = _metric_values(r)
        w.writerow([r.n0, r.attack, rule, r.replicate, r.seed, r.status, *counts,
                    *(_fmt(vals[m]) for m in METRIC_NAMES)])
    return buf.getvalue()


def aggregate_csv(results, cells, rule):
    """One row per grid cell: count of good replicates and box statistics per metric."""
    stats_keys = ("q1", "median", "q3", "whisker_low", "whisker_high")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n0", "attack", "rule", "replicates_ok", "replicates_failed",
                *(f"{m}_{s}" for m in METRIC_NAMES for s in stats_keys)])
    for idx, (n0, kind) in enumerate(cells):
        mine = [r for r in results if r.cell == idx]
        ok = [r for r in mine if r.status == "ok"]
        row = [n0, kind.value, rule, len(ok), len(mine) - len(ok)]
        for m in METRIC_NAMES:
            vals = [v for v in (_metric_values(r)[m] for r in ok)
                    if v is not None and not np.isnan(v)]
            if vals:
                b = box_stats(vals)
                row.extend(_fmt(b[s]) for s in stats_keys)
            else:
                row.extend([""] * len(stats_keys))
        w.writerow(row)
    return buf.getvalue()


def moments_csv(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n0", "attack", "replicate", "node", "e", "s", "predicted", "truth"])
    for r in results:
        for node, e, s, pred, truth in r.moments:
            w.writerow([r.n0, r.attack, r.replicate, node, repr(e), repr(s), pred, truth])
    return buf.getvalue()


def run_experiment(cfg, out_dir=None, threads=1):
    """Run every replicate of every grid cell and write the report files.

    Files in ``out_dir`` (default ``cfg.output_dir``): ``config.json``,
    ``replicates.csv``, ``aggregate.csv``, ``moments.csv`` and, in federated
    mode, ``runs/n0-<n0>_<attack>_rep-<k>.jsonl`` / ``.csv`` per replicate.
    Returns the list of :class:`ReplicateResult`.
    """
    if threads < 1:
        raise ValidationError("threads must be >= 1")
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    cells = cfg.cells()
    tasks = [(c, n0, kind, rep) for c, (n0, kind) in enumerate(cells)
             for rep in range(cfg.replicates)]
    if threads == 1:
        results = [_run_one(cfg, t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda t: _run_one(cfg, t), tasks))

    rule = "Mandera" if cfg.mode == "detection" else cfg.defense.kind.value
    atomic_write(out / "config.json", (json.dumps(cfg.to_dict(), indent=2, sort_keys=True)
                                       + "\n").encode())
    for r in results:
        if r.runlog_jsonl is not None:
            stem = f"n0-{r.n0}_{r.attack}_rep-{r.replicate}"
            atomic_write(out / "runs" / f"{stem}.jsonl", r.runlog_jsonl.encode())
            atomic_write(out / "runs" / f"{stem}.csv", r.summary_csv.encode())
    atomic_write(out / "replicates.csv", replicates_csv(results, rule).encode())
    atomic_write(out / "aggregate.csv", aggregate_csv(results, cells, rule).encode())
    atomic_write(out / "moments.csv", moments_csv(results).encode())
    return results
