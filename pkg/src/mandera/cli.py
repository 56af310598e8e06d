"""Command-line entry point.

Exit codes: 0 success, 2 invalid input or config, 1 runtime failure.

``simulate`` takes an experiment config (see :mod:`mandera.experiment`). The
other subcommands accept ``--config`` as a JSON object of their own options
(keys use underscores, e.g. ``{"n0": 30, "repeats": 10}``); flags given on the
command line win over the file.
"""

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ._validation import ValidationError
from .attacks import AttackKind
from .bench import DEFAULT_RULES, bench_csv, bench_defenses, bench_dicts
from .detect import mandera
from .experiment import load_config, run_experiment
from .matrix_io import atomic_write, load_matrix
from .metrics import ConfusionCounts, metrics
from .theory import convergence_trend, make_gradient_model, synth_attacked, verify_limits

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2

# per-subcommand option defaults; --config may override any of them
DEFAULTS = {
    "detect": {"matrix": None, "malicious": None},
    "verify-theory": {"attack": "SignFlip", "n": 100, "n0": 30, "p": 100_000, "replicates": 20,
                      "rho": 0.7, "r": 3.0, "noise_var": 1e-4, "attack_variance": 30.0,
                      "tolerance": 5.0, "trend_replicates": 0},
    "bench": {"matrix": None, "n": 100, "n0": 30, "p": 100_000, "attack": "SignFlip",
              "repeats": 100, "rules": list(DEFAULT_RULES)},
    "metrics": {"labels": None, "group_by": []},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_INVALID)


def _common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="base seed (non-negative)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads for replicates")


def _csv_list(text):
    return [x for x in text.split(",") if x]


def build_parser():
    parser = _Parser(prog="mandera",
                     description="Rank-based malicious node detection for federated learning.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run an experiment config (FL or detection grid)")
    _common(p)

    p = sub.add_parser("detect", help="run detection on a saved message matrix")
    _common(p)
    p.add_argument("matrix", nargs="?", help="matrix file (.csv or binary)")
    p.add_argument("--malicious", type=lambda s: [int(x) for x in _csv_list(s)],
                   help="comma-separated true malicious indices, enables metrics")

    p = sub.add_parser("verify-theory", help="Monte Carlo check of the rank-moment limits")
    _common(p)
    p.add_argument("--attack", choices=["Gaussian", "SignFlip", "ZeroGradient"])
    for name, typ in (("n", int), ("n0", int), ("p", int), ("replicates", int), ("rho", float),
                      ("r", float), ("noise-var", float), ("attack-variance", float),
                      ("tolerance", float), ("trend-replicates", int)):
        p.add_argument(f"--{name}", type=typ)

    p = sub.add_parser("bench", help="time defenses on one fixed matrix")
    _common(p)
    p.add_argument("--matrix", help="matrix file; otherwise a synthetic one is generated")
    for name, typ in (("n", int), ("n0", int), ("p", int), ("repeats", int)):
        p.add_argument(f"--{name}", type=typ)
    p.add_argument("--attack", choices=["Gaussian", "SignFlip", "ZeroGradient"])
    p.add_argument("--rules", type=_csv_list, help=f"comma list from {','.join(DEFAULT_RULES)}")

    p = sub.add_parser("metrics", help="precision/recall/accuracy/F1 from saved labels")
    _common(p)
    p.add_argument("labels", nargs="?", help="CSV with 'predicted' and 'truth' columns")
    p.add_argument("--group-by", type=_csv_list, help="comma list of grouping columns")
    return parser


def _options(args):
    """Defaults, then the --config object, then explicit flags."""
    opts = dict(DEFAULTS[args.command])
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ValidationError("config must be a JSON object")
        extra = sorted(set(doc) - set(opts))
        if extra:
            raise ValidationError(f"unknown key(s) in config: {', '.join(extra)}")
        opts.update(doc)
    for key in opts:
        val = getattr(args, key, None)
        if val is not None:
            opts[key] = val
    return opts


def _seed(args, default=0):
    seed = default if args.seed is None else args.seed
    if seed < 0:
        raise ValidationError("--seed must be non-negative")
    return seed


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_simulate(args):
    if not args.config:
        raise ValidationError("simulate needs --config")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=_seed(args))
    out = Path(args.out or cfg.output_dir)
    results = run_experiment(cfg, out, threads=args.threads)
    failed = sum(r.status != "ok" for r in results)
    _emit({"output_dir": str(out), "replicates": len(results), "failed": failed})
    return EXIT_RUNTIME if failed == len(results) else EXIT_OK


def cmd_detect(args):
    opts = _options(args)
    if not opts["matrix"]:
        raise ValidationError("detect needs a matrix file")
    M = load_matrix(opts["matrix"])
    det = mandera(M)
    report = det.to_dict()
    report["moments"] = [[float(e), float(s)] for e, s in det.points]
    if opts["malicious"] is not None:
        truth = np.zeros(M.shape[0], dtype=bool)
        idx = np.asarray(opts["malicious"], dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= M.shape[0]):
            raise ValidationError("--malicious index out of range")
        truth[idx] = True
        c = ConfusionCounts.from_labels(det.labels, truth)
        report["confusion"] = {"tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn}
        report.update(zip(("precision", "recall", "accuracy", "f1"), metrics(c)))
    if args.out:
        atomic_write(Path(args.out) / "detection.json",
                     (json.dumps(report, indent=2, sort_keys=True) + "\n").encode())
    _emit(report)
    return EXIT_OK


def cmd_verify_theory(args):
    o = _options(args)
    seed = _seed(args)
    report = verify_limits(o["attack"], n=o["n"], n0=o["n0"], p=o["p"],
                           replicates=o["replicates"], tolerance=o["tolerance"], rho=o["rho"],
                           noise_var=o["noise_var"], attack_variance=o["attack_variance"],
                           r=o["r"], seed=seed)
    doc = report.to_dict()
    if o["trend_replicates"]:
        dev, frac = convergence_trend(o["attack"], n=o["n"], n0=o["n0"],
                                      replicates=o["trend_replicates"], seed=seed, rho=o["rho"],
                                      noise_var=o["noise_var"],
                                      attack_variance=o["attack_variance"])
        doc["trend"] = {"p_values": [1_000, 10_000, 100_000],
                        "mean_deviation": [float(x) for x in dev.mean(axis=0)],
                        "fraction_shrinking": frac}
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        atomic_write(Path(args.out) / "verification.json", text.encode())
    sys.stdout.write(text)
    return EXIT_OK


def cmd_bench(args):
    o = _options(args)
    seed = _seed(args)
    if o["matrix"]:
        M = load_matrix(o["matrix"])
    else:
        model = make_gradient_model(o["n"], o["n0"], o["p"], seed=seed)
        M = synth_attacked(model, AttackKind(o["attack"]), seed=seed + 1)
    rows = bench_defenses(M, o["rules"], o["repeats"], n0=o["n0"])
    if args.out:
        atomic_write(Path(args.out) / "bench.csv", bench_csv(rows).encode())
    _emit(bench_dicts(rows))
    return EXIT_OK


def _read_labels(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    if not rows or not {"predicted", "truth"} <= set(rows[0]):
        raise ValidationError(f"{path}: needs 'predicted' and 'truth' columns")
    return rows


def cmd_metrics(args):
    o = _options(args)
    if not o["labels"]:
        raise ValidationError("metrics needs a labels CSV")
    rows = _read_labels(o["labels"])
    keys = list(o["group_by"])
    missing = [k for k in keys if k not in rows[0]]
    if missing:
        raise ValidationError(f"unknown group-by column(s): {', '.join(missing)}")
    groups = {}
    for r in rows:
        try:
            pred, truth = int(r["predicted"]), int(r["truth"])
        except ValueError as exc:
            raise ValidationError(f"non-integer label: {exc}") from exc
        if pred not in (0, 1) or truth not in (0, 1):
            raise ValidationError(f"labels must be 0 or 1, got {pred}, {truth}")
        c = ConfusionCounts(pred & truth, pred & (1 - truth), (1 - pred) & truth,
                            (1 - pred) & (1 - truth))
        key = tuple(r[k] for k in keys)
        groups[key] = groups[key] + c if key in groups else c
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*keys, "tp", "fp", "fn", "tn", "precision", "recall", "accuracy", "f1"])
    out = []
    for key, c in groups.items():
        vals = metrics(c)
        w.writerow([*key, c.tp, c.fp, c.fn, c.tn, *(repr(v) for v in vals)])
        out.append({**dict(zip(keys, key)), "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn,
                    **dict(zip(("precision", "recall", "accuracy", "f1"), vals))})
    if args.out:
        atomic_write(Path(args.out) / "metrics.csv", buf.getvalue().encode())
    _emit(out)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "detect": cmd_detect, "verify-theory": cmd_verify_theory,
            "bench": cmd_bench, "metrics": cmd_metrics}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
