"""Command-line entry point: ``rfib <command> ...``.

Exit codes: 0 success, 2 config/validity, 3 I/O or format, 4 numerical
failure, 5 evaluation precondition.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import errors
from .config import load_config, load_json, parse_data_section
from .datasets import write_csv, load_csv
from .divergences import DiagGaussian, SphericalPrior, renyi_div, renyi_div_oracle
from .io import atomic_open, load_checkpoint, save_checkpoint, write_json
from .metrics import BaselineSummary, metrics_report
from .model import embed_mean
from .trainer import run_point, sweep, sweep_table

log = logging.getLogger("rfib")

METRICS_SCHEMA = "rfib-metrics-v1"

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_EVAL = 0, 2, 3, 4, 5


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (errors.MissingSubgroup, errors.EmptyDataset, errors.SingleClassTraining)):
        return EXIT_EVAL
    if isinstance(exc, (errors.NonFiniteLoss, errors.NonFiniteActivation, errors.QuadratureNonConvergence)):
        return EXIT_NUMERIC
    if isinstance(exc, (errors.ParseError, errors.CheckpointError, OSError)):
        return EXIT_IO
    if isinstance(exc, (errors.RfibError, ValueError)):
        return EXIT_CONFIG
    raise exc


def _out_dir(args) -> Path:
    return Path(args.out_dir or os.environ.get("RFIB_OUT_DIR") or "rfib_out")


def _load_run_config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.train = replace(cfg.train, seed=args.seed)
        if cfg.data.synthetic is not None:
            cfg.data.synthetic = replace(cfg.data.synthetic, seed=args.seed)
    return cfg


def metrics_document(result, settings) -> dict:
    return {
        "schema": METRICS_SCHEMA,
        "method": result.config.method,
        "config": asdict(result.config),
        "train": asdict(settings),
        "run_seed": result.seed,
        "final_epoch": result.final_epoch,
        "best_epoch": result.log.best_epoch if result.log else None,
        "metrics": result.metrics.as_percent(),
    }


def cmd_gen_data(args) -> int:
    doc = load_json(args.spec) if args.spec else {}
    data = parse_data_section(doc)
    if data.synthetic is None:
        raise errors.InvalidSpec("gen-data needs a synthetic spec, not CSV paths")
    if args.seed is not None:
        data.synthetic = replace(data.synthetic, seed=args.seed)
    train, test = data.load()
    out = _out_dir(args)
    write_csv(train, out / "train.csv")
    write_csv(test, out / "test.csv")
    for name, ds in (("train", train), ("test", test)):
        counts = ", ".join(f"(y={y},s={s}): {n}" for (y, s), n in ds.cell_counts().items())
        print(f"{name}: {len(ds)} rows  {counts}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    train_set, test_set = cfg.data.load()
    result = run_point(train_set, test_set, cfg.model, cfg.train, cfg.baseline)
    out = _out_dir(args)
    save_checkpoint(out / "checkpoint.json", result.params, cfg.model)
    with atomic_open(out / "train_log.csv") as fh:
        fh.write(result.log.to_csv())
    doc = metrics_document(result, cfg.train)
    write_json(out / "metrics.json", doc)
    m = doc["metrics"]
    print(f"{doc['method']}: acc={m['acc']:.2f} acc_gap={m['acc_gap']:.2f} dp_gap={m['dp_gap']:.2f} "
          f"eqodds_gap={m['eqodds_gap']:.2f} (epochs={result.final_epoch})")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_run_config(args)
    if cfg.sweep is None:
        raise errors.ConfigError("config has no 'sweep' section")
    data = cfg.data.load()
    results = sweep(data, cfg.sweep.grid, cfg.train, base=cfg.model,
                    include_baseline=cfg.sweep.include_baseline, jobs=args.jobs)
    out = _out_dir(args)
    with atomic_open(out / "sweep.csv") as fh:
        fh.write(sweep_table(results))
    n_ok = sum(r.ok for r in results)
    print(f"{n_ok}/{len(results)} grid points succeeded; table at {out / 'sweep.csv'}")
    for r in results:
        if not r.ok:
            log.warning("alpha=%g beta1=%g beta2=%g failed: %s", r.config.alpha, r.config.beta1, r.config.beta2, r.error)
    return EXIT_OK if n_ok else EXIT_NUMERIC


def cmd_divergence(args) -> int:
    p = DiagGaussian(args.mu, args.var)
    q = SphericalPrior(args.gamma2, p.d)
    try:
        value = renyi_div(p, q, args.alpha)
    except errors.ValidityViolation as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        print(f"bound: {exc.bound:.12g}")
        return EXIT_CONFIG
    print(f"{value:.12g}")
    if args.oracle:
        ref = renyi_div_oracle(p, q, args.alpha)
        print(f"oracle: {ref:.12g}")
        print(f"abs_diff: {abs(value - ref):.3e}")
    return EXIT_OK


def cmd_embed(args) -> int:
    params, cfg = load_checkpoint(args.checkpoint)
    data = load_csv(args.data)
    if data.p != params.p:
        raise errors.CheckpointError(f"checkpoint expects {params.p} features, data has {data.p}")
    mu = embed_mean(params, data.X)
    with atomic_open(args.out, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*(f"mu_{i}" for i in range(params.d)), "y", "s"])
        for row, yi, si in zip(mu, data.y, data.s):
            w.writerow([*(format(v, ".17g") for v in row), int(yi), int(si)])
    print(f"wrote {len(data)} x {params.d + 2} embedding to {args.out}")
    return EXIT_OK


def load_predictions(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"y_hat", "y", "s"} - set(reader.fieldnames or [])
        if missing:
            raise errors.ParseError(f"{path}: missing column(s) {', '.join(sorted(missing))}", line=1)
        rows = []
        for row in reader:
            try:
                rows.append([int(row[k]) for k in ("y_hat", "y", "s")])
            except ValueError:
                raise errors.ParseError(f"{path}: line {reader.line_num}: non-integer value", line=reader.line_num) from None
    arr = np.asarray(rows, dtype=int).reshape(-1, 3)
    if not np.isin(arr, (0, 1)).all():
        raise errors.NonBinaryLabel(f"{path}: values must be 0 or 1")
    return arr[:, 0], arr[:, 1], arr[:, 2]


def cmd_audit(args) -> int:
    y_hat, y, s = load_predictions(args.predictions)
    baseline = None
    if args.baseline_acc is not None or args.baseline_gap is not None:
        if args.baseline_acc is None or args.baseline_gap is None:
            raise errors.ConfigError("--baseline-acc and --baseline-gap go together")
        baseline = BaselineSummary(args.baseline_acc, args.baseline_gap)
    report = metrics_report(y_hat, y, s, baseline)
    print(json.dumps({"schema": METRICS_SCHEMA, "metrics": report.as_percent()}, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rfib", description="Renyi fair information bottleneck toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_run_opts(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="run configuration JSON")
        sp.add_argument("--seed", type=int, default=None, help="override the configured seed")
        sp.add_argument("--out-dir", default=None, help="output directory (default $RFIB_OUT_DIR or ./rfib_out)")

    sp = sub.add_parser("gen-data", help="write synthetic train.csv / test.csv")
    sp.add_argument("--spec", default=None, help="data-section JSON (default synthetic spec if omitted)")
    with_run_opts(sp, config=False)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train, fit the downstream classifier and evaluate")
    with_run_opts(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sweep", help="hyperparameter sweep over alpha, beta1, beta2")
    with_run_opts(sp)
    sp.add_argument("--jobs", type=int, default=1, help="grid points to run in parallel")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("divergence", help="closed-form Renyi divergence to N(0, gamma2 I)")
    sp.add_argument("--mu", type=float, nargs="+", required=True)
    sp.add_argument("--var", type=float, nargs="+", required=True)
    sp.add_argument("--gamma2", type=float, default=1.0)
    sp.add_argument("--alpha", type=float, required=True)
    sp.add_argument("--oracle", action="store_true", help="also evaluate by numerical quadrature")
    sp.set_defaults(func=cmd_divergence)

    sp = sub.add_parser("embed", help="export encoder-mean embeddings with y, s")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("audit", help="fairness metrics for a prediction CSV (y_hat, y, s)")
    sp.add_argument("--predictions", required=True)
    sp.add_argument("--baseline-acc", type=float, default=None, help="baseline accuracy, percent")
    sp.add_argument("--baseline-gap", type=float, default=None, help="baseline accuracy gap, percent")
    sp.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        code = exit_code_for(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
