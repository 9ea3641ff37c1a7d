"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from qsage import decision, evalharness, features, ingest, synth
from qsage.models import BinSpec, ModelSpec, assign_bins, fit, load_model, save_model

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def seed_override():
    """``QSAGE_SEED`` replaces every configured seed when set."""
    raw = os.environ.get("QSAGE_SEED")
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"QSAGE_SEED must be an integer, got {raw!r}") from None


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from None


def _read_text(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not UTF-8: {exc}") from None


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _load_jobs(path):
    try:
        with open(path, "rb") as fh:
            records, errors = ingest.parse_log(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    except ingest.LogFormatError as exc:
        raise DataError(f"{path}: {exc}") from None
    for err in errors:
        print(f"warning: {path}: {err}", file=sys.stderr)
    return records, errors


def _load_rows(path):
    try:
        return features.rows_from_csv(_read_text(path))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def _parse_bins(text):
    try:
        size, count = text.split(":")
        return BinSpec(float(size), int(count))
    except ValueError as exc:
        raise UsageError(f"--bins expects SIZE:COUNT (e.g. 60:4): {exc}") from None


def load_dataset(path, queue, *, threshold=ingest.DEFAULT_OUTLIER_MINUTES, node_weighted=False):
    """Feature rows from either a job log or an already featurized CSV.

    Queue state is reconstructed from every job of the queue; jobs waiting
    longer than ``threshold`` are dropped afterwards as training rows only.
    """
    text = _read_text(path)
    first = text.split("\n", 1)[0].strip()
    if first == ",".join(features.CSV_HEADER):
        rows = features.rows_from_csv(text)
    else:
        records, _ = _load_jobs(path)
        parts = ingest.partition_by_queue(records)
        if queue not in parts:
            raise DataError(f"{path}: no jobs for queue {queue!r} (found {sorted(parts)})")
        rows = features.reconstruct_queue_state(parts[queue], node_weighted=node_weighted)
    return [r for r in rows if r.label_queue_minutes <= threshold]


# -- subcommands ---------------------------------------------------------------------

def cmd_ingest(args):
    records, errors = _load_jobs(args.input)
    n_parsed = len(records)
    if args.queue:
        records = ingest.partition_by_queue(records).get(args.queue, [])
    kept, removed = ingest.clean(records, args.threshold_min)
    ingest.write_log(args.out, kept)
    print(f"parsed {n_parsed} jobs, {len(errors)} row errors, "
          f"removed {removed} outliers (> {args.threshold_min:g} min), wrote {len(kept)} to {args.out}")
    return EXIT_OK


def cmd_featurize(args):
    records, _ = _load_jobs(args.input)
    parts = ingest.partition_by_queue(records)
    if args.queue not in parts:
        raise DataError(f"{args.input}: no jobs for queue {args.queue!r} (found {sorted(parts)})")
    rows = features.reconstruct_queue_state(parts[args.queue], node_weighted=args.node_weighted)
    if args.threshold_min is not None:
        rows = [r for r in rows if r.label_queue_minutes <= args.threshold_min]
    _write_text(args.out, features.rows_to_csv(rows))
    print(f"wrote {len(rows)} feature rows for queue {args.queue} to {args.out}")
    return EXIT_OK


def _spec_from_file(path):
    doc = _read_json(path)
    override = seed_override()
    if override is not None:
        doc = dict(doc, seed=override)
    try:
        spec = ModelSpec.from_dict(doc)
        bins = BinSpec.from_dict(doc["bins"]) if doc.get("bins") else None
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: invalid model spec: {exc}") from None
    return spec, bins


def cmd_train(args):
    spec, bins = _spec_from_file(args.model_spec)
    if args.bins:
        bins = _parse_bins(args.bins)
    rows = _load_rows(args.rows)
    if not rows:
        raise DataError(f"{args.rows}: no rows")
    X = features.feature_matrix(rows)
    y = features.labels(rows)
    scaler = features.fit_scaler(X)
    if spec.task == "classification":
        if bins is None:
            raise UsageError("classification needs bins (in the spec file or --bins)")
        y = assign_bins(y, bins)
    try:
        model = fit(spec, X, y, scaler=scaler, bin_spec=bins)
    except ValueError as exc:
        raise DataError(f"training failed: {exc}") from None
    save_model(model, args.out_model)
    print(f"trained {spec.family} {spec.task} on {len(rows)} rows; saved {args.out_model}")
    return EXIT_OK


def cmd_evaluate(args):
    try:
        model = load_model(args.model)
    except OSError as exc:
        raise DataError(f"cannot read {args.model}: {exc.strerror}") from None
    except (KeyError, ValueError) as exc:
        raise DataError(f"{args.model}: {exc}") from None
    rows = _load_rows(args.rows)
    if not rows:
        raise DataError(f"{args.rows}: no rows")
    X = features.feature_matrix(rows)
    y = features.labels(rows)
    pred = model.predict(X)
    if model.task == "classification":
        bins = _parse_bins(args.bins) if args.bins else model.bin_spec
        if bins is None:
            raise UsageError("model has no bin spec; pass --bins")
        metrics = evalharness.classification_metrics(assign_bins(y, bins), pred, bins.n_bins)
    else:
        metrics = evalharness.regression_metrics(y, pred)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_search(args):
    doc = _read_json(args.config)
    try:
        cfg = evalharness.SearchConfig.from_dict(doc, os.path.dirname(os.path.abspath(args.config)),
                                                 seed_override())
    except evalharness.ConfigError as exc:
        raise DataError(str(exc)) from None
    rows = load_dataset(cfg.dataset_path, cfg.queue, threshold=cfg.outlier_threshold_minutes,
                        node_weighted=cfg.node_weighted)
    try:
        outcome = evalharness.run_search(cfg, rows, jobs=args.jobs)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    failed = sum(1 for r in outcome.records if r.status != "ok")
    print(f"{outcome.n_cells} cells: {outcome.n_run} run, {outcome.n_skipped} skipped "
          f"(already in ledger); {failed} failed records; ledger {outcome.ledger_path}")
    return EXIT_OK


def cmd_report(args):
    try:
        records = evalharness.read_ledger(args.ledger)
    except (ValueError, TypeError) as exc:
        raise DataError(f"{args.ledger}: {exc}") from None
    if args.split:
        records = [r for r in records if r.split == args.split]
    sys.stdout.write(evalharness.render_report(records))
    return EXIT_OK


def cmd_recommend(args):
    try:
        systems = decision.load_registry(args.registry)
        snapshots = decision.load_snapshots(args.snapshots)
    except OSError as exc:
        raise DataError(f"cannot read {exc.filename}: {exc.strerror}") from None
    except (KeyError, ValueError) as exc:
        raise DataError(f"bad registry or snapshots: {exc}") from None
    try:
        params = decision.ToleranceParams(args.p, args.t)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        constraint = decision.parse_constraint(args.constraint) if args.constraint else None
    except decision.ConstraintSyntaxError as exc:
        raise UsageError(f"--constraint: {exc}") from None
    request = {"num_nodes": args.nodes, "max_minutes": args.minutes, "constraint": constraint}
    scored, skipped = decision.score_candidates(request, systems, snapshots)
    for msg in skipped:
        print(f"warning: {msg}", file=sys.stderr)
    rec = decision.recommend(scored, params, n_bins=args.n_bins)
    if args.json:
        print(json.dumps(rec.to_dict(), sort_keys=True))
        return EXIT_OK
    if rec.decision == decision.RUN_ON:
        print(f"decision: RUN_ON {rec.target[0]}/{rec.target[1]} "
              f"(q*={rec.q_star:.2f} <= p*t={rec.threshold:g})")
    elif rec.no_candidates:
        print(f"decision: PROVISION (no feasible candidates; threshold p*t={rec.threshold:g})")
    else:
        print(f"decision: PROVISION (q*={rec.q_star:.2f} > p*t={rec.threshold:g})")
    print(f"{'system':<16} {'queue':<16} {'predicted_q':>12} {'bin':>4}  candidacy")
    for c in sorted(rec.candidates, key=lambda c: (c.predicted_q, c.system_id, c.queue)):
        cand = decision.bin_candidacy(c.predicted_bin, args.n_bins) if (
            c.predicted_bin is not None and c.predicted_bin <= args.n_bins) else ""
        print(f"{c.system_id:<16} {c.queue:<16} {c.predicted_q:>12.2f} {c.predicted_bin!s:>4}  {cand}")
    return EXIT_OK


def cmd_simulate(args):
    doc = _read_json(args.config)
    try:
        wdoc = dict(doc["workload"])
        override = seed_override()
        if override is not None:
            wdoc["seed"] = override
        workload = synth.WorkloadConfig.from_dict(wdoc)
        cluster = synth.ClusterConfig(**doc["cluster"])
        records = synth.simulate(workload, cluster)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{args.config}: {exc}") from None
    ingest.write_log(args.out, records)
    print(f"simulated {len(records)} jobs on {cluster.total_nodes} nodes ({cluster.policy}); "
          f"wrote {args.out}")
    return EXIT_OK


def build_parser():
    p = _Parser(prog="qsage", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("ingest", help="parse and clean a job log")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--queue")
    s.add_argument("--threshold-min", type=float, default=ingest.DEFAULT_OUTLIER_MINUTES)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("featurize", help="reconstruct queue state per job")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--queue", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--node-weighted", action="store_true",
                   help="weigh minute totals by node count")
    s.add_argument("--threshold-min", type=float, default=None,
                   help="drop rows that waited longer than this")
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("train", help="fit one model on feature rows")
    s.add_argument("--rows", required=True)
    s.add_argument("--model-spec", required=True)
    s.add_argument("--out-model", required=True)
    s.add_argument("--bins", help="SIZE:COUNT, overrides the spec file")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="score a saved model on feature rows")
    s.add_argument("--rows", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--bins", help="SIZE:COUNT (classifiers)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("search", help="run or resume a model search")
    s.add_argument("--config", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_search)

    s = sub.add_parser("report", help="summarise a search ledger")
    s.add_argument("--ledger", required=True)
    s.add_argument("--split", choices=("test", "future"))
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("recommend", help="choose a queue or dynamic provisioning")
    s.add_argument("--registry", required=True)
    s.add_argument("--snapshots", required=True)
    s.add_argument("--nodes", type=int, required=True)
    s.add_argument("--minutes", type=int, required=True)
    s.add_argument("--constraint", default="")
    s.add_argument("--p", type=float, required=True, help="provisioning time, minutes")
    s.add_argument("--t", type=float, required=True, help="tolerance factor")
    s.add_argument("--n-bins", type=int, default=decision.DEFAULT_N_BINS)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_recommend)

    s = sub.add_parser("simulate", help="generate and schedule a synthetic workload")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)
    return p


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError(parser.format_usage() + "qsage: error: a subcommand is required")
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # anything unexpected is a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main(argv=None):
    sys.exit(run_command(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
