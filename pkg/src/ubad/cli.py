"""Batch command-line front end.

Subcommands: synth, ingest, train, score, evaluate. Option values resolve as
flags > UBAD_* environment variables > --config JSON file > defaults, and the
effective configuration is echoed into every output directory. Exit codes:
0 success, 2 usage/config error, 3 data-quality failure, 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import traceback
from pathlib import Path

from .errors import (
    BadTimestampError,
    DataQualityError,
    InvalidInputError,
    MalformedLineError,
    UbadError,
)
from .evaluation import (
    ExperimentConfig,
    anomalous_count_histogram,
    histogram_csv,
    render_csv,
    render_text_table,
    run_experiment,
)
from .ingest import (
    DEFAULT_LAYOUT,
    ColumnLayout,
    ingest_paths,
    iter_log_lines,
    load_user_store,
    parse_log_line,
    save_user_store,
)
from .modeling import (
    DEFAULT_THRESHOLD,
    ForestParams,
    load_user_model,
    save_user_model,
    train_user_model,
)
from .schema import build_schema
from .synth import CorpusSpec, generate_corpus, load_manifest

ENV_PREFIX = "UBAD_"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA_QUALITY = 3
EXIT_INTERNAL = 4

_DEFAULTS = {
    "trees": 100,
    "sample_size": 256,
    "seed": 0,
    "threshold": DEFAULT_THRESHOLD,
    "runs": 10,
    "band": "501:600",
    "mode": "lenient",
    "jobs": 1,
    "system": "all",
    "test_self": 100,
    "test_other": 100,
}


class UsageError(UbadError):
    pass


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config file {path}: {e}") from None


def _resolve(args, key: str, file_config: dict, cast):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    env = os.environ.get(ENV_PREFIX + key.upper())
    if env is not None:
        return cast(env)
    if key in file_config:
        return cast(file_config[key])
    return _DEFAULTS[key]


def _parse_band(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError:
        raise UsageError(f"--band expects lo:hi, got {text!r}") from None


def _parse_systems(text: str) -> tuple[int, ...]:
    if text == "all":
        return (1, 2, 3, 4, 5, 6, 7)
    try:
        ids = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"--system expects comma-separated ids or 'all', got {text!r}") from None
    bad = [i for i in ids if i not in (1, 2, 3, 4, 5, 6, 7)]
    if bad:
        raise UsageError(f"invalid system ids: {bad}")
    return ids


def _echo_config(out_dir: Path, command: str, effective: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, **effective}
    (out_dir / "effective_config.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True)
    )


def _input_files(path: Path) -> tuple[list[Path], ColumnLayout | None]:
    """Log files plus the corpus-local layout, if one sits next to them."""
    if path.is_file():
        sidecar = path.parent / "layout.json"
        layout = ColumnLayout.load(sidecar) if sidecar.exists() else None
        return [path], layout
    if path.is_dir():
        manifest = path / "manifest.json"
        if manifest.exists():
            files = [path / f for f in load_manifest(path)["files"]]
        else:
            files = sorted(path.glob("*.csv")) + sorted(path.glob("*.log"))
        sidecar = path / "layout.json"
        layout = ColumnLayout.load(sidecar) if sidecar.exists() else None
        if not files:
            raise UsageError(f"no log files found under {path}")
        return files, layout
    raise UsageError(f"input path does not exist: {path}")


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def _cmd_synth(args, file_config) -> int:
    out_dir = Path(args.output)
    try:
        spec_doc = json.loads(Path(args.spec).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read corpus spec {args.spec}: {e}") from None
    if args.seed is not None:
        spec_doc["seed"] = args.seed
    try:
        spec = CorpusSpec.from_dict(spec_doc)
    except (InvalidInputError, TypeError, KeyError) as e:
        raise UsageError(f"bad corpus spec: {e}") from None
    manifest = generate_corpus(spec, out_dir)
    _echo_config(out_dir, "synth", {"spec": spec.to_dict(), "output": str(out_dir)})
    print(f"generated {manifest['total_records']} records "
          f"for {len(manifest['users'])} users in {out_dir}")
    return EXIT_OK


def _cmd_ingest(args, file_config) -> int:
    mode = _resolve(args, "mode", file_config, str)
    if mode not in ("lenient", "strict"):
        raise UsageError(f"--mode must be lenient or strict, got {mode!r}")
    files, corpus_layout = _input_files(Path(args.input))
    if args.layout:
        layout = ColumnLayout.load(args.layout)
    elif corpus_layout is not None:
        layout = corpus_layout
    else:
        layout = DEFAULT_LAYOUT
    out_dir = Path(args.output)
    store, stats = ingest_paths(files, layout, mode=mode)
    save_user_store(store, out_dir, layout)
    _echo_config(out_dir, "ingest", {
        "input": str(args.input), "output": str(out_dir), "mode": mode,
        "layout": layout.to_dict(),
    })
    print(f"users: {len(store.users)}  records: {store.total_record_count}  "
          f"skipped: {stats.skipped} (malformed {stats.malformed}, "
          f"bad timestamp {stats.bad_timestamp})  "
          f"consistency violations: {stats.consistency_violations}")
    for problem in stats.problems[:10]:
        print(f"  {problem}", file=sys.stderr)
    return EXIT_OK


def _cmd_train(args, file_config) -> int:
    system = (args.system or os.environ.get(ENV_PREFIX + "SYSTEM")
              or file_config.get("system") or "6")
    system_ids = _parse_systems(str(system))
    if len(system_ids) != 1:
        raise UsageError("train expects exactly one --system")
    params = ForestParams(
        tree_count=_resolve(args, "trees", file_config, int),
        sample_size=_resolve(args, "sample_size", file_config, int),
        seed=_resolve(args, "seed", file_config, int),
    )
    threshold = _resolve(args, "threshold", file_config, float)
    store, _ = load_user_store(args.input)
    schema = build_schema(system_ids[0])
    out_dir = Path(args.output)
    models_dir = out_dir / "models"
    trained, skipped = [], []
    for user_id in store.user_ids():
        try:
            model = train_user_model(user_id, store.users[user_id], schema,
                                     params=params, threshold=threshold)
        except UbadError as e:
            skipped.append({"user_id": user_id, "reason": str(e)})
            continue
        digest = save_user_model(model, models_dir / user_id, params)
        trained.append({"user_id": user_id, "hash": digest,
                        "records": model.training_record_count})
    _echo_config(out_dir, "train", {
        "input": str(args.input), "output": str(out_dir),
        "system": system_ids[0], "params": params.to_dict(),
        "threshold": threshold,
    })
    (out_dir / "training_summary.json").write_text(
        json.dumps({"trained": trained, "skipped": skipped}, indent=2, sort_keys=True)
    )
    print(f"trained {len(trained)} models, skipped {len(skipped)}")
    for entry in skipped:
        print(f"  skipped {entry['user_id']}: {entry['reason']}", file=sys.stderr)
    return EXIT_OK


def _cmd_score(args, file_config) -> int:
    model = load_user_model(args.model)
    if args.threshold is not None:
        model = model.with_threshold(args.threshold)
    files, corpus_layout = _input_files(Path(args.input))
    layout = ColumnLayout.load(args.layout) if args.layout else (corpus_layout or DEFAULT_LAYOUT)
    out_path = Path(args.output)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    import numpy as np

    from .forest import anomaly_scores
    from .modeling import label_for
    from .schema import extract_features

    n_scored = n_errors = 0
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["record_ref", "score", "label", "error"])
        refs: list[str] = []
        rows: list = []

        def flush():
            nonlocal n_scored
            if not rows:
                return
            scores = anomaly_scores(model.forest, np.vstack(rows))
            for ref, s in zip(refs, scores):
                writer.writerow([ref, repr(float(s)),
                                 label_for(float(s), model.threshold), ""])
            n_scored += len(rows)
            refs.clear()
            rows.clear()

        for path, line_number, line in iter_log_lines(files):
            try:
                rec = parse_log_line(line, layout, line_number)
                x = extract_features(model.schema, rec)
            except (MalformedLineError, BadTimestampError) as e:
                flush()  # keep output rows in input order
                writer.writerow([f"{path}:{line_number}", "", "", str(e)])
                n_errors += 1
                continue
            except InvalidInputError as e:
                flush()
                writer.writerow([rec.ref, "", "", str(e)])
                n_errors += 1
                continue
            refs.append(rec.ref)
            rows.append(x)
            if len(rows) >= 4096:
                flush()
        flush()

    _echo_config(out_path.parent, "score", {
        "model": str(args.model), "input": str(args.input),
        "output": str(out_path),
    })
    print(f"scored {n_scored} records, {n_errors} errors -> {out_path}")
    return EXIT_OK


def _cmd_evaluate(args, file_config) -> int:
    systems = _parse_systems(_resolve(args, "system", file_config, str))
    band = _parse_band(_resolve(args, "band", file_config, str))
    config = ExperimentConfig(
        system_ids=systems,
        runs=_resolve(args, "runs", file_config, int),
        test_self=_resolve(args, "test_self", file_config, int),
        test_other=_resolve(args, "test_other", file_config, int),
        threshold=_resolve(args, "threshold", file_config, float),
        forest=ForestParams(
            tree_count=_resolve(args, "trees", file_config, int),
            sample_size=_resolve(args, "sample_size", file_config, int),
            seed=0,
        ),
        master_seed=_resolve(args, "seed", file_config, int),
        band=band,
        jobs=_resolve(args, "jobs", file_config, int),
    )
    store, _ = load_user_store(args.input)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)

    sink = None
    dump_fh = None
    if args.dump_verdicts:
        dump_fh = open(out_dir / "verdicts.csv", "w", newline="")
        dump_writer = csv.writer(dump_fh, lineterminator="\n")
        dump_writer.writerow(["system", "run", "user_id", "record_ref",
                              "score", "label", "class"])

        def sink(row):
            system_id, run_index, user_id, ref, score, label, cls = row
            dump_writer.writerow([system_id, run_index, user_id, ref,
                                  repr(score), label, cls])

    try:
        report = run_experiment(store, config, verdict_sink=sink)
    finally:
        if dump_fh is not None:
            dump_fh.close()

    text = render_text_table(report)
    (out_dir / "report.txt").write_text(text)
    (out_dir / "report.csv").write_text(render_csv(report))
    for system in report.systems:
        if system.per_run:
            hist = anomalous_count_histogram(system.per_run[0].fn_counts.values())
            (out_dir / f"histogram_system{system.system_id}.csv").write_text(
                histogram_csv(hist)
            )
    if report.skipped:
        (out_dir / "skips.json").write_text(
            json.dumps(report.skipped, indent=2, sort_keys=True)
        )
    _echo_config(out_dir, "evaluate", {
        "input": str(args.input), "output": str(out_dir), **config.to_dict(),
    })
    print(text, end="")
    if report.skipped:
        print(f"({len(report.skipped)} trials skipped; see skips.json)")
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ubad",
        description="Isolation-forest user-behavior anomaly detection toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, output=True):
        p.add_argument("--config", help="JSON config file (flags win over it)")
        if output:
            p.add_argument("--output", required=True, help="output directory/file")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--spec", required=True, help="corpus spec JSON file")
    p.add_argument("--seed", type=int, help="override the spec's seed")

    p = sub.add_parser("ingest", help="parse raw logs into a user store")
    common(p)
    p.add_argument("--input", required=True, help="log file or corpus directory")
    p.add_argument("--layout", help="column layout JSON (else corpus sidecar or default)")
    p.add_argument("--mode", choices=["lenient", "strict"])

    p = sub.add_parser("train", help="train per-user baseline models")
    common(p)
    p.add_argument("--input", required=True, help="user store directory")
    p.add_argument("--system", help="system id (default 6)")
    p.add_argument("--trees", type=int)
    p.add_argument("--sample-size", dest="sample_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("score", help="score records against one user model")
    common(p)
    p.add_argument("--model", required=True, help="model bundle directory")
    p.add_argument("--input", required=True, help="log file or directory to score")
    p.add_argument("--layout", help="column layout JSON")
    p.add_argument("--threshold", type=float, help="override the bundle's threshold")

    p = sub.add_parser("evaluate", help="run the multi-system evaluation protocol")
    common(p)
    p.add_argument("--input", required=True, help="user store directory")
    p.add_argument("--system", help="comma-separated system ids or 'all'")
    p.add_argument("--runs", type=int)
    p.add_argument("--test-self", dest="test_self", type=int)
    p.add_argument("--test-other", dest="test_other", type=int)
    p.add_argument("--trees", type=int)
    p.add_argument("--sample-size", dest="sample_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--band", help="user frequency band lo:hi")
    p.add_argument("--jobs", type=int, help="worker threads (results identical for any value)")
    p.add_argument("--dump-verdicts", action="store_true",
                   help="write per-record verdicts.csv for audit")

    return parser


_HANDLERS = {
    "synth": _cmd_synth,
    "ingest": _cmd_ingest,
    "train": _cmd_train,
    "score": _cmd_score,
    "evaluate": _cmd_evaluate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else EXIT_OK
    try:
        file_config = _load_config_file(getattr(args, "config", None))
        return _HANDLERS[args.command](args, file_config)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataQualityError as e:
        print(f"data quality failure: {e}", file=sys.stderr)
        return EXIT_DATA_QUALITY
    except (InvalidInputError,) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except UbadError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
