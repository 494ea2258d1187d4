"""Command-line entry point: ``logsentinel <stage> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import checkpoint
from . import detector as D
from .config import ConfigError, RunConfig
from .evaluation import compute_metrics, export_embeddings, format_report, generate_synthetic_corpus, write_embeddings
from .parser import ADAPTERS, ParserState, parse_lines
from .sequencer import (ANOMALOUS, NORMAL, group_by_session, group_by_time_window, read_sequences,
                        write_sequences)
from .trainer import TrainingDiverged, fit

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("logsentinel")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    cfg.apply_overrides(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        cfg.set("run", "seed", args.seed)
    return cfg


def _read_sequences(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return read_sequences(fh)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read sequences from {path}: {exc}") from exc


def _load_checkpoint(path):
    try:
        return checkpoint.load(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load checkpoint {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_parse(args, out) -> int:
    cfg = _load_config(args)
    adapter = args.adapter or cfg.get("parser", "adapter")
    if adapter not in ADAPTERS:
        raise UsageError(f"unknown adapter {adapter!r}; choose from {', '.join(sorted(ADAPTERS))}")
    try:
        with open(args.input, encoding="utf-8", errors="replace") as fh:
            result = parse_lines(fh, adapter, ParserState(cfg.parser_config()))
    except OSError as exc:
        raise DataError(str(exc)) from exc
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "templates.jsonl").write_text(result.state.dumps_templates(), encoding="utf-8")
    with open(out_dir / "events.jsonl", "w", encoding="utf-8") as fh:
        for ev in result.events:
            fh.write(json.dumps(ev.to_record()) + "\n")
    if not result.events:
        print("warning: no log events parsed", file=sys.stderr)
    print(f"templates: {len(result.state.templates)}", file=out)
    print(f"events: {len(result.events)} (skipped {result.skipped})", file=out)
    return EXIT_OK


def _read_labels(path) -> dict[str, str]:
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if len(row) < 2 or row[0].lower() in ("blockid", "session", "group_id"):
                continue
            flag = row[1].strip().lower()
            labels[row[0].strip()] = ANOMALOUS if flag in ("anomaly", "anomalous", "1", "true") else NORMAL
    return labels


def cmd_sequence(args, out) -> int:
    cfg = _load_config(args)
    mode = args.mode or cfg.get("sequencer", "mode")
    try:
        with open(args.events, encoding="utf-8") as fh:
            events = [json.loads(line) for line in fh if line.strip()]
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read events: {exc}") from exc
    if mode == "session":
        labels = _read_labels(args.labels) if args.labels else None
        res = group_by_session(events, cfg.get("sequencer", "session_pattern"), labels)
    elif mode == "window":
        width = args.window_seconds or cfg.get("sequencer", "window_seconds")
        res = group_by_time_window(events, width, cfg.get("sequencer", "step_seconds"))
    else:
        raise UsageError(f"unknown sequencing mode {mode!r}")
    with open(args.out, "w", encoding="utf-8") as fh:
        write_sequences(res.sequences, fh)
    print(f"sequences: {len(res.sequences)} (dropped events {res.dropped})", file=out)
    return EXIT_OK


def cmd_synth(args, out) -> int:
    cfg = _load_config(args)
    corpus = generate_synthetic_corpus(cfg.synthetic_spec())
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in ("train", "val", "test"):
        with open(out_dir / f"{name}.jsonl", "w", encoding="utf-8") as fh:
            write_sequences(getattr(corpus, name), fh)
    print(f"train={len(corpus.train)} val={len(corpus.val)} test={len(corpus.test)}", file=out)
    return EXIT_OK


def cmd_train(args, out) -> int:
    cfg = _load_config(args)
    for key in ("epochs", "alpha", "mask_ratio"):
        val = getattr(args, key, None)
        if val is not None:
            cfg.set("train", key, val)
    sequences = _read_sequences(args.sequences)
    train_seqs = [s for s in sequences if s.label != ANOMALOUS]
    if not train_seqs:
        raise DataError("no normal sequences to train on")
    print("# resolved config", file=out)
    print(cfg.to_text(), file=out)
    trained = fit(train_seqs, cfg.train_config(), cfg.model_settings())
    checkpoint.save(args.out, trained, extra={"config": cfg.resolved()})
    curve = args.loss_curve or str(args.out) + ".loss.jsonl"
    with open(curve, "w", encoding="utf-8") as fh:
        for rec in trained.loss_curve:
            fh.write(json.dumps(rec) + "\n")
    last = trained.loss_curve[-1]
    print(f"final loss: total={last['total']:.6f} mlkp={last['mlkp']:.6f} vhm={last['vhm']:.6f}", file=out)
    return EXIT_OK


def _detection_config(args, cfg: RunConfig, trained) -> D.DetectionConfig:
    if cfg.get("detect", "mask_ratio") is None:
        cfg.set("detect", "mask_ratio", trained.train_config.mask_ratio)
    if args.tuned:
        with open(args.tuned, encoding="utf-8") as fh:
            tuned = json.load(fh)
        for key, val in tuned.items():
            if key != "seed":
                cfg.set("detect", key, val)
    for key in ("g", "r", "mode", "masking", "distance_threshold"):
        val = getattr(args, key, None)
        if val is not None:
            cfg.set("detect", key, val)
    return cfg.detection_config()


def _tune(trained, val_seqs, base: D.DetectionConfig):
    scored = D.score_sequences(trained, val_seqs, base)
    return D.tune(scored, base, n_keys=trained.vocab.n_keys)


def cmd_tune(args, out) -> int:
    cfg = _load_config(args)
    trained, _ = _load_checkpoint(args.checkpoint)
    base = _detection_config(args, cfg, trained)
    tuned, metrics = _tune(trained, _read_sequences(args.validation), base)
    record = tuned.to_dict()
    text = json.dumps(record, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text, file=out)
    print(format_report(metrics, title="validation"), end="", file=out)
    return EXIT_OK


def cmd_detect(args, out) -> int:
    cfg = _load_config(args)
    trained, _ = _load_checkpoint(args.checkpoint)
    det = _detection_config(args, cfg, trained)
    verdicts = D.detect(trained, _read_sequences(args.sequences), det)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            D.write_verdicts(verdicts, fh, det)
    else:
        D.write_verdicts(verdicts, out, det)
    return EXIT_OK


def cmd_eval(args, out) -> int:
    cfg = _load_config(args)
    trained, _ = _load_checkpoint(args.checkpoint)
    det = _detection_config(args, cfg, trained)
    if args.validation:
        det, _ = _tune(trained, _read_sequences(args.validation), det)
    test = _read_sequences(args.sequences)
    if any(s.label not in (NORMAL, ANOMALOUS) for s in test):
        raise DataError("evaluation needs labeled sequences (normal/anomalous)")
    verdicts = D.detect(trained, test, det)
    by_id = {s.group_id: s.label for s in test}
    metrics = compute_metrics(verdicts, [by_id[v.group_id] for v in verdicts])
    report = format_report(metrics, det.to_dict())
    if args.report:
        Path(args.report).write_text(report, encoding="utf-8")
    if args.verdicts:
        with open(args.verdicts, "w", encoding="utf-8") as fh:
            D.write_verdicts(verdicts, fh, det)
    print(report, end="", file=out)
    return EXIT_OK


def cmd_export(args, out) -> int:
    trained, _ = _load_checkpoint(args.checkpoint)
    records = export_embeddings(trained, _read_sequences(args.sequences))
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            write_embeddings(records, fh)
    else:
        write_embeddings(records, out)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="logsentinel", description="Log anomaly detection with a masked-key transformer.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("parse", help="mine templates from a raw log file")
    p.add_argument("input")
    p.add_argument("--adapter", help="hdfs, bgl, thunderbird or generic")
    p.add_argument("--out-dir", required=True)
    common(p)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("sequence", help="group parsed events into sequences")
    p.add_argument("events")
    p.add_argument("--mode", choices=("session", "window"))
    p.add_argument("--window-seconds", type=float)
    p.add_argument("--labels", help="CSV of session,label (e.g. HDFS anomaly_label.csv)")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_sequence)

    p = sub.add_parser("synth", help="write a synthetic labeled corpus")
    p.add_argument("--out-dir", required=True)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on normal sequences")
    p.add_argument("sequences")
    p.add_argument("--out", required=True)
    p.add_argument("--loss-curve")
    p.add_argument("--epochs", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--mask-ratio", type=float)
    common(p)
    p.set_defaults(func=cmd_train)

    def detection_flags(p):
        p.add_argument("--g", type=int)
        p.add_argument("--r", type=int)
        p.add_argument("--mode", choices=D.MODES)
        p.add_argument("--masking", choices=D.MASKINGS)
        p.add_argument("--distance-threshold", type=float)
        p.add_argument("--tuned", help="JSON detection config written by `tune`")

    p = sub.add_parser("tune", help="grid-search g/r (or a distance threshold) on a validation split")
    p.add_argument("checkpoint")
    p.add_argument("validation")
    p.add_argument("--out")
    detection_flags(p)
    common(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("detect", help="write one verdict per sequence")
    p.add_argument("checkpoint")
    p.add_argument("sequences")
    p.add_argument("--out")
    detection_flags(p)
    common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="detect and report precision/recall/F1")
    p.add_argument("checkpoint")
    p.add_argument("sequences")
    p.add_argument("--validation", help="tune g/r on this split first")
    p.add_argument("--report")
    p.add_argument("--verdicts")
    detection_flags(p)
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-embeddings", help="dump h_DIST per sequence as CSV")
    p.add_argument("checkpoint")
    p.add_argument("sequences")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)
    return ap


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, out)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, KeyError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
