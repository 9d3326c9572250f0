"""``sidechan`` command line.

Exit codes: 0 success, 2 a run finished but one of its checks failed (the
bundle is still written), 64 usage or configuration error, 65 bad input data.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from pathlib import Path

from . import __version__
from .attack import LabeledSample, evaluate, fit_tree, stratified_split
from .config import load_config
from .errors import (CalibrationError, ConfigurationError, MissingEvent, NotCountedError,
                     ParseError, ProfileLookupError, SegmentationError)
from .experiments import EXPERIMENTS, ReportBundle, atomic_write, run
from .imagegen import build_dataset, generate, manifest_csv
from .telemetry import (DEFAULT_CORE, DEFAULT_LLC_EVENT, ObservationRow, export_trace, ingest,
                        observations_csv, parse_perf_csv, parse_procstat_trace,
                        read_observations_csv)

EXIT_OK = 0
EXIT_CHECK_FAILED = 2
EXIT_USAGE = 64
EXIT_DATA = 65


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {getattr(exc, 'strerror', None) or exc}") from None


def _config(args):
    return load_config(args.config, profile=getattr(args, "profile", None),
                       mode=getattr(args, "mode", None), cache=getattr(args, "cache", None),
                       load=getattr(args, "load", None), per_class=getattr(args, "per_class", None),
                       seed=getattr(args, "seed", None), write_pgm=getattr(args, "pgm", False))


# generate ------------------------------------------------------------------

def cmd_generate(args) -> int:
    cli_cfg = _config(args)
    cfg = cli_cfg.experiment
    scenarios = cfg.scenarios_for("combined")
    dataset = build_dataset([(s.content, s.aspect) for s in scenarios], cfg.per_class,
                            cfg.seeds.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "manifest.csv", manifest_csv(dataset))
    if cli_cfg.write_pgm:
        img_dir = out / "images"
        img_dir.mkdir(exist_ok=True)
        for spec, _ in dataset:
            generate(spec).write_pgm(img_dir / f"{spec.content.value}_{spec.aspect}_{spec.seed}.pgm")
    print(f"wrote {len(dataset)} rows to {out / 'manifest.csv'}")
    return EXIT_OK


# run -----------------------------------------------------------------------

def _fmt_e9(x: float) -> str:
    return f"{x / 1e9:.3f}e9"


def summary_lines(bundle: ReportBundle) -> list[str]:
    s = bundle.summary
    name = bundle.experiment
    lines = [f"experiment: {name}  profile: {bundle.config.profile.name}  "
             f"mode: {bundle.config.mode.value}"]
    if name == "geometry":
        for cache, c in s["cache"].items():
            groups = "  ".join(f"{a}: {g['time_s']['mean']:.2f}s" for a, g in c["groups"].items())
            lines.append(f"[{cache}] {groups}  ratio={c['ratio']:.3f}  "
                         f"overlap={'yes' if c['overlap'] else 'no'}")
    elif name == "semantic":
        for lab, c in s["classes"].items():
            lines.append(f"{lab}: density={c['density']['mean']:.3f}  "
                         f"time={c['time_s']['mean']:.2f}s  llc={_fmt_e9(c['llc_misses']['mean'])}")
        lines.append(f"time spread: {100 * s['time_spread']:.2f}%")
        lines.append(f"gap: {s['verdict']} ({_fmt_e9(s['llc_gap'])} vs noise floor "
                     f"{_fmt_e9(s['noise_floor'])})")
    elif name == "combined":
        acc, n = s["accuracy"], s["n_test"]
        lines.append(f"accuracy={acc:.3f}±{math.sqrt(acc * (1 - acc) / n):.3f} (n_test={n})")
        for lab, r in s["recall"].items():
            lines.append(f"  {lab}: precision={s['precision'][lab]:.2f} recall={r:.2f}")
        lines.append(f"geometry accuracy={s['geometry_accuracy']:.3f}  "
                     f"within-geometry accuracy={s['within_geometry_accuracy']:.3f}")
    elif name == "mitigation":
        for mode, m in s["modes"].items():
            groups = "  ".join(f"{a}: {g['time_s']['mean']:.2f}s" for a, g in m["groups"].items())
            lines.append(f"[{mode}] {groups}  ratio={m['ratio']:.3f}  "
                         f"geometry accuracy={m['geometry_accuracy']:.3f}")
        for mode, o in s["overhead_pct"].items():
            lines.append(f"overhead {mode}: " + "  ".join(f"{a}: {v:+.1f}%" for a, v in o.items()))
    elif name == "load":
        for cond, c in s["conditions"].items():
            means = "  ".join(f"{lab}: {_fmt_e9(v['llc_misses']['mean'])}"
                              for lab, v in c["classes"].items())
            lines.append(f"[{cond}] {means}  delta={_fmt_e9(c['delta'])}")
        if "shift" in s:
            lines.append("shift: " + "  ".join(f"{k}: {_fmt_e9(v)}" for k, v in s["shift"].items()))
    elif name == "calibrate":
        for p in s["sweep"]:
            lines.append(f"llc_noise_abs={_fmt_e9(p['llc_noise_abs'])}  accuracy={p['accuracy']:.3f}")
        lines.append(f"selected llc_noise_abs={_fmt_e9(s['selected'])} "
                     f"(accuracy {s['selected_accuracy']:.3f}, target {s['target']}±{s['tolerance']})")
    for check, ok in bundle.checks.items():
        lines.append(f"check {check}: {'PASS' if ok else 'FAIL'}")
    return lines


def cmd_run(args) -> int:
    if args.experiment not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {args.experiment!r} "
                         f"(choose from {', '.join(EXPERIMENTS)})")
    cfg = _config(args).experiment
    bundle = run(args.experiment, cfg)
    out = bundle.write(args.out or Path("runs") / args.experiment)
    for line in summary_lines(bundle):
        print(line)
    print(f"bundle: {out}")
    return EXIT_OK if bundle.passed else EXIT_CHECK_FAILED


# ingest / export -------------------------------------------------------------

def _read_labels(path) -> dict[int, str]:
    reader = csv.reader(io.StringIO(_read(path)))
    header = next(reader, None)
    if header is None or [h.strip() for h in header[:2]] != ["trial", "label"]:
        raise DataError(f"{path}: expected header 'trial,label'")
    labels = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            trial = int(row[0])
            label = row[1].strip()
        except (ValueError, IndexError):
            raise DataError(f"{path}:line {lineno}: bad label row") from None
        if not label or trial in labels:
            raise DataError(f"{path}:line {lineno}: empty or duplicate label for trial {trial}")
        labels[trial] = label
    return labels


def cmd_ingest(args) -> int:
    records = parse_perf_csv(_read(args.perf), args.delimiter, source=args.perf)
    samples = parse_procstat_trace(_read(args.procstat), source=args.procstat)
    observations = ingest(records, samples, args.llc_event, args.core, args.busy_threshold,
                          args.min_duration)
    labels = _read_labels(args.labels) if args.labels else {}
    if labels and set(labels) != set(range(len(observations))):
        raise DataError(f"{len(observations)} detected trials but labels cover "
                        f"{len(labels)} trial ids")
    rows = [ObservationRow(i, obs, labels.get(i, "")) for i, obs in enumerate(observations)]
    text = observations_csv(rows)
    if args.out:
        atomic_write(Path(args.out), text)
        print(f"wrote {len(rows)} observations to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_export_trace(args) -> int:
    rows = read_observations_csv(_read(args.observations), source=args.observations)
    if not rows:
        raise DataError(f"{args.observations}: no observations")
    rows.sort(key=lambda r: r.trial)
    export = export_trace([r.observation for r in rows], core=args.core, period_s=args.period,
                          align_edges=not args.no_align, llc_event=args.llc_event,
                          delimiter=args.delimiter)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "procstat.trace", export.procstat)
    atomic_write(out / "perf.csv", export.perf)
    labels = "trial,label\n" + "".join(f"{i},{r.label}\n" for i, r in enumerate(rows))
    atomic_write(out / "labels.csv", labels)
    print(f"exported {len(rows)} trials to {out}")
    return EXIT_OK


# attack --------------------------------------------------------------------

def cmd_attack(args) -> int:
    rows = read_observations_csv(_read(args.observations), source=args.observations)
    if not rows:
        raise DataError(f"{args.observations}: no observations")
    if args.labels:
        labels = _read_labels(args.labels)
        trials = {r.trial for r in rows}
        if trials != set(labels):
            raise DataError(f"label/feature mismatch: {len(trials ^ set(labels))} trial ids "
                            f"appear in only one of the two files")
        samples = [LabeledSample(r.observation, labels[r.trial]) for r in rows]
    else:
        unlabeled = [r.trial for r in rows if not r.label]
        if unlabeled:
            raise DataError(f"{len(unlabeled)} rows have no label (first trial {unlabeled[0]})")
        samples = [LabeledSample(r.observation, r.label) for r in rows]
    try:
        train, test = stratified_split(samples, args.split, args.seed)
    except ConfigurationError as exc:
        raise DataError(str(exc)) from None
    tree = fit_tree(train, args.max_depth, args.min_leaf)
    report = evaluate(tree, test)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "report.json", report.to_json())
    atomic_write(out / "confusion.csv", report.confusion.to_csv())
    atomic_write(out / "tree.txt", tree.export_text() + "\n")
    print(f"accuracy={report.accuracy:.3f} (n_test={len(test)}, depth={tree.depth()})")
    print(f"report: {out}")
    return EXIT_OK


# parser --------------------------------------------------------------------

def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sidechan", description="Dynamic-resolution VLM side-channel laboratory.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def common(sp, experiment_flags=True):
        sp.add_argument("--config", help="JSON config file (default: $SIDECHAN_CONFIG)")
        sp.add_argument("--per-class", type=_positive_int, dest="per_class")
        sp.add_argument("--seed", type=int, help="sets the dataset, noise and split seeds")
        if experiment_flags:
            sp.add_argument("--profile")
            sp.add_argument("--mode", choices=["dynamic", "constant-pad", "static"])
            sp.add_argument("--cache", choices=["cold", "warm"])
            sp.add_argument("--load", choices=["idle", "stressed"])

    g = sub.add_parser("generate", help="write the dataset manifest (and optional PGM images)")
    common(g, experiment_flags=False)
    g.add_argument("--out", default="dataset")
    g.add_argument("--pgm", action="store_true", help="also write images as PGM")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run an experiment and write its report bundle")
    r.add_argument("experiment", help=" | ".join(EXPERIMENTS))
    common(r)
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    i = sub.add_parser("ingest", help="turn perf + /proc/stat captures into observations")
    i.add_argument("perf")
    i.add_argument("procstat")
    i.add_argument("--llc-event", default=DEFAULT_LLC_EVENT, dest="llc_event")
    i.add_argument("--delimiter", default=",")
    i.add_argument("--core", default=DEFAULT_CORE)
    i.add_argument("--busy-threshold", type=float, default=0.8, dest="busy_threshold")
    i.add_argument("--min-duration", type=float, default=2.0, dest="min_duration")
    i.add_argument("--labels", help="CSV with header trial,label")
    i.add_argument("--out", help="output CSV (default: stdout)")
    i.set_defaults(func=cmd_ingest)

    e = sub.add_parser("export-trace", help="render observations as perf + /proc/stat captures")
    e.add_argument("observations", help="CSV with trial,time_s,llc_misses[,label] columns")
    e.add_argument("--out", default="trace")
    e.add_argument("--core", default=DEFAULT_CORE)
    e.add_argument("--period", type=float, default=1.0)
    e.add_argument("--no-align", action="store_true", dest="no_align",
                   help="sample on the period grid only (durations quantised)")
    e.add_argument("--llc-event", default=DEFAULT_LLC_EVENT, dest="llc_event")
    e.add_argument("--delimiter", default=",")
    e.set_defaults(func=cmd_export_trace)

    a = sub.add_parser("attack", help="train and evaluate the tree on an observation CSV")
    a.add_argument("observations")
    a.add_argument("--labels", help="CSV with header trial,label (overrides the label column)")
    a.add_argument("--split", type=float, default=0.7)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--max-depth", type=_positive_int, default=3, dest="max_depth")
    a.add_argument("--min-leaf", type=_positive_int, default=5, dest="min_leaf")
    a.add_argument("--out", default="attack")
    a.set_defaults(func=cmd_attack)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except ProfileLookupError as exc:
        print(f"sidechan: error: {exc.args[0]}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ConfigurationError, CalibrationError) as exc:
        print(f"sidechan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ParseError, SegmentationError, MissingEvent, NotCountedError) as exc:
        print(f"sidechan: error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry_point() -> None:
    sys.exit(main())
