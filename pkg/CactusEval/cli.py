# cli.py

import argparse
import logging
import shlex
import sys
from pathlib import Path
from typing import Callable, Sequence

from CactusEval import __version__, settings
from CactusEval.annotations import (LABEL_FORMATS, ClassTaxonomy, Violation, default_taxonomy, load_taxonomy,
                                    parse_label_file, serialize_label_file)
from CactusEval.backends import BACKENDS, get_backend
from CactusEval.bench import (BenchEntry, compare, comparison_to_dict, export_samples, latency_to_dict,
                              load_metadata, measure, render_comparison, render_latency)
from CactusEval.dataset import (DatasetManifest, SplitAssignment, SplitSpec, audit_manifest, augment_rotations,
                                dump_manifest, lineage_leakage, materialize_layout, read_manifest, scan_layout,
                                split_dataset, stats)
from CactusEval.detector import (DetectorBackend, OracleConfig, apply_nms, dump_predictions, load_predictions,
                                 run_detector)
from CactusEval.errors import CactusError, ConfigError, LabelParseError, ReportError, ValidationError
from CactusEval.metrics import (INTERPOLATIONS, REPORT_COLUMNS, EvalConfig, build_scenes, confusion_matrix,
                                confusion_to_dict, evaluate, render_confusion, render_report, report_rows,
                                report_to_dict)
from CactusEval.pipelines import OutputPipeline, to_csv
from CactusEval.report import REPORT_FORMATS, gather, generate_report
from CactusEval.trainlog import (COLUMNS, export_series, load_adapter, parse_trainlog, render_summary, summarize,
                                 summary_to_dict)
from utils.Config import DEFAULTS, Config

logger = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace, Config, OutputPipeline], int]

# Tolerance when comparing label files against manifest boxes.
_LABEL_TOLERANCE = 1e-6


def configure_logging(level: str = settings.LOG_LEVEL, log_file: str | None = settings.LOG_FILE,
                      append: bool = settings.LOG_FILE_APPEND):
    """Diagnostics go to stderr, or to a file; stdout stays reserved for data."""
    if log_file:
        handler = logging.FileHandler(log_file, mode="a" if append else "w", encoding="utf-8")
    else:
        handler = logging.StreamHandler(sys.stderr)
    logging.basicConfig(level=level, format=settings.LOG_FORMAT, handlers=[handler], force=True)


def _taxonomy(config: Config) -> ClassTaxonomy:
    source = config.get("taxonomy")
    if source == "builtin":
        return default_taxonomy()
    return load_taxonomy(Path(source).read_text(encoding="utf-8"))


def _split(value: str | None) -> SplitAssignment | None:
    return SplitAssignment(value) if value else None


def _emit(text: str):
    sys.stdout.write(text)


def _eval_config(config: Config) -> EvalConfig:
    return EvalConfig(config.get("iou_threshold"), config.get("confidence_threshold"),
                      config.get("interpolation"))


def _backend(args: argparse.Namespace, config: Config, manifest: DatasetManifest,
             taxonomy: ClassTaxonomy) -> DetectorBackend:
    name = args.backend
    if name == "oracle":
        oracle = OracleConfig(args.jitter_px, args.drop_rate, args.ghost_rate, args.misclass_rate,
                              args.confidence_floor, config.get("seed"))
        return get_backend(name, config=oracle, num_classes=len(taxonomy))
    if name == "replay":
        if not args.predictions:
            raise ConfigError("the replay backend needs --predictions")
        return get_backend(name, predictions=load_predictions(args.predictions, manifest))
    if name == "process":
        if not args.command:
            raise ConfigError("the process backend needs --command")
        return get_backend(name, command=shlex.split(args.command))
    return get_backend(name, delay_ms=args.delay_ms)


def _label_violations(record, labels_dir: Path, label_format: str) -> list[Violation]:
    path = labels_dir / f"{record.image_id}.txt"
    if not path.is_file():
        return [Violation("labels", "missing-label", f"{record.image_id} has no label file {path.name}")]
    try:
        parsed = parse_label_file(path.read_text(encoding="utf-8"), label_format, record.dims)
    except (LabelParseError, ValidationError) as e:
        return [Violation("labels", "parse-error", f"{record.image_id}: {e}")]
    same = len(parsed) == len(record.annotations) and all(
        a.class_id == b.class_id and all(abs(x - y) <= _LABEL_TOLERANCE
                                         for x, y in zip(a.box.as_tuple(), b.box.as_tuple()))
        for a, b in zip(parsed, record.annotations))
    if same:
        return []
    return [Violation("labels", "mismatch", f"{record.image_id} label file disagrees with the manifest")]


def cmd_validate(args, config, pipeline) -> int:
    taxonomy = _taxonomy(config)
    records, found = audit_manifest(Path(args.manifest).read_text(encoding="utf-8"), taxonomy)
    if args.labels:
        for record in records:
            found += [(record.image_id, v)
                      for v in _label_violations(record, Path(args.labels), config.get("label_format"))]

    text = "".join(f"{image_id}\t{v.field}\t{v.rule}\t{v.message}\n" for image_id, v in found)
    pipeline.process("violations.txt", text)
    _emit(text)
    if found:
        logger.error(f"{len(found)} violations in {len(records)} readable records")
        return 1
    logger.info(f"{len(records)} records are valid")
    return 0


def cmd_split(args, config, pipeline) -> int:
    taxonomy = _taxonomy(config)
    spec = SplitSpec(config.get("train_frac"), config.get("val_frac"), config.get("test_frac"),
                     config.get("seed"), config.get("group_augmented"))
    manifest = split_dataset(read_manifest(args.manifest), spec, taxonomy)
    if leaked := lineage_leakage(manifest):
        logger.warning(f"{len(leaked)} rotation families span more than one split")
    pipeline.process("manifest.jsonl", dump_manifest(manifest))
    table = stats(manifest, taxonomy).render()
    pipeline.process("stats.txt", table)
    _emit(table)
    return 0


def cmd_augment(args, config, pipeline) -> int:
    taxonomy = _taxonomy(config)
    manifest = augment_rotations(read_manifest(args.manifest), config.get("angles"))
    pipeline.process("manifest.jsonl", dump_manifest(manifest))
    table = stats(manifest, taxonomy).render()
    pipeline.process("stats.txt", table)
    _emit(table)
    return 0


def cmd_materialize(args, config, pipeline) -> int:
    summary = materialize_layout(read_manifest(args.manifest), pipeline.folder / "dataset", _taxonomy(config),
                                 config.get("label_format"), args.source_root, config.get("workers"))
    pipeline.process("layout.json", summary.as_dict())
    return 0


def cmd_scan(args, config, pipeline) -> int:
    manifest = scan_layout(args.root, config.get("label_format"))
    pipeline.process("manifest.jsonl", dump_manifest(manifest))
    return 0


def cmd_convert(args, config, pipeline) -> int:
    manifest = read_manifest(args.manifest)
    source = Path(args.labels)
    for record in sorted(manifest.records, key=lambda r: r.image_id):
        path = source / f"{record.image_id}.txt"
        if not path.is_file():
            logger.warning(f"{record.image_id} has no label file, skipped")
            continue
        anns = parse_label_file(path.read_text(encoding="utf-8"), args.source_format, record.dims)
        pipeline.process(f"labels/{record.image_id}.txt",
                         serialize_label_file(anns, args.target_format, record.dims))
    return 0


def cmd_predict(args, config, pipeline) -> int:
    taxonomy = _taxonomy(config)
    manifest = read_manifest(args.manifest)
    with _backend(args, config, manifest, taxonomy) as backend:
        predictions, timings = run_detector(backend, manifest, _split(args.split), config.get("workers"))
    if args.nms:
        predictions = apply_nms(predictions, config.get("nms_iou_threshold"))
    pipeline.process("predictions.txt", dump_predictions(predictions))
    pipeline.process("timings.csv", to_csv(["image_id", "ms"], [[i, repr(ms)] for i, ms in timings]))
    return 0


def cmd_eval(args, config, pipeline) -> int:
    taxonomy = _taxonomy(config)
    manifest = read_manifest(args.manifest)
    predictions = load_predictions(args.predictions, manifest)
    split = _split(args.split)
    image_ids = [r.image_id for r in manifest.select(split)] if split else None
    data = report_to_dict(evaluate(manifest, predictions.detections, taxonomy, _eval_config(config), image_ids),
                          taxonomy)
    pipeline.process("eval.json", data)
    pipeline.process("eval.csv", to_csv(REPORT_COLUMNS, report_rows(data)))
    text = render_report(data)
    pipeline.process("eval.txt", text)
    _emit(text)
    return 0


def cmd_confusion(args, config, pipeline) -> int:
    taxonomy = _taxonomy(config)
    manifest = read_manifest(args.manifest)
    predictions = load_predictions(args.predictions, manifest)
    split = _split(args.split)
    image_ids = [r.image_id for r in manifest.select(split)] if split else None
    confusion = confusion_matrix(build_scenes(manifest, predictions.detections, image_ids), taxonomy,
                                 config.get("iou_threshold"), config.get("confidence_threshold"))
    pipeline.process("confusion.json", confusion_to_dict(confusion, taxonomy))
    text = render_confusion(confusion, taxonomy)
    pipeline.process("confusion.txt", text)
    _emit(text)
    return 0


def cmd_trainlog(args, config, pipeline) -> int:
    adapter = load_adapter(Path(args.adapter).read_text(encoding="utf-8")) if args.adapter else None
    rows = parse_trainlog(Path(args.log).read_text(encoding="utf-8"), adapter)
    summary = summarize(rows)
    pipeline.process("trainlog.json", summary_to_dict(summary))
    pipeline.process("series.csv", export_series(rows, args.fields or list(COLUMNS)))
    text = render_summary(summary)
    pipeline.process("trainlog.txt", text)
    _emit(text)
    return 0


def cmd_bench(args, config, pipeline) -> int:
    taxonomy = _taxonomy(config)
    manifest = read_manifest(args.manifest)
    with _backend(args, config, manifest, taxonomy) as backend:
        latency = measure(backend, manifest, config.get("warmup"), config.get("repeats"), _split(args.split))
    pipeline.process("latency.json", latency_to_dict(latency))
    pipeline.process("samples.csv", export_samples(latency))
    text = render_latency(latency)
    pipeline.process("latency.txt", text)

    if args.metadata:
        entries = load_metadata(Path(args.metadata).read_text(encoding="utf-8"))
        measured = BenchEntry(latency.backend, latency=latency)
        for idx, entry in enumerate(entries):
            if entry.backend == latency.backend:
                entries[idx] = BenchEntry(entry.backend, latency=latency, metadata=entry.metadata)
                break
        else:
            entries.append(measured)
        table = compare(entries)
        pipeline.process("comparison.json", comparison_to_dict(table))
        comparison = render_comparison(table)
        pipeline.process("comparison.txt", comparison)
        text = f"{text}\n{comparison}"
    _emit(text)
    return 0


def cmd_report(args, config, pipeline) -> int:
    inputs = gather(args.eval or (), args.latency or (), args.trainlog or (), args.metadata)
    document = generate_report(inputs, args.format)
    suffix = {"text": "txt", "json": "json", "csv": "csv"}[args.format]
    pipeline.process(f"report.{suffix}", document)
    _emit(document)
    return 0


def _named(value: str) -> tuple[str, str]:
    name, sep, path = value.partition("=")
    if not sep or not name or not path:
        raise argparse.ArgumentTypeError(f"expected NAME=PATH, got {value!r}")
    return name, path


def _common() -> argparse.ArgumentParser:
    """Flags every subcommand accepts; config keys keep their config names as dest."""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", dest="config_file", help=f"run configuration (default {settings.CONFIG_FILE})")
    parent.add_argument("--output-dir", dest="output_dir", help=f"output folder, also ${settings.OUTPUT_DIR_ENV}")
    parent.add_argument("--seed", type=int)
    parent.add_argument("--taxonomy", help="taxonomy YAML file, or 'builtin'")
    parent.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], default=settings.LOG_LEVEL)
    parent.add_argument("--log-file", default=settings.LOG_FILE)
    return parent


def _thresholds() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--iou-threshold", dest="iou_threshold", type=float)
    parent.add_argument("--confidence-threshold", dest="confidence_threshold", type=float)
    parent.add_argument("--interpolation", choices=INTERPOLATIONS)
    parent.add_argument("--split", choices=[s.value for s in SplitAssignment])
    return parent


def _backend_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("manifest")
    parent.add_argument("--backend", choices=sorted(BACKENDS), default="oracle")
    parent.add_argument("--split", choices=[s.value for s in SplitAssignment])
    parent.add_argument("--workers", type=int)
    parent.add_argument("--predictions", help="prediction file for the replay backend")
    parent.add_argument("--command", help="command line for the process backend")
    parent.add_argument("--delay-ms", type=float, default=5.0)
    parent.add_argument("--jitter-px", type=float, default=0.0)
    parent.add_argument("--drop-rate", type=float, default=0.0)
    parent.add_argument("--ghost-rate", type=float, default=0.0)
    parent.add_argument("--misclass-rate", type=float, default=0.0)
    parent.add_argument("--confidence-floor", type=float, default=1.0)
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="CactusEval", description="Cactus disease detection dataset and evaluation tools")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()

    def add(name: str, handler: Handler, help: str, parents: Sequence[argparse.ArgumentParser] = ()):
        p = sub.add_parser(name, help=help, parents=[common, *parents])
        p.set_defaults(handler=handler)
        return p

    p = add("validate", cmd_validate, "check a manifest, optionally against a label folder")
    p.add_argument("manifest")
    p.add_argument("--labels", help="folder of <image_id>.txt label files")
    p.add_argument("--label-format", dest="label_format", choices=LABEL_FORMATS)

    p = add("split", cmd_split, "assign train/val/test per class")
    p.add_argument("manifest")
    p.add_argument("--train-frac", dest="train_frac", type=float)
    p.add_argument("--val-frac", dest="val_frac", type=float)
    p.add_argument("--test-frac", dest="test_frac", type=float)
    p.add_argument("--group-augmented", dest="group_augmented", action="store_const", const=True)

    p = add("augment", cmd_augment, "add rotated copies of every base record")
    p.add_argument("manifest")
    p.add_argument("--angles", nargs="+", type=int)

    p = add("materialize", cmd_materialize, "write the images/labels directory tree")
    p.add_argument("manifest")
    p.add_argument("--source-root", help="folder the manifest paths are relative to")
    p.add_argument("--label-format", dest="label_format", choices=LABEL_FORMATS)
    p.add_argument("--workers", type=int)

    p = add("scan", cmd_scan, "rebuild a manifest from an images/labels tree")
    p.add_argument("root")
    p.add_argument("--label-format", dest="label_format", choices=LABEL_FORMATS)

    p = add("convert", cmd_convert, "convert label files between box forms")
    p.add_argument("manifest")
    p.add_argument("labels", help="folder of <image_id>.txt label files")
    p.add_argument("--from", dest="source_format", choices=LABEL_FORMATS, required=True)
    p.add_argument("--to", dest="target_format", choices=LABEL_FORMATS, required=True)

    p = add("predict", cmd_predict, "run a backend and write a prediction file", [_backend_flags()])
    p.add_argument("--nms", action="store_true", help="suppress overlapping detections per image")
    p.add_argument("--nms-iou-threshold", dest="nms_iou_threshold", type=float)

    for name, handler, help in (("eval", cmd_eval, "score predictions against the manifest"),
                                ("confusion", cmd_confusion, "class confusion at the operating point")):
        p = add(name, handler, help, [_thresholds()])
        p.add_argument("manifest")
        p.add_argument("predictions")

    p = add("trainlog", cmd_trainlog, "summarize a per-epoch training log")
    p.add_argument("log")
    p.add_argument("--adapter", help="YAML mapping of extra column names")
    p.add_argument("--fields", nargs="+", choices=COLUMNS)

    p = add("bench", cmd_bench, "measure per-image latency", [_backend_flags()])
    p.add_argument("--warmup", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--metadata", help="YAML list of published figures to compare against")

    p = add("report", cmd_report, "bundle artifacts into one comparison document")
    p.add_argument("--eval", action="append", type=_named, metavar="NAME=PATH")
    p.add_argument("--latency", action="append", metavar="PATH")
    p.add_argument("--trainlog", action="append", type=_named, metavar="NAME=PATH")
    p.add_argument("--metadata", metavar="PATH")
    p.add_argument("--format", choices=REPORT_FORMATS, default="text")
    return parser


def _arguments(args: argparse.Namespace) -> dict:
    skip = {"handler", "command", "config_file", "log_level", "log_file", *DEFAULTS}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _resolve_paths(args: argparse.Namespace, config: Config):
    """Configuration files and folders must exist before any work starts."""
    taxonomy = config.get("taxonomy")
    referenced = {"taxonomy": None if taxonomy == "builtin" else taxonomy,
                  "source root": getattr(args, "source_root", None),
                  "column adapter": getattr(args, "adapter", None)}
    for what, path in referenced.items():
        if path is not None and not Path(path).exists():
            raise ConfigError(f"{what} {path} does not exist")


def run_command(argv: Sequence[str] | None = None) -> int:
    """Exit status: 0 success, 1 data or validation failure, 2 usage or configuration error."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    try:
        config = Config(args.config_file, required=args.config_file is not None)
        config.set({key: getattr(args, key) for key in DEFAULTS if hasattr(args, key)})
        _resolve_paths(args, config)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    configure_logging(args.log_level, args.log_file)

    pipeline = OutputPipeline(config.get("output_dir"))
    status = 1
    try:
        pipeline.open()
        status = args.handler(args, config, pipeline)
    except (ConfigError, ReportError) as e:
        print(f"error: {e}", file=sys.stderr)
        status = 2
    except (CactusError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        status = 1
    finally:
        if pipeline.folder.is_dir():
            pipeline.close(args.command, config.effective(), _arguments(args))
    return status


def main():
    sys.exit(run_command())
