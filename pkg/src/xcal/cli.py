"""``xcal`` command line: calibrate on one domain, evaluate on another.

Exit codes: 0 success, 2 usage error, 3 data or format error, 4 numeric
failure. Failures print a single ``xcal: error[<kind>]: <message>`` line
on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import xten
from .bn import bn_adjust_calibrate, fold_bn, naive_calibrate
from .data import FAMILIES, DomainSpec, generate_domain, load_dataset
from .errors import DataError, NumericError
from .graph import Graph, load_model, save_model
from .gram import PoolEntrySkipped, format_ranking, load_gram, mean_gram, rank_pool, save_gram, summary_discrepancy
from .metrics import dice, format_report, miou, top1_accuracy
from .parallel import ENV_THREADS, ordered_map, resolve_threads
from .quant import DEFAULT_NBINS, SUPPORTED_BITS, fake_quant_run, load_qparams, save_qparams

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    """Everything a command needs, checked before any work starts."""

    command: str
    model: Path | None = None
    data: Path | None = None
    pool: Path | None = None
    qparams: Path | None = None
    grams: list[Path] = field(default_factory=list)
    bits: int = 8
    bn_adjust: bool = False
    layers: list[str] = field(default_factory=list)
    nbins: int = DEFAULT_NBINS
    batch_size: int = 64
    threads: int = 1
    out: Path | None = None
    seed: int = 42
    from_ppm: bool = False

    def validate(self) -> None:
        if self.bits not in SUPPORTED_BITS:
            raise UsageError(f"--bits must be one of {SUPPORTED_BITS}")
        if self.nbins < 1 or self.batch_size < 1:
            raise UsageError("--nbins and --batch-size must be positive")
        if self.model is not None and not _model_manifest(self.model).is_file():
            raise DataError(f"model not found: {self.model}")
        for p in (self.data, self.pool):
            if p is not None and not p.is_dir():
                raise DataError(f"not a directory: {p}")
        if self.qparams is not None and not self.qparams.is_file():
            raise DataError(f"qparams file not found: {self.qparams}")
        for g in self.grams:
            if not g.exists():
                raise DataError(f"Gram summary not found: {g}")


def _model_manifest(p: Path) -> Path:
    return p / "model.json" if p.is_dir() else p


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(","))


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=_positive, default=None,
                        help=f"worker threads (the {ENV_THREADS} environment variable wins)")
    data_opts = _Parser(add_help=False)
    data_opts.add_argument("--from-ppm", action="store_true",
                           help="read *.ppm (binary P6) samples instead of *.xten")
    data_opts.add_argument("--batch-size", type=int, default=64)

    p = _Parser(prog="xcal", description="Cross-domain calibration for post-training quantization.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("calibrate", parents=[common, data_opts], help="compute qparams.json and a folded model")
    c.add_argument("--model", type=Path, required=True)
    c.add_argument("--data", type=Path, required=True, help="calibration dataset root")
    c.add_argument("--bits", type=int, default=8, choices=SUPPORTED_BITS)
    c.add_argument("--bn-adjust", action="store_true", help="re-estimate BatchNorm statistics on the data first")
    c.add_argument("--nbins", type=int, default=DEFAULT_NBINS)
    c.add_argument("--out", type=Path, required=True, help="output directory")

    q = sub.add_parser("quantize-eval", parents=[common, data_opts], help="report FP32 and quantized metrics")
    q.add_argument("--model", type=Path, required=True)
    q.add_argument("--data", type=Path, required=True, help="evaluation dataset root")
    q.add_argument("--qparams", type=Path, help="omit for an FP32-only report")
    q.add_argument("--metric", choices=("top1", "miou", "dice"), default="top1")
    q.add_argument("--ignore-index", type=int, default=None)
    q.add_argument("--out", type=Path, help="also write the CSV report here")

    g = sub.add_parser("gram", parents=[common, data_opts], help="mean Gram summary of a dataset")
    g.add_argument("--model", type=Path, required=True)
    g.add_argument("--data", type=Path, required=True)
    g.add_argument("--layer", action="append", required=True, help="tap node id; repeat for several layers")
    g.add_argument("--name", default=None, help="dataset name recorded in gram.json")
    g.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("select", parents=[common], help="rank a pool of Gram summaries against a source")
    s.add_argument("--source", type=Path, required=True)
    s.add_argument("--pool", type=Path, required=True, help="directory with one Gram summary per subdirectory")
    s.add_argument("--out", type=Path)

    d = sub.add_parser("discrepancy", parents=[common], help="discrepancy between two Gram summaries")
    d.add_argument("--gram-a", type=Path, required=True)
    d.add_argument("--gram-b", type=Path, required=True)

    gd = sub.add_parser("gen-domain", parents=[common], help="write a synthetic labeled domain")
    gd.add_argument("--out", type=Path, required=True)
    gd.add_argument("--n", type=_positive, required=True)
    gd.add_argument("--seed", type=int, default=42)
    gd.add_argument("--family", choices=sorted(FAMILIES), default="stripes")
    gd.add_argument("--shift", type=_floats, default=(0.0, 0.0, 0.0), help="per-channel shift, comma separated")
    gd.add_argument("--contrast", type=float, default=1.0)
    gd.add_argument("--noise", type=float, default=0.0)
    gd.add_argument("--resolution", type=_ints, default=(32, 32), help="H,W")

    i = sub.add_parser("infer", parents=[common, data_opts], help="predictions for every sample")
    i.add_argument("--model", type=Path, required=True)
    i.add_argument("--data", type=Path, required=True)
    i.add_argument("--qparams", type=Path, help="run fake-quantized with these parameters")
    i.add_argument("--out", type=Path, help="CSV file (classification) or directory (masks)")
    return p


def _config(args) -> RunConfig:
    grams = [args.gram_a, args.gram_b] if args.command == "discrepancy" else []
    if args.command == "select":
        grams = [args.source]
    cfg = RunConfig(
        command=args.command,
        model=getattr(args, "model", None),
        data=getattr(args, "data", None),
        pool=getattr(args, "pool", None),
        qparams=getattr(args, "qparams", None),
        grams=grams,
        bits=getattr(args, "bits", 8),
        bn_adjust=getattr(args, "bn_adjust", False),
        layers=getattr(args, "layer", None) or [],
        nbins=getattr(args, "nbins", DEFAULT_NBINS),
        batch_size=getattr(args, "batch_size", 64),
        out=getattr(args, "out", None),
        seed=getattr(args, "seed", 42),
        from_ppm=getattr(args, "from_ppm", False),
    )
    try:
        cfg.threads = resolve_threads(args.threads)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    cfg.validate()
    return cfg


def _load(cfg: RunConfig) -> tuple[Graph, object]:
    graph = load_model(cfg.model)
    data = load_dataset(cfg.data, graph.input_shape, graph.normalization, from_ppm=cfg.from_ppm)
    return graph, data


def _folded(graph: Graph) -> Graph:
    return fold_bn(graph) if graph.nodes_of("BatchNorm2D") else graph


def _outputs(graph: Graph, qparams, x: np.ndarray, cfg: RunConfig) -> np.ndarray:
    chunks = [x[i:i + cfg.batch_size] for i in range(0, len(x), cfg.batch_size)]
    return np.concatenate(list(ordered_map(lambda b: fake_quant_run(graph, qparams, b), chunks, cfg.threads)))


def _emit(text: str, out: Path | None) -> None:
    sys.stdout.write(text)
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")


def cmd_calibrate(cfg: RunConfig) -> None:
    graph, data = _load(cfg)
    calibrate = bn_adjust_calibrate if cfg.bn_adjust else naive_calibrate
    folded, qparams = calibrate(graph, data, cfg.bits, cfg.nbins, cfg.batch_size, cfg.threads)
    cfg.out.mkdir(parents=True, exist_ok=True)
    save_qparams(cfg.out / "qparams.json", qparams, cfg.bits)
    save_model(folded, cfg.out / "model.json")


def _score(metric: str, out: np.ndarray, data, ignore_index) -> float:
    if metric == "top1":
        if data.labels is None:
            raise DataError(f"{data.root}: top1 needs labels.csv")
        return top1_accuracy(out, data.labels)
    if data.masks is None:
        raise DataError(f"{data.root}: {metric} needs *.mask.xten files")
    if out.ndim != 4:
        raise DataError(f"{metric} needs N x K x H x W model outputs, got {out.shape}")
    pred = out.argmax(axis=1)
    gt = np.stack([np.asarray(m).reshape(pred.shape[1:]) for m in data.masks])
    if metric == "dice":
        return dice(pred > 0, gt > 0)
    return miou(pred, gt, out.shape[1], ignore_index)


def cmd_quantize_eval(cfg: RunConfig, metric: str, ignore_index) -> None:
    graph, data = _load(cfg)
    graph = _folded(graph)
    fp32 = _score(metric, _outputs(graph, None, data.samples, cfg), data, ignore_index)
    rows = [("fp32", fp32)]
    if cfg.qparams is not None:
        qparams, _ = load_qparams(cfg.qparams)
        try:
            quant = _score(metric, _outputs(graph, qparams, data.samples, cfg), data, ignore_index)
        except KeyError as exc:
            raise DataError(f"{cfg.qparams}: {exc.args[0]}") from exc
        rows += [("quantized", quant), ("gap", fp32 - quant)]
    _emit(format_report(rows), cfg.out)


def cmd_gram(cfg: RunConfig, name: str | None) -> None:
    graph, data = _load(cfg)
    name = cfg.data.name if name is None else name
    summaries = [
        mean_gram(graph, layer, data, cfg.batch_size, cfg.threads, source=name) for layer in cfg.layers
    ]
    save_gram(summaries, cfg.out)


def cmd_select(cfg: RunConfig) -> None:
    source = load_gram(cfg.grams[0])
    pool, skipped = {}, []
    for entry in sorted(p for p in cfg.pool.iterdir() if p.is_dir()):
        try:
            pool[entry.name] = load_gram(entry)
        except DataError as exc:
            skipped.append((entry.name, str(exc)))
    if not pool and not skipped:
        raise DataError(f"{cfg.pool}: empty pool")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PoolEntrySkipped)
        rows = rank_pool(source, pool, skipped)
    for name, reason in skipped:
        print(f"xcal: skipped[{name}]: {reason}", file=sys.stderr)
    _emit(format_ranking(rows), cfg.out)


def cmd_discrepancy(cfg: RunConfig) -> None:
    d = summary_discrepancy(load_gram(cfg.grams[0]), load_gram(cfg.grams[1]))
    print(repr(d))


def cmd_gen_domain(args) -> None:
    try:
        spec = DomainSpec(
            seed=args.seed, family=args.family, shift=args.shift,
            contrast=args.contrast, noise=args.noise, resolution=args.resolution,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if len(spec.resolution) != 2 or min(spec.resolution) < 1:
        raise UsageError("--resolution must be H,W with positive sizes")
    generate_domain(spec, args.n, args.out)


def cmd_infer(cfg: RunConfig) -> None:
    graph, data = _load(cfg)
    graph = _folded(graph)
    qparams = load_qparams(cfg.qparams)[0] if cfg.qparams is not None else None
    try:
        out = _outputs(graph, qparams, data.samples, cfg)
    except KeyError as exc:
        raise DataError(f"{cfg.qparams}: {exc.args[0]}") from exc
    pred = out.argmax(axis=1)
    if pred.ndim == 1:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["filename", "label"])
        writer.writerows(zip(data.files, pred.tolist()))
        _emit(buf.getvalue(), cfg.out)
        return
    if cfg.out is None:
        raise UsageError("mask outputs need --out DIR")
    cfg.out.mkdir(parents=True, exist_ok=True)
    for fname, mask in zip(data.files, pred):
        xten.save(cfg.out / (fname[: -len(Path(fname).suffix)] + ".mask.xten"), mask.astype(np.int32))


def _run(argv) -> None:
    args = build_parser().parse_args(argv)
    if args.command == "gen-domain":
        resolve_threads(args.threads)
        cmd_gen_domain(args)
        return
    cfg = _config(args)
    if cfg.command == "calibrate":
        cmd_calibrate(cfg)
    elif cfg.command == "quantize-eval":
        cmd_quantize_eval(cfg, args.metric, args.ignore_index)
    elif cfg.command == "gram":
        cmd_gram(cfg, args.name)
    elif cfg.command == "select":
        cmd_select(cfg)
    elif cfg.command == "discrepancy":
        cmd_discrepancy(cfg)
    elif cfg.command == "infer":
        cmd_infer(cfg)


def _fail(kind: str, exc: BaseException, code: int) -> int:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"xcal: error[{kind}]: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        _run(argv)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except (NumericError, ArithmeticError) as exc:
        return _fail("numeric", exc, EXIT_NUMERIC)
    except (DataError, OSError, KeyError) as exc:
        return _fail("data", exc, EXIT_DATA)
    except ValueError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
