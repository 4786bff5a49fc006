"""Command-line entry point: ``synth``, ``prepare``, ``train`` and ``eval``.

Run configuration lives in one JSON file whose keys mirror the flags; any flag
given on the command line overrides the file. Diagnostics go to stderr at the
level named by ``PULL_LOG_LEVEL`` (default ``WARNING``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import PullError
from .evaluation import GridResult, evaluate_scores, trend
from .ingest import FORMATS, Corpus, SynthSpec, generate_synthetic, read_labeled_log, write_jsonl
from .model import EncoderConfig
from .tokenizer import build_vocabulary, encode_many, tokenize
from .trainer import EncoderScorer, RocchioScorer, TrainConfig, run_pull
from .windowing import window_grid, write_weak_dataset

logger = logging.getLogger("pull_logs")

METHODS = ("pull", "rocchio")
ROCCHIO_PREFIX = "baseline_rocchio"


@dataclass
class RunConfig:
    dataset: Optional[str] = None
    format: str = "supercomputer"
    synth: Optional[SynthSpec] = None
    deltas: list[int] = field(default_factory=lambda: [1000])
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    method: str = "pull"
    tfidf: bool = False
    output_dir: str = "runs"

    def validate(self) -> "RunConfig":
        if (self.dataset is None) == (self.synth is None):
            raise PullError("exactly one of a dataset path or a synth section is required")
        if self.format not in FORMATS:
            raise PullError(f"unknown format {self.format!r}; expected one of {FORMATS}")
        if self.method not in METHODS:
            raise PullError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.deltas or any(d < 0 for d in self.deltas):
            raise PullError("deltas must be a non-empty list of non-negative integers")
        if self.synth is not None:
            self.synth.validate()
        self.encoder.validate()
        self.train.validate()
        return self

    def dataset_name(self) -> str:
        if self.synth is not None:
            return f"synthetic-seed{self.synth.seed}"
        return Path(self.dataset).stem

    def to_json(self) -> dict:
        out = asdict(self)
        out["synth"] = asdict(self.synth) if self.synth is not None else None
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise PullError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(obj)
        kw["encoder"] = _build(EncoderConfig, kw.get("encoder") or {})
        kw["train"] = _build(TrainConfig, kw.get("train") or {})
        if kw.get("synth") is not None:
            kw["synth"] = _build(SynthSpec, kw["synth"])
        if "deltas" in kw:
            kw["deltas"] = [int(d) for d in kw["deltas"]]
        return cls(**kw)


def _build(cls, values: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise PullError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**values)


def _parse_deltas(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# flag dest -> (config section, key)
_ENCODER_FLAGS = {
    "seq_len": "seq_len", "embed_dim": "embed_dim", "hidden_dim": "hidden_dim",
    "layers": "n_layers", "heads": "n_heads", "dropout": "dropout",
}
_TRAIN_FLAGS = {
    "epochs": "epochs", "batch_size": "batch_size", "lr": "lr", "weight_decay": "weight_decay",
    "iterations": "iterations", "threshold": "threshold",
}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file (if any) with every explicitly given flag layered on top."""
    cfg = RunConfig()
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise PullError(f"config file not found: {path}")
        cfg = RunConfig.from_json(json.loads(path.read_text()))
    if args.dataset is not None:
        cfg.dataset, cfg.synth = args.dataset, None
    if args.format is not None:
        cfg.format = args.format
    if args.delta is not None:
        cfg.deltas = args.delta
    if args.method is not None:
        cfg.method = args.method
    if args.tfidf:
        cfg.tfidf = True
    if args.out is not None:
        cfg.output_dir = args.out
    enc = {key: getattr(args, dest) for dest, key in _ENCODER_FLAGS.items() if getattr(args, dest) is not None}
    train = {key: getattr(args, dest) for dest, key in _TRAIN_FLAGS.items() if getattr(args, dest) is not None}
    if args.seed is not None:
        enc["seed"] = train["seed"] = args.seed
    cfg.encoder = replace(cfg.encoder, **enc)
    cfg.train = replace(cfg.train, **train)
    return cfg.validate()


def load_corpus(cfg: RunConfig) -> Corpus:
    if cfg.synth is not None:
        return generate_synthetic(cfg.synth)
    return read_labeled_log(cfg.dataset, cfg.format)


def run_dir_for(cfg: RunConfig, delta_ms: int) -> Path:
    root = Path(cfg.output_dir)
    if cfg.method == "rocchio":
        root = root / ROCCHIO_PREFIX
    return root / f"delta_{delta_ms}"


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SynthSpec(
        seed=args.seed, n_lines=args.lines, n_normal_templates=args.normal_templates,
        n_anomaly_templates=args.anomaly_templates, anomaly_rate=args.anomaly_rate,
    )
    corpus = generate_synthetic(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(corpus, out)
    print(f"wrote {len(corpus)} lines ({int(corpus.labels().sum())} abnormal) to {out}")
    return 0


def cmd_prepare(args: argparse.Namespace) -> int:
    corpus = read_labeled_log(args.dataset, args.format)
    if corpus.skipped:
        logger.warning("skipped %d malformed lines in %s", corpus.skipped, args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for delta, ds in window_grid(corpus, args.delta).items():
        write_weak_dataset(ds, out / f"weak_{delta}.jsonl")
        print(f"delta={delta}ms |U|={int(ds.u_count)} |P|={int(ds.p_count)} total={len(ds)}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    corpus = load_corpus(cfg)
    contents = corpus.contents()
    vocab = build_vocabulary(tokenize(c) for c in contents).freeze()
    ids, mask = encode_many(contents, vocab, cfg.encoder.seq_len)
    logger.info("corpus %s: %d lines, vocabulary %d", cfg.dataset_name(), len(corpus), len(vocab))

    for delta, ds in window_grid(corpus, cfg.deltas).items():
        ds.with_inputs(ids, mask)
        run_dir = run_dir_for(cfg, delta)
        run_dir.mkdir(parents=True, exist_ok=True)
        vocab.save(run_dir / "vocab.txt")
        run_cfg = cfg.to_json() | {"deltas": [delta], "dataset_name": cfg.dataset_name()}
        (run_dir / "run_config.json").write_text(json.dumps(run_cfg, indent=2) + "\n")
        if cfg.method == "rocchio":
            scorer = RocchioScorer(len(vocab), cfg.tfidf)
        else:
            scorer = EncoderScorer(cfg.encoder, cfg.train, vocab)
        reports, final = run_pull(ds, cfg.encoder, cfg.train, scorer, run_dir, vocab)
        print(
            f"{cfg.method} delta={delta}ms: {len(reports)} iterations, "
            f"{int(final.sum())}/{len(final)} lines labelled abnormal -> {run_dir}"
        )
    return 0


def _read_smoothed(path: Path) -> tuple[np.ndarray, np.ndarray]:
    lids, smoothed = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            obj = json.loads(line)
            lids.append(obj["line_id"])
            smoothed.append(obj["smoothed"])
    return np.asarray(lids, dtype=np.int64), np.asarray(smoothed, dtype=np.float64)


def evaluate_run(run_dir: Path, dataset: Optional[str] = None, fmt: Optional[str] = None) -> dict:
    """Metrics for every iteration of one run directory; writes ``metrics.json``."""
    if not run_dir.is_dir():
        raise PullError(f"run directory not found: {run_dir}")
    cfg_path = run_dir / "run_config.json"
    if not cfg_path.is_file():
        raise PullError(f"{run_dir} has no run_config.json")
    raw_cfg = json.loads(cfg_path.read_text())
    name = raw_cfg.pop("dataset_name", None)
    cfg = RunConfig.from_json(raw_cfg)
    if dataset is not None:
        cfg.dataset, cfg.synth = dataset, None
    if fmt is not None:
        cfg.format = fmt
    truth = load_corpus(cfg).labels()

    iterations = sorted(int(p.stem.rsplit("_", 1)[1]) for p in run_dir.glob("scores_iter_*.jsonl"))
    if not iterations:
        raise PullError(f"{run_dir} contains no scores_iter_*.jsonl files")
    per_iter = {}
    for k in iterations:
        lids, smoothed = _read_smoothed(run_dir / f"scores_iter_{k}.jsonl")
        if lids.max(initial=-1) >= len(truth):
            raise PullError(f"scores in {run_dir} reference line ids beyond the ground-truth corpus")
        per_iter[k] = evaluate_scores(smoothed, truth[lids], cfg.train.threshold)

    result = {
        "dataset": name or cfg.dataset_name(),
        "delta_ms": cfg.deltas[0],
        "method": cfg.method,
        "iterations": {str(k): m for k, m in per_iter.items()},
    }
    if len(iterations) > 1:
        for mode in ("best", "fixed"):
            series, verdict = trend([per_iter[k][mode]["f1"] for k in iterations])
            result[f"trend_{mode}"] = {"f1": series, "verdict": verdict}
    (run_dir / "metrics.json").write_text(json.dumps(result, indent=2) + "\n")
    return result


def cmd_eval(args: argparse.Namespace) -> int:
    grid = GridResult()
    for run in args.runs:
        res = evaluate_run(Path(run), args.dataset, args.format)
        for k, metrics in res["iterations"].items():
            grid.add_report_metrics(res["dataset"], res["delta_ms"], res["method"], int(k), metrics)
        last = res["iterations"][max(res["iterations"], key=int)]
        verdict = res.get("trend_best", {}).get("verdict", "n/a")
        print(
            f"{run}: F1(best)={last['best']['f1']:.4f} F1(tau)={last['fixed']['f1']:.4f} trend={verdict}"
        )
    grid_path = Path(args.grid)
    grid_path.parent.mkdir(parents=True, exist_ok=True)
    grid.to_csv(grid_path)
    print(f"wrote {grid_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pull-logs", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labelled synthetic corpus (jsonl)")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--lines", type=int, default=20_000)
    p.add_argument("--anomaly-rate", type=float, default=0.03)
    p.add_argument("--normal-templates", type=int, default=30)
    p.add_argument("--anomaly-templates", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="write weak-label files for one or more window sizes")
    p.add_argument("--dataset", required=True)
    p.add_argument("--format", choices=FORMATS, default="supercomputer")
    p.add_argument("--delta", type=_parse_deltas, default=[1000], help="comma-separated window sizes in ms")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="run the iterative strategy (or the Rocchio baseline)")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--dataset")
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--delta", type=_parse_deltas)
    p.add_argument("--seq-len", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--tfidf", action="store_true", help="tf-idf features for the Rocchio baseline")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score run directories against ground truth")
    p.add_argument("runs", nargs="+", help="run directories written by `train`")
    p.add_argument("--dataset", help="ground-truth corpus (defaults to the one in run_config.json)")
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--grid", default="grid.csv", help="output path of the aggregated grid")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("PULL_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PullError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
