"""Command-line entry point.

Exit codes:
    0  success
    1  unexpected error
    2  configuration error
    3  data error (missing/invalid manifest or embeddings)
    4  training diverged
    5  embedding dimension does not match the checkpoint
    6  prediction for an utterance missing from the manifest
    7  codec value out of range
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import ModelCheckpoint, load_checkpoint, read_header, save_checkpoint
from .config import load_run_config
from .data import (
    EMB_HEADER,
    EMB_MAGIC,
    embedding_paths,
    load_embedding,
    load_manifest,
    make_split,
    read_emb_header,
    reference_scores,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DimMismatch,
    DivergedLoss,
    EmptyTrainSet,
    EmptyValSet,
    MambaRateError,
    OutOfRange,
    UnknownUtterance,
    WrongDimension,
)
from .metrics import ScorePair, evaluate_pairs, format_csv, format_table
from .model import ModelConfig, parameter_count
from .rbf import RbfConfig, decode, encode
from .train import TrainingData, train

log = logging.getLogger("mambarate")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_DIM = 5
EXIT_UNKNOWN_UTT = 6
EXIT_RANGE = 7

_EXIT_CODES = (
    (ConfigError, EXIT_CONFIG),
    (DivergedLoss, EXIT_DIVERGED),
    (DimMismatch, EXIT_DIM),
    (UnknownUtterance, EXIT_UNKNOWN_UTT),
    ((OutOfRange, WrongDimension), EXIT_RANGE),
    ((DataError, CheckpointError), EXIT_DATA),
    ((MambaRateError, ValueError), EXIT_ERROR),
)

CHECKPOINT_NAME = "checkpoint.mrc"
LOG_NAME = "train_log.csv"
SPLIT_NAME = "split.json"


# --- train ----------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if not cfg.data.manifest.is_file():
        raise DataError(f"manifest not found: {cfg.data.manifest}")
    if not cfg.data.embedding_dir.is_dir():
        raise DataError(f"embedding directory not found: {cfg.data.embedding_dir}")
    records = load_manifest(cfg.data.manifest)
    ratings = reference_scores(records, cfg.data.target_mode)
    available = embedding_paths(cfg.data.embedding_dir)
    missing = [u for u in ratings if u not in available]
    if missing:
        raise DataError(
            f"{len(missing)} utterance(s) have no embedding in {cfg.data.embedding_dir}, "
            f"e.g. {missing[0]!r}"
        )
    features = {u: load_embedding(available[u]).data.astype(np.float64) for u in ratings}
    dims = {f.shape[1] for f in features.values()}
    if len(dims) != 1:
        raise DataError(f"embeddings have mixed dimensions {sorted(dims)}")
    model_cfg = cfg.model_config(input_dim=dims.pop())
    if model_cfg.input_dim != next(iter(features.values())).shape[1]:
        raise DataError(
            f"model.input_dim={model_cfg.input_dim} but embeddings have "
            f"dim {next(iter(features.values())).shape[1]}"
        )

    split = make_split(list(ratings), cfg.data.split, cfg.data.seed)
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    (out / SPLIT_NAME).write_text(json.dumps(split.to_dict(), indent=2) + "\n", encoding="utf-8")

    try:
        result = train(
            TrainingData(features, ratings), split, model_cfg, cfg.train, cfg.rbf,
            log_path=out / LOG_NAME,
        )
    except (EmptyTrainSet, EmptyValSet) as exc:
        raise ConfigError(f"split leaves a set empty: {exc}") from None
    result.checkpoint.extra["train_config"] = cfg.train.to_dict()
    save_checkpoint(out / CHECKPOINT_NAME, result.checkpoint)
    print(
        f"best epoch {result.best_epoch} val_loss {result.best_val_loss:.6f} "
        f"-> {out / CHECKPOINT_NAME}"
    )
    return EXIT_OK


# --- predict --------------------------------------------------------------


def _collect_embeddings(paths) -> dict[str, Path]:
    found: dict[str, Path] = {}
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            found.update(embedding_paths(p))
        elif p.is_file():
            found[p.stem] = p
        else:
            raise DataError(f"no such file or directory: {p}")
    if not found:
        raise DataError("no embedding files given")
    return found


def predict_scores(ckpt: ModelCheckpoint, paths: dict[str, Path]) -> dict[str, float]:
    model = ckpt.model()
    scores = {}
    for utt in sorted(paths):
        emb = load_embedding(paths[utt], utt)
        if emb.dim != ckpt.config.input_dim:
            raise DimMismatch(
                f"{paths[utt]}: embedding dim {emb.dim}, checkpoint expects "
                f"{ckpt.config.input_dim}"
            )
        scores[utt] = decode(model.predict(emb.data.astype(np.float64)), ckpt.rbf)
    return scores


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    scores = predict_scores(ckpt, _collect_embeddings(args.embeddings))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["utterance_id", "predicted_mos"])
    for utt, s in scores.items():
        w.writerow([utt, repr(s)])
    _emit(buf.getvalue(), args.output)
    return EXIT_OK


# --- evaluate -------------------------------------------------------------


def load_predictions(path: str | Path) -> dict[str, float]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if not {"utterance_id", "predicted_mos"} <= set(reader.fieldnames or []):
            raise DataError(f"{path}: expected columns utterance_id,predicted_mos")
        return {row["utterance_id"]: float(row["predicted_mos"]) for row in reader}


def build_pairs(predictions: dict[str, float], records, mode: str) -> list[ScorePair]:
    by_id = {r.utterance_id: r for r in records}
    refs = reference_scores(records, mode)
    pairs = []
    for utt, pred in predictions.items():
        if utt not in by_id:
            raise UnknownUtterance(f"utterance {utt!r} is not in the manifest")
        pairs.append(ScorePair(utt, by_id[utt].system_id, pred, refs[utt]))
    return pairs


def cmd_evaluate(args) -> int:
    for p in (args.predictions, args.manifest):
        if not Path(p).is_file():
            raise DataError(f"file not found: {p}")
    predictions = load_predictions(args.predictions)
    pairs = build_pairs(predictions, load_manifest(args.manifest), args.aggregation)
    reports = evaluate_pairs(pairs, tau_variant=args.tau)
    sys.stdout.write(format_table(reports, args.digits))
    if args.csv:
        Path(args.csv).write_text(format_csv(reports), encoding="utf-8")
    return EXIT_OK


# --- codec ----------------------------------------------------------------


def _rbf_from_args(args) -> RbfConfig:
    return RbfConfig(
        num_centers=args.num_centers,
        range_min=args.min,
        range_max=args.max,
        sigma=args.sigma,
        noise_scale=args.noise_scale,
        seed=args.seed,
    )


def cmd_codec(args) -> int:
    cfg = _rbf_from_args(args)
    if args.action == "encode":
        if len(args.values) != 1:
            raise ConfigError("encode takes exactly one value")
        rng = np.random.default_rng(cfg.seed) if args.noise else None
        vec = encode(float(args.values[0]), cfg, apply_noise=args.noise, rng=rng)
        print(" ".join(f"{v:.9f}" for v in vec))
    else:
        parts = [p for raw in args.values for p in raw.replace(",", " ").split()]
        try:
            vec = [float(p) for p in parts]
        except ValueError as exc:
            raise ConfigError(f"decode: {exc}") from None
        print(f"{decode(vec, cfg):.9f}")
    return EXIT_OK


# --- inspect --------------------------------------------------------------


def inspect_path(path: Path) -> str:
    with open(path, "rb") as f:
        head = f.read(EMB_HEADER.size)
    size = path.stat().st_size
    if head[:4] == EMB_MAGIC:
        dim, frames = read_emb_header(head, path)
        expected = EMB_HEADER.size + 4 * dim * frames
        status = "ok" if size == expected else f"size mismatch (expected {expected})"
        return f"{path}: EMB1 dim={dim} frames={frames} bytes={size} {status}"
    header, _ = read_header(path.read_bytes(), path)
    cfg = ModelConfig(**header["model"])
    n_tensors = len(header["tensors"])
    extra = header.get("extra", {})
    lines = [
        f"{path}: checkpoint epoch={header.get('epoch')} tensors={n_tensors} "
        f"parameters={parameter_count(cfg)}",
        "  model: " + json.dumps(header["model"], sort_keys=True),
        "  rbf: " + json.dumps(header["rbf"], sort_keys=True),
    ]
    if "val_loss" in extra:
        lines.append(f"  val_loss: {extra['val_loss']}")
    return "\n".join(lines)


def cmd_inspect(args) -> int:
    for p in args.paths:
        path = Path(p)
        if not path.is_file():
            raise DataError(f"file not found: {path}")
        print(inspect_path(path))
    return EXIT_OK


# --- plumbing -------------------------------------------------------------


def _emit(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mambarate",
        description="Train and evaluate RBF-coded MOS predictors on precomputed embeddings.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON run config")
    p.add_argument("config", help="path to the run config (JSON)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score EMB1 embeddings with a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("embeddings", nargs="+", help="EMB1 files or directories of *.emb")
    p.add_argument("-o", "--output", help="write CSV here instead of stdout")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="compare predictions with manifest ratings")
    p.add_argument("predictions", help="CSV with utterance_id,predicted_mos")
    p.add_argument("manifest", help="ratings manifest CSV")
    p.add_argument("--aggregation", choices=("mean", "median"), default="mean")
    p.add_argument("--tau", choices=("b", "a"), default="b", help="Kendall tau variant")
    p.add_argument("--digits", type=int, default=3)
    p.add_argument("--csv", help="also write the report as CSV to this path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("codec", help="encode a rating or decode an RBF vector")
    p.add_argument("action", choices=("encode", "decode"))
    p.add_argument("values", nargs="+", help="rating (encode) or vector components (decode)")
    p.add_argument("--num-centers", type=int, default=16)
    p.add_argument("--min", type=float, default=1.0)
    p.add_argument("--max", type=float, default=5.0)
    p.add_argument("--sigma", type=float, default=None, help="default: center spacing")
    p.add_argument("--noise", action="store_true", help="jitter the rating before encoding")
    p.add_argument("--noise-scale", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_codec)

    p = sub.add_parser("inspect", help="print EMB1 headers and checkpoint summaries")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (MambaRateError, ValueError) as exc:
        code = next(c for kind, c in _EXIT_CODES if isinstance(exc, kind))
        print(f"mambarate {args.command}: error: {exc}", file=sys.stderr)
        return code

if __name__ == "__main__":
    sys.exit(main())
