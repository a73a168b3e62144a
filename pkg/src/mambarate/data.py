"""Embedding files, rating manifests, listener aggregation and splits.

EMB1 layout (all little-endian)::

    0..3    b"EMB1"
    4..7    uint32 dim
    8..11   uint32 frames
    12..15  reserved, zero
    16..    frames * dim float32, frame-major
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadFractions,
    BadMagic,
    DuplicateListenerEntry,
    EmptyIdList,
    InconsistentRecord,
    MissingColumn,
    NonFiniteValue,
    RatingOutOfRange,
    TruncatedFile,
    ZeroDimension,
)

EMB_MAGIC = b"EMB1"
EMB_HEADER = struct.Struct("<4sIII")
EMB_SUFFIX = ".emb"

MANIFEST_COLUMNS = ("utterance_id", "system_id", "sample_rate_hz", "listener_id", "rating")
RATING_MIN = 1.0
RATING_MAX = 5.0


@dataclass
class EmbeddingSequence:
    utterance_id: str
    data: np.ndarray  # (frames, dim) float32

    @property
    def frames(self) -> int:
        return int(self.data.shape[0])

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])


@dataclass
class RatingRecord:
    utterance_id: str
    system_id: str | None
    sample_rate_hz: int
    listener_ratings: list[float] = field(default_factory=list)
    listener_ids: list[str] = field(default_factory=list)


@dataclass
class DatasetSplit:
    train: list[str]
    val: list[str]
    test: list[str]
    seed: int

    def to_dict(self) -> dict:
        return {"seed": self.seed, "train": self.train, "val": self.val, "test": self.test}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSplit":
        return cls(list(d["train"]), list(d["val"]), list(d.get("test", [])), int(d["seed"]))


# --- EMB1 -----------------------------------------------------------------


def read_emb_header(buf: bytes, path: str | Path = "<bytes>") -> tuple[int, int]:
    if len(buf) < EMB_HEADER.size:
        raise TruncatedFile(f"{path}: header is {len(buf)} bytes, need {EMB_HEADER.size}")
    magic, dim, frames, _reserved = EMB_HEADER.unpack_from(buf)
    if magic != EMB_MAGIC:
        raise BadMagic(f"{path}: magic {magic!r}, expected {EMB_MAGIC!r}")
    if dim == 0 or frames == 0:
        raise ZeroDimension(f"{path}: dim={dim} frames={frames}")
    return dim, frames


def load_embedding(path: str | Path, utterance_id: str | None = None) -> EmbeddingSequence:
    """Read an EMB1 file. The utterance id defaults to the file stem."""
    path = Path(path)
    buf = path.read_bytes()
    dim, frames = read_emb_header(buf, path)
    expected = EMB_HEADER.size + 4 * dim * frames
    if len(buf) < expected:
        raise TruncatedFile(f"{path}: {len(buf)} bytes, header implies {expected}")
    if len(buf) > expected:
        raise TruncatedFile(f"{path}: {len(buf) - expected} trailing bytes after payload")
    data = np.frombuffer(buf, dtype="<f4", count=dim * frames, offset=EMB_HEADER.size)
    data = data.reshape(frames, dim).astype(np.float32)
    if not np.isfinite(data).all():
        raise NonFiniteValue(f"{path}: payload contains NaN or Inf")
    return EmbeddingSequence(utterance_id or path.stem, data)


def write_embedding(path: str | Path, emb: EmbeddingSequence | np.ndarray) -> None:
    data = emb.data if isinstance(emb, EmbeddingSequence) else emb
    data = np.asarray(data)
    if data.ndim != 2 or 0 in data.shape:
        raise ZeroDimension(f"embedding must be a non-empty 2-D matrix, got shape {data.shape}")
    if not np.isfinite(data).all():
        raise NonFiniteValue("refusing to write NaN or Inf")
    frames, dim = data.shape
    with open(path, "wb") as f:
        f.write(EMB_HEADER.pack(EMB_MAGIC, dim, frames, 0))
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def embedding_paths(root: str | Path) -> dict[str, Path]:
    """Map utterance id -> EMB1 file for every ``*.emb`` directly under root."""
    return {p.stem: p for p in sorted(Path(root).glob(f"*{EMB_SUFFIX}"))}


# --- manifest -------------------------------------------------------------


def load_manifest(path: str | Path) -> list[RatingRecord]:
    """Group one-row-per-listener CSV rows into one record per utterance.

    Records come back in order of first appearance.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
        return records_from_rows(reader, source=str(path))


def records_from_rows(rows: Iterable[dict], source: str = "<rows>") -> list[RatingRecord]:
    records: dict[str, RatingRecord] = {}
    for lineno, row in enumerate(rows, start=2):
        utt = (row.get("utterance_id") or "").strip()
        if not utt:
            raise MissingColumn(f"{source}:{lineno}: empty utterance_id")
        system = (row.get("system_id") or "").strip() or None
        try:
            rate = int(row["sample_rate_hz"])
            rating = float(row["rating"])
        except (TypeError, ValueError) as exc:
            raise MissingColumn(f"{source}:{lineno}: unparsable field ({exc})") from None
        listener = (row.get("listener_id") or "").strip()
        if not (RATING_MIN <= rating <= RATING_MAX):
            raise RatingOutOfRange(f"{source}:{lineno}: rating {rating} outside [1, 5]")
        if rate <= 0:
            raise MissingColumn(f"{source}:{lineno}: sample_rate_hz must be positive")

        rec = records.get(utt)
        if rec is None:
            rec = records[utt] = RatingRecord(utt, system, rate)
        elif rec.system_id != system or rec.sample_rate_hz != rate:
            raise InconsistentRecord(
                f"{source}:{lineno}: utterance {utt!r} has conflicting system/sample rate"
            )
        if listener and listener in rec.listener_ids:
            raise DuplicateListenerEntry(
                f"{source}:{lineno}: listener {listener!r} rated {utt!r} twice"
            )
        rec.listener_ids.append(listener)
        rec.listener_ratings.append(rating)
    return list(records.values())


def write_manifest(path: str | Path, rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for row in rows:
            w.writerow(["" if v is None else v for v in row])


def aggregate_rating(record: RatingRecord, mode: str = "mean") -> float:
    ratings = np.asarray(record.listener_ratings, dtype=np.float64)
    if ratings.size == 0:
        raise RatingOutOfRange(f"{record.utterance_id}: no listener ratings")
    if mode == "mean":
        return float(ratings.mean())
    if mode == "median":
        # np.median averages the two central values for even counts
        return float(np.median(ratings))
    raise ValueError(f"unknown aggregation mode {mode!r}")


def reference_scores(records: Iterable[RatingRecord], mode: str = "mean") -> dict[str, float]:
    return {r.utterance_id: aggregate_rating(r, mode) for r in records}


# --- splits ---------------------------------------------------------------


def split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    """round(fraction * n) for val and test, remainder to train."""
    _, f_val, f_test = fractions
    n_val = math.floor(f_val * n + 0.5)
    n_test = math.floor(f_test * n + 0.5)
    n_test = min(n_test, n)
    n_val = min(n_val, n - n_test)
    return n - n_val - n_test, n_val, n_test


def make_split(ids: Sequence[str], fractions: Sequence[float], seed: int) -> DatasetSplit:
    """Shuffle ids deterministically under ``seed`` and cut train/val/test.

    Input order does not matter: ids are sorted before shuffling.
    """
    ids = sorted(set(ids))
    if not ids:
        raise EmptyIdList("cannot split an empty id list")
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) == 2:
        fractions = (*fractions, 0.0)
    if len(fractions) != 3 or any(f < 0 or not math.isfinite(f) for f in fractions):
        raise BadFractions(f"fractions must be three nonnegative reals, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions sum to {sum(fractions)}, expected 1")
    n_train, n_val, _ = split_sizes(len(ids), fractions)
    perm = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    return DatasetSplit(
        train=shuffled[:n_train],
        val=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
        seed=int(seed),
    )
