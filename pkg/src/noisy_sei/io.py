"""On-disk formats.

SEIS dataset (all little-endian)::

    b"SEIS" | u16 version | u32 C | u32 N | u32 L
    N x ( u16 label | 2L float32: i0 q0 i1 q1 ... )

with a ``<file>.labels.csv`` sidecar ``index,label,split``.

Feature bank::

    b"SEIF" | u16 version | u32 N | u32 d | N*d float32

with an index CSV ``row,index`` mapping bank rows to dataset samples.

CSV tables: partition ``index,score,set,round`` and corruption flags
``index,true_label,observed_label,corrupted``.
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .label_noise import SPLIT_NAMES, GroundTruth, NoisyDataset
from .moco import FeatureBank
from .sim import LabeledSignals

SEIS_MAGIC = b"SEIS"
SEIF_MAGIC = b"SEIF"
VERSION = 1
_SPLIT_CODES = {v: k for k, v in SPLIT_NAMES.items()}


class FormatError(ValueError):
    pass


def _need(raw: bytes, end: int, what: str, path):
    if end > len(raw):
        raise FormatError(f"{path}: truncated {what} at byte offset {len(raw)} (expected {end} bytes)")


# --- SEIS ----------------------------------------------------------------------

def write_seis(path, signals: np.ndarray, labels: np.ndarray, num_classes: int,
               split: np.ndarray | None = None) -> None:
    signals = np.asarray(signals)
    n, _, length = signals.shape
    rec = np.zeros(n, dtype=[("label", "<u2"), ("iq", "<f4", (2 * length,))])
    rec["label"] = labels
    rec["iq"] = signals.transpose(0, 2, 1).reshape(n, 2 * length)
    with open(path, "wb") as fh:
        fh.write(SEIS_MAGIC + struct.pack("<HIII", VERSION, num_classes, n, length))
        fh.write(rec.tobytes())
    with open(f"{path}.labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "label", "split"])
        for i, lab in enumerate(labels):
            w.writerow([i, int(lab), "" if split is None else SPLIT_NAMES[int(split[i])]])


def read_seis(path) -> LabeledSignals:
    raw = Path(path).read_bytes()
    _need(raw, 4, "magic", path)
    if raw[:4] != SEIS_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r} at byte offset 0")
    _need(raw, 18, "header", path)
    version, c, n, length = struct.unpack_from("<HIII", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte offset 4")
    dt = np.dtype([("label", "<u2"), ("iq", "<f4", (2 * length,))])
    _need(raw, 18 + n * dt.itemsize, f"record block ({n} records)", path)
    extra = len(raw) - 18 - n * dt.itemsize
    if extra:
        raise FormatError(f"{path}: {extra} trailing bytes at byte offset {18 + n * dt.itemsize}")
    rec = np.frombuffer(raw, dt, n, 18)
    signals = rec["iq"].reshape(n, length, 2).transpose(0, 2, 1).copy()
    labels = rec["label"].astype(np.int64)
    split = None
    side = Path(f"{path}.labels.csv")
    if side.exists():
        rows = list(csv.DictReader(side.open()))
        if len(rows) != n:
            raise FormatError(f"{side}: {len(rows)} rows for {n} records")
        if any(int(r["label"]) != labels[i] for i, r in enumerate(rows)):
            raise FormatError(f"{side}: labels disagree with {path}")
        if all(r["split"] for r in rows):
            split = np.array([_SPLIT_CODES[r["split"]] for r in rows], dtype=np.int64)
    return LabeledSignals(signals, labels, int(c), split)


# --- corruption flags --------------------------------------------------------------

def write_flags(path, truth: GroundTruth, observed: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "true_label", "observed_label", "corrupted"])
        for i, (t, o, z) in enumerate(zip(truth.true_labels, observed, truth.corrupted)):
            w.writerow([i, int(t), int(o), int(bool(z))])


def read_flags(path) -> GroundTruth:
    rows = list(csv.DictReader(Path(path).open()))
    return GroundTruth(np.array([int(r["true_label"]) for r in rows], dtype=np.int64),
                       np.array([r["corrupted"] == "1" for r in rows], dtype=bool))


def write_noisy(path, ds: NoisyDataset) -> None:
    write_seis(path, ds.signals, ds.observed_labels, ds.num_classes, ds.split)
    truth = ds.ground_truth()
    if truth is not None:
        write_flags(f"{path}.flags.csv", truth, ds.observed_labels)


def read_noisy(path) -> NoisyDataset:
    """A split SEIS file as a noisy dataset; truth comes from the flags sidecar if present."""
    data = read_seis(path)
    if data.split is None:
        raise FormatError(f"{path}: dataset carries no split assignment")
    flags = Path(f"{path}.flags.csv")
    truth = read_flags(flags) if flags.exists() else None
    eta = 0.0
    if truth is not None:
        n_train = int(np.sum(data.split == 0))
        eta = float(truth.corrupted.sum() / n_train) if n_train else 0.0
    return NoisyDataset(data.signals, data.labels, data.split, eta, data.num_classes, truth)


# --- feature bank ------------------------------------------------------------------

def write_bank(path, bank: FeatureBank) -> None:
    f = np.asarray(bank.features)
    with open(path, "wb") as fh:
        fh.write(SEIF_MAGIC + struct.pack("<HII", VERSION, *f.shape))
        fh.write(np.ascontiguousarray(f, dtype="<f4").tobytes())
    with open(f"{path}.index.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "index"])
        for r, i in enumerate(bank.indices):
            w.writerow([r, int(i)])


def read_bank(path) -> FeatureBank:
    raw = Path(path).read_bytes()
    _need(raw, 4, "magic", path)
    if raw[:4] != SEIF_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r} at byte offset 0")
    _need(raw, 14, "header", path)
    version, n, d = struct.unpack_from("<HII", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte offset 4")
    _need(raw, 14 + 4 * n * d, "feature block", path)
    feats = np.frombuffer(raw, "<f4", n * d, 14).reshape(n, d).astype(np.float32)
    side = Path(f"{path}.index.csv")
    if side.exists():
        idx = np.array([int(r["index"]) for r in csv.DictReader(side.open())], dtype=np.int64)
        if len(idx) != n:
            raise FormatError(f"{side}: {len(idx)} rows for {n} features")
    else:
        idx = np.arange(n)
    return FeatureBank(feats, idx)


# --- partitions ----------------------------------------------------------------------

def write_partition(path, indices: np.ndarray, scores: np.ndarray, clean_mask: np.ndarray,
                    round_: int) -> None:
    """One row per bank sample: dataset index, consistency score, set name, round."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "score", "set", "round"])
        for i, s, c in zip(indices, scores, clean_mask):
            w.writerow([int(i), repr(float(s)), "clean" if c else "discard", int(round_)])


def read_partition(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    rows = list(csv.DictReader(Path(path).open()))
    idx = np.array([int(r["index"]) for r in rows], dtype=np.int64)
    scores = np.array([float(r["score"]) for r in rows])
    clean = np.array([r["set"] == "clean" for r in rows], dtype=bool)
    rnd = int(rows[0]["round"]) if rows else 0
    return idx, scores, clean, rnd


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def read_labels(path) -> tuple[np.ndarray, np.ndarray]:
    """``(index, label)`` columns of a labels or flags CSV; a SEIS path reads its sidecar."""
    p = Path(path)
    if p.suffix == ".seis" or p.read_bytes()[:4] == SEIS_MAGIC:
        p = Path(f"{path}.labels.csv")
    rows = list(csv.DictReader(p.open()))
    key = "label" if rows and "label" in rows[0] else "observed_label"
    return (np.array([int(r["index"]) for r in rows], dtype=np.int64),
            np.array([int(r[key]) for r in rows], dtype=np.int64))
