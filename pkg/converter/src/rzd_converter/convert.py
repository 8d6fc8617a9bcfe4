"""MATLAB benchmark archive -> RZD v1 dataset directory conversion.

Source schema (two .mat files, as published with the GZSL benchmark splits):

* feature file: ``features`` [d_x, n] per-image features, ``labels`` [n, 1]
  1-based class ids.
* split file: ``att`` [d_s, n_classes] per-class attributes and 1-based row
  index lists ``trainval_loc``, ``test_seen_loc``, ``test_unseen_loc``
  (the "proposed split" convention).

The emitted directory follows RZD v1: a JSON manifest plus headerless
little-endian binaries (features/labels/attributes/split indices). Features
pass through bit-exactly as float32; indices become 0-based; attributes are
min-max normalized per dimension to [0, 1] unless disabled.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.io

MANIFEST_NAME = "manifest.json"

FEATURE_KEYS = ("features", "labels")
SPLIT_KEYS = ("att", "trainval_loc", "test_seen_loc", "test_unseen_loc")

RZD_FILES = {
    "features": "features.bin",
    "labels": "labels.bin",
    "attributes": "attributes.bin",
    "train_seen": "train_seen_idx.bin",
    "test_seen": "test_seen_idx.bin",
    "test_unseen": "test_unseen_idx.bin",
}


class ConversionError(ValueError):
    """Raised when the source archive is missing keys or inconsistent."""


class VerificationError(ValueError):
    """Raised when an RZD directory does not match its source archive."""


@dataclass
class SourceArchive:
    """Paths to the feature file and split file of one benchmark dataset."""

    features_path: str
    splits_path: str

    def load(self) -> tuple[dict, dict]:
        for path in (self.features_path, self.splits_path):
            if not os.path.exists(path):
                raise ConversionError(f"source file not found: {path}")
        feats = scipy.io.loadmat(self.features_path)
        splits = scipy.io.loadmat(self.splits_path)
        missing = [k for k in FEATURE_KEYS if k not in feats]
        if missing:
            raise ConversionError(
                f"feature file {self.features_path} missing keys: {missing}")
        missing = [k for k in SPLIT_KEYS if k not in splits]
        if missing:
            raise ConversionError(
                f"split file {self.splits_path} missing keys: {missing}")
        return feats, splits


def _index_list(raw: np.ndarray, name: str, n: int) -> np.ndarray:
    """Flatten a 1-based MATLAB index column into 0-based row indices."""
    idx = np.asarray(raw).reshape(-1).astype(np.int64)
    if idx.size == 0:
        raise ConversionError(f"{name} split is empty")
    if idx.min() < 1 or idx.max() > n:
        raise ConversionError(
            f"{name} index out of range: values must lie in [1, {n}], "
            f"got [{idx.min()}, {idx.max()}]")
    return idx - 1


def _normalize_attributes(att: np.ndarray) -> np.ndarray:
    """Per-dimension min-max to [0, 1]; constant dimensions map to 0.5."""
    lo = att.min(axis=0, keepdims=True)
    hi = att.max(axis=0, keepdims=True)
    span = hi - lo
    flat = span == 0
    span = np.where(flat, 1.0, span)
    out = (att - lo) / span
    return np.where(flat, 0.5, out)


def _class_set(labels: np.ndarray, rows: np.ndarray) -> set[int]:
    return set(int(c) for c in np.unique(labels[rows]))


def convert(src: SourceArchive, out_dir: str, normalize: bool = True,
            name: str | None = None, log=print) -> dict:
    """Convert a source archive into an RZD v1 directory; returns the manifest."""
    feats_mat, splits_mat = src.load()

    features = np.ascontiguousarray(
        np.asarray(feats_mat["features"]).T.astype("<f4"))
    n = features.shape[0]
    labels = np.asarray(feats_mat["labels"]).reshape(-1).astype(np.int64)
    if labels.shape[0] != n:
        raise ConversionError(
            f"labels length {labels.shape[0]} != feature rows {n}")
    if labels.min() < 1:
        raise ConversionError("labels must be 1-based positive ids")
    labels = labels - 1

    attributes = np.asarray(splits_mat["att"]).T.astype(np.float64)
    n_classes = attributes.shape[0]
    if labels.max() >= n_classes:
        raise ConversionError(
            f"label id {labels.max() + 1} exceeds {n_classes} attribute rows")

    train_seen = _index_list(splits_mat["trainval_loc"], "trainval_loc", n)
    test_seen = _index_list(splits_mat["test_seen_loc"], "test_seen_loc", n)
    test_unseen = _index_list(splits_mat["test_unseen_loc"],
                              "test_unseen_loc", n)

    seen = _class_set(labels, train_seen) | _class_set(labels, test_seen)
    unseen = _class_set(labels, test_unseen)
    if seen & unseen:
        raise ConversionError(
            f"seen and unseen label spaces overlap: {sorted(seen & unseen)}")

    if normalize:
        attributes = _normalize_attributes(attributes)

    os.makedirs(out_dir, exist_ok=True)
    features.tofile(os.path.join(out_dir, RZD_FILES["features"]))
    labels.astype("<u4").tofile(os.path.join(out_dir, RZD_FILES["labels"]))
    attributes.astype("<f4").tofile(
        os.path.join(out_dir, RZD_FILES["attributes"]))
    for key, rows in (("train_seen", train_seen), ("test_seen", test_seen),
                      ("test_unseen", test_unseen)):
        rows.astype("<u4").tofile(os.path.join(out_dir, RZD_FILES[key]))

    manifest = {
        "format": "rzd", "version": 1,
        "name": name or os.path.splitext(
            os.path.basename(src.features_path))[0],
        "n": int(n), "d_x": int(features.shape[1]),
        "d_s": int(attributes.shape[1]), "n_classes": int(n_classes),
        "seen_classes": sorted(seen), "unseen_classes": sorted(unseen),
        "files": RZD_FILES,
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)

    if log is not None:
        log(f"converted {manifest['name']}: n={n} d_x={manifest['d_x']} "
            f"d_s={manifest['d_s']} classes={n_classes} "
            f"(seen={len(seen)}, unseen={len(unseen)})")
        log(f"splits: train_seen={len(train_seen)} test_seen={len(test_seen)} "
            f"test_unseen={len(test_unseen)}")
    return manifest


def _load_rzd(rzd_dir: str) -> tuple[dict, dict]:
    path = os.path.join(rzd_dir, MANIFEST_NAME)
    if not os.path.exists(path):
        raise VerificationError(f"missing manifest: {path}")
    manifest = json.load(open(path))
    n, d_x, d_s = manifest["n"], manifest["d_x"], manifest["d_s"]
    files = manifest["files"]

    def read(key, dtype, shape):
        arr = np.fromfile(os.path.join(rzd_dir, files[key]), dtype=dtype)
        return arr.reshape(shape) if shape else arr

    arrays = {
        "features": read("features", "<f4", (n, d_x)),
        "labels": read("labels", "<u4", None),
        "attributes": read("attributes", "<f4",
                           (manifest["n_classes"], d_s)),
        "train_seen": read("train_seen", "<u4", None),
        "test_seen": read("test_seen", "<u4", None),
        "test_unseen": read("test_unseen", "<u4", None),
    }
    return manifest, arrays


def verify_against_source(rzd_dir: str, src: SourceArchive,
                          log=print) -> bool:
    """Re-read both sides; assert bit-exact features and matching indices.

    Raises VerificationError naming the first mismatching coordinate.
    """
    manifest, rzd = _load_rzd(rzd_dir)
    feats_mat, splits_mat = src.load()

    src_features = np.ascontiguousarray(
        np.asarray(feats_mat["features"]).T.astype("<f4"))
    if src_features.shape != rzd["features"].shape:
        raise VerificationError(
            f"feature shape mismatch: source {src_features.shape} vs "
            f"rzd {rzd['features'].shape}")
    # bit-level comparison so that NaNs and -0.0 also count
    diff = src_features.view("<u4") != rzd["features"].view("<u4")
    if diff.any():
        row, col = map(int, np.argwhere(diff)[0])
        raise VerificationError(
            f"features differ at row {row}, column {col}: "
            f"source {src_features[row, col]!r} vs "
            f"rzd {rzd['features'][row, col]!r}")

    src_labels = np.asarray(feats_mat["labels"]).reshape(-1).astype(
        np.int64) - 1
    if not np.array_equal(src_labels, rzd["labels"].astype(np.int64)):
        where = int(np.nonzero(src_labels
                               != rzd["labels"].astype(np.int64))[0][0])
        raise VerificationError(f"labels differ at row {where}")

    n = src_features.shape[0]
    for key, loc in (("train_seen", "trainval_loc"),
                     ("test_seen", "test_seen_loc"),
                     ("test_unseen", "test_unseen_loc")):
        src_idx = _index_list(splits_mat[loc], loc, n)
        if set(src_idx.tolist()) != set(rzd[key].astype(np.int64).tolist()):
            raise VerificationError(f"{key} index set differs from {loc}")

    if manifest["d_s"] != np.asarray(splits_mat["att"]).shape[0]:
        raise VerificationError(
            f"d_s mismatch: manifest {manifest['d_s']} vs "
            f"source {np.asarray(splits_mat['att']).shape[0]}")

    if log is not None:
        log(f"verify: pass ({manifest['name']}: features bit-exact, "
            f"splits consistent)")
    return True
