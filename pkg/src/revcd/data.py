"""Dataset directory format ("RZD v1"), synthetic data, and checkpoints.

All binary payloads are little-endian and headerless; the JSON manifest
carries the shapes. Checkpoints are a single file: magic, version, JSON
header with tensor names/dims/offsets, then concatenated float32 payloads.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .autodiff import BatchNormState, Tensor
from .model import Denoiser, DenoiserConfig
from .optim import AdamState
from .rng import RngState

MANIFEST_NAME = "manifest.json"
CKPT_MAGIC = b"RVCDCKPT"
CKPT_VERSION = 1


class DatasetError(ValueError):
    """Raised when a dataset directory fails validation."""


class CheckpointError(ValueError):
    """Raised when a checkpoint file is corrupt or incompatible."""


@dataclass
class GzslDataset:
    name: str
    features: np.ndarray    # [n, d_x] float32
    labels: np.ndarray      # [n] int, 0-based class ids
    attributes: np.ndarray  # [n_classes, d_s] float32 in [0, 1]
    train_seen: np.ndarray
    test_seen: np.ndarray
    test_unseen: np.ndarray
    seen_classes: np.ndarray
    unseen_classes: np.ndarray

    @property
    def d_x(self) -> int:
        return self.features.shape[1]

    @property
    def d_s(self) -> int:
        return self.attributes.shape[1]

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def validate(self) -> None:
        seen = set(int(c) for c in self.seen_classes)
        unseen = set(int(c) for c in self.unseen_classes)
        if seen & unseen:
            raise DatasetError(f"seen/unseen class overlap: {sorted(seen & unseen)}")
        if self.labels.shape != (self.n,):
            raise DatasetError(
                f"labels length {self.labels.shape[0]} != n rows {self.n}")
        if np.any(self.labels < 0) or np.any(self.labels >= len(self.attributes)):
            raise DatasetError("label outside [0, n_classes)")
        for split_name, rows, allowed in (("train_seen", self.train_seen, seen),
                                          ("test_seen", self.test_seen, seen),
                                          ("test_unseen", self.test_unseen, unseen)):
            if len(rows) and (rows.min() < 0 or rows.max() >= self.n):
                raise DatasetError(f"{split_name} index out of range")
            bad = set(int(c) for c in self.labels[rows]) - allowed
            if bad:
                raise DatasetError(
                    f"{split_name} contains labels outside its class set: {sorted(bad)}")
        all_rows = np.concatenate([self.train_seen, self.test_seen,
                                   self.test_unseen])
        if len(np.unique(all_rows)) != len(all_rows):
            raise DatasetError("split index sets are not disjoint")
        if np.any(np.linalg.norm(self.attributes, axis=1) == 0):
            raise DatasetError("all-zero attribute row")
        if self.attributes.min() < -1e-6 or self.attributes.max() > 1 + 1e-6:
            raise DatasetError("attributes must lie in [0, 1]")

    def seen_train_view(self) -> "GzslDataset":
        """A view exposing only what training may read."""
        return self


def save_dataset(dataset: GzslDataset, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    files = {
        "features": "features.bin", "labels": "labels.bin",
        "attributes": "attributes.bin", "train_seen": "train_seen_idx.bin",
        "test_seen": "test_seen_idx.bin", "test_unseen": "test_unseen_idx.bin",
    }
    manifest = {
        "format": "rzd", "version": 1, "name": dataset.name,
        "n": int(dataset.n), "d_x": int(dataset.d_x), "d_s": int(dataset.d_s),
        "n_classes": int(dataset.attributes.shape[0]),
        "seen_classes": [int(c) for c in dataset.seen_classes],
        "unseen_classes": [int(c) for c in dataset.unseen_classes],
        "files": files,
    }
    dataset.features.astype("<f4").tofile(os.path.join(out_dir, files["features"]))
    dataset.labels.astype("<u4").tofile(os.path.join(out_dir, files["labels"]))
    dataset.attributes.astype("<f4").tofile(os.path.join(out_dir, files["attributes"]))
    for key in ("train_seen", "test_seen", "test_unseen"):
        getattr(dataset, key).astype("<u4").tofile(os.path.join(out_dir, files[key]))
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _read_binary(path: str, dtype: str, expected: int, what: str) -> np.ndarray:
    if not os.path.exists(path):
        raise DatasetError(f"missing dataset file for {what}: {path}")
    arr = np.fromfile(path, dtype=dtype)
    if arr.size != expected:
        raise DatasetError(
            f"{what}: expected {expected} values in {path}, found {arr.size}")
    return arr


def load_dataset(dir_path: str) -> GzslDataset:
    manifest_path = os.path.join(dir_path, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise DatasetError(f"missing manifest: {manifest_path}")
    with open(manifest_path) as fh:
        m = json.load(fh)
    if m.get("format") != "rzd" or m.get("version") != 1:
        raise DatasetError(f"unsupported dataset format: "
                           f"{m.get('format')!r} v{m.get('version')!r}")
    n, d_x, d_s = int(m["n"]), int(m["d_x"]), int(m["d_s"])
    n_classes = int(m["n_classes"])
    files = m["files"]

    def path(key):
        return os.path.join(dir_path, files[key])

    features = _read_binary(path("features"), "<f4", n * d_x,
                            "features").reshape(n, d_x)
    labels = _read_binary(path("labels"), "<u4", n, "labels").astype(np.int64)
    attributes = _read_binary(path("attributes"), "<f4", n_classes * d_s,
                              "attributes").reshape(n_classes, d_s)
    if attributes.shape[0] != n_classes:
        raise DatasetError(
            f"manifest n_classes={n_classes} disagrees with attribute rows="
            f"{attributes.shape[0]}")

    def idx(key):
        p = path(key)
        if not os.path.exists(p):
            raise DatasetError(f"missing dataset file for {key}: {p}")
        return np.fromfile(p, dtype="<u4").astype(np.int64)

    dataset = GzslDataset(
        name=m.get("name", "unnamed"), features=features, labels=labels,
        attributes=attributes, train_seen=idx("train_seen"),
        test_seen=idx("test_seen"), test_unseen=idx("test_unseen"),
        seen_classes=np.array(m["seen_classes"], dtype=np.int64),
        unseen_classes=np.array(m["unseen_classes"], dtype=np.int64))
    dataset.validate()
    return dataset


# -- synthetic data ------------------------------------------------------

@dataclass
class SyntheticSpec:
    n_seen: int = 5
    n_unseen: int = 3
    d_s: int = 8
    d_x: int = 16
    per_class: int = 200
    noise_sigma: float = 0.05
    seed: int = 9807

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _binary_attributes(spec: SyntheticSpec, rng: RngState) -> np.ndarray:
    """Random binary class prototypes with min pairwise Hamming distance
    >= ceil(d_s / 3); rejection-sampled."""
    n_classes = spec.n_seen + spec.n_unseen
    min_dist = int(np.ceil(spec.d_s / 3))
    rows: list[np.ndarray] = []
    for _ in range(100_000):
        cand = (rng.uniform((spec.d_s,)) < 0.5).astype(np.float32)
        if cand.sum() == 0:
            continue
        if all(np.sum(cand != r) >= min_dist for r in rows):
            rows.append(cand)
        if len(rows) == n_classes:
            return np.stack(rows)
    raise DatasetError(
        f"could not place {n_classes} prototypes with Hamming distance >= "
        f"{min_dist} in d_s={spec.d_s} within 100000 rejections")


def generate_synthetic(spec: SyntheticSpec) -> GzslDataset:
    """Linear-map testbed: x = A s_class + Gaussian noise, balanced splits."""
    if spec.n_seen < 1 or spec.n_unseen < 1:
        raise DatasetError("need at least one seen and one unseen class")
    rng = RngState(spec.seed)
    attributes = _binary_attributes(spec, rng)
    n_classes = spec.n_seen + spec.n_unseen
    lin_map = rng.normal((spec.d_s, spec.d_x)) / np.sqrt(spec.d_s)

    features, labels = [], []
    for c in range(n_classes):
        noise = rng.normal((spec.per_class, spec.d_x)) * spec.noise_sigma
        features.append(attributes[c] @ lin_map + noise)
        labels.extend([c] * spec.per_class)
    features = np.concatenate(features).astype(np.float32)
    labels = np.array(labels, dtype=np.int64)

    seen_classes = np.arange(spec.n_seen)
    unseen_classes = np.arange(spec.n_seen, n_classes)

    train_seen, test_seen, test_unseen = [], [], []
    for c in range(n_classes):
        rows = np.where(labels == c)[0]
        if c < spec.n_seen:
            n_train = int(round(0.8 * len(rows)))
            perm = rng.permutation(len(rows))
            train_seen.extend(rows[perm[:n_train]])
            test_seen.extend(rows[perm[n_train:]])
        else:
            test_unseen.extend(rows)

    dataset = GzslDataset(
        name="synthetic", features=features, labels=labels,
        attributes=attributes.astype(np.float32),
        train_seen=np.array(sorted(train_seen), dtype=np.int64),
        test_seen=np.array(sorted(test_seen), dtype=np.int64),
        test_unseen=np.array(sorted(test_unseen), dtype=np.int64),
        seen_classes=seen_classes, unseen_classes=unseen_classes)
    dataset.validate()
    return dataset


# -- checkpoints -------------------------------------------------------

def _tensor_entries(model: Denoiser, opt: AdamState | None):
    entries: list[tuple[str, np.ndarray]] = []
    for name in sorted(model.params):
        entries.append((f"param/{name}", model.params[name].data))
    for name in sorted(model.bn_state):
        st = model.bn_state[name]
        entries.append((f"bn/{name}/mean", st.running_mean))
        entries.append((f"bn/{name}/var", st.running_var))
    if opt is not None:
        for name in sorted(opt.m):
            entries.append((f"adam/m/{name}", opt.m[name]))
            entries.append((f"adam/v/{name}", opt.v[name]))
    return entries


def save_checkpoint(path: str, model: Denoiser, opt: AdamState | None = None,
                    rng: RngState | None = None, step: int = 0,
                    config_echo: dict | None = None) -> None:
    """Atomic write: temp file in the target directory, then rename."""
    entries = _tensor_entries(model, opt)
    tensors = []
    offset = 0
    payloads = []
    for name, arr in entries:
        data = np.ascontiguousarray(arr, dtype="<f4")
        tensors.append({"name": name, "dims": list(arr.shape),
                        "offset": offset})
        payloads.append(data.tobytes())
        offset += data.nbytes

    header = {
        "model_config": model.config.to_dict(),
        "config_echo": config_echo or {},
        "step": int(step),
        "rng": rng.state() if rng is not None else None,
        "adam": None if opt is None else {
            "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
            "eps": opt.eps, "step": opt.step},
        "tensors": tensors,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".ckpt.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(CKPT_MAGIC)
            fh.write(np.array(CKPT_VERSION, dtype="<u4").tobytes())
            fh.write(np.array(len(header_bytes), dtype="<u8").tobytes())
            fh.write(header_bytes)
            for blob in payloads:
                fh.write(blob)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def load_checkpoint(path: str, expected_config: DenoiserConfig | None = None):
    """Read a checkpoint; returns (model, opt, rng_state_dict, step, echo)."""
    if not os.path.exists(path):
        raise CheckpointError(f"no such checkpoint: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CKPT_MAGIC:
        raise CheckpointError("corrupt header: bad magic")
    version = int(np.frombuffer(blob[8:12], dtype="<u4")[0])
    if version != CKPT_VERSION:
        raise CheckpointError(
            f"checkpoint version {version} != supported {CKPT_VERSION}")
    header_len = int(np.frombuffer(blob[12:20], dtype="<u8")[0])
    if len(blob) < 20 + header_len:
        raise CheckpointError("truncated checkpoint: header incomplete")
    header = json.loads(blob[20:20 + header_len].decode("utf-8"))
    payload = blob[20 + header_len:]

    config = DenoiserConfig.from_dict(header["model_config"])
    if expected_config is not None and config.to_dict() != expected_config.to_dict():
        raise CheckpointError(
            f"checkpoint model config {config.to_dict()} does not match "
            f"expected {expected_config.to_dict()}")

    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        dims = tuple(entry["dims"])
        count = int(np.prod(dims)) if dims else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise CheckpointError(
                f"truncated checkpoint: tensor '{entry['name']}' payload missing")
        arrays[entry["name"]] = np.frombuffer(
            payload[start:end], dtype="<f4").reshape(dims).copy()

    model = Denoiser(config, rng=RngState(0))
    for name, p in model.params.items():
        key = f"param/{name}"
        if key not in arrays:
            raise CheckpointError(f"checkpoint missing parameter '{name}'")
        if arrays[key].shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for '{name}': checkpoint {arrays[key].shape} "
                f"vs model {p.data.shape}")
        p.data = arrays[key].astype(model.dtype)
    for name, st in model.bn_state.items():
        st.running_mean = arrays[f"bn/{name}/mean"].astype(model.dtype)
        st.running_var = arrays[f"bn/{name}/var"].astype(model.dtype)

    opt = None
    if header["adam"] is not None:
        a = header["adam"]
        opt = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"],
                        eps=a["eps"], step=a["step"])
        for name in model.params:
            mk, vk = f"adam/m/{name}", f"adam/v/{name}"
            if mk in arrays:
                opt.m[name] = arrays[mk].astype(model.dtype)
                opt.v[name] = arrays[vk].astype(model.dtype)

    return model, opt, header["rng"], int(header["step"]), header["config_echo"]
