"""Datasets (synthetic, CSV, IDX) and canonical JSON persistence."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hwprune.errors import FormatError, UsageError
from hwprune.hw import HardwareConfig
from hwprune.nn.network import LAYER_KINDS, Layer, Network

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise FormatError(
                f"{len(self.features)} samples but {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise FormatError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.class_count)

    def split(self, val_fraction: float, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        """Seeded shuffle, then ``(train, validation)``."""
        if not 0 < val_fraction < 1:
            raise UsageError(f"validation fraction must be in (0, 1), got {val_fraction}")
        order = np.random.default_rng(seed).permutation(len(self))
        n_val = max(1, int(round(len(self) * val_fraction)))
        return self.subset(order[n_val:]), self.subset(order[:n_val])


def synth_classify(
    seed: int,
    n_samples: int,
    n_features: int = 16,
    n_classes: int = 5,
    separation: float = 2.0,
) -> Dataset:
    """Gaussian class blobs with unit noise.

    Class centres are standard normal vectors scaled by
    ``2 * separation / sqrt(n_features)``, so the typical centre-to-centre
    distance is about ``2.8 * separation`` whatever the feature count.
    """
    if n_classes < 2:
        raise UsageError("need at least two classes")
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((n_classes, n_features)) * (2.0 * separation / np.sqrt(n_features))
    labels = rng.integers(0, n_classes, size=n_samples)
    features = centres[labels] + rng.standard_normal((n_samples, n_features))
    return Dataset(features, labels, n_classes)


# --- CSV ------------------------------------------------------------------


def load_csv(path, label_column: str = "label") -> Dataset:
    """Numeric CSV with a header row; one column holds integer class labels."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise FormatError(f"{path}: no column named {label_column!r} in header {header}")
        li = header.index(label_column)
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                values = [float(c) for c in row]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            label = values.pop(li)
            if label != int(label) or label < 0:
                raise FormatError(f"{path}:{lineno}: label {row[li]!r} is not a class index")
            rows.append(values)
            labels.append(int(label))
    features = np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)
    class_count = max(labels) + 1 if labels else 0
    return Dataset(features, np.array(labels, dtype=np.int64), class_count)


def write_csv(path, dataset: Dataset, label_column: str = "label") -> None:
    feats = dataset.features.reshape(len(dataset), -1)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{k}" for k in range(feats.shape[1])] + [label_column])
        for row, label in zip(feats, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


# --- IDX ------------------------------------------------------------------


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    data = Path(path).read_bytes()
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError(f"{path}: truncated header")
    got = struct.unpack(">I", data[:4])[0]
    if got != magic:
        raise FormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    count = int(np.prod(dims))
    if len(data) - header != count:
        raise FormatError(f"{path}: expected {count} data bytes, found {len(data) - header}")
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, class_count: int | None = None) -> Dataset:
    """IDX image / label pair -> ``(N, H, W, 1)`` features in [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    features = images.astype(np.float64)[..., None] / 255.0
    labels = labels.astype(np.int64)
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels.size else 0
    return Dataset(features, labels, class_count)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


# --- JSON -----------------------------------------------------------------


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, shortest round-trip floats, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from None


def network_to_dict(net: Network) -> dict:
    layers = []
    for layer in net.layers:
        entry = {"kind": layer.kind, "name": layer.name}
        if layer.trainable:
            entry["shape"] = list(layer.weights.shape)
            entry["weights"] = [float(v) for v in layer.weights.ravel()]
            entry["bias"] = [float(v) for v in layer.bias]
        layers.append(entry)
    mask = {
        name: [int(b) for b in np.asarray(m, dtype=bool).ravel()]
        for name, m in sorted(net.masks.items())
    }
    return {
        "input_shape": list(net.input_shape),
        "rng_seed": net.rng_seed,
        "layers": layers,
        "mask": mask,
    }


def network_from_dict(d: dict) -> Network:
    try:
        layers = []
        for k, entry in enumerate(d["layers"]):
            kind = entry["kind"]
            if kind not in LAYER_KINDS:
                raise FormatError(f"layers[{k}]: unknown layer kind {kind!r}")
            name = entry.get("name", f"{kind}_{k}")
            if kind in ("dense", "conv2d"):
                shape = tuple(int(s) for s in entry["shape"])
                weights = np.array(entry["weights"], dtype=np.float64)
                if weights.size != int(np.prod(shape)):
                    raise FormatError(f"layers[{k}]: {weights.size} weights for shape {shape}")
                layers.append(Layer(kind, name, weights.reshape(shape), np.array(entry["bias"], dtype=np.float64)))
            else:
                layers.append(Layer(kind, name))
        net = Network(layers, tuple(d["input_shape"]), rng_seed=int(d.get("rng_seed", 0)))
        for name, bits in d.get("mask", {}).items():
            layer = net.layer(name)
            bits = np.array(bits, dtype=bool)
            if bits.size != layer.n_weights:
                raise FormatError(f"mask for {name}: {bits.size} bits for {layer.n_weights} weights")
            net.masks[name] = bits.reshape(layer.weights.shape)
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid model document: {exc}") from None
    return net


def save_model(path, net: Network) -> None:
    write_json(path, network_to_dict(net))


def load_model(path) -> Network:
    return network_from_dict(read_json(path))


def load_hw_config(path) -> HardwareConfig:
    return HardwareConfig.from_dict(read_json(path))


def save_hw_config(path, cfg: HardwareConfig) -> None:
    write_json(path, cfg.to_dict())
