"""File I/O: IDX datasets, the portable model container, and result CSVs.

Container layout ("FLIMMD01"): 8-byte magic, u32 little-endian manifest
length, UTF-8 JSON manifest, then a payload of concatenated blobs. Binary
weights are bit-packed in the bitpack layout; thresholds and directions are
little-endian signed 32-bit arrays. IDX files keep their native big-endian
header.
"""

from __future__ import annotations

import csv
import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .bitpack import BinaryTensor
from .engine import (
    BinaryConv2D,
    BinaryDense,
    Flatten,
    InputBinarize,
    MaxPool2D,
    ModelGraph,
    Threshold,
)

MODEL_MAGIC = b"FLIMMD01"
MODEL_VERSION = 1

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

RESULTS_HEADER = "seed,layer,fault_type,param,rate,accuracy,images,runtime_ms"


class DataFormatError(Exception):
    """Base for malformed input files; loads never partially succeed."""


class IdxError(DataFormatError):
    pass


class ModelFileError(DataFormatError):
    pass


@dataclass
class LabeledDataset:
    images: np.ndarray  # float32 [N, h, w], scaled to [0, 1]
    labels: np.ndarray  # int64 [N]

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise IdxError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )

    def subset(self, n: int) -> "LabeledDataset":
        return LabeledDataset(self.images[:n], self.labels[:n])

    def __len__(self):
        return self.images.shape[0]


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise IdxError(f"truncated file: wanted {n} bytes of {what}, got {len(data)}")
    return data


def read_idx(images_path: str, labels_path: str) -> LabeledDataset:
    """Read an IDX image/label pair; pixels scaled by 1/255."""
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise IdxError(f"bad image magic 0x{magic:08x}")
        raw = _read_exact(f, count * rows * cols, "pixels")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)
    images = images.astype(np.float32) / 255.0
    with open(labels_path, "rb") as f:
        magic, lcount = struct.unpack(">II", _read_exact(f, 8, "label header"))
        if magic != IDX_LABELS_MAGIC:
            raise IdxError(f"bad label magic 0x{magic:08x}")
        labels = np.frombuffer(_read_exact(f, lcount, "labels"), dtype=np.uint8).astype(np.int64)
    if count != lcount:
        raise IdxError(f"image count {count} != label count {lcount}")
    return LabeledDataset(images, labels)


# ---------------------------------------------------------------------------
# model container
# ---------------------------------------------------------------------------

def _layer_manifest(layer, payload: bytearray) -> dict:
    entry = {"kind": layer.kind, "name": layer.name, "params": {}}
    if layer.kind == "InputBinarize":
        entry["params"]["theta"] = layer.theta
    elif layer.kind == "BinaryConv2D":
        blob = layer.weights.data
        entry["params"] = {
            "weight_shape": list(layer.weights.shape),
            "stride": list(layer.stride),
            "padding": layer.padding,
            "weights_offset": len(payload),
            "weights_len": len(blob),
        }
        payload += blob
    elif layer.kind == "BinaryDense":
        blob = layer.weights.data
        entry["params"] = {
            "weight_shape": list(layer.weights.shape),
            "weights_offset": len(payload),
            "weights_len": len(blob),
        }
        payload += blob
    elif layer.kind == "Threshold":
        t = layer.thresholds.astype("<i4").tobytes()
        d = layer.directions.astype("<i4").tobytes()
        entry["params"] = {
            "channels": int(layer.thresholds.shape[0]),
            "thresholds_offset": len(payload),
            "thresholds_len": len(t),
            "directions_offset": len(payload) + len(t),
            "directions_len": len(d),
        }
        payload += t + d
    elif layer.kind == "MaxPool2D":
        entry["params"] = {"window": list(layer.window), "stride": list(layer.stride)}
    elif layer.kind == "Flatten":
        pass
    else:
        raise ModelFileError(f"layer {layer.name!r}: kind {layer.kind!r} not serializable")
    return entry


def serialize_model(model: ModelGraph) -> bytes:
    payload = bytearray()
    layers = [_layer_manifest(l, payload) for l in model.layers]
    theta = None
    if model.layers and model.layers[0].kind == "InputBinarize":
        theta = model.layers[0].theta
    manifest = {
        "version": MODEL_VERSION,
        "name": model.name,
        "input_shape": list(model.input_shape),
        "class_count": model.class_count,
        "input_threshold": theta,
        "layers": layers,
    }
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    return MODEL_MAGIC + len(mbytes).to_bytes(4, "little") + mbytes + bytes(payload)


def _blob(payload: bytes, params: dict, off_key: str, len_key: str, layer: str) -> bytes:
    try:
        off, ln = params[off_key], params[len_key]
    except KeyError as e:
        raise ModelFileError(f"layer {layer!r}: missing {e}") from e
    if not (0 <= off and off + ln <= len(payload)):
        raise ModelFileError(f"layer {layer!r}: {off_key}+{len_key} outside payload")
    return payload[off : off + ln]


def _binary_tensor(blob: bytes, shape, layer: str) -> BinaryTensor:
    try:
        return BinaryTensor(tuple(shape), blob)
    except ValueError as e:
        raise ModelFileError(f"layer {layer!r}: {e}") from e


def deserialize_model(data: bytes) -> ModelGraph:
    if len(data) < 12:
        raise ModelFileError("file shorter than header")
    if data[:8] != MODEL_MAGIC:
        raise ModelFileError(f"bad magic {data[:8]!r}")
    mlen = int.from_bytes(data[8:12], "little")
    if len(data) < 12 + mlen:
        raise ModelFileError("manifest extends past end of file")
    try:
        manifest = json.loads(data[12 : 12 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFileError(f"manifest is not valid JSON: {e}") from e
    if manifest.get("version") != MODEL_VERSION:
        raise ModelFileError(f"unsupported container version {manifest.get('version')!r}")
    payload = data[12 + mlen :]
    layers = []
    for entry in manifest.get("layers", []):
        try:
            kind, name, params = entry["kind"], entry["name"], entry["params"]
        except (KeyError, TypeError) as e:
            raise ModelFileError(f"layer entry missing field: {e}") from e
        if kind == "InputBinarize":
            layers.append(InputBinarize(name, float(params["theta"])))
        elif kind == "BinaryConv2D":
            blob = _blob(payload, params, "weights_offset", "weights_len", name)
            w = _binary_tensor(blob, params["weight_shape"], name)
            layers.append(BinaryConv2D(name, w, tuple(params["stride"]), params["padding"]))
        elif kind == "BinaryDense":
            blob = _blob(payload, params, "weights_offset", "weights_len", name)
            w = _binary_tensor(blob, params["weight_shape"], name)
            layers.append(BinaryDense(name, w))
        elif kind == "Threshold":
            c = params["channels"]
            t = np.frombuffer(_blob(payload, params, "thresholds_offset", "thresholds_len", name), dtype="<i4")
            d = np.frombuffer(_blob(payload, params, "directions_offset", "directions_len", name), dtype="<i4")
            if t.shape[0] != c or d.shape[0] != c:
                raise ModelFileError(f"layer {name!r}: expected {c} channels, blobs hold {t.shape[0]}/{d.shape[0]}")
            layers.append(Threshold(name, t, d))
        elif kind == "MaxPool2D":
            layers.append(MaxPool2D(name, tuple(params["window"]), tuple(params["stride"])))
        elif kind == "Flatten":
            layers.append(Flatten(name))
        else:
            raise ModelFileError(f"layer {name!r}: unknown kind {kind!r}")
    try:
        model = ModelGraph(
            manifest.get("name", ""),
            tuple(manifest["input_shape"]),
            int(manifest["class_count"]),
            layers,
        )
    except (KeyError, ValueError) as e:
        raise ModelFileError(f"invalid model: {e}") from e
    theta = manifest.get("input_threshold")
    if theta is not None and layers and layers[0].kind == "InputBinarize" and float(theta) != layers[0].theta:
        raise ModelFileError("manifest input_threshold disagrees with the InputBinarize layer")
    return model


def write_model(model: ModelGraph, path: str):
    _atomic_write(path, serialize_model(model))


def read_model(path: str) -> ModelGraph:
    with open(path, "rb") as f:
        return deserialize_model(f.read())


def _atomic_write(path: str, data: bytes):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# results CSV
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResultRow:
    seed: int
    layer: str
    fault_type: str
    param: int
    rate: float
    accuracy: float
    images: int
    runtime_ms: float


def write_results_csv(rows, path: str):
    """Deterministic result file: fixed header, rows sorted by
    (layer, fault_type, param, rate, seed)."""
    ordered = sorted(rows, key=lambda r: (r.layer, r.fault_type, r.param, r.rate, r.seed))
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(RESULTS_HEADER.split(","))
        for r in ordered:
            w.writerow(
                [
                    r.seed,
                    r.layer,
                    r.fault_type,
                    r.param,
                    f"{r.rate:.6g}",
                    f"{r.accuracy:.6f}",
                    r.images,
                    f"{r.runtime_ms:.3f}",
                ]
            )


def read_results_csv(path: str) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != RESULTS_HEADER.split(","):
            raise DataFormatError(f"unexpected results header {reader.fieldnames}")
        for rec in reader:
            rows.append(
                ResultRow(
                    seed=int(rec["seed"]),
                    layer=rec["layer"],
                    fault_type=rec["fault_type"],
                    param=int(rec["param"]),
                    rate=float(rec["rate"]),
                    accuracy=float(rec["accuracy"]),
                    images=int(rec["images"]),
                    runtime_ms=float(rec["runtime_ms"]),
                )
            )
    return rows
