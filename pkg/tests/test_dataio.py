import struct
from pathlib import Path

import numpy as np
import pytest

from flim.bitpack import BinaryTensor
from flim.dataio import (
    IdxError,
    ModelFileError,
    ResultRow,
    deserialize_model,
    read_idx,
    read_model,
    read_results_csv,
    serialize_model,
    write_model,
    write_results_csv,
)
from flim.engine import (
    BinaryConv2D,
    BinaryDense,
    Flatten,
    InputBinarize,
    MaxPool2D,
    ModelGraph,
    Threshold,
    infer_batch,
)

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


def write_idx_pair(tmp_path, images, labels):
    tmp_path.mkdir(parents=True, exist_ok=True)
    ipath = tmp_path / "img.idx3"
    lpath = tmp_path / "lbl.idx1"
    n, h, w = images.shape
    with open(ipath, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, h, w))
        f.write(images.astype(np.uint8).tobytes())
    with open(lpath, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())
    return str(ipath), str(lpath)


def random_model(rng, name="m"):
    conv_w = rng.choice([-1, 1], size=(4, 3, 3, 1)).astype(np.int8)
    dense_w = rng.choice([-1, 1], size=(10, 13 * 13 * 4)).astype(np.int8)
    return ModelGraph(
        name,
        (28, 28, 1),
        10,
        [
            InputBinarize("bin", 0.5),
            BinaryConv2D("conv_1", BinaryTensor.from_signs(conv_w), (1, 1), "valid"),
            MaxPool2D("pool_1", (2, 2), (2, 2)),
            Threshold("bn_1", rng.integers(-5, 5, size=4), rng.choice([-1, 1], size=4)),
            Flatten("flatten"),
            BinaryDense("dense_1", BinaryTensor.from_signs(dense_w)),
        ],
    )


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------

def test_idx_roundtrip_and_scaling(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(5, 4, 3)).astype(np.uint8)
    images[0, 0, 0] = 255
    ip, lp = write_idx_pair(tmp_path, images, [1, 2, 3, 4, 0])
    ds = read_idx(ip, lp)
    assert ds.images.shape == (5, 4, 3)
    assert ds.images[0, 0, 0] == 1.0
    assert np.allclose(ds.images, images / 255.0)
    assert list(ds.labels) == [1, 2, 3, 4, 0]


def test_idx_canonical_t10k():
    ds = read_idx(
        str(DATA_DIR / "t10k-images-idx3-ubyte"),
        str(DATA_DIR / "t10k-labels-idx1-ubyte"),
    )
    assert len(ds) == 10000
    assert ds.images.shape == (10000, 28, 28)
    assert ds.labels.min() >= 0 and ds.labels.max() <= 9


def test_idx_bad_magic(tmp_path):
    ip, lp = write_idx_pair(tmp_path, np.zeros((1, 2, 2), dtype=np.uint8), [0])
    data = bytearray(Path(ip).read_bytes())
    data[3] = 0x99
    Path(ip).write_bytes(bytes(data))
    with pytest.raises(IdxError):
        read_idx(ip, lp)


def test_idx_truncated(tmp_path):
    ip, lp = write_idx_pair(tmp_path, np.zeros((2, 3, 3), dtype=np.uint8), [0, 1])
    Path(ip).write_bytes(Path(ip).read_bytes()[:-5])
    with pytest.raises(IdxError):
        read_idx(ip, lp)


def test_idx_count_mismatch(tmp_path):
    ip, _ = write_idx_pair(tmp_path / "a", np.zeros((2, 3, 3), dtype=np.uint8), [0, 1])
    _, lp = write_idx_pair(tmp_path / "b", np.zeros((3, 3, 3), dtype=np.uint8), [0, 1, 2])
    with pytest.raises(IdxError):
        read_idx(ip, lp)


# ---------------------------------------------------------------------------
# model container
# ---------------------------------------------------------------------------

def test_model_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    model = random_model(rng)
    path = tmp_path / "m.flim"
    write_model(model, str(path))
    loaded = read_model(str(path))
    assert loaded.name == model.name
    assert loaded.input_shape == model.input_shape
    assert loaded.class_count == model.class_count
    assert [l.name for l in loaded.layers] == [l.name for l in model.layers]
    # behavioral identity
    images = rng.random((4, 28, 28, 1))
    _, a = infer_batch(model, images)
    _, b = infer_batch(loaded, images)
    assert np.array_equal(a, b)
    # byte-exact re-serialization
    assert serialize_model(loaded) == serialize_model(model)


def test_model_golden_header():
    rng = np.random.default_rng(2)
    blob = serialize_model(random_model(rng))
    assert blob[:8] == b"FLIMMD01"
    mlen = int.from_bytes(blob[8:12], "little")
    import json

    manifest = json.loads(blob[12 : 12 + mlen])
    assert manifest["version"] == 1
    assert manifest["input_shape"] == [28, 28, 1]
    assert manifest["input_threshold"] == 0.5


def test_model_out_of_bounds_blob():
    rng = np.random.default_rng(3)
    blob = serialize_model(random_model(rng))
    tampered = blob.replace(b'"weights_offset": 0', b'"weights_offset": 99999999')
    assert tampered != blob
    with pytest.raises(ModelFileError):
        deserialize_model(tampered)


def test_model_bad_magic():
    with pytest.raises(ModelFileError):
        deserialize_model(b"NOTMAGIC" + b"\x00" * 20)


def test_model_invalid_chain_rejected():
    rng = np.random.default_rng(4)
    blob = serialize_model(random_model(rng))
    tampered = blob.replace(b'"class_count": 10', b'"class_count": 11')
    with pytest.raises(ModelFileError):
        deserialize_model(tampered)


def test_model_threshold_endianness():
    # thresholds must be little-endian i32 in the payload
    t = Threshold("bn", np.array([1, -2], dtype=np.int32), np.array([1, -1], dtype=np.int32))
    rng = np.random.default_rng(5)
    dense_w = rng.choice([-1, 1], size=(3, 2)).astype(np.int8)
    model = ModelGraph(
        "t",
        (1, 1, 2),
        3,
        [
            BinaryConv2D("c", BinaryTensor.from_signs(rng.choice([-1, 1], size=(2, 1, 1, 2)).astype(np.int8))),
            Threshold("bn", np.array([1, -2]), np.array([1, -1])),
            Flatten("f"),
            BinaryDense("d", BinaryTensor.from_signs(dense_w)),
        ],
    )
    blob = serialize_model(model)
    assert struct.pack("<ii", 1, -2) in blob
    del t


# ---------------------------------------------------------------------------
# results CSV
# ---------------------------------------------------------------------------

def test_results_csv_header_and_order(tmp_path):
    rows = [
        ResultRow(2, "conv_1", "bitflip", 0, 0.1, 0.5, 100, 12.0),
        ResultRow(1, "conv_1", "bitflip", 0, 0.1, 0.6, 100, 10.0),
        ResultRow(1, "conv_1", "bitflip", 0, 0.05, 0.9, 100, 9.0),
    ]
    path = tmp_path / "r.csv"
    write_results_csv(rows, str(path))
    text = path.read_text().splitlines()
    assert text[0] == "seed,layer,fault_type,param,rate,accuracy,images,runtime_ms"
    got = read_results_csv(str(path))
    assert [(r.rate, r.seed) for r in got] == [(0.05, 1), (0.1, 1), (0.1, 2)]


def test_results_csv_empty(tmp_path):
    path = tmp_path / "r.csv"
    write_results_csv([], str(path))
    assert path.read_text().strip() == "seed,layer,fault_type,param,rate,accuracy,images,runtime_ms"
    assert read_results_csv(str(path)) == []


def test_results_csv_roundtrip(tmp_path):
    row = ResultRow(7, "dense_0", "dynamic", 3, 0.3, 0.123456, 1000, 55.5)
    path = tmp_path / "r.csv"
    write_results_csv([row], str(path))
    got = read_results_csv(str(path))[0]
    assert got.seed == 7 and got.layer == "dense_0" and got.fault_type == "dynamic"
    assert got.param == 3 and got.rate == 0.3 and got.images == 1000
    assert abs(got.accuracy - 0.123456) < 1e-9
