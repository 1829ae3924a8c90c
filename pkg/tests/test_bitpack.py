import numpy as np
import pytest

from flim.bitpack import BinaryTensor, pack, unpack, xnor, xnor_popcount_dot


def dot_reference(xs, ws):
    # independent per-element oracle
    assert len(xs) == len(ws)
    total = 0
    for a, b in zip(xs, ws):
        total += 1 if a == b else -1
    return total


def test_xnor_truth_table():
    assert xnor(+1, +1) == +1
    assert xnor(+1, -1) == -1
    assert xnor(-1, +1) == -1
    assert xnor(-1, -1) == +1


def test_xnor_rejects_nonbinary():
    with pytest.raises(ValueError):
        xnor(0, 1)


def test_pack_layout():
    t = pack([+1, -1, +1, -1, +1, -1, +1, -1, +1], [9])
    assert t.data[0] == 0b01010101
    assert t.data[1] == 0b00000001


def test_pack_empty():
    t = pack([], [0])
    assert t.data == b""
    assert unpack(t) == []


def test_pack_length_mismatch():
    with pytest.raises(ValueError):
        pack([+1, -1], [3])


def test_pack_rejects_nonbinary_values():
    with pytest.raises(ValueError):
        pack([+1, 0, -1], [3])


def test_padding_bits_must_be_zero():
    with pytest.raises(ValueError):
        BinaryTensor((3,), bytes([0b1111_1000]))


def test_roundtrip_random():
    rng = np.random.default_rng(12345)
    for _ in range(20):
        n = int(rng.integers(1, 10_000))
        vals = rng.choice([-1, 1], size=n).tolist()
        t = pack(vals, [n])
        assert unpack(t) == vals
        # pack(unpack(t)) == t bit-exactly
        assert pack(unpack(t), [n]).data == t.data


def test_from_signs_multidim():
    rng = np.random.default_rng(7)
    arr = rng.choice([-1, 1], size=(4, 5, 3)).astype(np.int8)
    t = BinaryTensor.from_signs(arr)
    assert t.shape == (4, 5, 3)
    assert np.array_equal(t.to_signs(), arr)


def test_dot_self_match():
    t = pack([+1] * 9, [9])
    assert xnor_popcount_dot(t, t) == 9


def test_dot_example():
    x = pack([+1, -1, +1, -1], [4])
    w = pack([+1, +1, -1, -1], [4])
    assert xnor_popcount_dot(x, w) == 0


def test_dot_length_mismatch():
    with pytest.raises(ValueError):
        xnor_popcount_dot(pack([1, 1], [2]), pack([1, 1, 1], [3]))


def test_dot_against_elementwise_oracle():
    rng = np.random.default_rng(99)
    for _ in range(1000):
        k = int(rng.integers(1, 65))
        xs = rng.choice([-1, 1], size=k).tolist()
        ws = rng.choice([-1, 1], size=k).tolist()
        got = xnor_popcount_dot(pack(xs, [k]), pack(ws, [k]))
        assert got == dot_reference(xs, ws)


def test_dot_properties():
    rng = np.random.default_rng(5)
    for _ in range(200):
        k = int(rng.integers(1, 100))
        xs = rng.choice([-1, 1], size=k)
        ws = rng.choice([-1, 1], size=k)
        x = BinaryTensor.from_signs(xs)
        w = BinaryTensor.from_signs(ws)
        d = xnor_popcount_dot(x, w)
        # self-match, antisymmetry under negation, parity of K
        assert xnor_popcount_dot(x, x) == k
        assert d == -xnor_popcount_dot(x, BinaryTensor.from_signs(-ws))
        assert (d - k) % 2 == 0
