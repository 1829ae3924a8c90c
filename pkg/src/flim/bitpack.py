"""Bit-packed binary tensors and the XNOR-popcount primitives.

Values live in {-1, +1}. The packed encoding is fixed so that files written by
any implementation are bit-exact: +1 <-> bit 1, -1 <-> bit 0, elements
flattened row-major, bits packed LSB-first into bytes, padding bits zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# popcount per byte value, used by the packed dot-product kernel
_POPCOUNT8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.int32)


def _product(shape) -> int:
    n = 1
    for d in shape:
        n *= int(d)
    return n


@dataclass(frozen=True)
class BinaryTensor:
    """Immutable {-1,+1} tensor stored as packed bits.

    ``data`` holds ceil(element_count / 8) bytes; element i (row-major) is bit
    (i % 8) of byte (i // 8). Padding bits beyond element_count are zero.
    """

    shape: tuple[int, ...]
    data: bytes = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        n = self.element_count
        need = (n + 7) // 8
        if len(self.data) != need:
            raise ValueError(
                f"packed data holds {len(self.data)} bytes, expected {need} for {n} elements"
            )
        if n % 8 and self.data and self.data[-1] >> (n % 8):
            raise ValueError("padding bits beyond element_count must be zero")

    @property
    def element_count(self) -> int:
        return _product(self.shape)

    def to_signs(self) -> np.ndarray:
        """Unpack to an int8 array of -1/+1 with this tensor's shape."""
        n = self.element_count
        if n == 0:
            return np.zeros(self.shape, dtype=np.int8)
        raw = np.frombuffer(self.data, dtype=np.uint8)
        bits = np.unpackbits(raw, count=n, bitorder="little")
        return (bits.astype(np.int8) * 2 - 1).reshape(self.shape)

    @classmethod
    def from_signs(cls, signs: np.ndarray) -> "BinaryTensor":
        """Pack an array of -1/+1 values."""
        arr = np.asarray(signs)
        if arr.size and not np.all(np.abs(arr) == 1):
            raise ValueError("binary tensors hold only -1/+1 values")
        bits = (arr.reshape(-1) > 0).astype(np.uint8)
        return cls(arr.shape, np.packbits(bits, bitorder="little").tobytes())


def pack(values, shape) -> BinaryTensor:
    """Pack a flat list of -1/+1 values into a BinaryTensor of ``shape``."""
    arr = np.asarray(list(values), dtype=np.int64)
    n = _product(shape)
    if arr.size != n:
        raise ValueError(f"got {arr.size} values for shape of {n} elements")
    return BinaryTensor.from_signs(arr.reshape(tuple(shape) if n else tuple(shape)))


def unpack(t: BinaryTensor) -> list[int]:
    """Inverse of pack: flat row-major list of -1/+1 ints."""
    return [int(v) for v in t.to_signs().reshape(-1)]


def xnor(a: int, b: int) -> int:
    """XNOR in the {-1,+1} domain: +1 iff a == b (equals a*b)."""
    if a not in (-1, 1) or b not in (-1, 1):
        raise ValueError("xnor operands must be -1 or +1")
    return 1 if a == b else -1


def xnor_popcount_dot(x: BinaryTensor, w: BinaryTensor) -> int:
    """Binary dot product: sum_k xnor(x_k, w_k) = 2*matches - K.

    Operates on the packed representation: bytewise XNOR then a popcount
    table. Padding bits XNOR to 1 (both operands pad with zeros), so the pad
    width is subtracted from the match count.
    """
    k = x.element_count
    if k != w.element_count:
        raise ValueError(
            f"operand lengths differ: {k} vs {w.element_count} (malformed layer wiring)"
        )
    if k == 0:
        raise ValueError("dot product over zero elements")
    xb = np.frombuffer(x.data, dtype=np.uint8)
    wb = np.frombuffer(w.data, dtype=np.uint8)
    matches = int(_POPCOUNT8[np.bitwise_xor(xb, wb) ^ 0xFF].sum())
    pad = 8 * len(xb) - k
    return 2 * (matches - pad) - k
