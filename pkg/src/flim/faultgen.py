"""Seeded fault-mask generation and the binary fault-vector file.

Masks are a pure function of (dims, rate/indices, seed, p_one): gate selection
uses a SplitMix64-driven partial Fisher-Yates shuffle, and rate-based masks
contain exactly round(rate * gates) faulty gates (half-away-from-zero), never
approximately. The on-disk container flattens each R_g x C_g grid row-major
(row * C_g + col) and packs bits LSB-first.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, replace

import numpy as np

from .crossbar import CrossbarConfig
from .rng import SplitMix64, round_half_away, sample_without_replacement

MAGIC = b"FLIMFV01"
FORMAT_VERSION = 1

BITFLIP = "bitflip"
STUCKAT = "stuckat"
DYNAMIC = "dynamic"
FAULT_TYPES = (BITFLIP, STUCKAT, DYNAMIC)


class FaultFileError(Exception):
    """Base for fault-vector file problems."""


class BadMagicError(FaultFileError):
    pass


class UnsupportedVersionError(FaultFileError):
    pass


class TruncatedFileError(FaultFileError):
    pass


class ManifestError(FaultFileError):
    """Manifest does not describe the payload it sits next to."""


@dataclass(frozen=True)
class FaultMask:
    """Per-layer gate-grid fault description.

    ``grid`` marks faulty gates (1 = faulty). ``stuck_values`` is meaningful
    only for stuck-at masks (bit 1 = stuck at +1, bit 0 = stuck at -1) and is
    zero outside faulty positions. ``period`` is meaningful only for dynamic
    masks: the fault fires on every (period+1)-th operation of a faulty gate,
    first operation included, so period 0 is a permanent bit-flip.
    """

    layer_name: str
    fault_type: str
    grid: np.ndarray
    stuck_values: np.ndarray = None
    period: int = 0
    seed: int = 0
    rate: float = 0.0

    def __post_init__(self):
        if self.fault_type not in FAULT_TYPES:
            raise ValueError(f"unknown fault type {self.fault_type!r}")
        grid = np.ascontiguousarray(np.asarray(self.grid, dtype=np.uint8))
        if grid.ndim != 2:
            raise ValueError("fault grid must be 2-d")
        object.__setattr__(self, "grid", grid)
        sv = self.stuck_values
        sv = np.zeros_like(grid) if sv is None else np.ascontiguousarray(np.asarray(sv, dtype=np.uint8))
        if sv.shape != grid.shape:
            raise ValueError("stuck_values shape must match grid")
        if np.any(sv & ~grid):
            raise ValueError("stuck_values bits outside faulty positions must be zero")
        object.__setattr__(self, "stuck_values", sv)
        if self.period < 0:
            raise ValueError("period must be non-negative")

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def faulty_count(self) -> int:
        return int(self.grid.sum())

    def for_layer(self, layer_name: str) -> "FaultMask":
        return replace(self, layer_name=layer_name)

    def __eq__(self, other):
        return (
            isinstance(other, FaultMask)
            and self.layer_name == other.layer_name
            and self.fault_type == other.fault_type
            and self.period == other.period
            and self.seed == other.seed
            and self.rate == other.rate
            and np.array_equal(self.grid, other.grid)
            and np.array_equal(self.stuck_values, other.stuck_values)
        )


def _select_gates(rows: int, cols: int, rate: float, rng: SplitMix64) -> np.ndarray:
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"injection rate {rate} outside [0,1]")
    gates = rows * cols
    n_faulty = round_half_away(rate * gates)
    grid = np.zeros((rows, cols), dtype=np.uint8)
    for idx in sample_without_replacement(gates, n_faulty, rng):
        grid[idx // cols, idx % cols] = 1
    return grid


def gen_bitflip_mask(gate_rows: int, gate_cols: int, rate: float, seed: int, layer_name: str = "") -> FaultMask:
    """Uniform bit-flip mask with exactly round(rate*gates) faulty gates."""
    rng = SplitMix64(seed)
    grid = _select_gates(gate_rows, gate_cols, rate, rng)
    return FaultMask(layer_name, BITFLIP, grid, seed=seed, rate=rate)


def gen_stuckat_mask(
    gate_rows: int,
    gate_cols: int,
    rate: float,
    seed: int,
    p_one: float = 0.5,
    layer_name: str = "",
) -> FaultMask:
    """Stuck-at mask; gate selection as bit-flip, then each faulty gate draws
    its stuck value (+1 with probability p_one) from the same seeded stream,
    visiting faulty gates in row-major order."""
    if not 0.0 <= p_one <= 1.0:
        raise ValueError(f"p_one {p_one} outside [0,1]")
    rng = SplitMix64(seed)
    grid = _select_gates(gate_rows, gate_cols, rate, rng)
    stuck = np.zeros_like(grid)
    for r, c in np.argwhere(grid):
        stuck[r, c] = 1 if rng.unit() < p_one else 0
    return FaultMask(layer_name, STUCKAT, grid, stuck, seed=seed, rate=rate)


def gen_line_fault_mask(
    gate_rows: int,
    gate_cols: int,
    rows=(),
    cols=(),
    layer_name: str = "",
    seed: int = 0,
) -> FaultMask:
    """Whole faulty rows/columns as a permanent bit-flip mask (union semantics)."""
    grid = np.zeros((gate_rows, gate_cols), dtype=np.uint8)
    for r in rows:
        if not 0 <= r < gate_rows:
            raise ValueError(f"row index {r} outside grid of {gate_rows} rows")
        grid[r, :] = 1
    for c in cols:
        if not 0 <= c < gate_cols:
            raise ValueError(f"column index {c} outside grid of {gate_cols} columns")
        grid[:, c] = 1
    rate = float(grid.sum()) / grid.size
    return FaultMask(layer_name, BITFLIP, grid, seed=seed, rate=rate)


def gen_dynamic_mask(
    gate_rows: int, gate_cols: int, rate: float, period: int, seed: int, layer_name: str = ""
) -> FaultMask:
    """Periodic bit-flip mask; firing semantics live in the injector."""
    if period < 0:
        raise ValueError("period must be non-negative")
    rng = SplitMix64(seed)
    grid = _select_gates(gate_rows, gate_cols, rate, rng)
    return FaultMask(layer_name, DYNAMIC, grid, period=period, seed=seed, rate=rate)


# ---------------------------------------------------------------------------
# fault-vector file
# ---------------------------------------------------------------------------

def _pack_grid(grid: np.ndarray) -> bytes:
    return np.packbits(grid.reshape(-1), bitorder="little").tobytes()


def _unpack_grid(blob: bytes, rows: int, cols: int) -> np.ndarray:
    n = rows * cols
    bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8), count=n, bitorder="little")
    return bits.reshape(rows, cols)


def serialize(masks: list[FaultMask], cfg: CrossbarConfig) -> bytes:
    """Masks + crossbar config -> fault-vector file bytes (round-trip exact)."""
    payload = bytearray()
    entries = []
    for m in masks:
        if m.shape != (cfg.gate_rows, cfg.gate_cols):
            raise ValueError(
                f"mask for {m.layer_name!r} is {m.shape}, config is "
                f"({cfg.gate_rows}, {cfg.gate_cols})"
            )
        grid_blob = _pack_grid(m.grid)
        stuck_blob = _pack_grid(m.stuck_values) if m.fault_type == STUCKAT else b""
        entries.append(
            {
                "layer": m.layer_name,
                "type": m.fault_type,
                "period": m.period,
                "rate": m.rate,
                "seed": m.seed,
                "grid_offset": len(payload),
                "grid_len": len(grid_blob),
                "stuck_offset": len(payload) + len(grid_blob),
                "stuck_len": len(stuck_blob),
            }
        )
        payload += grid_blob + stuck_blob
    manifest = {
        "version": FORMAT_VERSION,
        "gate_rows": cfg.gate_rows,
        "gate_cols": cfg.gate_cols,
        "crossbars_per_layer": cfg.crossbars_per_layer,
        "masks": entries,
    }
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    return MAGIC + len(mbytes).to_bytes(4, "little") + mbytes + bytes(payload)


def deserialize(data: bytes) -> tuple[list[FaultMask], CrossbarConfig]:
    """Inverse of serialize; raises a distinct error per corruption kind."""
    if len(data) < len(MAGIC) + 4:
        raise TruncatedFileError("file shorter than header")
    if data[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {data[:len(MAGIC)]!r}")
    mlen = int.from_bytes(data[8:12], "little")
    if len(data) < 12 + mlen:
        raise TruncatedFileError("manifest extends past end of file")
    try:
        manifest = json.loads(data[12 : 12 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ManifestError(f"manifest is not valid JSON: {e}") from e
    if manifest.get("version") != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported version {manifest.get('version')!r}")
    try:
        cfg = CrossbarConfig(
            manifest["gate_rows"], manifest["gate_cols"], manifest["crossbars_per_layer"]
        )
        entries = manifest["masks"]
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestError(f"manifest missing or invalid field: {e}") from e
    payload = data[12 + mlen :]
    grid_bytes = (cfg.gate_count + 7) // 8
    masks = []
    for e in entries:
        try:
            layer, ftype = e["layer"], e["type"]
            period, rate, seed = e["period"], e["rate"], e["seed"]
            go, gl, so, sl = e["grid_offset"], e["grid_len"], e["stuck_offset"], e["stuck_len"]
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"mask entry missing field: {exc}") from exc
        if ftype not in FAULT_TYPES:
            raise ManifestError(f"unknown mask type {ftype!r}")
        if gl != grid_bytes or (ftype == STUCKAT and sl != grid_bytes) or (ftype != STUCKAT and sl != 0):
            raise ManifestError(f"mask {layer!r}: blob lengths inconsistent with grid size")
        if go + gl > len(payload) or so + sl > len(payload):
            raise TruncatedFileError(f"mask {layer!r}: payload shorter than manifest offsets")
        grid = _unpack_grid(payload[go : go + gl], cfg.gate_rows, cfg.gate_cols)
        stuck = _unpack_grid(payload[so : so + sl], cfg.gate_rows, cfg.gate_cols) if sl else None
        try:
            masks.append(FaultMask(layer, ftype, grid, stuck, period=period, seed=seed, rate=rate))
        except ValueError as exc:
            raise ManifestError(f"mask {layer!r}: {exc}") from exc
    return masks, cfg


def write_fault_file(path: str, masks: list[FaultMask], cfg: CrossbarConfig):
    """Atomic write (temp file + rename)."""
    data = serialize(masks, cfg)
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


def read_fault_file(path: str) -> tuple[list[FaultMask], CrossbarConfig]:
    with open(path, "rb") as f:
        return deserialize(f.read())
