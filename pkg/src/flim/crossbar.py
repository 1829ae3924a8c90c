"""Logical XNOR-gate grid model and the deterministic product-to-gate schedule.

The crossbar is modeled as a grid of R_g x C_g logical XNOR gates (4 memristors
each; the factor appears only in capacity reports). Columns carry output
channels and rows carry reduction indices, so a faulty column corrupts whole
output channels while a faulty row spreads thinly across all of them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

MEMRISTORS_PER_GATE = 4


@dataclass(frozen=True)
class CrossbarConfig:
    gate_rows: int = 40
    gate_cols: int = 10
    crossbars_per_layer: int = 1

    def __post_init__(self):
        if self.gate_rows < 1 or self.gate_cols < 1 or self.crossbars_per_layer < 1:
            raise ValueError("crossbar dimensions must be positive")

    @property
    def gate_count(self) -> int:
        return self.gate_rows * self.gate_cols

    @property
    def memristor_count(self) -> int:
        return MEMRISTORS_PER_GATE * self.gate_count


@dataclass(frozen=True)
class GateCoord:
    row: int
    col: int
    crossbar_index: int = 0


def schedule_conv_product(out_y: int, out_x: int, out_ch: int, k: int, cfg: CrossbarConfig) -> GateCoord:
    """Gate for conv product k of output (out_y, out_x, out_ch).

    Pure in its inputs; spatial position does not move a product between
    gates, so a gate's fault hits the same (channel, k) slice everywhere.
    """
    return GateCoord(
        row=k % cfg.gate_rows,
        col=out_ch % cfg.gate_cols,
        crossbar_index=(out_ch // cfg.gate_cols) % cfg.crossbars_per_layer,
    )


def schedule_dense_product(out_j: int, in_i: int, cfg: CrossbarConfig) -> GateCoord:
    """Gate for dense product (out_j, in_i)."""
    return GateCoord(
        row=in_i % cfg.gate_rows,
        col=out_j % cfg.gate_cols,
        crossbar_index=(out_j // cfg.gate_cols) % cfg.crossbars_per_layer,
    )


def iter_conv_products(out_h: int, out_w: int, out_ch: int, k_len: int) -> Iterator[tuple[int, int, int, int]]:
    """Normative per-image product order for conv: (y, x, c, k) row-major."""
    for y in range(out_h):
        for x in range(out_w):
            for c in range(out_ch):
                for k in range(k_len):
                    yield y, x, c, k


def iter_dense_products(out_n: int, in_n: int) -> Iterator[tuple[int, int]]:
    """Normative per-image product order for dense: (out_j, in_i) row-major."""
    for j in range(out_n):
        for i in range(in_n):
            yield j, i


def gate_op_sequence(kind: str, dims: tuple, cfg: CrossbarConfig, images: int = 1) -> Iterator[tuple[GateCoord, int]]:
    """Yield (gate, per-gate counter value) for every product of a layer.

    The global order is row-major over (image, out_y, out_x, out_ch, k) for
    conv and (image, out_j, in_i) for dense; each gate's counter is the
    subsequence restricted to it. This order is normative for dynamic faults.
    ``dims`` is (out_h, out_w, out_ch, k_len) for conv or (out_n, in_n) for
    dense.
    """
    counters: dict[GateCoord, int] = {}
    for _ in range(images):
        if kind == "BinaryConv2D":
            out_h, out_w, out_ch, k_len = dims
            for y, x, c, k in iter_conv_products(out_h, out_w, out_ch, k_len):
                g = schedule_conv_product(y, x, c, k, cfg)
                t = counters.get(g, 0)
                counters[g] = t + 1
                yield g, t
        elif kind == "BinaryDense":
            out_n, in_n = dims
            for j, i in iter_dense_products(out_n, in_n):
                g = schedule_dense_product(j, i, cfg)
                t = counters.get(g, 0)
                counters[g] = t + 1
                yield g, t
        else:
            raise ValueError(f"layer kind {kind!r} is not mapped onto the crossbar")


def gate_op_counts(kind: str, dims: tuple, cfg: CrossbarConfig, images: int = 1) -> np.ndarray:
    """Per-gate product counts [crossbars, rows, cols] for a layer.

    Closed form of gate_op_sequence totals: each gate serves the output
    channels congruent to its column and the reduction indices congruent to
    its row.
    """
    counts = np.zeros((cfg.crossbars_per_layer, cfg.gate_rows, cfg.gate_cols), dtype=np.int64)
    if kind == "BinaryConv2D":
        out_h, out_w, out_ch, k_len = dims
        spatial = out_h * out_w
    elif kind == "BinaryDense":
        out_ch, k_len = dims
        spatial = 1
    else:
        raise ValueError(f"layer kind {kind!r} is not mapped onto the crossbar")
    for c in range(out_ch):
        col = c % cfg.gate_cols
        xb = (c // cfg.gate_cols) % cfg.crossbars_per_layer
        for r in range(cfg.gate_rows):
            n_k = (k_len - 1 - r) // cfg.gate_rows + 1 if r < k_len else 0
            counts[xb, r, col] += n_k * spatial
    return counts * images


def capacity_report(entries: list[tuple[str, int]], cfg: CrossbarConfig) -> list[dict]:
    """Per-layer capacity summary for the CLI.

    ``entries`` is a list of (layer_name, xnor_ops_per_image). The
    time-multiplexing factor is how many sequential passes the gate grid
    needs for one image.
    """
    total_gates = cfg.gate_count * cfg.crossbars_per_layer
    report = []
    for name, ops in entries:
        report.append(
            {
                "layer": name,
                "gates": total_gates,
                "memristors": MEMRISTORS_PER_GATE * total_gates,
                "ops_per_image": ops,
                "time_multiplex": -(-ops // total_gates),
            }
        )
    return report
