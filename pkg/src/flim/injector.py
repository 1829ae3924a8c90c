"""Fault injection during inference at XNOR-product granularity.

Three modes:

  exact       reference semantics: every product of a masked layer is routed
              through faulty_product at its scheduled gate, one at a time, in
              the normative order. Slow and obviously correct.
  fast        required bit-exact equal to exact. Static faults reduce to
              masked-weight correction matmuls because a gate's fault hits a
              fixed (channel, k) slice at every spatial position; dynamic
              faults split spatial steps into (period+1) residue classes whose
              flip patterns are each static.
  featuremap  the approximation that applies the flattened mask to the
              post-threshold binary feature map by an XNOR (flip) / overwrite
              (stuck) per element, tiled to the feature-map length. Not
              required to match the exact path.

Dynamic counters are per gate and persist across images within a run; the
fault fires on counter values 0, period+1, 2*(period+1), ... (fire-first), so
period 0 equals a permanent bit-flip.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .bitpack import BinaryTensor
from .crossbar import CrossbarConfig
from .engine import BinaryConv2D, BinaryDense, ModelGraph, im2col, matmul_popcount
from .faultgen import BITFLIP, DYNAMIC, STUCKAT, FaultMask

MODES = ("exact", "fast", "featuremap")

# residue-class corrections pay off for short periods; long periods fire so
# rarely that enumerating the individual events is cheaper
_RESIDUE_LIMIT = 64


class InjectionError(ValueError):
    pass


def faulty_product(p: int, gate_fault, counter: int = 0) -> int:
    """Route one XNOR product through a gate's fault state.

    ``gate_fault`` is None for a healthy gate, else a (fault_type, stuck_sign,
    period) triple. Stuck-at ignores p entirely; dynamic flips iff
    counter % (period+1) == 0.
    """
    if gate_fault is None:
        return p
    ftype, stuck, period = gate_fault
    if ftype == BITFLIP:
        return -p
    if ftype == STUCKAT:
        return stuck
    if ftype == DYNAMIC:
        return -p if counter % (period + 1) == 0 else p
    raise InjectionError(f"unknown fault type {ftype!r}")


@dataclass
class InjectionSession:
    """Masks plus the mutable per-run dynamic state.

    Counters start at zero per run and advance only for layers carrying a
    dynamic mask, in the normative gate_op_sequence order. Reuse a session
    across calls to keep hardware-time continuity; reset() starts a new run.
    """

    mode: str
    masks: dict[str, FaultMask]
    cfg: CrossbarConfig
    _counters: dict = field(default_factory=dict, repr=False)   # exact path
    _offsets: dict = field(default_factory=dict, repr=False)    # fast path
    _plans: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise InjectionError(f"unknown mode {self.mode!r}; pick one of {MODES}")
        for name, m in self.masks.items():
            if m.shape != (self.cfg.gate_rows, self.cfg.gate_cols):
                raise InjectionError(
                    f"mask for {name!r} is {m.shape}, crossbar is "
                    f"({self.cfg.gate_rows}, {self.cfg.gate_cols})"
                )

    def reset(self):
        self._counters.clear()
        self._offsets.clear()

    def counters(self, layer_name: str) -> np.ndarray:
        grid = self._counters.get(layer_name)
        if grid is None:
            grid = np.zeros(
                (self.cfg.crossbars_per_layer, self.cfg.gate_rows, self.cfg.gate_cols),
                dtype=np.int64,
            )
            self._counters[layer_name] = grid
        return grid

    def plan(self, layer) -> "_LayerPlan":
        p = self._plans.get(layer.name)
        if p is None:
            p = _LayerPlan(layer, self.masks[layer.name], self.cfg)
            self._plans[layer.name] = p
        return p


class _LayerPlan:
    """Static (layer, mask, cfg) tables for the fast path.

    For weights [C_out, K], gate(c, k) = (k % R, c % Cg, (c // Cg) % X), so
    per-product fault state is a [C_out, K] matrix. For dynamic masks the
    table also carries, per product, its index j within its gate's (c, k)
    member list and the member count G of that gate: the gate counter of the
    product at spatial step s is then s*G + j.
    """

    def __init__(self, layer, mask: FaultMask, cfg: CrossbarConfig):
        c_out = layer.weights.shape[0]
        k_len = layer.reduction_len
        r_g, c_g, xbars = cfg.gate_rows, cfg.gate_cols, cfg.crossbars_per_layer
        k_idx = np.arange(k_len)
        c_idx = np.arange(c_out)
        # faulty[c, k] and stuck[c, k] from the grid (replicated over xbars)
        self.faulty = mask.grid[np.ix_(k_idx % r_g, c_idx % c_g)].T.astype(bool)
        self.mask = mask
        if mask.fault_type == STUCKAT:
            bits = mask.stuck_values[np.ix_(k_idx % r_g, c_idx % c_g)].T
            self.stuck_signs = bits.astype(np.float32) * 2 - 1
        if mask.fault_type == DYNAMIC:
            xg = c_g * xbars
            n_k = (k_len - 1 - (k_idx % r_g)) // r_g + 1
            n_c = (c_out - 1 - (c_idx % xg)) // xg + 1
            self.j_index = (c_idx[:, None] // xg) * n_k[None, :] + (k_idx[None, :] // r_g)
            self.g_size = n_c[:, None] * n_k[None, :]
            self.n_k = n_k
            self.xg = xg


def _gate_fault(mask: FaultMask, row: int, col: int):
    if not mask.grid[row, col]:
        return None
    if mask.fault_type == STUCKAT:
        return (STUCKAT, 2 * int(mask.stuck_values[row, col]) - 1, 0)
    return (mask.fault_type, 0, mask.period)


# ---------------------------------------------------------------------------
# exact path
# ---------------------------------------------------------------------------

def _inject_rows_exact(cols, w2d, mask, cfg, counters):
    """Per-product reference loop over im2col rows (spatial steps in order).

    Row r is spatial step r; column k of ``cols`` is reduction index k in the
    normative order; output channel c maps to gate (k % R, c % Cg, xbar(c)).
    """
    if not mask.grid.any():
        # no faulty gate: counters would advance but are unobservable
        return matmul_popcount(cols, w2d)
    n_rows, k_len = cols.shape
    c_out = w2d.shape[0]
    r_g, c_g = cfg.gate_rows, cfg.gate_cols
    dynamic = mask.fault_type == DYNAMIC
    states = [
        [_gate_fault(mask, k % r_g, c % c_g) for k in range(k_len)] for c in range(c_out)
    ]
    xbar = [(c // c_g) % cfg.crossbars_per_layer for c in range(c_out)]
    out = np.empty((n_rows, c_out), dtype=np.int32)
    for r in range(n_rows):
        row = cols[r]
        for c in range(c_out):
            states_c = states[c]
            w_c = w2d[c]
            xb = xbar[c]
            acc = 0
            for k in range(k_len):
                p = 1 if row[k] == w_c[k] else -1
                st = states_c[k]
                if dynamic:
                    t = counters[xb, k % r_g, c % c_g]
                    counters[xb, k % r_g, c % c_g] = t + 1
                    acc += faulty_product(p, st, t)
                else:
                    acc += faulty_product(p, st)
            out[r, c] = acc
    return out


def inject_conv_exact(inp: BinaryTensor, layer: BinaryConv2D, session: InjectionSession) -> np.ndarray:
    """Reference faulty convolution for a single image -> int32 [oh, ow, C]."""
    _require_injectable(layer)
    mask = session.masks.get(layer.name)
    signs = inp.to_signs()
    cols, oh, ow = im2col(signs[None], layer)
    w2d = layer.weights.to_signs().reshape(layer.out_channels, -1).astype(np.float32)
    if mask is None:
        return matmul_popcount(cols, w2d).reshape(oh, ow, layer.out_channels)
    y = _inject_rows_exact(cols, w2d, mask, session.cfg, session.counters(layer.name))
    return y.reshape(oh, ow, layer.out_channels)


def inject_dense_exact(inp: BinaryTensor, layer: BinaryDense, session: InjectionSession) -> np.ndarray:
    """Reference faulty dense layer for a single vector -> int32 [out]."""
    _require_injectable(layer)
    mask = session.masks.get(layer.name)
    cols = inp.to_signs().astype(np.float32)[None]
    w2d = layer.weights.to_signs().astype(np.float32)
    if mask is None:
        return matmul_popcount(cols, w2d)[0]
    return _inject_rows_exact(cols, w2d, mask, session.cfg, session.counters(layer.name))[0]


def _require_injectable(layer):
    if layer.kind not in ("BinaryConv2D", "BinaryDense"):
        raise InjectionError(f"layer {layer.name!r} ({layer.kind}) is not mapped onto the crossbar")


# ---------------------------------------------------------------------------
# fast path
# ---------------------------------------------------------------------------

def _inject_rows_fast(cols, w2d, plan: _LayerPlan, offset: int) -> np.ndarray:
    base = matmul_popcount(cols, w2d)
    mask = plan.mask
    if not plan.faulty.any():
        return base
    if mask.fault_type == BITFLIP:
        # y' = y - 2 * sum_{k in F} x_k w_k
        wf = w2d * plan.faulty
        return base - 2 * (cols @ wf.T).astype(np.int32)
    if mask.fault_type == STUCKAT:
        # y' = y - sum_{k in F} x_k w_k + sum_{k in F} s_k
        wf = w2d * plan.faulty
        bias = (plan.stuck_signs * plan.faulty).sum(axis=1).astype(np.int32)
        return base - (cols @ wf.T).astype(np.int32) + bias[None, :]
    return _dynamic_fast(cols, w2d, plan, offset, base)


def _dynamic_fast(cols, w2d, plan: _LayerPlan, offset: int, base: np.ndarray) -> np.ndarray:
    m = plan.mask.period + 1
    n_rows = cols.shape[0]
    if m <= _RESIDUE_LIMIT:
        # counter of product (c,k) at step s is s*G + j; with s fixed mod m the
        # fired set is a static pattern, one correction matmul per residue
        residues = (offset + np.arange(n_rows)) % m
        for rho in np.unique(residues):
            fired = plan.faulty & ((rho * plan.g_size + plan.j_index) % m == 0)
            if not fired.any():
                continue
            sel = residues == rho
            base[sel] -= 2 * (cols[sel] @ (w2d * fired).T).astype(np.int32)
        return base
    # long periods: enumerate individual firing events per faulty gate
    cfg_rows = plan.mask.grid.shape[0]
    r_g = cfg_rows
    c_out, k_len = w2d.shape
    rows_acc, cs_acc, ks_acc = [], [], []
    for r0, c0 in np.argwhere(plan.mask.grid):
        n_k = (k_len - 1 - r0) // r_g + 1 if r0 < k_len else 0
        if n_k == 0:
            continue
        for base_c in range(c0, plan.xg, plan.mask.grid.shape[1]):
            if base_c >= c_out:
                continue
            n_c = (c_out - 1 - base_c) // plan.xg + 1
            g = n_c * n_k
            lo, hi = offset * g, (offset + n_rows) * g
            t0 = -(-lo // m) * m
            if t0 >= hi:
                continue
            ts = np.arange(t0, hi, m)
            j = ts % g
            rows_acc.append(ts // g - offset)
            cs_acc.append(base_c + plan.xg * (j // n_k))
            ks_acc.append(r0 + r_g * (j % n_k))
    if rows_acc:
        rows = np.concatenate(rows_acc)
        cs = np.concatenate(cs_acc)
        ks = np.concatenate(ks_acc)
        corr = (-2.0 * cols[rows, ks] * w2d[cs, ks]).astype(np.int32)
        np.add.at(base, (rows, cs), corr)
    return base


def inject_fast(inp: BinaryTensor, layer, session: InjectionSession) -> np.ndarray:
    """Optimized injection, bit-exact equal to the exact path."""
    _require_injectable(layer)
    mask = session.masks.get(layer.name)
    if layer.kind == "BinaryConv2D":
        signs = inp.to_signs()
        cols, oh, ow = im2col(signs[None], layer)
        w2d = layer.weights.to_signs().reshape(layer.weights.shape[0], -1).astype(np.float32)
    else:
        cols = inp.to_signs().astype(np.float32)[None]
        oh = ow = 1
        w2d = layer.weights.to_signs().astype(np.float32)
    if mask is None:
        y = matmul_popcount(cols, w2d)
    else:
        offset = session._offsets.get(layer.name, 0)
        y = _inject_rows_fast(cols, w2d, session.plan(layer), offset)
        session._offsets[layer.name] = offset + cols.shape[0]
    if layer.kind == "BinaryConv2D":
        return y.reshape(oh, ow, layer.weights.shape[0])
    return y[0]


# ---------------------------------------------------------------------------
# feature-map approximation
# ---------------------------------------------------------------------------

def _tile(vec: np.ndarray, count: int, what: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.uint8).reshape(-1)
    if count and vec.size == 0:
        raise InjectionError(f"zero-length {what} vector for a nonempty feature map")
    if count == 0:
        return np.zeros(0, dtype=np.uint8)
    return vec[np.arange(count) % vec.size]


def apply_featuremap_mask(feature: BinaryTensor, flip_vec, stuck_vec, stuck_vals) -> BinaryTensor:
    """Apply flattened mask vectors to a binary feature map.

    Element i of the (row-major flattened) feature map uses bit (i mod len) of
    each vector: flips negate, stuck elements take the stuck value, and stuck
    wins where both apply.
    """
    signs = feature.to_signs().reshape(-1).copy()
    n = signs.size
    flip = _tile(flip_vec, n, "flip")
    stuck = _tile(stuck_vec, n, "stuck")
    svals = _tile(stuck_vals, n, "stuck-value") if n else np.zeros(0, dtype=np.uint8)
    signs[flip == 1] *= -1
    sel = stuck == 1
    signs[sel] = (svals[sel].astype(np.int8) * 2) - 1
    return BinaryTensor.from_signs(signs.reshape(feature.shape))


def _featuremap_targets(model: ModelGraph, masks: dict) -> dict:
    """Map each masked injectable layer to its first downstream Threshold."""
    targets = {}
    layers = model.layers
    for i, layer in enumerate(layers):
        mask = masks.get(layer.name)
        if mask is None or layer.kind not in ("BinaryConv2D", "BinaryDense"):
            continue
        for nxt in layers[i + 1 :]:
            if nxt.kind == "Threshold":
                targets[nxt.name] = mask
                break
            if nxt.kind in ("BinaryConv2D", "BinaryDense"):
                break
        else:
            raise InjectionError(
                f"featuremap mode cannot inject into {layer.name!r}: no downstream threshold"
            )
    return targets


def _apply_featuremap_batch(signs: np.ndarray, mask: FaultMask) -> np.ndarray:
    """Vectorized featuremap application on a [N, ...] sign batch.

    Dynamic masks degrade to permanent flips here: the approximation has no
    per-product time axis for the period to act on.
    """
    n = signs.shape[0]
    flat = signs.reshape(n, -1).copy()
    count = flat.shape[1]
    grid = mask.grid.reshape(-1)
    idx = np.arange(count) % grid.size
    if mask.fault_type == STUCKAT:
        sel = grid[idx] == 1
        flat[:, sel] = (mask.stuck_values.reshape(-1)[idx[sel]].astype(np.int8) * 2) - 1
    else:
        flat[:, grid[idx] == 1] *= -1
    return flat.reshape(signs.shape)


# ---------------------------------------------------------------------------
# batch driver
# ---------------------------------------------------------------------------

def _validate_session(model: ModelGraph, session: InjectionSession):
    injectable = {l.name for l in model.injectable_layers()}
    for name in session.masks:
        if name not in injectable:
            raise InjectionError(f"mask targets {name!r}, which is not an injectable layer")


def run_with_faults(model: ModelGraph, images: np.ndarray, session: InjectionSession):
    """Injected inference -> (predicted classes [N], logits [N, C]).

    With empty masks every mode is bit-identical to engine.infer_batch.
    Images inside one call are processed in index order, which is what keeps
    dynamic-fault runs deterministic; do not split a dynamic run across
    parallel workers.
    """
    _validate_session(model, session)
    if session.mode == "featuremap":
        targets = _featuremap_targets(model, session.masks)

        def hook(layer, signs):
            mask = targets.get(layer.name)
            return signs if mask is None else _apply_featuremap_batch(signs, mask)

        logits = engine.forward(model, images, feature_hook=hook)
    elif session.mode == "fast":

        def inject(layer, cols, w2d, n, oh, ow):
            mask = session.masks.get(layer.name)
            if mask is None:
                return matmul_popcount(cols, w2d)
            offset = session._offsets.get(layer.name, 0)
            y = _inject_rows_fast(cols, w2d, session.plan(layer), offset)
            session._offsets[layer.name] = offset + cols.shape[0]
            return y

        logits = engine.forward(model, images, inject=inject)
    else:  # exact

        def inject(layer, cols, w2d, n, oh, ow):
            mask = session.masks.get(layer.name)
            if mask is None:
                return matmul_popcount(cols, w2d)
            return _inject_rows_exact(cols, w2d, mask, session.cfg, session.counters(layer.name))

        logits = engine.forward(model, images, inject=inject)
    return logits.argmax(axis=1), logits
