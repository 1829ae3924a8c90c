"""Fault-free BNN inference: binary conv/dense layers plus the non-binary
stages (input binarization, integer thresholding, max-pooling, argmax) that
stay on the CMOS side and are never fault-injected.

Normative conventions, on which fault scheduling depends:
  * conv reduction index k enumerates (ky, kx, in_ch) row-major;
  * dense reduction index is the input index;
  * "same" padding pads with -1 (there is no zero in {-1,+1});
  * threshold tie d*(x-t) == 0 resolves to +1;
  * argmax ties break toward the lowest class index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bitpack import BinaryTensor

PAD_VALUE = -1
INJECTABLE_KINDS = ("BinaryConv2D", "BinaryDense")

# Reductions run as float32 matmuls; partial sums stay integer-exact as long
# as K stays below 2^24.
_MAX_K = 1 << 24


class ModelError(ValueError):
    """Structurally invalid model or layer wiring."""


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


@dataclass
class InputBinarize:
    name: str
    theta: float = 0.5
    kind = "InputBinarize"


@dataclass
class BinaryConv2D:
    """Binary convolution; weights layout [out_ch][k_h][k_w][in_ch]."""

    name: str
    weights: BinaryTensor
    stride: tuple[int, int] = (1, 1)
    padding: str = "valid"
    kind = "BinaryConv2D"

    def __post_init__(self):
        self.stride = _pair(self.stride)
        if len(self.weights.shape) != 4:
            raise ModelError(f"layer {self.name}: conv weights must be 4-d")
        if self.padding not in ("valid", "same"):
            raise ModelError(f"layer {self.name}: unknown padding {self.padding!r}")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def reduction_len(self) -> int:
        _, kh, kw, cin = self.weights.shape
        return kh * kw * cin


@dataclass
class BinaryDense:
    """Binary dense layer; weights layout [out][in]."""

    name: str
    weights: BinaryTensor
    kind = "BinaryDense"

    def __post_init__(self):
        if len(self.weights.shape) != 2:
            raise ModelError(f"layer {self.name}: dense weights must be 2-d")

    @property
    def out_features(self) -> int:
        return self.weights.shape[0]

    @property
    def reduction_len(self) -> int:
        return self.weights.shape[1]


@dataclass
class Threshold:
    """Per-channel integer compare: out = +1 if d_c*(x - t_c) >= 0 else -1."""

    name: str
    thresholds: np.ndarray
    directions: np.ndarray
    kind = "Threshold"

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=np.int32)
        self.directions = np.asarray(self.directions, dtype=np.int32)
        if self.thresholds.ndim != 1 or self.thresholds.shape != self.directions.shape:
            raise ModelError(f"layer {self.name}: thresholds/directions must be equal-length vectors")
        if not np.all(np.abs(self.directions) == 1):
            raise ModelError(f"layer {self.name}: directions must be -1/+1")


@dataclass
class MaxPool2D:
    name: str
    window: tuple[int, int] = (2, 2)
    stride: tuple[int, int] = (2, 2)
    kind = "MaxPool2D"

    def __post_init__(self):
        self.window = _pair(self.window)
        self.stride = _pair(self.stride)


@dataclass
class Flatten:
    name: str
    kind = "Flatten"


LayerSpec = InputBinarize | BinaryConv2D | BinaryDense | Threshold | MaxPool2D | Flatten


def conv_output_hw(h: int, w: int, layer: BinaryConv2D) -> tuple[int, int]:
    _, kh, kw, _ = layer.weights.shape
    sy, sx = layer.stride
    if layer.padding == "same":
        return -(-h // sy), -(-w // sx)
    if h < kh or w < kw:
        raise ModelError(f"layer {layer.name}: kernel {kh}x{kw} larger than input {h}x{w}")
    return (h - kh) // sy + 1, (w - kw) // sx + 1


def _layer_output(layer: LayerSpec, shape: tuple, domain: str) -> tuple[tuple, str]:
    """Static shape/domain chain; domain is 'real', 'signs' or 'ints'."""
    if layer.kind == "InputBinarize":
        if domain != "real":
            raise ModelError(f"layer {layer.name}: input already binarized")
        return shape, "signs"
    if layer.kind == "BinaryConv2D":
        if domain != "signs":
            raise ModelError(f"layer {layer.name}: needs binary input, got {domain}")
        if len(shape) != 3 or shape[2] != layer.weights.shape[3]:
            raise ModelError(
                f"layer {layer.name}: input shape {shape} does not match weights {layer.weights.shape}"
            )
        oh, ow = conv_output_hw(shape[0], shape[1], layer)
        return (oh, ow, layer.out_channels), "ints"
    if layer.kind == "BinaryDense":
        if domain != "signs":
            raise ModelError(f"layer {layer.name}: needs binary input, got {domain}")
        if len(shape) != 1 or shape[0] != layer.reduction_len:
            raise ModelError(
                f"layer {layer.name}: input shape {shape} does not match weights {layer.weights.shape}"
            )
        return (layer.out_features,), "ints"
    if layer.kind == "Threshold":
        if domain != "ints":
            raise ModelError(f"layer {layer.name}: threshold needs an integer feature map")
        if shape[-1] != layer.thresholds.shape[0]:
            raise ModelError(
                f"layer {layer.name}: {layer.thresholds.shape[0]} channels for input {shape}"
            )
        return shape, "signs"
    if layer.kind == "MaxPool2D":
        if len(shape) != 3:
            raise ModelError(f"layer {layer.name}: pooling needs a 3-d feature map")
        wy, wx = layer.window
        sy, sx = layer.stride
        if shape[0] < wy or shape[1] < wx:
            raise ModelError(f"layer {layer.name}: window {layer.window} larger than input {shape}")
        return ((shape[0] - wy) // sy + 1, (shape[1] - wx) // sx + 1, shape[2]), domain
    if layer.kind == "Flatten":
        n = 1
        for d in shape:
            n *= d
        return (n,), domain
    raise ModelError(f"unknown layer kind {layer.kind!r}")


@dataclass
class ModelGraph:
    """Ordered layer chain; immutable after construction (validated eagerly)."""

    name: str
    input_shape: tuple[int, ...]
    class_count: int
    layers: list
    _wcache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        self.validate()

    def validate(self):
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ModelError(f"duplicate layer names in model {self.name}")
        for i, l in enumerate(self.layers):
            if l.kind == "InputBinarize" and i != 0:
                raise ModelError("InputBinarize only allowed at position 0")
        shape, domain = self.input_shape, ("real" if self.layers and self.layers[0].kind == "InputBinarize" else "signs")
        self._shapes = [shape]
        for l in self.layers:
            if l.kind in INJECTABLE_KINDS and l.reduction_len > _MAX_K:
                raise ModelError(f"layer {l.name}: reduction length {l.reduction_len} exceeds supported maximum")
            shape, domain = _layer_output(l, shape, domain)
            self._shapes.append(shape)
        if shape != (self.class_count,) or domain != "ints":
            raise ModelError(
                f"model {self.name}: final layer must emit {self.class_count} integer logits, got {shape} ({domain})"
            )

    def shape_chain(self) -> list[tuple]:
        return list(self._shapes)

    def injectable_layers(self) -> list:
        return [l for l in self.layers if l.kind in INJECTABLE_KINDS]

    def weights2d(self, layer) -> np.ndarray:
        """Unpacked weights as float32 [C_out, K]; cached per layer."""
        w = self._wcache.get(layer.name)
        if w is None:
            w = layer.weights.to_signs().reshape(layer.weights.shape[0], -1).astype(np.float32)
            self._wcache[layer.name] = w
        return w


# ---------------------------------------------------------------------------
# kernels (batched internally; the single-image public operations wrap them)
# ---------------------------------------------------------------------------

def im2col(signs: np.ndarray, layer: BinaryConv2D) -> tuple[np.ndarray, int, int]:
    """Patch matrix for a sign batch [N,h,w,c] -> float32 [N*oh*ow, K].

    Row order is (image, out_y, out_x) row-major and column order (ky, kx, c)
    row-major; both orders are load-bearing for fault scheduling.
    """
    _, kh, kw, _ = layer.weights.shape
    sy, sx = layer.stride
    if layer.padding == "same":
        n, h, w, c = signs.shape
        oh, ow = conv_output_hw(h, w, layer)
        ph = max((oh - 1) * sy + kh - h, 0)
        pw = max((ow - 1) * sx + kw - w, 0)
        signs = np.pad(
            signs,
            ((0, 0), (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2), (0, 0)),
            constant_values=PAD_VALUE,
        )
    windows = np.lib.stride_tricks.sliding_window_view(signs, (kh, kw), axis=(1, 2))
    windows = windows[:, ::sy, ::sx]  # [N, oh, ow, c, kh, kw]
    n, oh, ow = windows.shape[:3]
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * oh * ow, -1)
    return np.ascontiguousarray(cols, dtype=np.float32), oh, ow


def matmul_popcount(cols: np.ndarray, weights2d: np.ndarray) -> np.ndarray:
    """XNOR-popcount reduction as an exact float32 matmul -> int32."""
    return (cols @ weights2d.T).astype(np.int32)


def binarize_input(image: np.ndarray, theta: float) -> BinaryTensor:
    """Map a [0,1] real image to signs: +1 where value > theta, else -1."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("image values must lie in [0,1]")
    return BinaryTensor.from_signs(np.where(arr > theta, 1, -1).astype(np.int8))


def conv2d_binary(inp: BinaryTensor, layer: BinaryConv2D) -> np.ndarray:
    """Single-image binary convolution -> int32 [oh, ow, out_ch]."""
    signs = inp.to_signs()
    if signs.ndim != 3 or signs.shape[2] != layer.weights.shape[3]:
        raise ModelError(f"layer {layer.name}: input {inp.shape} does not match weights {layer.weights.shape}")
    cols, oh, ow = im2col(signs[None], layer)
    w2d = layer.weights.to_signs().reshape(layer.out_channels, -1).astype(np.float32)
    return matmul_popcount(cols, w2d).reshape(oh, ow, layer.out_channels)


def dense_binary(inp: BinaryTensor, layer: BinaryDense) -> np.ndarray:
    """Single-vector binary dense -> int32 [out]."""
    if len(inp.shape) != 1 or inp.shape[0] != layer.reduction_len:
        raise ModelError(f"layer {layer.name}: input {inp.shape} does not match weights {layer.weights.shape}")
    cols = inp.to_signs().astype(np.float32)[None]
    w2d = layer.weights.to_signs().astype(np.float32)
    return matmul_popcount(cols, w2d)[0]


def threshold(x: np.ndarray, thresholds, directions) -> BinaryTensor:
    """Per-channel integer threshold; channels along the last axis."""
    x = np.asarray(x)
    t = np.asarray(thresholds, dtype=np.int64)
    d = np.asarray(directions, dtype=np.int64)
    if x.shape[-1] != t.shape[0] or t.shape != d.shape:
        raise ModelError(f"channel mismatch: input {x.shape}, {t.shape[0]} thresholds")
    return BinaryTensor.from_signs(_threshold_signs(x, t, d))


def _threshold_signs(x: np.ndarray, t: np.ndarray, d: np.ndarray) -> np.ndarray:
    return np.where(d * (x - t) >= 0, 1, -1).astype(np.int8)


def maxpool2d(x: np.ndarray, window, stride) -> np.ndarray:
    """Per-channel window max over [h, w, c] (or batched [N, h, w, c])."""
    x = np.asarray(x)
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    wy, wx = _pair(window)
    sy, sx = _pair(stride)
    if x.shape[1] < wy or x.shape[2] < wx:
        raise ModelError(f"pool window {(wy, wx)} larger than input {x.shape[1:3]}")
    views = np.lib.stride_tricks.sliding_window_view(x, (wy, wx), axis=(1, 2))
    out = views[:, ::sy, ::sx].max(axis=(-2, -1))
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# batch driver
# ---------------------------------------------------------------------------

def forward(model: ModelGraph, images: np.ndarray, inject=None, feature_hook=None) -> np.ndarray:
    """Run a batch through the model and return int32 logits [N, classes].

    ``images`` is always a batch: float array [N, h, w] or [N, h, w, c] when
    the model starts with InputBinarize, otherwise an int8 sign array. A
    missing trailing channel axis of size 1 is added.

    ``inject(layer, cols, w2d, n, oh, ow)`` may replace the reduction of an
    injectable layer (the fault injector hooks in here); ``feature_hook(layer,
    signs)`` may rewrite the sign tensor right after a Threshold layer (the
    feature-map approximation hooks in here). Both default to clean paths.
    """
    images = np.asarray(images)
    if images.shape[1:] != model.input_shape:
        if images.shape[1:] + (1,) == model.input_shape:
            images = images[..., None]
        else:
            raise ModelError(f"input batch shape {images.shape[1:]} != model input {model.input_shape}")
    n = images.shape[0]

    if model.layers and model.layers[0].kind == "InputBinarize":
        value = images
    else:
        value = images.astype(np.int8)

    for layer in model.layers:
        if layer.kind == "InputBinarize":
            if value.size and (value.min() < 0.0 or value.max() > 1.0):
                raise ValueError("image values must lie in [0,1]")
            value = np.where(value > layer.theta, 1, -1).astype(np.int8)
        elif layer.kind == "BinaryConv2D":
            cols, oh, ow = im2col(value, layer)
            w2d = model.weights2d(layer)
            if inject is not None:
                y = inject(layer, cols, w2d, n, oh, ow)
            else:
                y = matmul_popcount(cols, w2d)
            value = y.reshape(n, oh, ow, layer.out_channels)
        elif layer.kind == "BinaryDense":
            cols = np.ascontiguousarray(value, dtype=np.float32)
            w2d = model.weights2d(layer)
            if inject is not None:
                y = inject(layer, cols, w2d, n, 1, 1)
            else:
                y = matmul_popcount(cols, w2d)
            value = y
        elif layer.kind == "Threshold":
            value = _threshold_signs(value, layer.thresholds, layer.directions)
            if feature_hook is not None:
                value = feature_hook(layer, value)
        elif layer.kind == "MaxPool2D":
            value = maxpool2d(value, layer.window, layer.stride)
        elif layer.kind == "Flatten":
            value = value.reshape(n, -1)
        else:
            raise ModelError(f"unknown layer kind {layer.kind!r}")
    return value.astype(np.int32)


def infer_batch(model: ModelGraph, images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fault-free inference: (predicted class indices [N], logits [N, C]).

    Deterministic; argmax ties resolve to the lowest class index.
    """
    logits = forward(model, images)
    return logits.argmax(axis=1), logits
