"""Minimal neural-network engine over flat float32 parameter vectors.

Supports dense, 1/2/3-D convolution (stride 1, zero "same" padding, odd
kernels), instance norm, non-overlapping max pooling, ReLU, and global
average pooling, for scalar regression heads. All parameters of a model
live in one flat vector with a deterministic layer-order layout, so
element-wise masks and weighted averaging apply uniformly.

Convolution and pooling inner loops run through ``_kernels`` (numba or
numpy backend); everything else is plain numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels

INSTANCE_NORM_EPS = 1e-5


class SpecError(ValueError):
    """Model spec is internally inconsistent (shapes, kernels, output size)."""


class NumericsError(RuntimeError):
    """Training produced non-finite values."""


def _as_dims(value, name: str) -> tuple[int, ...]:
    dims = (value,) if isinstance(value, int) else tuple(int(v) for v in value)
    if not 1 <= len(dims) <= 3 or any(d < 1 for d in dims):
        raise SpecError(f"{name} must be 1-3 positive ints, got {value!r}")
    return dims


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class Conv:
    in_channels: int
    out_channels: int
    kernel: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "kernel", _as_dims(self.kernel, "conv kernel"))


@dataclass(frozen=True)
class InstanceNorm:
    channels: int


@dataclass(frozen=True)
class MaxPool:
    window: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "window", _as_dims(self.window, "pool window"))


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class AvgPool:
    """Global average pool over all spatial dims."""


Layer = Dense | Conv | InstanceNorm | MaxPool | Relu | AvgPool

LOSSES = ("mse", "mae")


@dataclass(frozen=True)
class ModelSpec:
    """Layer stack plus per-sample input shape.

    ``input_shape`` is ``(features,)`` for flat inputs or
    ``(channels, *spatial)`` with 1-3 spatial dims for convolutional ones.
    ``loss`` is the training loss; evaluation always reports MAE.
    """

    input_shape: tuple[int, ...]
    layers: tuple[Layer, ...]
    loss: str = "mse"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.loss not in LOSSES:
            raise SpecError(f"loss must be one of {LOSSES}, got {self.loss!r}")

    @property
    def param_count(self) -> int:
        return _layout(self).total


@dataclass(frozen=True)
class Batch:
    """Inputs (samples x feature dims) and matching regression targets."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if len(self.inputs) != len(self.targets):
            raise ValueError(
                f"batch has {len(self.inputs)} inputs but {len(self.targets)} targets"
            )


@dataclass(frozen=True)
class _ParamEntry:
    layer_index: int
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclass(frozen=True)
class _Layout:
    entries: tuple[_ParamEntry, ...]
    shapes: tuple[tuple[int, ...], ...]  # per-sample activation shape after each layer
    total: int = field(init=False, default=0)

    def __post_init__(self):
        total = sum(e.size for e in self.entries)
        object.__setattr__(self, "total", total)


def _canonical_input(shape: tuple[int, ...]) -> tuple[int, ...]:
    """Flat inputs stay 1-D; spatial inputs become (c, d, h, w) with 3 dims."""
    if len(shape) == 1:
        return shape
    if not 2 <= len(shape) <= 4:
        raise SpecError(f"input shape must have 1-4 dims, got {shape}")
    c, *spatial = shape
    return (c,) + (1,) * (3 - len(spatial)) + tuple(spatial)


def _lift(dims: tuple[int, ...], rank: int, name: str) -> tuple[int, int, int]:
    if len(dims) == 1 and rank > 1:
        dims = dims * rank
    if len(dims) != rank:
        raise SpecError(f"{name} {dims} does not match {rank} spatial dim(s)")
    return (1,) * (3 - rank) + dims


@lru_cache(maxsize=None)
def _layout(spec: ModelSpec) -> _Layout:
    """Trace shapes through the stack; raises SpecError on any mismatch."""
    shape = _canonical_input(spec.input_shape)
    rank = max(len(spec.input_shape) - 1, 1)
    entries: list[_ParamEntry] = []
    shapes: list[tuple[int, ...]] = []
    offset = 0

    def add(i: int, name: str, pshape: tuple[int, ...]):
        nonlocal offset
        entries.append(_ParamEntry(i, name, pshape, offset))
        offset += int(np.prod(pshape))

    for i, layer in enumerate(spec.layers):
        where = f"layer {i} ({type(layer).__name__})"
        if isinstance(layer, Dense):
            got = int(np.prod(shape))
            if got != layer.in_features:
                raise SpecError(
                    f"{where}: expects {layer.in_features} inputs, gets {got} from {shape}"
                )
            add(i, "weight", (layer.out_features, layer.in_features))
            add(i, "bias", (layer.out_features,))
            shape = (layer.out_features,)
        elif isinstance(layer, Conv):
            if len(shape) != 4:
                raise SpecError(f"{where}: needs a (channels, spatial...) input, got {shape}")
            if shape[0] != layer.in_channels:
                raise SpecError(
                    f"{where}: expects {layer.in_channels} channels, gets {shape[0]}"
                )
            kernel = _lift(layer.kernel, rank, f"{where}: kernel")
            if any(k % 2 == 0 for k in layer.kernel):
                raise SpecError(f"{where}: even kernel size in {layer.kernel} (same padding)")
            add(i, "weight", (layer.out_channels, layer.in_channels) + kernel)
            add(i, "bias", (layer.out_channels,))
            shape = (layer.out_channels,) + shape[1:]
        elif isinstance(layer, InstanceNorm):
            if len(shape) != 4 or shape[0] != layer.channels:
                raise SpecError(
                    f"{where}: expects (channels={layer.channels}, spatial...), got {shape}"
                )
            add(i, "gamma", (layer.channels,))
            add(i, "beta", (layer.channels,))
        elif isinstance(layer, MaxPool):
            if len(shape) != 4:
                raise SpecError(f"{where}: needs a spatial input, got {shape}")
            window = _lift(layer.window, rank, f"{where}: window")
            if any(d % w != 0 for d, w in zip(shape[1:], window)):
                raise SpecError(f"{where}: window {window} does not divide {shape[1:]}")
            shape = (shape[0],) + tuple(d // w for d, w in zip(shape[1:], window))
        elif isinstance(layer, AvgPool):
            if len(shape) != 4:
                raise SpecError(f"{where}: needs a spatial input, got {shape}")
            shape = (shape[0], 1, 1, 1)
        elif isinstance(layer, Relu):
            pass
        else:
            raise SpecError(f"{where}: unknown layer type")
        shapes.append(shape)

    final = shapes[-1] if shapes else _canonical_input(spec.input_shape)
    if int(np.prod(final)) != 1:
        raise SpecError(f"model must emit one value per sample, got shape {final}")
    return _Layout(tuple(entries), tuple(shapes))


def param_count(spec: ModelSpec) -> int:
    """Total number of parameters, a pure function of the spec."""
    return _layout(spec).total


def param_entries(spec: ModelSpec):
    """Flat layout: (layer_index, name, shape, offset) per parameter array."""
    return _layout(spec).entries


def protected_indices(spec: ModelSpec, names=("bias", "beta", "gamma")) -> np.ndarray:
    """Never-prune marker per parameter for the named entry kinds."""
    lay = _layout(spec)
    out = np.zeros(lay.total, dtype=bool)
    for e in lay.entries:
        if e.name in names:
            out[e.offset : e.offset + e.size] = True
    return out


def _views(params: np.ndarray, spec: ModelSpec) -> dict[tuple[int, str], np.ndarray]:
    lay = _layout(spec)
    if params.shape != (lay.total,):
        raise ValueError(f"expected {lay.total} parameters, got shape {params.shape}")
    return {
        (e.layer_index, e.name): params[e.offset : e.offset + e.size].reshape(e.shape)
        for e in lay.entries
    }


def unflatten(params: np.ndarray, spec: ModelSpec) -> dict[tuple[int, str], np.ndarray]:
    """Per-layer parameter arrays as views into the flat vector."""
    return _views(params, spec)


def flatten(parts: dict[tuple[int, str], np.ndarray], spec: ModelSpec) -> np.ndarray:
    lay = _layout(spec)
    out = np.empty(lay.total, dtype=np.float32)
    for e in lay.entries:
        out[e.offset : e.offset + e.size] = np.asarray(parts[(e.layer_index, e.name)]).ravel()
    return out


def build_model(spec: ModelSpec, seed: int) -> np.ndarray:
    """Fan-in-scaled uniform init; deterministic given (spec, seed).

    Weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)); biases start at zero,
    norm scales at one.
    """
    lay = _layout(spec)
    rng = np.random.default_rng(seed)
    params = np.zeros(lay.total, dtype=np.float32)
    for e in lay.entries:
        view = params[e.offset : e.offset + e.size]
        if e.name == "weight":
            fan_in = int(np.prod(e.shape[1:]))
            bound = math.sqrt(6.0 / fan_in)
            view[:] = rng.uniform(-bound, bound, e.size).astype(np.float32)
        elif e.name == "gamma":
            view[:] = 1.0
        # bias and beta stay zero
    return params


def _pad_same(x: np.ndarray, kernel: tuple[int, int, int]) -> np.ndarray:
    pads = [(0, 0), (0, 0)] + [(k // 2, k // 2) for k in kernel]
    return np.pad(x, pads)


def _run(params: np.ndarray, spec: ModelSpec, inputs: np.ndarray, keep: bool):
    """Forward pass; with keep=True also returns per-layer caches and outputs."""
    lay = _layout(spec)
    views = _views(params, spec)
    x = np.ascontiguousarray(np.asarray(inputs, dtype=params.dtype))
    n = x.shape[0]
    canon = _canonical_input(spec.input_shape)
    if x.shape[1:] != tuple(spec.input_shape) and x.shape[1:] != canon:
        raise ValueError(
            f"batch inputs have shape {x.shape[1:]}, spec expects {spec.input_shape}"
        )
    x = x.reshape((n,) + canon)
    rank = max(len(spec.input_shape) - 1, 1)
    caches: list = []
    outputs: list = []

    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            xf = x.reshape(n, -1)
            w, b = views[(i, "weight")], views[(i, "bias")]
            y = xf @ w.T + b
            cache = (xf, x.shape)
        elif isinstance(layer, Conv):
            w, b = views[(i, "weight")], views[(i, "bias")]
            xp = _pad_same(x, w.shape[2:])
            y = _kernels.conv3d_forward(xp, w, b)
            cache = xp
        elif isinstance(layer, InstanceNorm):
            g, b = views[(i, "gamma")], views[(i, "beta")]
            mu = x.mean(axis=(2, 3, 4), keepdims=True)
            var = x.var(axis=(2, 3, 4), keepdims=True)
            istd = 1.0 / np.sqrt(var + INSTANCE_NORM_EPS)
            xhat = (x - mu) * istd
            y = g.reshape(1, -1, 1, 1, 1) * xhat + b.reshape(1, -1, 1, 1, 1)
            cache = (xhat, istd)
        elif isinstance(layer, MaxPool):
            window = _lift(layer.window, rank, "window")
            y, idx = _kernels.maxpool3d_forward(x, window)
            cache = (idx, x.shape, window)
        elif isinstance(layer, AvgPool):
            y = x.mean(axis=(2, 3, 4), keepdims=True)
            cache = x.shape
        else:  # Relu
            y = np.maximum(x, 0)
            cache = x > 0
        if keep:
            caches.append(cache)
            outputs.append(y)
        x = y

    preds = x.reshape(n)
    if keep:
        return preds, caches, outputs, views
    return preds


def forward(params: np.ndarray, spec: ModelSpec, batch: Batch) -> np.ndarray:
    """Predictions, one per sample; pure function of (params, batch)."""
    return _run(params, spec, batch.inputs, keep=False)


def _loss_and_dpred(preds: np.ndarray, targets: np.ndarray, loss: str):
    n = len(preds)
    err = preds - targets
    if loss == "mse":
        return float(np.mean(err * err)), (2.0 / n) * err
    return float(np.mean(np.abs(err))), np.sign(err) / n


def backward(params: np.ndarray, spec: ModelSpec, batch: Batch):
    """Training loss and its gradient w.r.t. every parameter.

    Raises NumericsError naming the first offending layer if the loss is
    not finite.
    """
    targets = np.asarray(batch.targets, dtype=params.dtype).reshape(-1)
    preds, caches, outputs, views = _run(params, spec, batch.inputs, keep=True)
    loss, dpred = _loss_and_dpred(preds, targets, spec.loss)
    if not math.isfinite(loss):
        for i, out in enumerate(outputs):
            if not np.all(np.isfinite(out)):
                raise NumericsError(
                    f"non-finite values in output of layer {i} "
                    f"({type(spec.layers[i]).__name__})"
                )
        raise NumericsError("non-finite loss")

    lay = _layout(spec)
    grad = np.zeros(lay.total, dtype=params.dtype)
    gviews = _views(grad, spec)
    rank = max(len(spec.input_shape) - 1, 1)

    dy = dpred.reshape(outputs[-1].shape) if outputs else dpred
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        cache = caches[i]
        if isinstance(layer, Dense):
            xf, xshape = cache
            w = views[(i, "weight")]
            dyf = dy.reshape(len(xf), -1)
            gviews[(i, "weight")][:] += dyf.T @ xf
            gviews[(i, "bias")][:] += dyf.sum(axis=0)
            dy = (dyf @ w).reshape(xshape)
        elif isinstance(layer, Conv):
            xp = cache
            w = views[(i, "weight")]
            dw, db = _kernels.conv3d_weight_grad(xp, dy)
            gviews[(i, "weight")][:] += dw
            gviews[(i, "bias")][:] += db
            dxp = _kernels.conv3d_input_grad(dy, w, xp.shape)
            kd, kh, kw = w.shape[2:]
            dy = dxp[
                :,
                :,
                kd // 2 : dxp.shape[2] - (kd // 2),
                kh // 2 : dxp.shape[3] - (kh // 2),
                kw // 2 : dxp.shape[4] - (kw // 2),
            ]
        elif isinstance(layer, InstanceNorm):
            xhat, istd = cache
            g = views[(i, "gamma")]
            gviews[(i, "gamma")][:] += (dy * xhat).sum(axis=(0, 2, 3, 4))
            gviews[(i, "beta")][:] += dy.sum(axis=(0, 2, 3, 4))
            dxhat = dy * g.reshape(1, -1, 1, 1, 1)
            m1 = dxhat.mean(axis=(2, 3, 4), keepdims=True)
            m2 = (dxhat * xhat).mean(axis=(2, 3, 4), keepdims=True)
            dy = istd * (dxhat - m1 - xhat * m2)
        elif isinstance(layer, MaxPool):
            idx, xshape, window = cache
            dy = _kernels.maxpool3d_backward(dy, idx, xshape, window)
        elif isinstance(layer, AvgPool):
            xshape = cache
            size = int(np.prod(xshape[2:]))
            dy = np.broadcast_to(dy / size, xshape).copy()
        else:  # Relu
            dy = dy * cache
    return loss, grad


def masked_sgd_step(params: np.ndarray, grad: np.ndarray, mask, lr: float) -> np.ndarray:
    """One SGD step with the gradient gated by a binary mask.

    Coordinates with mask 0 are returned bit-for-bit unchanged, so pruned
    (zero) parameters stay exactly zero.
    """
    bits = np.asarray(getattr(mask, "bits", mask))
    if not (params.shape == grad.shape == bits.shape):
        raise ValueError(
            f"length mismatch: params {params.shape}, grad {grad.shape}, mask {bits.shape}"
        )
    return np.where(bits, params - lr * grad, params).astype(params.dtype, copy=False)


def evaluate_mae(params: np.ndarray, spec: ModelSpec, inputs, labels, chunk: int = 512) -> float:
    """Mean absolute error over a dataset, computed in chunks."""
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    total = 0.0
    for lo in range(0, len(labels), chunk):
        preds = _run(params, spec, inputs[lo : lo + chunk], keep=False)
        total += float(np.abs(preds - labels[lo : lo + chunk]).sum())
    return total / len(labels)


def seven_block_cnn(
    input_shape=(1, 32, 32, 32),
    widths=(32, 64, 128, 256, 256, 64),
    loss: str = "mse",
) -> ModelSpec:
    """Seven-block 3-D regression CNN.

    Five conv(3x3x3) + instance-norm + max-pool(2) + ReLU blocks, a
    conv(1x1x1) + instance-norm + ReLU block, then global average pooling
    into a conv(1x1x1) scalar head. At the default widths this has
    2,950,401 parameters.
    """
    c_in = input_shape[0]
    layers: list[Layer] = []
    for c_out in widths[:5]:
        layers += [
            Conv(c_in, c_out, (3, 3, 3)),
            InstanceNorm(c_out),
            MaxPool((2, 2, 2)),
            Relu(),
        ]
        c_in = c_out
    layers += [Conv(c_in, widths[5], (1, 1, 1)), InstanceNorm(widths[5]), Relu()]
    layers += [AvgPool(), Conv(widths[5], 1, (1, 1, 1))]
    return ModelSpec(tuple(input_shape), tuple(layers), loss)
