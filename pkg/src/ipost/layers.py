"""Layers with forward/backward passes and the I-POST network builder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import (
    DTYPE,
    ShapeError,
    check_finite,
    conv2d_backward,
    conv2d_valid,
    conv_output_extent,
    make_shape,
    maxpool2d,
    maxpool2d_backward,
)

KINDS = ("conv", "maxpool", "relu", "flatten", "dense", "dropout", "softmax", "l2norm")

# hyperparameter names, in serialization order, for each layer kind
HYPERPARAMS = {
    "conv": ("in_channels", "out_channels", "kernel_h", "kernel_w", "stride"),
    "maxpool": ("window", "stride"),
    "relu": (),
    "flatten": (),
    "dense": ("in_features", "out_features"),
    "dropout": ("rate",),
    "softmax": (),
    "l2norm": (),
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel_h: int = 0
    kernel_w: int = 0
    stride: int = 1
    window: int = 0
    in_features: int = 0
    out_features: int = 0
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")

    def hyperparams(self) -> tuple:
        return tuple(getattr(self, name) for name in HYPERPARAMS[self.kind])

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "LayerSpec":
        kind, values = tokens[0], tokens[1:]
        if kind not in HYPERPARAMS:
            raise ValueError(f"unknown layer kind {kind!r}")
        names = HYPERPARAMS[kind]
        if len(values) != len(names):
            raise ValueError(f"{kind} expects {len(names)} hyperparameters, got {len(values)}")
        kwargs = {n: (float(v) if n == "rate" else int(v)) for n, v in zip(names, values)}
        return cls(kind, **kwargs)

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv", "dense")


def conv(in_channels, out_channels, kernel=3, stride=1) -> LayerSpec:
    return LayerSpec("conv", in_channels=in_channels, out_channels=out_channels,
                     kernel_h=kernel, kernel_w=kernel, stride=stride)


def maxpool(window=2, stride=2) -> LayerSpec:
    return LayerSpec("maxpool", window=window, stride=stride)


def dense(in_features, out_features) -> LayerSpec:
    return LayerSpec("dense", in_features=in_features, out_features=out_features)


def dropout(rate=0.5) -> LayerSpec:
    return LayerSpec("dropout", rate=rate)


def output_shape(spec: LayerSpec, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Per-sample output shape, or ShapeError if ``in_shape`` does not fit."""
    k = spec.kind
    if k == "conv":
        if len(in_shape) != 3 or in_shape[0] != spec.in_channels:
            raise ShapeError(f"conv expects ({spec.in_channels}, H, W), got {in_shape}")
        _, h, w = in_shape
        if h < spec.kernel_h or w < spec.kernel_w:
            raise ShapeError(f"conv kernel {spec.kernel_h}x{spec.kernel_w} larger than input {h}x{w}")
        return (spec.out_channels,
                conv_output_extent(h, spec.kernel_h, spec.stride),
                conv_output_extent(w, spec.kernel_w, spec.stride))
    if k == "maxpool":
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool expects (C, H, W), got {in_shape}")
        c, h, w = in_shape
        if h < spec.window or w < spec.window:
            raise ShapeError(f"pool window {spec.window} larger than input {h}x{w}")
        return (c, conv_output_extent(h, spec.window, spec.stride),
                conv_output_extent(w, spec.window, spec.stride))
    if k == "flatten":
        return (int(np.prod(in_shape)),)
    if k == "dense":
        if in_shape != (spec.in_features,):
            raise ShapeError(f"dense expects ({spec.in_features},), got {in_shape}")
        return (spec.out_features,)
    if k in ("softmax", "l2norm") and len(in_shape) != 1:
        raise ShapeError(f"{k} expects a vector, got {in_shape}")
    return in_shape


# -- stateless pieces -------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, shifted by the max for stability."""
    z = np.asarray(logits, dtype=DTYPE)
    if z.size == 0 or z.shape[-1] == 0:
        raise ShapeError("softmax of an empty vector")
    check_finite(z, "logits")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def dropout_forward(x: np.ndarray, rate: float, seed=0, mode: str = "train"):
    """Inverted dropout. Returns ``(output, mask)`` with a 0/1 keep mask."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x, dtype=DTYPE)
    if mode == "eval" or rate == 0.0:
        return x.copy(), np.ones_like(x)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mask = (rng.random(x.shape) >= rate).astype(DTYPE)
    return x * mask / (1.0 - rate), mask


# -- layer forward/backward -------------------------------------------------

def init_params(spec: LayerSpec, rng: np.random.Generator, scheme: str = "he") -> dict:
    """He-uniform (``he``) or Glorot-uniform (``glorot``) weights, zero bias."""
    if spec.kind == "conv":
        shape = (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)
        fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w
        fan_out = spec.out_channels * spec.kernel_h * spec.kernel_w
        n_out = spec.out_channels
    elif spec.kind == "dense":
        shape = (spec.in_features, spec.out_features)
        fan_in, fan_out, n_out = spec.in_features, spec.out_features, spec.out_features
    else:
        return {}
    limit = np.sqrt(6.0 / fan_in) if scheme == "he" else np.sqrt(6.0 / (fan_in + fan_out))
    return {"W": rng.uniform(-limit, limit, size=shape), "b": np.zeros(n_out, dtype=DTYPE)}


def layer_forward(spec: LayerSpec, params: dict, x: np.ndarray, mode: str = "eval", seed=0):
    """Forward one layer over a batch. Returns ``(output, cache)``."""
    k = spec.kind
    if k == "conv":
        y = conv2d_valid(x, params["W"], params["b"], spec.stride)
        return y, x
    if k == "maxpool":
        y, argmax = maxpool2d(x, spec.window, spec.stride)
        return y, (argmax, x.shape)
    if k == "relu":
        return np.maximum(x, 0.0), x
    if k == "flatten":
        return x.reshape(x.shape[0], -1), x.shape
    if k == "dense":
        if x.shape[-1] != spec.in_features:
            raise ShapeError(f"dense expects {spec.in_features} features, got {x.shape[-1]}")
        return x @ params["W"] + params["b"], x
    if k == "dropout":
        y, mask = dropout_forward(x, spec.rate, seed, mode)
        return y, mask
    if k == "softmax":
        y = softmax(x)
        return y, y
    if k == "l2norm":
        norm = np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), 1e-12)
        y = x / norm
        return y, (y, norm)
    raise ValueError(f"unknown layer kind {k!r}")


def layer_backward(spec: LayerSpec, params: dict, cache, grad_out: np.ndarray):
    """Backward one layer. Returns ``(grad_in, param_grads)``."""
    if cache is None:
        raise ValueError(f"missing forward cache for {spec.kind} layer")
    k = spec.kind
    if k == "conv":
        gx, gw, gb = conv2d_backward(cache, params["W"], grad_out, spec.stride)
        return gx, {"W": gw, "b": gb}
    if k == "maxpool":
        argmax, in_shape = cache
        if grad_out.shape != argmax.shape:
            raise ShapeError(f"maxpool grad shape {grad_out.shape} != output shape {argmax.shape}")
        return maxpool2d_backward(grad_out, argmax, in_shape), {}
    if k == "relu":
        return np.where(cache > 0, grad_out, 0.0), {}
    if k == "flatten":
        return grad_out.reshape(cache), {}
    if k == "dense":
        x = cache
        return grad_out @ params["W"].T, {"W": x.T @ grad_out, "b": grad_out.sum(axis=0)}
    if k == "dropout":
        mask = cache
        return grad_out * mask / (1.0 - spec.rate), {}
    if k == "softmax":
        s = cache
        return s * (grad_out - (grad_out * s).sum(axis=-1, keepdims=True)), {}
    if k == "l2norm":
        y, norm = cache
        return (grad_out - y * (grad_out * y).sum(axis=-1, keepdims=True)) / norm, {}
    raise ValueError(f"unknown layer kind {k!r}")


class NetworkGraph:
    """An ordered feed-forward stack of layers and their parameters.

    ``params[i]`` is a dict (``W``, ``b``) for conv/dense layers and empty for
    everything else. ``labels`` names the output classes of a classifier.
    """

    def __init__(self, layers, params, input_shape, labels=None, mode="eval"):
        self.layers = list(layers)
        self.params = list(params)
        self.input_shape = make_shape(input_shape)
        self.labels = list(labels) if labels is not None else None
        self.mode = mode
        if len(self.params) != len(self.layers):
            raise ValueError("need one parameter dict per layer")
        self.shapes = [self.input_shape]
        for i, spec in enumerate(self.layers):
            try:
                self.shapes.append(output_shape(spec, self.shapes[-1]))
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({spec.kind}): {exc}") from None
            expected = init_params(spec, np.random.default_rng(0))
            for name, arr in expected.items():
                got = self.params[i].get(name)
                if got is None or got.shape != arr.shape:
                    raise ShapeError(f"layer {i} ({spec.kind}): parameter {name} should be {arr.shape}")

    @property
    def output_shape(self):
        return self.shapes[-1]

    @property
    def is_embedding(self) -> bool:
        return self.layers[-1].kind == "l2norm"

    @property
    def is_classifier(self) -> bool:
        return self.layers[-1].kind == "softmax"

    def parameters(self) -> list[np.ndarray]:
        """All parameter arrays in layer order (W before b)."""
        return [p[name] for p in self.params for name in ("W", "b") if name in p]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    def copy(self) -> "NetworkGraph":
        params = [{k: v.copy() for k, v in p.items()} for p in self.params]
        return NetworkGraph(self.layers, params, self.input_shape, self.labels, self.mode)

    def _batch(self, x):
        x = np.asarray(x, dtype=DTYPE)
        if x.shape == self.input_shape:
            return x[None], True
        if x.shape[1:] == self.input_shape:
            return x, False
        raise ShapeError(f"layer 0: input shape {x.shape} does not match network input {self.input_shape}")

    def forward(self, x, seed=0, mode=None):
        """Run every layer once, in order. Returns ``(output, caches)``."""
        mode = mode or self.mode
        xb, single = self._batch(x)
        check_finite(xb, "input")
        rng = np.random.default_rng(seed)
        caches = []
        for i, (spec, p) in enumerate(zip(self.layers, self.params)):
            try:
                xb, cache = layer_forward(spec, p, xb, mode, rng)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({spec.kind}): {exc}") from None
            caches.append(cache)
        return (xb[0] if single else xb), caches

    def backward(self, caches, grad_out):
        """Backpropagate ``grad_out``. Returns ``(grad_in, grads)`` with grads
        ordered like :meth:`parameters`."""
        if len(caches) != len(self.layers):
            raise ValueError(f"expected {len(self.layers)} cache entries, got {len(caches)}")
        g = np.asarray(grad_out, dtype=DTYPE)
        single = g.ndim == len(self.output_shape)
        if single:
            g = g[None]
        per_layer = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            g, pg = layer_backward(self.layers[i], self.params[i], caches[i], g)
            per_layer[i] = pg
        grads = [pg[name] for pg in per_layer for name in ("W", "b") if name in pg]
        return (g[0] if single else g), grads

    def predict(self, x):
        return self.forward(x, mode="eval")[0]


def build_ipost_cnn(input_shape, num_classes=2, embedding_dim=None, filters=(8, 16, 32),
                    kernel=3, hidden=64, dropout_rate=0.5, seed=0, labels=None) -> NetworkGraph:
    """Three conv/relu/pool blocks, then flatten, dropout and a dense head.

    The classifier head ends in ``dense(num_classes) -> softmax``; passing
    ``embedding_dim`` swaps it for ``dense(embedding_dim) -> l2norm``.
    """
    input_shape = make_shape(input_shape)
    if len(input_shape) != 3:
        raise ShapeError(f"input shape must be (C, H, W), got {input_shape}")
    layers = []
    shape = input_shape
    channels = input_shape[0]
    for f in filters:
        for spec in (conv(channels, f, kernel), LayerSpec("relu"), maxpool(2, 2)):
            try:
                shape = output_shape(spec, shape)
            except ShapeError:
                raise ShapeError(f"input {input_shape} too small for three conv/pool blocks") from None
            layers.append(spec)
        channels = f
    flat = int(np.prod(shape))
    width = embedding_dim if embedding_dim is not None else num_classes
    layers += [LayerSpec("flatten"), dropout(dropout_rate), dense(flat, hidden), LayerSpec("relu"),
               dense(hidden, width), LayerSpec("l2norm" if embedding_dim is not None else "softmax")]

    rng = np.random.default_rng(seed)
    last_dense = max(i for i, s in enumerate(layers) if s.kind == "dense")
    params = [init_params(s, rng, "glorot" if i == last_dense else "he") for i, s in enumerate(layers)]
    if labels is None and embedding_dim is None:
        labels = [str(i) for i in range(num_classes)]
    return NetworkGraph(layers, params, input_shape, labels)
