"""Convolution, pooling, dropout and dense layers plus the model-spec grammar.

Model strings follow the table-style notation, e.g.::

    2*(32x3x3)-MP2x2-Drop(0.2)-2*(64x3x3)-MP2x2-Drop(0.3)-FC 2048-Drop(0.5)-FC 8*20

ReLU follows every convolution and every FC layer except the last one, whose
width must be ``n_p * k_s`` (the augmented softmax input).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .tensor import ShapeError, Tensor, make_op


class SpecError(ValueError):
    """Malformed model specification string."""


# ---------------------------------------------------------------- layer records

@dataclass
class Conv2dLayer:
    kernels: Tensor  # out_ch × in_ch × kh × kw
    bias: Tensor  # out_ch

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]


@dataclass
class DenseLayer:
    weights: Tensor  # in × out
    bias: Tensor  # out


@dataclass
class DropoutLayer:
    rate: float
    training: bool = True

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise SpecError(f"dropout rate must be in [0, 1), got {self.rate}")


# ---------------------------------------------------------------- ops

def conv2d_forward(x: Tensor, layer: Conv2dLayer) -> Tensor:
    """Valid cross-correlation, stride 1, plus per-channel bias."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects b×c×h×w input, got {x.shape}")
    w = layer.kernels.data
    out_ch, in_ch, kh, kw = w.shape
    b, c, h, wd = x.shape
    if c != in_ch:
        raise ShapeError(f"conv2d: input has {c} channels, kernels expect {in_ch} (input {x.shape}, kernels {w.shape})")
    if h < kh or wd < kw:
        raise ShapeError(f"conv2d: input {x.shape} smaller than kernel {w.shape}")
    oh, ow = h - kh + 1, wd - kw + 1

    # (b, c, oh, ow, kh, kw) -> (b, oh, ow, c, kh, kw) -> rows of patches
    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * oh * ow, c * kh * kw)
    wmat = w.reshape(out_ch, -1).T
    out = (cols @ wmat + layer.bias.data).reshape(b, oh, ow, out_ch).transpose(0, 3, 1, 2)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(b * oh * ow, out_ch)
        dw = (cols.T @ g2).T.reshape(w.shape)
        db = g2.sum(axis=0)
        dx = None
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(b, oh, ow, c, kh, kw)
            dx = np.zeros(x.shape)
            for i in range(kh):
                for j in range(kw):
                    dx[:, :, i:i + oh, j:j + ow] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dx, dw, db

    return make_op(np.ascontiguousarray(out), (x, layer.kernels, layer.bias), bw)


def maxpool2x2(x: Tensor) -> Tensor:
    """Non-overlapping 2×2 max pooling; odd trailing rows/columns are dropped."""
    if x.ndim != 4 or x.shape[2] < 2 or x.shape[3] < 2:
        raise ShapeError(f"maxpool2x2 expects b×c×h×w with h, w ≥ 2, got {x.shape}")
    b, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    cropped = x.data[:, :, : 2 * h2, : 2 * w2]
    # window order: (0,0), (0,1), (1,0), (1,1); argmax returns the first maximum
    win = cropped.reshape(b, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2, w2, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gw = np.zeros((b, c, h2, w2, 4))
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        dx = np.zeros((b, c, h, w))
        dx[:, :, : 2 * h2, : 2 * w2] = gw.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * h2, 2 * w2)
        return (dx,)

    return make_op(out, (x,), bw)


def dropout_apply(x: Tensor, layer: DropoutLayer, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) so eval is the identity."""
    if not layer.training or layer.rate == 0.0:
        return x
    keep = 1.0 - layer.rate
    mask = (rng.random(x.shape) < keep) / keep
    return make_op(x.data * mask, (x,), lambda g: (g * mask,))


def flatten(x: Tensor) -> Tensor:
    return T.reshape(x, (x.shape[0], -1))


def dense_forward(x: Tensor, layer: DenseLayer) -> Tensor:
    return T.add(T.matmul(x, layer.weights), layer.bias)


# ---------------------------------------------------------------- model spec grammar

@dataclass(frozen=True)
class ConvSpec:
    repeat: int
    channels: int
    kh: int
    kw: int

    def __str__(self):
        return f"{self.repeat}*({self.channels}x{self.kh}x{self.kw})"


@dataclass(frozen=True)
class PoolSpec:
    def __str__(self):
        return "MP2x2"


@dataclass(frozen=True)
class DropSpec:
    rate: float

    def __str__(self):
        return f"Drop({self.rate:g})"


@dataclass(frozen=True)
class FCSpec:
    width: int

    def __str__(self):
        return f"FC {self.width}"


@dataclass(frozen=True)
class AcolFCSpec:
    n_p: int
    k_s: int

    def __str__(self):
        return f"FC {self.n_p}*{self.k_s}"


LayerSpec = Union[ConvSpec, PoolSpec, DropSpec, FCSpec, AcolFCSpec]

_CONV = re.compile(r"^(?:(\d+)\s*\*\s*)?\(\s*(\d+)\s*x\s*(\d+)\s*x\s*(\d+)\s*\)$")
_DROP = re.compile(r"^Drop\s*\(\s*([0-9]*\.?[0-9]+(?:e-?\d+)?)\s*\)$", re.IGNORECASE)
_FC = re.compile(r"^FC\s*(\d+)$", re.IGNORECASE)
_ACOL = re.compile(r"^FC\s*(\d+)\s*\*\s*(\d+)$", re.IGNORECASE)


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[LayerSpec, ...]

    @property
    def n_p(self) -> int:
        return self.layers[-1].n_p

    @property
    def k_s(self) -> int:
        return self.layers[-1].k_s

    @property
    def latent_width(self) -> int:
        for layer in reversed(self.layers[:-1]):
            if isinstance(layer, FCSpec):
                return layer.width
        raise SpecError("model has no hidden FC layer")

    @classmethod
    def parse(cls, text: str) -> "ModelSpec":
        tokens = [t.strip() for t in text.split("-")]
        if any(not t for t in tokens):
            raise SpecError(f"empty layer token in {text!r}")
        layers: list[LayerSpec] = []
        for tok in tokens:
            if m := _CONV.match(tok):
                rep = int(m.group(1) or 1)
                layers.append(ConvSpec(rep, int(m.group(2)), int(m.group(3)), int(m.group(4))))
            elif tok.upper() == "MP2X2":
                layers.append(PoolSpec())
            elif m := _DROP.match(tok):
                layers.append(DropSpec(float(m.group(1))))
            elif m := _ACOL.match(tok):
                layers.append(AcolFCSpec(int(m.group(1)), int(m.group(2))))
            elif m := _FC.match(tok):
                layers.append(FCSpec(int(m.group(1))))
            else:
                raise SpecError(f"unrecognised layer token {tok!r} in {text!r}")
        spec = cls(tuple(layers))
        spec.validate()
        return spec

    def validate(self) -> None:
        if not self.layers or not isinstance(self.layers[-1], AcolFCSpec):
            raise SpecError("last layer must be 'FC <n_p>*<k_s>'")
        if any(isinstance(l, AcolFCSpec) for l in self.layers[:-1]):
            raise SpecError("'FC <n_p>*<k_s>' may only appear last")
        if not any(isinstance(l, FCSpec) for l in self.layers):
            raise SpecError("model needs a hidden FC layer for the latent representation")
        seen_fc = False
        for l in self.layers:
            if isinstance(l, FCSpec):
                seen_fc = True
            elif isinstance(l, (ConvSpec, PoolSpec)) and seen_fc:
                raise SpecError("convolution/pooling cannot follow an FC layer")
            if isinstance(l, ConvSpec) and min(l.repeat, l.channels, l.kh, l.kw) < 1:
                raise SpecError(f"bad conv block {l}")
            if isinstance(l, DropSpec) and not 0.0 <= l.rate < 1.0:
                raise SpecError(f"dropout rate out of range in {l}")
        if self.n_p < 1 or self.k_s < 1:
            raise SpecError("n_p and k_s must be ≥ 1")

    def __str__(self):
        return "-".join(str(l) for l in self.layers)


# ---------------------------------------------------------------- initialisation

def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class ParamSet:
    """Ordered, named parameters in declaration order."""

    names: list[str] = field(default_factory=list)
    tensors: list[Tensor] = field(default_factory=list)

    def add(self, name: str, t: Tensor) -> Tensor:
        self.names.append(name)
        self.tensors.append(t)
        return t

    def __iter__(self):
        return iter(zip(self.names, self.tensors))

    def __len__(self):
        return len(self.tensors)

    def zero_grad(self) -> None:
        for t in self.tensors:
            t.grad = None


def trace_shapes(spec: ModelSpec, input_shape: tuple[int, int, int]) -> list[tuple[int, ...]]:
    """Per-layer output shapes (without batch) for the expanded layer list."""
    c, h, w = input_shape
    shapes: list[tuple[int, ...]] = []
    flat: Optional[int] = None
    for l in spec.layers:
        if isinstance(l, ConvSpec):
            for _ in range(l.repeat):
                h, w = h - l.kh + 1, w - l.kw + 1
                if h < 1 or w < 1:
                    raise SpecError(f"input {input_shape} too small for {spec}")
                c = l.channels
                shapes.append((c, h, w))
        elif isinstance(l, PoolSpec):
            if h < 2 or w < 2:
                raise SpecError(f"input {input_shape} too small for {spec}")
            h, w = h // 2, w // 2
            shapes.append((c, h, w))
        elif isinstance(l, DropSpec):
            shapes.append(shapes[-1] if shapes else (c, h, w))
        elif isinstance(l, FCSpec):
            flat = l.width
            shapes.append((flat,))
        else:
            shapes.append((l.n_p * l.k_s,))
    return shapes


def parameter_layout(spec: ModelSpec, input_shape: tuple[int, int, int]) -> list[tuple[str, tuple[int, ...], int]]:
    """``(name, shape, fan_in)`` for every parameter in declaration order."""
    trace_shapes(spec, input_shape)
    layout = []
    c, h, w = input_shape
    flat: Optional[int] = None
    conv_i = fc_i = 0
    for l in spec.layers:
        if isinstance(l, ConvSpec):
            for _ in range(l.repeat):
                fan_in = c * l.kh * l.kw
                layout.append((f"conv{conv_i}.kernels", (l.channels, c, l.kh, l.kw), fan_in))
                layout.append((f"conv{conv_i}.bias", (l.channels,), fan_in))
                c, h, w = l.channels, h - l.kh + 1, w - l.kw + 1
                conv_i += 1
        elif isinstance(l, PoolSpec):
            h, w = h // 2, w // 2
        elif isinstance(l, (FCSpec, AcolFCSpec)):
            fan_in = flat if flat is not None else c * h * w
            width = l.width if isinstance(l, FCSpec) else l.n_p * l.k_s
            name = f"fc{fc_i}" if isinstance(l, FCSpec) else "acol"
            layout.append((f"{name}.weights", (fan_in, width), fan_in))
            layout.append((f"{name}.bias", (width,), fan_in))
            flat = width
            fc_i += 1
    return layout


def init_parameters(spec: ModelSpec, input_shape: tuple[int, int, int], rng: np.random.Generator) -> ParamSet:
    """He-uniform weights, zero biases. Dense fan-in comes from the traced shape."""
    params = ParamSet()
    for name, shape, fan_in in parameter_layout(spec, input_shape):
        if name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            data = he_uniform(rng, shape, fan_in)
        params.add(name, Tensor(data, requires_grad=True))
    return params


# ---------------------------------------------------------------- network

class Network:
    """Feedforward stack described by a :class:`ModelSpec`.

    ``forward_latent`` stops at the last hidden FC (the latent F). The final
    ``FC n_p*k_s`` layer is exposed as :attr:`acol_dense` for the ACOL head.
    """

    def __init__(self, spec: ModelSpec, input_shape: tuple[int, int, int], params: ParamSet):
        self.spec = spec
        self.input_shape = tuple(input_shape)
        self.params = params
        expected = parameter_layout(spec, self.input_shape)
        for (name, t), (ename, eshape, _) in zip(params, expected):
            if name != ename or t.shape != eshape:
                raise ShapeError(f"parameter {ename}: expected shape {eshape}, got {name} with shape {t.shape}")
        if len(params) != len(expected):
            raise ShapeError(f"expected {len(expected)} parameters, got {len(params)}")
        self._by_name = dict(params)

    @classmethod
    def create(cls, spec: ModelSpec, input_shape, rng: np.random.Generator) -> "Network":
        return cls(spec, tuple(input_shape), init_parameters(spec, tuple(input_shape), rng))

    @property
    def acol_dense(self) -> DenseLayer:
        return DenseLayer(self._by_name["acol.weights"], self._by_name["acol.bias"])

    def forward_latent(self, x: Tensor, training: bool = False, rng: Optional[np.random.Generator] = None):
        """Return ``(F, F_dropped)``: the latent output and its post-dropout version."""
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"network expects inputs of shape (*, {self.input_shape}), got {x.shape}")
        h = x
        conv_i = fc_i = 0
        latent = None
        fc_layers = [l for l in self.spec.layers if isinstance(l, FCSpec)]
        for l in self.spec.layers[:-1]:
            if isinstance(l, ConvSpec):
                for _ in range(l.repeat):
                    layer = Conv2dLayer(self._by_name[f"conv{conv_i}.kernels"], self._by_name[f"conv{conv_i}.bias"])
                    h = T.relu(conv2d_forward(h, layer))
                    conv_i += 1
            elif isinstance(l, PoolSpec):
                h = maxpool2x2(h)
            elif isinstance(l, DropSpec):
                h = dropout_apply(h, DropoutLayer(l.rate, training), rng)
            else:
                if h.ndim > 2:
                    h = flatten(h)
                layer = DenseLayer(self._by_name[f"fc{fc_i}.weights"], self._by_name[f"fc{fc_i}.bias"])
                h = T.relu(dense_forward(h, layer))
                fc_i += 1
                if fc_i == len(fc_layers):
                    latent = h
        if h.ndim > 2:
            h = flatten(h)
        return latent, h
