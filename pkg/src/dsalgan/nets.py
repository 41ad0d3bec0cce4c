"""Declarative network specs for G1, G2, G3, D1, D2 and a functional forward pass.

A :class:`NetworkSpec` is a flat list of :class:`LayerSpec` rows. Weights live
separately in :class:`NetworkParams`; :func:`forward` interprets the rows with
``torch.nn.functional`` so gradients flow to both params and inputs.
Tensors are ``(N, C, H, W)``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn.functional as F

EPS = 1e-7

LAYER_KINDS = ("conv", "pool", "upsample", "fully_connected", "activation", "skip_add")
ACTIVATIONS = ("relu", "tanh", "sigmoid", "none", "clamp01")
NETWORK_NAMES = ("G1", "G2", "G3", "D1", "D2")

# (name, out_channels, kernel, padding) for the saliency generator at full width;
# None marks a pool (encoder) or 2x upsample (decoder).
SALIENCY_TABLE = (
    ("conv1_a", 64, 1, 1), ("conv1_b", 64, 3, 1), ("pool1", None, 2, 0),
    ("conv2_a", 128, 3, 1), ("conv2_b", 128, 3, 1), ("pool2", None, 2, 0),
    ("conv3_a", 256, 3, 1), ("conv3_b", 256, 3, 1), ("conv3_c", 256, 3, 1), ("pool3", None, 2, 0),
    ("conv4_a", 512, 3, 1), ("conv4_b", 512, 3, 1), ("conv4_c", 512, 3, 1), ("pool4", None, 2, 0),
    ("conv5_a", 512, 3, 1), ("conv5_b", 512, 3, 1), ("conv5_c", 512, 3, 1),
    ("conv6_a", 512, 3, 1), ("conv6_b", 512, 3, 1), ("conv6_c", 512, 3, 1), ("upsample6", None, 2, 0),
    ("conv7_a", 512, 3, 1), ("conv7_b", 512, 3, 1), ("conv7_c", 512, 3, 1), ("upsample7", None, 2, 0),
    ("conv8_a", 256, 3, 1), ("conv8_b", 256, 3, 1), ("conv8_c", 256, 3, 1), ("upsample8", None, 2, 0),
    ("conv9_a", 128, 3, 1), ("conv9_b", 128, 3, 1), ("upsample9", None, 2, 0),
    ("conv10_a", 64, 3, 1), ("conv10_b", 64, 3, 1),
)


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    kernel: tuple[int, int] = (1, 1)
    out_channels: int = 0
    stride: int = 1
    padding: int = 0
    activation: str = "none"
    source: str | None = None  # skip_add: layer (or "input") whose output is added

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if min(self.kernel) < 1 or self.stride < 1 or self.padding < 0:
            raise ValueError(f"{self.name}: kernel and stride must be positive")
        if self.kind in ("pool", "upsample") and (self.kernel != (2, 2) or self.stride != 2):
            raise ValueError(f"{self.name}: pool/upsample must be 2x2 with stride 2")
        if self.kind == "skip_add" and not self.source:
            raise ValueError(f"{self.name}: skip_add needs a source layer")

    @property
    def learnable(self) -> bool:
        return self.kind in ("conv", "fully_connected")


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    layers: tuple[LayerSpec, ...]
    input_channels: int
    output_channels: int
    width_scale: float = 1.0
    input_size: int | None = None  # fixed spatial size, required when fc layers exist

    def __post_init__(self):
        if self.name not in NETWORK_NAMES:
            raise ValueError(f"network name must be one of {NETWORK_NAMES}, got {self.name!r}")
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"{self.name}: duplicate layer names")
        known = {"input"}
        for layer in self.layers:
            if layer.kind == "skip_add" and layer.source not in known:
                raise ValueError(f"{layer.name}: skip source {layer.source!r} is not an earlier layer")
            known.add(layer.name)

    @property
    def is_discriminator(self) -> bool:
        return self.name.startswith("D")

    def to_dict(self) -> dict:
        d = asdict(self)
        for layer in d["layers"]:
            layer["kernel"] = list(layer["kernel"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        layers = tuple(
            LayerSpec(**{**row, "kernel": tuple(row["kernel"])}) for row in d["layers"]
        )
        return cls(**{**d, "layers": layers})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NetworkSpec":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "NetworkSpec":
        return cls.from_json(Path(path).read_text())

    def spec_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        """Weight/bias shapes, found by walking the layers from ``input_channels``."""
        shapes = {}
        for layer, (c_in, h, w), _ in propagate(self):
            if layer.kind == "conv":
                kh, kw = layer.kernel
                shapes[f"{layer.name}.weight"] = (layer.out_channels, c_in, kh, kw)
                shapes[f"{layer.name}.bias"] = (layer.out_channels,)
            elif layer.kind == "fully_connected":
                if h is None:
                    raise ShapeError(f"{self.name}: fc layer {layer.name} needs a fixed input_size")
                shapes[f"{layer.name}.weight"] = (layer.out_channels, c_in * h * w)
                shapes[f"{layer.name}.bias"] = (layer.out_channels,)
        return shapes

    def n_params(self) -> int:
        return sum(math.prod(s) for s in self.param_shapes().values())


def propagate(spec: NetworkSpec, size: int | None = None):
    """Yield ``(layer, input_shape, output_shape)`` with shapes as ``(C, H, W)``.

    Spatial dims are ``None`` when neither ``size`` nor ``spec.input_size`` is set.
    Once flattened by an fc layer, shapes are ``(features, 1, 1)``.
    """
    size = size if size is not None else spec.input_size
    shape = (spec.input_channels, size, size)
    seen = {"input": shape}
    for layer in spec.layers:
        c, h, w = shape
        if layer.kind == "conv":
            kh, kw = layer.kernel
            if h is not None:
                h = (h + 2 * layer.padding - kh) // layer.stride + 1
                w = (w + 2 * layer.padding - kw) // layer.stride + 1
                if h < 1 or w < 1:
                    raise ShapeError(f"{spec.name}: layer {layer.name} has empty output")
            out = (layer.out_channels, h, w)
        elif layer.kind == "pool":
            out = (c, None if h is None else h // 2, None if w is None else w // 2)
            if h is not None and out[1] < 1:
                raise ShapeError(f"{spec.name}: layer {layer.name} pools below 1 pixel")
        elif layer.kind == "upsample":
            out = (c, None if h is None else h * 2, None if w is None else w * 2)
        elif layer.kind == "fully_connected":
            out = (layer.out_channels, 1, 1)
        elif layer.kind == "skip_add":
            src = seen[layer.source]
            if src[0] != c or (h is not None and src[1:] != (h, w)):
                raise ShapeError(
                    f"{spec.name}: layer {layer.name} adds {src} from {layer.source} to {shape}"
                )
            out = shape
        else:
            out = shape
        yield layer, shape, out
        seen[layer.name] = out
        shape = out


def output_shape(spec: NetworkSpec, size: int | None = None) -> tuple:
    shape = (spec.input_channels, size, size)
    for _, _, shape in propagate(spec, size):
        pass
    return shape


# ---------------------------------------------------------------------------
# builders


def _conv(name, out_ch, k=3, pad=1, act="relu") -> LayerSpec:
    return LayerSpec("conv", name, (k, k), out_ch, 1, pad, act)


def scale_channels(channels: int, width_scale: float) -> int:
    return max(4, math.ceil(channels * width_scale - 1e-9))


def _red_net_layers(depth_pairs: int, base_channels: int, out_channels: int, residual: bool):
    layers = [_conv(f"enc{i}", base_channels) for i in range(1, depth_pairs + 1)]
    skips = {depth_pairs - k: f"enc{k}" for k in range(2, depth_pairs, 2)}
    for j in range(1, depth_pairs + 1):
        last = j == depth_pairs
        layers.append(_conv(f"dec{j}", out_channels if last else base_channels, act="none"))
        source = ("input" if residual else None) if last else skips.get(j)
        if source:
            layers.append(LayerSpec("skip_add", f"skip{j}", source=source))
        if last:
            layers.append(LayerSpec("activation", "out", activation="clamp01" if residual else "sigmoid"))
        else:
            layers.append(LayerSpec("activation", f"dec{j}_relu", activation="relu"))
    return tuple(layers)


def build_denoiser_spec(depth_pairs: int = 5, base_channels: int = 64) -> NetworkSpec:
    """Residual encoder-decoder (G1): ``depth_pairs`` convs, mirrored convs, skips every 2nd pair.

    Encoder layer ``k`` (k even) feeds a skip into decoder layer
    ``depth_pairs - k``; the image itself is added to the last decoder output,
    which is then clamped to [0, 1].
    """
    if depth_pairs < 1 or base_channels < 1:
        raise ValueError("depth_pairs and base_channels must be >= 1")
    return NetworkSpec("G1", _red_net_layers(depth_pairs, base_channels, 3, True), 3, 3)


def build_reverse_generator_spec(depth_pairs: int = 5, base_channels: int = 64) -> NetworkSpec:
    """G3: the G1 topology mapping a 1-channel saliency map to a 3-channel image.

    There is no input residual (channel counts differ); the output goes through a sigmoid.
    """
    if depth_pairs < 1 or base_channels < 1:
        raise ValueError("depth_pairs and base_channels must be >= 1")
    return NetworkSpec("G3", _red_net_layers(depth_pairs, base_channels, 3, False), 1, 3)


def build_saliency_generator_spec(width_scale: float = 1.0) -> NetworkSpec:
    if not 0 < width_scale <= 1:
        raise ValueError(f"width_scale must be in (0, 1], got {width_scale}")
    layers = []
    for name, ch, k, pad in SALIENCY_TABLE:
        if ch is None:
            kind = "pool" if name.startswith("pool") else "upsample"
            layers.append(LayerSpec(kind, name, (2, 2), 0, 2, 0))
        else:
            layers.append(_conv(name, scale_channels(ch, width_scale), k, pad))
    layers.append(_conv("output", 1, k=1, pad=0, act="sigmoid"))
    return NetworkSpec("G2", tuple(layers), 3, 1, width_scale=width_scale)


def build_discriminator_spec(
    input_channels: int = 3, input_size: int = 96, width_scale: float = 1.0, name: str | None = None
) -> NetworkSpec:
    """D1/D2: three conv blocks with pools, then fc(100) tanh, fc(2) tanh, fc(1) sigmoid.

    ``width_scale`` shrinks the 32/64-channel convs for desk-scale runs; the
    3-channel colour transform and the fc head are never scaled.
    """
    if input_channels not in (1, 3, 4):
        raise ValueError(f"input_channels must be 1, 3 or 4, got {input_channels}")
    if input_size <= 0 or input_size % 8:
        raise ValueError(f"discriminator input size must be a multiple of 8, got {input_size}")
    if not 0 < width_scale <= 1:
        raise ValueError(f"width_scale must be in (0, 1], got {width_scale}")
    c32, c64 = scale_channels(32, width_scale), scale_channels(64, width_scale)
    layers = (
        _conv("conv1_a", 3, k=1, pad=1), _conv("conv1_b", c32),
        LayerSpec("pool", "pool1", (2, 2), 0, 2, 0),
        _conv("conv2_a", c64), _conv("conv2_b", c64),
        LayerSpec("pool", "pool2", (2, 2), 0, 2, 0),
        _conv("conv3_a", c64), _conv("conv3_b", c64),
        LayerSpec("pool", "pool3", (2, 2), 0, 2, 0),
        LayerSpec("fully_connected", "fc4", out_channels=100, activation="tanh"),
        LayerSpec("fully_connected", "fc5", out_channels=2, activation="tanh"),
        LayerSpec("fully_connected", "fc6", out_channels=1, activation="sigmoid"),
    )
    if name is None:
        name = "D1" if input_channels == 3 else "D2"
    return NetworkSpec(name, layers, input_channels, 1, width_scale=width_scale, input_size=input_size)


# ---------------------------------------------------------------------------
# params


@dataclass
class NetworkParams:
    tensors: dict[str, torch.Tensor]
    init_seed: int = 0

    def parameters(self) -> list[torch.Tensor]:
        return list(self.tensors.values())

    def requires_grad_(self, flag: bool = True) -> "NetworkParams":
        for t in self.tensors.values():
            t.requires_grad_(flag)
        return self

    def clone(self) -> "NetworkParams":
        return NetworkParams(
            {k: v.detach().clone().requires_grad_(v.requires_grad) for k, v in self.tensors.items()},
            self.init_seed,
        )

    def state_dict(self) -> dict[str, torch.Tensor]:
        return {k: v.detach().clone() for k, v in self.tensors.items()}

    def load_state_dict(self, state: dict[str, torch.Tensor]) -> None:
        if state.keys() != self.tensors.keys():
            raise KeyError(f"param keys differ: {sorted(set(state) ^ set(self.tensors))}")
        with torch.no_grad():
            for k, v in state.items():
                if v.shape != self.tensors[k].shape:
                    raise ShapeError(f"{k}: expected {tuple(self.tensors[k].shape)}, got {tuple(v.shape)}")
                self.tensors[k].copy_(v)

    def n_params(self) -> int:
        return sum(t.numel() for t in self.tensors.values())

    def flat(self) -> torch.Tensor:
        return torch.cat([t.detach().reshape(-1) for t in self.tensors.values()])


def _init_gains(spec: NetworkSpec) -> dict[str, float]:
    gains = {}
    layers = spec.layers
    for i, layer in enumerate(layers):
        if not layer.learnable:
            continue
        act = layer.activation
        follow = layers[i + 1 : i + 3]
        residual = any(f.kind == "skip_add" and f.source == "input" for f in follow)
        if act == "none":
            act = next((f.activation for f in follow if f.kind == "activation"), "none")
        gains[layer.name] = 0.1 if residual else (math.sqrt(2.0) if act == "relu" else 1.0)
    return gains


def init_params(spec: NetworkSpec, seed: int = 0, dtype=torch.float32) -> NetworkParams:
    """Fan-in scaled normal weights (std = gain / sqrt(fan_in)), zero biases.

    gain is sqrt(2) for layers feeding a ReLU and 1 otherwise. The conv whose
    output is added back onto the network input gets gain 0.1 so a residual
    generator starts close to the identity instead of saturating its clamp.
    Seed 0 is an ordinary seed; draws follow layer order.
    """
    gen = torch.Generator().manual_seed(int(seed))
    gains = _init_gains(spec)
    tensors = {}
    for key, shape in spec.param_shapes().items():
        if key.endswith(".weight"):
            fan_in = math.prod(shape[1:])
            std = gains[key.rsplit(".", 1)[0]] / math.sqrt(fan_in)
            t = torch.randn(shape, generator=gen, dtype=dtype) * std
        else:
            t = torch.zeros(shape, dtype=dtype)
        tensors[key] = t.requires_grad_(True)
    return NetworkParams(tensors, int(seed))


# ---------------------------------------------------------------------------
# forward


def _activate(x: torch.Tensor, name: str) -> torch.Tensor:
    if name == "relu":
        return F.relu(x)
    if name == "tanh":
        return torch.tanh(x)
    if name == "sigmoid":
        return torch.sigmoid(x)
    if name == "clamp01":
        return x.clamp(0.0, 1.0)
    return x


def forward(
    spec: NetworkSpec, params: NetworkParams, x: torch.Tensor, logits: bool = False
) -> torch.Tensor:
    """Run ``x`` (N, C, H, W) through the network.

    Generators return (N, C_out, H, W); discriminators return (N,) scores
    clamped to [EPS, 1 - EPS]. With ``logits=True`` a trailing sigmoid is
    skipped so the caller can compute its loss in log space.
    """
    if x.dim() == 3:
        return forward(spec, params, x.unsqueeze(0), logits)[0]
    if x.dim() != 4:
        raise ShapeError(f"{spec.name}: expected a (N, C, H, W) tensor, got shape {tuple(x.shape)}")
    if x.shape[1] != spec.input_channels:
        raise ShapeError(f"{spec.name}: expected {spec.input_channels} input channels, got {x.shape[1]}")
    if spec.input_size is not None and tuple(x.shape[2:]) != (spec.input_size, spec.input_size):
        raise ShapeError(
            f"{spec.name}: expects {spec.input_size}x{spec.input_size} inputs, got {tuple(x.shape[2:])}"
        )
    p = params.tensors
    taps_needed = {layer.source for layer in spec.layers if layer.kind == "skip_add"}
    taps = {"input": x}
    out = x
    last = spec.layers[-1]
    for layer in spec.layers:
        if layer.kind == "conv":
            weight = p[f"{layer.name}.weight"]
            if out.shape[1] != weight.shape[1]:
                raise ShapeError(
                    f"{spec.name}: layer {layer.name} expects {weight.shape[1]} channels, got {out.shape[1]}"
                )
            out = F.conv2d(out, weight, p[f"{layer.name}.bias"], layer.stride, layer.padding)
        elif layer.kind == "pool":
            if min(out.shape[2:]) < 2:
                raise ShapeError(f"{spec.name}: layer {layer.name} input {tuple(out.shape[2:])} too small to pool")
            out = F.max_pool2d(out, 2, 2)
        elif layer.kind == "upsample":
            out = F.interpolate(out, scale_factor=2, mode="nearest")
        elif layer.kind == "fully_connected":
            weight = p[f"{layer.name}.weight"]
            out = out.reshape(out.shape[0], -1)
            if out.shape[1] != weight.shape[1]:
                raise ShapeError(
                    f"{spec.name}: layer {layer.name} expects {weight.shape[1]} features, got {out.shape[1]}"
                )
            out = F.linear(out, weight, p[f"{layer.name}.bias"])
        elif layer.kind == "skip_add":
            src = taps[layer.source]
            if src.shape != out.shape:
                raise ShapeError(
                    f"{spec.name}: layer {layer.name} cannot add {tuple(src.shape)} to {tuple(out.shape)}"
                )
            out = out + src
        if not (logits and layer is last and layer.activation == "sigmoid"):
            out = _activate(out, layer.activation)
        if layer.name in taps_needed:
            taps[layer.name] = out
    if spec.is_discriminator:
        out = out.reshape(-1)
        return out if logits else out.clamp(EPS, 1.0 - EPS)
    return out

