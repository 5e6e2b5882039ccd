"""Encoder-decoder fully convolutional network for per-pixel lymphocyte probability.

The network processes an RGB image through `scales` encoder blocks, a bridge
block, and `scales` decoder blocks, ending in a 1x1 convolution and softmax:

    encoder block i: residual unit y = ReLU(shortcut(x) + Conv3x3(ReLU(Conv3x3(x))))
                     followed by a 2x2 stride-2 down-convolution doubling channels
    bridge:          residual unit only, at the coarsest scale
    decoder block i: 2x2 stride-2 deconvolution halving channels, channel
                     concatenation with encoder scale i's output, then two
                     Conv3x3 + ReLU reducing back to that scale's channel count
    head:            1x1 convolution to 2 classes + softmax

The shortcut is the identity when channel counts match and a 1x1 projection
otherwise (only the first block, whose input is RGB). Dropout (inverted
scaling) follows each residual/fusion output in train mode. Channel widths
are base_channels * 2^(scale-1), i.e. 32/64/128/256 with a 512-channel bridge
by default.

Parameters are owned by `ModelParams` (plain numpy tensors plus metadata) so
checkpoints are just raw little-endian float32 files with a manifest; torch
modules are built from them on demand.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .stain import StainReference

L2_COEFF = 1e-5  # weight of the squared-kernel penalty in the training loss
LOG_EPS = 1e-12
WEIGHT_SUM_EPS = 1e-12


@dataclass(frozen=True)
class NetworkConfig:
    base_channels: int = 32
    scales: int = 4
    dropout_rate: float = 0.1
    num_classes: int = 2
    input_channels: int = 3

    def __post_init__(self):
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.scales < 1:
            raise ValueError("scales must be >= 1")

    @property
    def stride_multiple(self) -> int:
        """Input dims must divide by this (one 2x down-sampling per scale)."""
        return 2 ** self.scales

    def to_dict(self) -> dict:
        return {
            "base_channels": self.base_channels,
            "scales": self.scales,
            "dropout_rate": self.dropout_rate,
            "num_classes": self.num_classes,
            "input_channels": self.input_channels,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkConfig":
        return cls(**data)


@dataclass
class ModelParams:
    """Network weights plus the metadata that must travel with them."""

    config: NetworkConfig
    tensors: dict[str, np.ndarray]
    manifest: list[str]
    stain_reference: StainReference | None = None
    epoch: int = 0
    schedule_epoch: int = 0
    parent_id: str | None = None
    threshold: float = 0.5

    def copy(self) -> "ModelParams":
        return replace(
            self,
            tensors={k: v.copy() for k, v in self.tensors.items()},
            manifest=list(self.manifest),
        )

    def astype(self, dtype) -> "ModelParams":
        return replace(
            self,
            tensors={k: v.astype(dtype) for k, v in self.tensors.items()},
            manifest=list(self.manifest),
        )


# --------------------------------------------------------------------------
# Layer plan: the single ordering used by init, IO and the module builder
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class _LayerSpec:
    name: str
    kind: str  # conv | deconv
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1


def layer_plan(config: NetworkConfig) -> list[_LayerSpec]:
    plan: list[_LayerSpec] = []
    base = config.base_channels
    for i in range(1, config.scales + 1):
        ch = base * 2 ** (i - 1)
        cin = config.input_channels if i == 1 else ch
        plan.append(_LayerSpec(f"enc{i}.conv1", "conv", cin, ch, 3))
        plan.append(_LayerSpec(f"enc{i}.conv2", "conv", ch, ch, 3))
        if cin != ch:
            plan.append(_LayerSpec(f"enc{i}.proj", "conv", cin, ch, 1))
        plan.append(_LayerSpec(f"enc{i}.down", "conv", ch, ch * 2, 2, stride=2))
    bridge_ch = base * 2 ** config.scales
    plan.append(_LayerSpec("bridge.conv1", "conv", bridge_ch, bridge_ch, 3))
    plan.append(_LayerSpec("bridge.conv2", "conv", bridge_ch, bridge_ch, 3))
    for i in range(config.scales, 0, -1):
        ch = base * 2 ** (i - 1)
        plan.append(_LayerSpec(f"dec{i}.up", "deconv", ch * 2, ch, 2, stride=2))
        plan.append(_LayerSpec(f"dec{i}.conv1", "conv", ch * 2, ch, 3))
        plan.append(_LayerSpec(f"dec{i}.conv2", "conv", ch, ch, 3))
    plan.append(_LayerSpec("head", "conv", base, config.num_classes, 1))
    return plan


def parameter_count(config: NetworkConfig) -> int:
    """Total number of scalar parameters (kernels + biases) for a config."""
    total = 0
    for spec in layer_plan(config):
        total += spec.in_ch * spec.out_ch * spec.kernel * spec.kernel + spec.out_ch
    return total


def _weight_shape(spec: _LayerSpec) -> tuple[int, ...]:
    if spec.kind == "deconv":
        return (spec.in_ch, spec.out_ch, spec.kernel, spec.kernel)
    return (spec.out_ch, spec.in_ch, spec.kernel, spec.kernel)


def init_params(config: NetworkConfig, rng_seed: int = 0) -> ModelParams:
    """He-initialized parameters: kernels ~ N(0, 2 / fan_in), biases zero.

    fan_in = in_channels * kernel_area for convolutions and deconvolutions
    alike. Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(rng_seed)
    tensors: dict[str, np.ndarray] = {}
    manifest: list[str] = []
    for spec in layer_plan(config):
        std = np.sqrt(2.0 / (spec.in_ch * spec.kernel * spec.kernel))
        wname = f"{spec.name}.weight"
        bname = f"{spec.name}.bias"
        tensors[wname] = rng.normal(0.0, std, size=_weight_shape(spec)).astype(
            np.float32
        )
        tensors[bname] = np.zeros(spec.out_ch, dtype=np.float32)
        manifest.extend([wname, bname])
    return ModelParams(config=config, tensors=tensors, manifest=manifest)


# --------------------------------------------------------------------------
# Torch module
# --------------------------------------------------------------------------

class _ResidualUnit(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.proj = nn.Conv2d(cin, cout, 1) if cin != cout else None

    def forward(self, x):
        shortcut = x if self.proj is None else self.proj(x)
        return F.relu(shortcut + self.conv2(F.relu(self.conv1(x))))


class _EncoderBlock(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.res = _ResidualUnit(cin, cout)
        self.down = nn.Conv2d(cout, cout * 2, 2, stride=2)


class _DecoderBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.up = nn.ConvTranspose2d(ch * 2, ch, 2, stride=2)
        self.conv1 = nn.Conv2d(ch * 2, ch, 3, padding=1)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)


class LymphFcn(nn.Module):
    """The encoder-decoder network; see the module docstring for the layout."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        base = config.base_channels
        self.encoders = nn.ModuleList()
        for i in range(1, config.scales + 1):
            ch = base * 2 ** (i - 1)
            cin = config.input_channels if i == 1 else ch
            self.encoders.append(_EncoderBlock(cin, ch))
        bridge_ch = base * 2 ** config.scales
        self.bridge = _ResidualUnit(bridge_ch, bridge_ch)
        self.decoders = nn.ModuleList()
        for i in range(config.scales, 0, -1):
            self.decoders.append(_DecoderBlock(base * 2 ** (i - 1)))
        self.head = nn.Conv2d(base, config.num_classes, 1)

    def _dropout(self, x, generator):
        p = self.config.dropout_rate
        if not self.training or p <= 0.0:
            return x
        keep = (
            torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device)
            >= p
        )
        return x * keep / (1.0 - p)

    def logits(self, x, generator=None):
        skips = []
        h = x
        for block in self.encoders:
            h = self._dropout(block.res(h), generator)
            skips.append(h)
            h = block.down(h)
        h = self._dropout(self.bridge(h), generator)
        for block, skip in zip(self.decoders, reversed(skips)):
            h = torch.cat([block.up(h), skip], dim=1)
            h = F.relu(block.conv1(h))
            h = F.relu(block.conv2(h))
            h = self._dropout(h, generator)
        return self.head(h)

    def forward(self, x, generator=None):
        return torch.softmax(self.logits(x, generator), dim=1)


# --------------------------------------------------------------------------
# Torch <-> ModelParams bridging
# --------------------------------------------------------------------------

def _state_key(name: str, config: NetworkConfig) -> str:
    """Map a manifest tensor name to the torch state_dict key."""
    part, kind = name.rsplit(".", 1)
    if part == "head":
        return f"head.{kind}"
    block, layer = part.split(".")
    if block == "bridge":
        return f"bridge.{layer}.{kind}"
    idx = int(block[3:])
    if block.startswith("enc"):
        prefix = f"encoders.{idx - 1}"
        if layer == "down":
            return f"{prefix}.down.{kind}"
        return f"{prefix}.res.{layer}.{kind}"
    if block.startswith("dec"):
        return f"decoders.{config.scales - idx}.{layer}.{kind}"
    raise KeyError(name)


def build_module(params: ModelParams, dtype=torch.float32) -> LymphFcn:
    """Construct a torch module and load the given parameters into it."""
    module = LymphFcn(params.config).to(dtype)
    state = {
        _state_key(name, params.config): torch.from_numpy(
            np.ascontiguousarray(params.tensors[name])
        ).to(dtype)
        for name in params.manifest
    }
    module.load_state_dict(state)
    return module


def extract_params(module: LymphFcn, template: ModelParams) -> ModelParams:
    """Read the module's weights back into a copy of `template`."""
    state = module.state_dict()
    tensors = {
        name: state[_state_key(name, template.config)].detach().cpu().numpy().copy()
        for name in template.manifest
    }
    return replace(template, tensors=tensors, manifest=list(template.manifest))


def _as_torch_generator(rng) -> torch.Generator | None:
    if rng is None:
        return None
    if isinstance(rng, torch.Generator):
        return rng
    gen = torch.Generator()
    if isinstance(rng, np.random.Generator):
        gen.manual_seed(int(rng.integers(0, 2**63 - 1)))
    else:
        gen.manual_seed(int(rng))
    return gen


def _image_tensor(image: np.ndarray, dtype) -> torch.Tensor:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {img.shape}")
    if img.dtype == np.uint8:
        img = img.astype(np.float64) / 255.0
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))).to(dtype)[
        None
    ]


def _check_dims(config: NetworkConfig, height: int, width: int) -> None:
    mult = config.stride_multiple
    if height % mult or width % mult:
        raise ValueError(
            f"input dims {height}x{width} must be divisible by {mult}; "
            "mirror-pad the image first"
        )


def forward(
    params: ModelParams,
    image: np.ndarray,
    mode: str = "eval",
    rng=None,
) -> np.ndarray:
    """Dense per-pixel class probabilities for one image.

    Args:
        image: HxWx3, uint8 or float in [0, 1]; H and W must be divisible by
            2**scales.
        mode: "train" applies dropout (needs rng), "eval" is deterministic.

    Returns:
        HxWx2 float array; channel 1 is the lymphocyte probability. The
        per-pixel channel sum is 1 up to float rounding.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    dtype = torch.float64 if next(iter(params.tensors.values())).dtype == np.float64 else torch.float32
    _check_dims(params.config, image.shape[0], image.shape[1])
    module = build_module(params, dtype)
    module.train(mode == "train")
    x = _image_tensor(image, dtype)
    with torch.no_grad():
        prob = module(x, generator=_as_torch_generator(rng))
    return prob[0].permute(1, 2, 0).numpy()


def data_term(
    probs: torch.Tensor, labels: torch.Tensor, weights: torch.Tensor
) -> torch.Tensor:
    """Weighted cross-entropy over labeled pixels, normalized by the weight sum.

    labels use 2 = lymphocyte (class 1), 1 = non-lymphocyte (class 0),
    0 = ignore. `probs` is (1, 2, H, W) softmax output.
    """
    logp = torch.log(torch.clamp(probs, min=LOG_EPS))
    lymph = labels == 2
    other = labels == 1
    picked = torch.where(lymph, logp[0, 1], logp[0, 0])
    w = torch.where(lymph | other, weights, torch.zeros_like(weights))
    total = w.sum()
    return -(w * picked).sum() / torch.clamp(total, min=WEIGHT_SUM_EPS)


def l2_term(module: LymphFcn, coeff: float = L2_COEFF) -> torch.Tensor:
    """coeff * sum of squared convolution kernels, biases excluded."""
    total = None
    for name, p in module.named_parameters():
        if name.endswith("bias"):
            continue
        total = p.square().sum() if total is None else total + p.square().sum()
    return coeff * total


def backward(
    params: ModelParams,
    image: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
    mode: str = "train",
    rng=None,
    l2_coeff: float = L2_COEFF,
) -> dict[str, np.ndarray]:
    """Gradients of the training loss (data term + L2) w.r.t. every parameter.

    Returns a dict keyed like `params.tensors`. With an all-zero weight map
    the data term vanishes and only the L2 gradients remain.
    """
    if image.shape[:2] != labels.shape or labels.shape != weights.shape:
        raise ValueError("image, labels and weights must share spatial dims")
    dtype = torch.float64 if next(iter(params.tensors.values())).dtype == np.float64 else torch.float32
    _check_dims(params.config, image.shape[0], image.shape[1])
    module = build_module(params, dtype)
    module.train(mode == "train")
    x = _image_tensor(image, dtype)
    lab = torch.from_numpy(np.ascontiguousarray(labels.astype(np.int64)))
    wgt = torch.from_numpy(np.ascontiguousarray(weights)).to(dtype)
    probs = module(x, generator=_as_torch_generator(rng))
    loss = data_term(probs, lab, wgt) + l2_term(module, l2_coeff)
    loss.backward()
    state_to_name = {_state_key(n, params.config): n for n in params.manifest}
    return {
        state_to_name[sname]: p.grad.detach().numpy().copy()
        for sname, p in module.named_parameters()
    }


# --------------------------------------------------------------------------
# Checkpoint IO: manifest + one raw little-endian float32 file per tensor
# --------------------------------------------------------------------------

MANIFEST_FILE = "manifest.txt"
META_FILE = "meta.json"
STAIN_FILE = "stain_reference.json"
TENSOR_DIR = "tensors"


def save_checkpoint(params: ModelParams, directory) -> None:
    os.makedirs(os.path.join(directory, TENSOR_DIR), exist_ok=True)
    with open(os.path.join(directory, MANIFEST_FILE), "w", encoding="utf-8") as fh:
        for name in params.manifest:
            shape = ",".join(str(s) for s in params.tensors[name].shape)
            fh.write(f"{name} {shape}\n")
    for name in params.manifest:
        path = os.path.join(directory, TENSOR_DIR, f"{name}.bin")
        with open(path, "wb") as fh:
            fh.write(np.ascontiguousarray(params.tensors[name], dtype="<f4").tobytes())
    meta = {
        "config": params.config.to_dict(),
        "epoch": params.epoch,
        "schedule_epoch": params.schedule_epoch,
        "parent_id": params.parent_id,
        "threshold": params.threshold,
        "stain_reference": None
        if params.stain_reference is None
        else {
            "means": list(params.stain_reference.means),
            "stds": list(params.stain_reference.stds),
        },
    }
    with open(os.path.join(directory, META_FILE), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
    if params.stain_reference is not None:
        # the reference also lives as its own record so normalization setup
        # is inspectable without parsing the full metadata
        with open(os.path.join(directory, STAIN_FILE), "w", encoding="utf-8") as fh:
            fh.write(params.stain_reference.to_json() + "\n")


def load_checkpoint(directory) -> ModelParams:
    with open(os.path.join(directory, META_FILE), encoding="utf-8") as fh:
        meta = json.load(fh)
    config = NetworkConfig.from_dict(meta["config"])
    manifest: list[str] = []
    tensors: dict[str, np.ndarray] = {}
    with open(os.path.join(directory, MANIFEST_FILE), encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            name, shape_text = line.split(" ")
            shape = tuple(int(s) for s in shape_text.split(","))
            path = os.path.join(directory, TENSOR_DIR, f"{name}.bin")
            with open(path, "rb") as bh:
                flat = np.frombuffer(bh.read(), dtype="<f4")
            tensors[name] = flat.reshape(shape).astype(np.float32)
            manifest.append(name)
    ref = meta.get("stain_reference")
    return ModelParams(
        config=config,
        tensors=tensors,
        manifest=manifest,
        stain_reference=None
        if ref is None
        else StainReference(means=tuple(ref["means"]), stds=tuple(ref["stds"])),
        epoch=meta.get("epoch", 0),
        schedule_epoch=meta.get("schedule_epoch", 0),
        parent_id=meta.get("parent_id"),
        threshold=meta.get("threshold", 0.5),
    )
