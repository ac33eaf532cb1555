"""The five-block network with deeply supervised side outputs and a fusion head."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .rcl import RclParams, rcl_forward
from .tensor import (
    ConvParams,
    ShapeError,
    Tensor,
    bilinear_kernel,
    concat_channels,
    conv2d,
    dropout,
    max_pool2d,
    sigmoid,
    transposed_conv2d,
)

N_BLOCKS = 5
MIN_SIDE = 16
WEIGHTS_MAGIC = b"DSRCNNW\x00"
WEIGHTS_VERSION = 1


@dataclass
class ModelConfig:
    block_channels: list[int] = field(default_factory=lambda: [8, 16, 32, 64, 64])
    convs_per_block: list[int] = field(default_factory=lambda: [2, 2, 3, 3, 3])
    rcl_T: int = 2
    kernel_side: int = 3
    dropout_ratio: float = 0.5
    in_channels: int = 3
    # subtracted from every input pixel before the first block
    input_mean: float = 0.5
    # scale of the recurrent kernels relative to fan-in uniform init
    recurrent_gain: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.block_channels = [int(c) for c in self.block_channels]
        self.convs_per_block = [int(c) for c in self.convs_per_block]
        if len(self.block_channels) != N_BLOCKS or len(self.convs_per_block) != N_BLOCKS:
            raise ValueError(f"exactly {N_BLOCKS} blocks required")
        if min(self.block_channels) < 1 or min(self.convs_per_block) < 1:
            raise ValueError("channel widths and conv counts must be positive")
        if self.rcl_T < 0:
            raise ValueError("rcl_T must be >= 0")
        if self.kernel_side < 1 or self.kernel_side % 2 == 0:
            raise ValueError("kernel_side must be a positive odd integer")
        if not 0 <= self.dropout_ratio < 1:
            raise ValueError("dropout_ratio must be in [0, 1)")

    @staticmethod
    def side_strides() -> list[int]:
        return [2**m for m in range(N_BLOCKS)]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SideHead:
    score: ConvParams
    upsample: Optional[ConvParams]  # None for the stride-1 block
    stride: int

    def parameters(self) -> list[Tensor]:
        params = self.score.parameters()
        if self.upsample is not None:
            params += self.upsample.parameters()
        return params


@dataclass
class Model:
    config: ModelConfig
    blocks: list[list[RclParams]]
    side_heads: list[SideHead]
    fusion: ConvParams

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for m, block in enumerate(self.blocks, 1):
            for i, layer in enumerate(block, 1):
                out += [
                    (f"block{m}.rcl{i}.ff.kernel", layer.feed_forward.kernel),
                    (f"block{m}.rcl{i}.ff.bias", layer.feed_forward.bias),
                    (f"block{m}.rcl{i}.rec.kernel", layer.recurrent.kernel),
                ]
        for m, head in enumerate(self.side_heads, 1):
            out += [(f"side{m}.score.kernel", head.score.kernel), (f"side{m}.score.bias", head.score.bias)]
            if head.upsample is not None:
                out += [
                    (f"side{m}.upsample.kernel", head.upsample.kernel),
                    (f"side{m}.upsample.bias", head.upsample.bias),
                ]
        out += [("fusion.kernel", self.fusion.kernel), ("fusion.bias", self.fusion.bias)]
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if state[name].shape != p.data.shape:
                raise ShapeError(f"{name}: expected shape {p.data.shape}, got {state[name].shape}")
            p.data = np.array(state[name], dtype=np.float64)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


@dataclass
class ForwardResult:
    side_maps: list[Tensor]
    fused_map: Tensor
    side_scores: list[Tensor]  # pre-sigmoid, already at input resolution
    fused_score: Tensor

    @property
    def maps(self) -> list[Tensor]:
        return [*self.side_maps, self.fused_map]


def _uniform(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> np.ndarray:
    bound = gain * np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build_model(config: Optional[ModelConfig] = None, rng: Optional[np.random.Generator] = None) -> Model:
    config = config or ModelConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    k = config.kernel_side
    blocks = []
    in_c = config.in_channels
    for m in range(N_BLOCKS):
        c = config.block_channels[m]
        layers = []
        for i in range(config.convs_per_block[m]):
            name = f"block{m + 1}.rcl{i + 1}"
            ff = _uniform(rng, (c, in_c, k, k), in_c * k * k)
            rec = _uniform(rng, (c, c, k, k), c * k * k, config.recurrent_gain)
            layers.append(RclParams.create(ff, rec, np.zeros(c), T=config.rcl_T, name=name))
            in_c = c
        blocks.append(layers)

    heads = []
    for m, stride in enumerate(ModelConfig.side_strides()):
        c = config.block_channels[m]
        score = ConvParams.create(_uniform(rng, (1, c, 1, 1), c, gain=1 / np.sqrt(3)),
                                  np.zeros(1), name=f"side{m + 1}.score")
        upsample = None
        if stride > 1:
            upsample = ConvParams.create(bilinear_kernel(stride), np.zeros(1), stride=stride,
                                         name=f"side{m + 1}.upsample", transposed=True)
        heads.append(SideHead(score, upsample, stride))

    fusion = ConvParams.create(np.full((1, N_BLOCKS, 1, 1), 1.0 / N_BLOCKS), np.zeros(1), name="fusion")
    return Model(config, blocks, heads, fusion)


def forward(model: Model, image, train: bool = False, rng: Optional[np.random.Generator] = None) -> ForwardResult:
    """Predict five side maps and the fused map, all at the input's resolution.

    ``image`` is a ``(1, c, h, w)`` tensor or array with ``h, w >= 16``.
    """
    x = image if isinstance(image, Tensor) else Tensor(image)
    n, c, h, w = x.shape
    if n != 1:
        raise ShapeError(f"forward takes one image at a time, got batch {n}")
    if c != model.config.in_channels:
        raise ShapeError(f"image has {c} channels, model expects {model.config.in_channels}")
    if h < MIN_SIDE or w < MIN_SIDE:
        raise ShapeError(f"image {h}x{w} is smaller than the {MIN_SIDE}x{MIN_SIDE} minimum")
    if train and model.config.dropout_ratio > 0 and rng is None:
        raise ValueError("training-mode forward needs an rng for dropout")

    if model.config.input_mean:
        x = Tensor(x.data - model.config.input_mean)
    scores = []
    for m, (block, head) in enumerate(zip(model.blocks, model.side_heads)):
        for layer in block:
            x = rcl_forward(x, layer)
        x = dropout(x, model.config.dropout_ratio, train=train, rng=rng)
        s = conv2d(x, head.score)
        if head.upsample is not None:
            s = transposed_conv2d(s, head.upsample, (h, w))
        scores.append(s)
        if m < N_BLOCKS - 1:
            x, _ = max_pool2d(x)

    fused = conv2d(concat_channels(scores), model.fusion)
    return ForwardResult(
        side_maps=[sigmoid(s) for s in scores],
        fused_map=sigmoid(fused),
        side_scores=scores,
        fused_score=fused,
    )


def predict(model: Model, image) -> np.ndarray:
    """Inference-mode fused saliency map as an ``(h, w)`` array."""
    return forward(model, image, train=False).fused_map.data[0, 0].copy()


# ---------------------------------------------------------------------------
# weight files
#
# layout (all little-endian):
#   magic[8] | version u32 | config-json length u32 | config json (utf-8)
#   | array count u32 | per array: name length u16, name, ndim u8, dims u32 * ndim
#   | float64 payload for every array, in manifest order


class WeightFileError(ValueError):
    pass


def save_weights(model: Model, path) -> None:
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode()
    header = [WEIGHTS_MAGIC, struct.pack("<II", WEIGHTS_VERSION, len(cfg)), cfg]
    named = model.named_parameters()
    header.append(struct.pack("<I", len(named)))
    for name, p in named:
        raw = name.encode()
        header.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", p.data.ndim))
        header.append(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
    payload = [p.data.astype("<f8").tobytes() for _, p in named]
    Path(path).write_bytes(b"".join(header + payload))


def _read_weights(path) -> tuple[dict, list[tuple[str, tuple[int, ...]]], dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise WeightFileError(f"{path}: truncated weight file (needed {n} bytes at offset {pos})")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    if take(len(WEIGHTS_MAGIC)) != WEIGHTS_MAGIC:
        raise WeightFileError(f"{path}: not a weight file (bad magic)")
    version, cfg_len = struct.unpack("<II", take(8))
    if version != WEIGHTS_VERSION:
        raise WeightFileError(f"{path}: unsupported version {version}")
    config = json.loads(take(cfg_len).decode())
    (count,) = struct.unpack("<I", take(4))
    manifest = []
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        manifest.append((name, shape))
    arrays = {}
    for name, shape in manifest:
        size = int(np.prod(shape))
        arrays[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(buf):
        raise WeightFileError(f"{path}: {len(buf) - pos} trailing bytes after payload")
    return config, manifest, arrays


def load_weights(path, config: Optional[ModelConfig] = None) -> Model:
    """Load a weight file.  With ``config``, the file must match it array for array."""
    stored, manifest, arrays = _read_weights(path)
    target = config or ModelConfig(**stored)
    model = build_model(target, np.random.default_rng(0))
    expected = dict((name, p.data.shape) for name, p in model.named_parameters())
    for name, shape in manifest:
        if name not in expected:
            raise WeightFileError(f"{path}: unexpected array {name!r} ({_block_of(name)})")
        if tuple(shape) != expected[name]:
            raise WeightFileError(
                f"{path}: {_block_of(name)} array {name!r} has shape {tuple(shape)}, "
                f"config expects {expected[name]}"
            )
    missing = set(expected) - set(arrays)
    if missing:
        raise WeightFileError(f"{path}: missing arrays {sorted(missing)}")
    model.load_state(arrays)
    return model


def _block_of(name: str) -> str:
    head = name.split(".")[0]
    if head.startswith("block"):
        return f"block {head[5:]}"
    if head.startswith("side"):
        return f"side head {head[4:]}"
    return head
