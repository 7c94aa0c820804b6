"""VGG-style encoder with U-Net decoders and configurable output stride.

Encoder stage ``s`` runs ``convs_per_stage`` 3x3 conv + ReLU layers, keeps
its output as the skip feature, then pools. The first ``log2(OS)`` pools
are the usual 2x2/stride-2; the remaining ones become stride-1 pools and the
dilation rate doubles after each, so later convolutions see the same
receptive field as in the OS-32 network while the resolution stays at
``tile_size / OS``.

The decoder walks the skips from deepest to shallowest. Each level has one
up layer (2x2 stride-2 transposed conv when the skip is twice the current
resolution, 1x1 otherwise) followed by ReLU and concatenation with the
skip. ``plain_unet`` then applies two 3x3 conv + ReLU layers per level;
``modified_unet`` applies none, so its up layer is the level's only
convolution. A 1x1 head produces the class logits.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import functional as F
from .autodiff.tensor import Tensor, concat, conv2d, conv_transpose2d, max_pool2d, parameter, relu
from .errors import CheckpointMismatch, InvalidOutputStride, IoFailure, ShapeMismatch, WidthMismatch

DESK_WIDTHS = (16, 32, 64, 128, 256)
VGG16_WIDTHS = (64, 128, 256, 512, 512)
DECODERS = ("modified_unet", "plain_unet")
OUTPUT_STRIDES = (32, 16, 8, 4, 2)


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    input_channels: int
    encoder_widths: tuple[int, ...] = DESK_WIDTHS
    convs_per_stage: int = 2
    decoder_variant: str = "modified_unet"
    output_stride: int = 4
    tile_size: int = 224

    def __post_init__(self):
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        if not self.encoder_widths or min(self.encoder_widths) < 1:
            raise WidthMismatch(f"encoder widths must be a non-empty list of positive ints, got {self.encoder_widths}")
        if self.num_classes < 2:
            raise WidthMismatch(f"need at least 2 classes, got {self.num_classes}")
        if self.input_channels < 1 or self.convs_per_stage < 1:
            raise WidthMismatch("input_channels and convs_per_stage must be >= 1")
        if self.decoder_variant not in DECODERS:
            raise WidthMismatch(f"decoder_variant must be one of {DECODERS}, got {self.decoder_variant!r}")
        if self.output_stride not in OUTPUT_STRIDES:
            raise InvalidOutputStride(f"output stride must be one of {OUTPUT_STRIDES}, got {self.output_stride}")
        if self.downsamplings > len(self.encoder_widths):
            raise InvalidOutputStride(
                f"output stride {self.output_stride} needs {self.downsamplings} encoder stages, "
                f"config has {len(self.encoder_widths)}"
            )
        if self.tile_size % self.output_stride:
            raise InvalidOutputStride(f"output stride {self.output_stride} does not divide tile size {self.tile_size}")

    @property
    def downsamplings(self) -> int:
        return int(self.output_stride).bit_length() - 1

    def to_json(self) -> dict:
        d = asdict(self)
        d["encoder_widths"] = list(self.encoder_widths)
        return d

    @classmethod
    def from_json(cls, d) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class StageInfo:
    name: str
    stride: int
    conv_dilation: int
    rate_after: int
    output_dims: tuple[int, int]
    channels: int
    skip_source: bool


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, Tensor]
    stages: list[StageInfo] = field(default_factory=list)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise CheckpointMismatch("parameter names differ from the model")
        for k, t in self.params.items():
            if state[k].shape != t.data.shape:
                raise CheckpointMismatch(f"{k}: checkpoint shape {state[k].shape}, model {t.data.shape}")
            t.data = np.array(state[k], dtype=t.data.dtype, copy=True)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def __call__(self, batch):
        return forward(self, batch)


def _he(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def build_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    """Allocate and He-initialise every parameter; record per-stage geometry."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}

    def conv(name, cin, cout, k):
        params[f"{name}.weight"] = parameter(_he(rng, (cout, cin, k, k), cin * k * k, dtype), f"{name}.weight")
        params[f"{name}.bias"] = parameter(np.zeros(cout, dtype=dtype), f"{name}.bias")

    def up(name, cin, cout, k):
        params[f"{name}.weight"] = parameter(_he(rng, (cin, cout, k, k), cin, dtype), f"{name}.weight")
        params[f"{name}.bias"] = parameter(np.zeros(cout, dtype=dtype), f"{name}.bias")

    widths = config.encoder_widths
    stages = []
    cin, size, rate = config.input_channels, config.tile_size, 1
    for s, width in enumerate(widths):
        for k in range(config.convs_per_stage):
            conv(f"enc{s + 1}.conv{k + 1}", cin if k == 0 else width, width, 3)
        cin = width
        if s < config.downsamplings:
            stages.append(StageInfo(f"enc{s + 1}", 2, rate, rate, (size, size), width, True))
            size //= 2
        else:
            stages.append(StageInfo(f"enc{s + 1}", 1, rate, rate * 2, (size, size), width, True))
            rate *= 2

    skip_sizes = [st.output_dims[0] for st in stages]
    c = widths[-1]
    for s in reversed(range(len(widths))):
        width = widths[s]
        k = 2 if skip_sizes[s] == 2 * size else 1
        if skip_sizes[s] not in (size, 2 * size):
            raise ShapeMismatch(f"decoder level {s + 1}: skip {skip_sizes[s]} vs current {size}")
        up(f"dec{s + 1}.up", c, width, k)
        size = skip_sizes[s]
        c = 2 * width
        if config.decoder_variant == "plain_unet":
            conv(f"dec{s + 1}.conv1", c, width, 3)
            conv(f"dec{s + 1}.conv2", width, width, 3)
            c = width
    conv("head", c, config.num_classes, 1)
    if size != config.tile_size:
        raise ShapeMismatch(f"decoder ends at {size}, expected {config.tile_size}")
    return Model(config, params, stages)


def _conv_spec(w: np.ndarray, padding=0, dilation=1) -> F.ConvSpec:
    cout, cin, k, _ = w.shape
    return F.ConvSpec(cin, cout, (k, k), 1, padding, dilation)


def encode(model: Model, x: Tensor) -> tuple[Tensor, list[Tensor]]:
    cfg, p = model.config, model.params
    skips = []
    h = x
    for s, info in enumerate(model.stages):
        d = info.conv_dilation
        for k in range(cfg.convs_per_stage):
            name = f"enc{s + 1}.conv{k + 1}"
            w = p[f"{name}.weight"]
            h = relu(conv2d(h, w, p[f"{name}.bias"], _conv_spec(w.data, padding=d, dilation=d)))
        skips.append(h)
        if info.stride == 2:
            h = max_pool2d(h, 2, 2)
        else:
            # stride-1 2x2 pool at the current rate; pad bottom/right to keep the size
            h = max_pool2d(h, 2, 1, padding=(0, d, 0, d), dilation=d)
    return h, skips


def forward(model: Model, batch) -> Tensor:
    """Logits of shape (batch, num_classes, tile_size, tile_size)."""
    cfg, p = model.config, model.params
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch))
    if x.data.ndim != 4 or x.data.shape[1:] != (cfg.input_channels, cfg.tile_size, cfg.tile_size):
        raise ShapeMismatch(
            f"expected batch of shape (N, {cfg.input_channels}, {cfg.tile_size}, {cfg.tile_size}), got {x.data.shape}"
        )
    dtype = p["head.weight"].data.dtype
    if x.data.dtype != dtype:
        x = Tensor(x.data.astype(dtype))
    h, skips = encode(model, x)
    for s in reversed(range(len(skips))):
        w = p[f"dec{s + 1}.up.weight"]
        k = w.data.shape[2]
        spec = F.ConvSpec(w.data.shape[0], w.data.shape[1], k, k)
        h = relu(conv_transpose2d(h, w, p[f"dec{s + 1}.up.bias"], spec))
        if h.data.shape[2:] != skips[s].data.shape[2:]:
            raise ShapeMismatch(f"skip {s + 1}: decoder {h.data.shape} vs encoder {skips[s].data.shape}")
        h = concat([h, skips[s]], axis=1)
        if cfg.decoder_variant == "plain_unet":
            for k in (1, 2):
                name = f"dec{s + 1}.conv{k}"
                wc = p[f"{name}.weight"]
                h = relu(conv2d(h, wc, p[f"{name}.bias"], _conv_spec(wc.data, padding=1)))
    w = p["head.weight"]
    return conv2d(h, w, p["head.bias"], _conv_spec(w.data))


def bottleneck_dims(model: Model, batch=None) -> tuple[int, int]:
    """Spatial size of the deepest encoder feature map, measured by running the encoder."""
    cfg = model.config
    if batch is None:
        batch = np.zeros((1, cfg.input_channels, cfg.tile_size, cfg.tile_size), dtype=np.float32)
    h, _ = encode(model, Tensor(np.asarray(batch, dtype=model.params["head.weight"].data.dtype)))
    return h.data.shape[2], h.data.shape[3]


def param_count(model: Model) -> dict[str, int]:
    counts = {"encoder": 0, "decoder": 0, "head": 0}
    for name, t in model.params.items():
        part = "encoder" if name.startswith("enc") else "decoder" if name.startswith("dec") else "head"
        counts[part] += int(t.data.size)
    counts["total"] = counts["encoder"] + counts["decoder"] + counts["head"]
    return counts


def receptive_field(model: Model) -> int:
    """Receptive field (pixels) of one bottleneck cell, from layer arithmetic."""
    cfg = model.config
    rf, jump = 1, 1
    for info in model.stages:
        d = info.conv_dilation
        rf += cfg.convs_per_stage * 2 * d * jump
        if info.stride == 2:
            rf += jump
            jump *= 2
        else:
            rf += d * jump
    return rf


# Checkpoint: magic, u32 version, u32 config length + JSON, u32 tensor count,
# then per tensor: u16 name length + name, u8 ndim, u32 dims, float32 LE data.
MAGIC = b"LULCCKPT"
VERSION = 1


def save_checkpoint(model: Model, path, extra: dict | None = None) -> None:
    meta = {"config": model.config.to_json()}
    if extra:
        meta["extra"] = extra
    blob = json.dumps(meta, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(model.params))]
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name].data, dtype="<f4")
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(b"".join(parts))
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def read_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray], dict]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:8] != MAGIC:
        raise CheckpointMismatch(f"{path} is not a checkpoint file")
    version, nmeta = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise CheckpointMismatch(f"unsupported checkpoint version {version}")
    off = 16
    meta = json.loads(raw[off:off + nmeta])
    off += nmeta
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        dims = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        n = int(np.prod(dims)) if dims else 1
        state[name] = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(dims).astype(np.float32)
        off += 4 * n
    return ModelConfig.from_json(meta["config"]), state, meta.get("extra", {})


def load_checkpoint(path, expected: ModelConfig | None = None) -> Model:
    config, state, _ = read_checkpoint(path)
    if expected is not None and expected != config:
        raise CheckpointMismatch(f"checkpoint config {config} does not match expected {expected}")
    model = build_model(config, seed=0)
    model.load_state_dict(state)
    return model
