"""SST-DUNet: dense/residual 3D UNet fused with the smart-Swin encoder.

Layout (level ``l`` has spatial scale ``1 / 2**l`` and CNN width ``w[l]``)::

    stem            conv 1 -> w0 at level 0
    down k = 1..5   maxpool, dense block w[k-1] -> w[k]
    bridge          dense block w5 -> w5 at level 5
    up   l = 4..0   transposed conv (stride 2) w[l+1] -> w[l],
                    concat CNN skip of level l (+ projected SST feature F_l
                    for l = 1..4), dense block -> w[l]
    head            1x1x1 conv w0 -> 1, sigmoid

A dense block feeds its second convolution the concatenation of the block
input and the first convolution's activation, and adds a (projected when
widths differ) shortcut of the block input to the result.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from sstdunet.encoder import NUM_STAGES, EncoderConfig, SstEncoder
from sstdunet.errors import CheckpointError, ConfigError, ShapeError
from sstdunet.tensor import (
    Module,
    Parameter,
    Tensor,
    clip,
    concat,
    conv3d,
    conv_transpose3d,
    leaky_relu,
    maxpool3d,
    sigmoid,
)
from sstdunet.tensor.module import count_parameters

NUM_LEVELS = 5


@dataclass(frozen=True)
class ModelConfig:
    input_size: tuple[int, int, int] = (128, 128, 64)
    base_channels: int = 48
    window_size: int = 4
    head_dim: int = 16
    mlp_ratio: int = 4
    depths: tuple[int, ...] = (1, 1, 1, 1)
    cnn_widths: tuple[int, ...] = (48, 48, 48, 80, 96, 96)
    leaky_slope: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(int(n) for n in self.input_size))
        object.__setattr__(self, "depths", tuple(int(n) for n in self.depths))
        object.__setattr__(self, "cnn_widths", tuple(int(n) for n in self.cnn_widths))
        if len(self.input_size) != 3:
            raise ValueError(f"input_size must have three extents, got {self.input_size}")
        for n in self.input_size:
            if n % 2 ** NUM_LEVELS:
                raise ShapeError(f"input extents {self.input_size} must be divisible by {2 ** NUM_LEVELS}")
        if len(self.cnn_widths) != NUM_LEVELS + 1:
            raise ValueError(f"cnn_widths needs {NUM_LEVELS + 1} entries, got {self.cnn_widths}")

    @classmethod
    def production(cls) -> "ModelConfig":
        return cls()

    @classmethod
    def test_scale(cls) -> "ModelConfig":
        return cls(input_size=(32, 32, 32), base_channels=8, head_dim=8, window_size=4,
                   cnn_widths=(8, 8, 16, 16, 32, 32))

    @classmethod
    def tiny(cls) -> "ModelConfig":
        """Smallest sensible network, for full-model gradient checks."""
        return cls(input_size=(32, 32, 32), base_channels=4, head_dim=4, window_size=2, mlp_ratio=2,
                   cnn_widths=(4, 3, 3, 4, 4, 4))

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(in_channels=1, base_channels=self.base_channels, depths=self.depths,
                             window_size=self.window_size, head_dim=self.head_dim, mlp_ratio=self.mlp_ratio)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


def _conv_param(cout: int, cin: int, k: int) -> tuple[Parameter, Parameter]:
    w = Parameter(np.zeros((cout, cin, k, k, k), dtype=np.float32), init=("lecun", cin * k ** 3))
    b = Parameter(np.zeros(cout, dtype=np.float32))
    return w, b


class DenseBlock(Module):
    def __init__(self, cin: int, cout: int, slope: float = 0.01):
        self.slope = slope
        self.conv1_weight, self.conv1_bias = _conv_param(cout, cin, 3)
        self.conv2_weight, self.conv2_bias = _conv_param(cout, cin + cout, 3)
        if cin != cout:
            self.skip_weight, self.skip_bias = _conv_param(cout, cin, 1)
        else:
            self.skip_weight = self.skip_bias = None

    def forward(self, x: Tensor) -> Tensor:
        c1 = leaky_relu(conv3d(x, self.conv1_weight, self.conv1_bias, padding=1), self.slope)
        c2 = leaky_relu(conv3d(concat([x, c1], axis=1), self.conv2_weight, self.conv2_bias, padding=1), self.slope)
        shortcut = x if self.skip_weight is None else conv3d(x, self.skip_weight, self.skip_bias)
        return c2 + shortcut


class UpBlock(Module):
    def __init__(self, cin: int, cout: int, sst_channels: int | None, slope: float):
        self.up_weight = Parameter(np.zeros((cin, cout, 2, 2, 2), dtype=np.float32), init=("lecun", cin))
        self.up_bias = Parameter(np.zeros(cout, dtype=np.float32))
        if sst_channels is not None:
            self.fuse_weight, self.fuse_bias = _conv_param(cout, sst_channels, 1)
            parts = 3
        else:
            self.fuse_weight = self.fuse_bias = None
            parts = 2
        self.block = DenseBlock(parts * cout, cout, slope)

    def forward(self, x: Tensor, skip: Tensor, feature: Tensor | None) -> Tensor:
        up = conv_transpose3d(x, self.up_weight, self.up_bias, stride=2)
        parts = [up, skip]
        if self.fuse_weight is not None:
            parts.append(conv3d(feature, self.fuse_weight, self.fuse_bias))
        for p in parts[1:]:
            if p.shape[2:] != up.shape[2:]:
                raise ShapeError(f"skip extents {p.shape[2:]} do not match upsampled {up.shape[2:]}")
        return self.block(concat(parts, axis=1))


class SstDUNet(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        w = cfg.cnn_widths
        enc_cfg = cfg.encoder_config()
        sst = enc_cfg.stage_channels()
        slope = cfg.leaky_slope
        self.encoder = SstEncoder(enc_cfg, cfg.input_size)
        self.stem_weight, self.stem_bias = _conv_param(w[0], 1, 3)
        self.downs = [DenseBlock(w[k - 1], w[k], slope) for k in range(1, NUM_LEVELS + 1)]
        self.bridge = DenseBlock(w[NUM_LEVELS], w[NUM_LEVELS], slope)
        # up block j targets level 4 - j; SST feature F_l lives at level l (1..4)
        self.ups = []
        for level in range(NUM_LEVELS - 1, -1, -1):
            sst_ch = sst[level - 1] if 1 <= level <= NUM_STAGES else None
            self.ups.append(UpBlock(w[level + 1], w[level], sst_ch, slope))
        self.head_weight, self.head_bias = _conv_param(1, w[0], 1)

    def forward(self, x: Tensor) -> Tensor:
        return model_forward(x, self)


def model_forward(x: Tensor, model: SstDUNet) -> Tensor:
    """``[B, 1, D, H, W]`` -> probabilities ``[B, 1, D, H, W]``."""
    cfg = model.cfg
    if x.ndim != 5 or x.shape[1] != 1 or tuple(x.shape[2:]) != cfg.input_size:
        raise ShapeError(f"model expects [B, 1, {', '.join(map(str, cfg.input_size))}], got {x.shape}")
    feats = model.encoder(x)
    h = leaky_relu(conv3d(x, model.stem_weight, model.stem_bias, padding=1), cfg.leaky_slope)
    skips = [h]
    for block in model.downs:
        h = block(maxpool3d(h))
        skips.append(h)
    h = model.bridge(h)
    for j, up in enumerate(model.ups):
        level = NUM_LEVELS - 1 - j
        feature = feats[level - 1] if 1 <= level <= NUM_STAGES else None
        h = up(h, skips[level], feature)
    prob = sigmoid(conv3d(h, model.head_weight, model.head_bias))
    # keep probabilities strictly inside (0, 1) once the sigmoid saturates in float precision
    eps = float(np.finfo(prob.dtype).epsneg)
    return clip(prob, eps, 1.0 - eps)


def init_weights(module: Module, seed: int) -> Module:
    """Fill every parameter from its ``init`` tag with a seeded generator.

    ``lecun`` draws U(-b, b) with ``b = sqrt(3 / fan_in)``; ``he`` uses
    ``b = sqrt(6 / ((1 + slope^2) fan_in))``. Attention/MLP output
    projections and smart-mask biases are tagged ``zeros``.
    """
    rng = np.random.default_rng(seed)
    for _, p in module.named_parameters():
        kind = p.init[0]
        if kind == "zeros":
            p.data = np.zeros(p.shape, dtype=p.dtype)
        elif kind == "ones":
            p.data = np.ones(p.shape, dtype=p.dtype)
        elif kind in ("he", "lecun"):
            fan_in = p.init[1]
            bound = np.sqrt(6.0 / ((1.0 + 0.01 ** 2) * fan_in)) if kind == "he" else np.sqrt(3.0 / fan_in)
            p.data = rng.uniform(-bound, bound, size=p.shape).astype(p.dtype)
        else:
            raise ValueError(f"unknown init tag {p.init}")
        p.grad = None
    return module


def build_model(cfg: ModelConfig, seed: int = 0) -> SstDUNet:
    return init_weights(SstDUNet(cfg), seed)


def parameter_checksum(module: Module) -> str:
    """CRC32 over the raw bytes of every parameter, in definition order."""
    crc = 0
    for name, p in module.named_parameters():
        crc = zlib.crc32(name.encode(), crc)
        crc = zlib.crc32(np.ascontiguousarray(p.data).tobytes(), crc)
    return f"{crc:08x}"


__all__ = [
    "ModelConfig", "SstDUNet", "DenseBlock", "UpBlock", "model_forward", "init_weights", "build_model",
    "count_parameters", "parameter_checksum", "save_checkpoint", "load_checkpoint",
]


# -- checkpoint container -----------------------------------------------------
MAGIC = b"SSTDUNET"
FORMAT_VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def save_checkpoint(model: SstDUNet, path: str | Path, extra: dict | None = None) -> None:
    """Write a versioned little-endian container.

    Layout: magic, u32 version, u32 header length, UTF-8 JSON header
    (model config + ``extra``), u32 record count, then per record
    u16 name length, name, u8 dtype code, u8 ndim, u32 dims, raw data;
    finally a u32 CRC32 of all preceding bytes.
    """
    header = json.dumps({"model": model.cfg.to_dict(), "extra": extra or {}}, sort_keys=True).encode()
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(header)), header]
    params = list(model.named_parameters())
    chunks.append(struct.pack("<I", len(params)))
    for name, p in params:
        arr = np.ascontiguousarray(p.data, dtype=p.dtype.newbyteorder("<"))
        raw_name = name.encode()
        chunks.append(struct.pack("<H", len(raw_name)) + raw_name)
        chunks.append(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    body = b"".join(chunks)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a checkpoint into (header, state) without touching any model."""
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 16 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not an SST-DUNet checkpoint (bad magic or too short)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupted file)")
    pos = len(MAGIC)
    version, hlen = struct.unpack_from("<II", body, pos)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos += 8
    header = json.loads(body[pos:pos + hlen].decode())
    pos += hlen
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    state: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + nlen].decode()
            pos += nlen
            code, ndim = struct.unpack_from("<BB", body, pos)
            pos += 2
            dims = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            dtype = _CODE_DTYPES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            if pos + nbytes > len(body):
                raise CheckpointError(f"{path}: record {name!r} runs past end of file")
            state[name] = np.frombuffer(body, dtype=dtype, count=nbytes // dtype.itemsize,
                                        offset=pos).reshape(dims).astype(dtype.newbyteorder("="))
            pos += nbytes
    except (struct.error, KeyError) as exc:
        raise CheckpointError(f"{path}: malformed parameter record ({exc})") from exc
    if pos != len(body):
        raise CheckpointError(f"{path}: {len(body) - pos} trailing bytes after last record")
    return header, state


def load_checkpoint(path: str | Path, expected: ModelConfig | None = None) -> SstDUNet:
    """Rebuild a model from ``path``; raise if its config differs from ``expected``."""
    header, state = read_checkpoint(path)
    try:
        cfg = ModelConfig.from_dict(header["model"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid model config block ({exc})") from exc
    if expected is not None and cfg != expected:
        raise CheckpointError(f"{path}: checkpoint config {cfg} does not match expected {expected}")
    model = SstDUNet(cfg)
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return model


def checkpoint_extra(path: str | Path) -> dict:
    header, _ = read_checkpoint(path)
    return header.get("extra", {})
