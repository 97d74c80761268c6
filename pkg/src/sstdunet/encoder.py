"""Hierarchical smart-Swin feature extractor.

A stride-2 convolutional patch embedding is followed by four attention
stages; stages 2-4 are each preceded by a patch merge that halves every
spatial extent and doubles the width. The four stage outputs are returned
channel-first at scales 1/2, 1/4, 1/8 and 1/16 of the input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from sstdunet.attention import LayerNorm, SwinBlock, WindowConfig
from sstdunet.errors import ShapeError
from sstdunet.tensor import Module, Parameter, Tensor, concat, conv3d, linear

NUM_STAGES = 4


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 1
    base_channels: int = 48
    depths: tuple[int, ...] = (1, 1, 1, 1)
    window_size: int = 4
    head_dim: int = 16
    mlp_ratio: int = 4

    def __post_init__(self):
        if len(self.depths) != NUM_STAGES:
            raise ValueError(f"need {NUM_STAGES} stage depths, got {self.depths}")
        if self.base_channels % self.head_dim:
            raise ValueError(f"base_channels {self.base_channels} not a multiple of head_dim {self.head_dim}")

    def stage_channels(self) -> list[int]:
        return [self.base_channels * 2 ** s for s in range(NUM_STAGES)]

    def window_config(self, stage: int) -> WindowConfig:
        return WindowConfig(window_size=self.window_size,
                            num_heads=self.stage_channels()[stage] // self.head_dim,
                            head_dim=self.head_dim)


def stage_spatial(input_size: Sequence[int]) -> list[tuple[int, ...]]:
    """Spatial extents of the four stage outputs for a given input size."""
    for n in input_size:
        if n % 2 ** NUM_STAGES:
            raise ShapeError(f"input extents {tuple(input_size)} must be divisible by {2 ** NUM_STAGES}")
    return [tuple(n // 2 ** (s + 1) for n in input_size) for s in range(NUM_STAGES)]


class PatchEmbed(Module):
    """``[B, 1, D, H, W]`` -> channel-last ``[B, D/2, H/2, W/2, C0]``."""

    def __init__(self, in_channels: int, out_channels: int):
        self.weight = Parameter(np.zeros((out_channels, in_channels, 2, 2, 2), dtype=np.float32),
                                init=("lecun", in_channels * 8))
        self.bias = Parameter(np.zeros(out_channels, dtype=np.float32))
        self.norm = LayerNorm(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 5 or any(n % 2 for n in x.shape[2:]):
            raise ShapeError(f"patch_embed needs [B, C, D, H, W] with even extents, got {x.shape}")
        y = conv3d(x, self.weight, self.bias, stride=2)
        return self.norm(y.transpose(0, 2, 3, 4, 1))


class PatchMerge(Module):
    """Concatenate each 2x2x2 neighbourhood (z-major, then y, then x), project 8C -> 2C, normalise."""

    def __init__(self, channels: int):
        self.weight = Parameter(np.zeros((8 * channels, 2 * channels), dtype=np.float32),
                                init=("lecun", 8 * channels))
        self.bias = Parameter(np.zeros(2 * channels, dtype=np.float32))
        self.norm = LayerNorm(2 * channels)

    def forward(self, x: Tensor) -> Tensor:
        """``x`` is channel-last ``[B, D, H, W, C]``."""
        if any(n % 2 for n in x.shape[1:4]):
            raise ShapeError(f"patch_merge needs even spatial extents, got {x.shape[1:4]}")
        parts = [x[:, dz::2, dy::2, dx::2, :] for dz in (0, 1) for dy in (0, 1) for dx in (0, 1)]
        return self.norm(linear(concat(parts, axis=-1), self.weight, self.bias))


def patch_embed(x: Tensor, embed: PatchEmbed) -> Tensor:
    """Channel-first convenience wrapper: ``[B, 1, D, H, W]`` -> ``[B, C0, D/2, H/2, W/2]``."""
    return embed(x).transpose(0, 4, 1, 2, 3)


def patch_merge(x: Tensor, merge: PatchMerge) -> Tensor:
    """Channel-first convenience wrapper: ``[B, C, D, H, W]`` -> ``[B, 2C, D/2, H/2, W/2]``."""
    return merge(x.transpose(0, 2, 3, 4, 1)).transpose(0, 4, 1, 2, 3)


class SstEncoder(Module):
    def __init__(self, cfg: EncoderConfig, input_size: Sequence[int]):
        self.cfg = cfg
        self.input_size = tuple(input_size)
        spatial = stage_spatial(self.input_size)
        channels = cfg.stage_channels()
        self.embed = PatchEmbed(cfg.in_channels, channels[0])
        self.merges = [PatchMerge(channels[s]) for s in range(NUM_STAGES - 1)]
        self.stages = [
            [SwinBlock(channels[s], spatial[s], cfg.window_config(s), cfg.mlp_ratio) for _ in range(cfg.depths[s])]
            for s in range(NUM_STAGES)
        ]

    def forward(self, x: Tensor) -> list[Tensor]:
        return encoder_forward(x, self)


def encoder_forward(x: Tensor, enc: SstEncoder) -> list[Tensor]:
    """Return the four channel-first feature scales ``[F1, F2, F3, F4]``."""
    if tuple(x.shape[2:]) != enc.input_size:
        raise ShapeError(f"encoder built for input {enc.input_size}, got {tuple(x.shape[2:])}")
    feats = []
    h = enc.embed(x)
    for s in range(NUM_STAGES):
        if s:
            h = enc.merges[s - 1](h)
        for block in enc.stages[s]:
            h = block.forward_channels_last(h)
        feats.append(h.transpose(0, 4, 1, 2, 3))
    return feats
