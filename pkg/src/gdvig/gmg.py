"""Gaze map generator: graph-based encoder plus CNN decoder.

The encoder builds feature-distance KNN graphs over the /4 and /8 grids and
runs grapher/feed-forward pairs on them; the decoder upsamples back to the
input size through CNN residual blocks with skip connections from the
encoder. A sigmoid head keeps every emitted map value in [0,1].

Three interchangeable variants cover the generator ablation arms:
"gnn_plus_cnn" (full), "cnn_only" (encoder pairs replaced by CNN blocks) and
"gnn_only" (decoder reduced to plain upsampling + 1x1 convolutions).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import (
    CnnBlock,
    Conv2d,
    ConvBnRelu,
    Downsample,
    FfnBlock,
    GrapherBlock,
    Module,
    Stem,
    grid_to_nodes,
    nodes_to_grid,
)
from .functional import ConfigError, mse_loss, resample2d
from .graph import GraphConfig, NodeGrid, knn_build
from .tensor import Tensor

VARIANTS = ("cnn_only", "gnn_only", "gnn_plus_cnn")


@dataclass
class GmgConfig:
    variant: str = "gnn_plus_cnn"
    encoder_depth: int = 2
    base_channels: int = 48
    k: int = 9

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown generator variant {self.variant!r}")
        if self.base_channels % 4 != 0:
            raise ConfigError(
                f"base_channels must be divisible by 4, got {self.base_channels}"
            )
        if self.encoder_depth < 1 or self.k < 1:
            raise ConfigError("encoder_depth and k must be >= 1")


class _GraphStage(Module):
    """Depth x (rebuild feature KNN graph, grapher, feed-forward)."""

    def __init__(self, channels: int, depth: int, k: int, rng):
        self.pairs = [
            (GrapherBlock(channels, rng), FfnBlock(channels, rng)) for _ in range(depth)
        ]
        self.k = k

    def _children(self):
        for i, (grapher, ffn) in enumerate(self.pairs):
            yield f"pairs.{i}.grapher", grapher
            yield f"pairs.{i}.ffn", ffn

    def __call__(self, feat: Tensor, training: bool) -> Tensor:
        b, c, h, w = feat.shape
        cfg = GraphConfig(k=self.k, lambda_g=0.0, use_gaze=False)
        outs = []
        for i in range(b):
            x = grid_to_nodes(feat[i])
            for grapher, ffn in self.pairs:
                graph = knn_build(NodeGrid(x, h, w), None, cfg)
                x = ffn(grapher(x, graph))
            outs.append(nodes_to_grid(x, h, w))
        return T.stack(outs, axis=0)


class _CnnStage(Module):
    def __init__(self, channels: int, depth: int, rng):
        self.blocks = [CnnBlock(channels, rng) for _ in range(depth)]

    def __call__(self, feat: Tensor, training: bool) -> Tensor:
        for block in self.blocks:
            feat = block(feat, training)
        return feat


def _upsample2x(x: Tensor) -> Tensor:
    return resample2d(x, 2 * x.shape[-2], 2 * x.shape[-1], mode="nearest")


class GazeMapGenerator(Module):
    """Image [B,1,H,W] -> gaze map [B,H,W] with values in [0,1]."""

    def __init__(self, cfg: GmgConfig, rng: np.random.Generator, in_channels: int = 1):
        c = cfg.base_channels
        self.cfg = cfg
        self.stem = Stem(c, rng, in_channels)
        if cfg.variant == "cnn_only":
            self.enc1 = _CnnStage(c, cfg.encoder_depth, rng)
            self.enc2 = _CnnStage(2 * c, cfg.encoder_depth, rng)
        else:
            self.enc1 = _GraphStage(c, cfg.encoder_depth, cfg.k, rng)
            self.enc2 = _GraphStage(2 * c, cfg.encoder_depth, cfg.k, rng)
        self.trans = Downsample(c, 2 * c, rng)

        # decoder: /8 -> /4 -> /2 -> /1
        self.skip8 = Conv2d(2 * c, 2 * c, 1, rng)
        self.skip4 = Conv2d(c, c, 1, rng)
        self.proj4 = ConvBnRelu(2 * c, c, rng, kernel_size=1)
        self.proj2 = ConvBnRelu(c, c // 2, rng, kernel_size=1)
        self.proj1 = ConvBnRelu(c // 2, c // 4, rng, kernel_size=1)
        if cfg.variant != "gnn_only":
            self.dec8 = CnnBlock(2 * c, rng)
            self.dec4 = CnnBlock(c, rng)
            self.dec2 = CnnBlock(c // 2, rng)
            self.dec1 = CnnBlock(c // 4, rng)
        self.head = Conv2d(c // 4, 1, 1, rng, bias=True)

    def __call__(self, image: Tensor, training: bool) -> Tensor:
        with_cnn = self.cfg.variant != "gnn_only"

        f4_in = self.stem(image, training)
        f4 = self.enc1(f4_in, training)
        t8 = self.trans(f4, training)
        f8 = self.enc2(t8, training)

        d = f8 + self.skip8(t8)
        if with_cnn:
            d = self.dec8(d, training)
        d = self.proj4(_upsample2x(d), training) + self.skip4(f4)
        if with_cnn:
            d = self.dec4(d, training)
        d = self.proj2(_upsample2x(d), training)
        if with_cnn:
            d = self.dec2(d, training)
        d = self.proj1(_upsample2x(d), training)
        if with_cnn:
            d = self.dec1(d, training)
        logits = self.head(d)
        b, _, h, w = logits.shape
        return logits.reshape(b, h, w).sigmoid()


def gmg_loss(gm: Tensor, gm_hat: Tensor) -> Tensor:
    """Mean squared error between generated and target maps."""
    return mse_loss(gm, gm_hat)
