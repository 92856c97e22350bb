"""Reusable network blocks: stem, grapher, feed-forward, and CNN residual.

Each block is residual, so zeroing its final learned layer turns it into an
exact identity. The grapher aggregates neighborhoods with max-relative graph
convolution: concat(x_i, max_j (x_j - x_i)).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .functional import BatchNormState, ConfigError, batch_norm, conv2d, linear
from .graph import NeighborGraph
from .tensor import Tensor


class Module:
    """Minimal parameter container with recursive, deterministic traversal."""

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((name, value))
            elif isinstance(value, BatchNormState):
                out.append((f"{name}.gamma", value.gamma))
                out.append((f"{name}.beta", value.beta))
        for cname, child in self._children():
            out.extend((f"{cname}.{n}", p) for n, p in child.named_parameters())
        return out

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name, value in vars(self).items():
            if isinstance(value, BatchNormState):
                out.append((f"{name}.running_mean", value.running_mean))
                out.append((f"{name}.running_var", value.running_var))
        for cname, child in self._children():
            out.extend((f"{cname}.{n}", b) for n, b in child.named_buffers())
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def load_buffer(self, name: str, value: np.ndarray) -> None:
        head, _, rest = name.partition(".")
        for cname, child in self._children():
            if name.startswith(cname + "."):
                child.load_buffer(name[len(cname) + 1 :], value)
                return
        obj = getattr(self, head)
        if rest == "running_mean":
            obj.running_mean = value.copy()
        elif rest == "running_var":
            obj.running_var = value.copy()
        else:
            raise KeyError(name)


def he_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Linear(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.weight = Tensor(he_init(rng, (c_in, c_out), c_in), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        pad: int = 0,
        pad_mode: str = "reflect",
        bias: bool = False,
    ):
        fan_in = c_in * kernel_size * kernel_size
        self.weight = Tensor(
            he_init(rng, (c_out, c_in, kernel_size, kernel_size), fan_in),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(c_out), requires_grad=True) if bias else None
        self.stride = stride
        self.pad = pad
        self.pad_mode = pad_mode

    def __call__(self, x: Tensor) -> Tensor:
        out = conv2d(x, self.weight, stride=self.stride, pad=self.pad, pad_mode=self.pad_mode)
        if self.bias is not None:
            out = out + self.bias.reshape(1, -1, 1, 1)
        return out


class ConvBnRelu(Module):
    """3x3 (or 1x1) convolution, batch norm, ReLU."""

    def __init__(self, c_in, c_out, rng, kernel_size=3, stride=1):
        pad = (kernel_size - 1) // 2
        self.conv = Conv2d(c_in, c_out, kernel_size, rng, stride=stride, pad=pad)
        self.bn = BatchNormState(c_out)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return batch_norm(self.conv(x), self.bn, training).relu()


def max_relative_gc(nodes: Tensor, graph: NeighborGraph) -> Tensor:
    """concat(x_i, max over neighbors j of (x_j - x_i)); doubles the channels."""
    n, c = nodes.shape
    if graph.neighbors.shape[0] != n:
        raise ValueError(
            f"graph has {graph.neighbors.shape[0]} rows for {n} nodes"
        )
    if graph.k < 1:
        raise ValueError("graph rows are empty")
    gathered = nodes.take(graph.neighbors.reshape(-1)).reshape(n, graph.k, c)
    rel = (gathered - nodes.reshape(n, 1, c)).max(axis=1)
    return T.concat([nodes, rel], axis=1)


class GrapherBlock(Module):
    """x -> W2(GC(relu(W1 x))) + x over a fixed neighbor graph."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.w1 = Linear(channels, channels, rng)
        self.w2 = Linear(2 * channels, channels, rng)

    def __call__(self, x: Tensor, graph: NeighborGraph) -> Tensor:
        h = self.w1(x).relu()
        return self.w2(max_relative_gc(h, graph)) + x


class FfnBlock(Module):
    """x -> W4(relu(W3 x)) + x with a 4x hidden expansion."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.w3 = Linear(channels, 4 * channels, rng)
        self.w4 = Linear(4 * channels, channels, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.w4(self.w3(x).relu()) + x


class CnnBlock(Module):
    """y -> convbnrelu(convbnrelu(y)) + y, shape preserving."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.conv1 = ConvBnRelu(channels, channels, rng)
        self.conv2 = ConvBnRelu(channels, channels, rng)

    def __call__(self, y: Tensor, training: bool) -> Tensor:
        return self.conv2(self.conv1(y, training), training) + y


class Stem(Module):
    """Two stride-2 conv-BN-ReLU stages: 1 -> C/2 -> C, spatial /4."""

    def __init__(self, channels: int, rng: np.random.Generator, in_channels: int = 1):
        if channels % 2 != 0:
            raise ConfigError(f"stem channels must be even, got {channels}")
        self.stage1 = ConvBnRelu(in_channels, channels // 2, rng, stride=2)
        self.stage2 = ConvBnRelu(channels // 2, channels, rng, stride=2)

    def __call__(self, image: Tensor, training: bool) -> Tensor:
        h, w = image.shape[-2], image.shape[-1]
        if h % 16 != 0 or w % 16 != 0:
            raise ConfigError(f"image dims must be divisible by 16, got {h}x{w}")
        return self.stage2(self.stage1(image, training), training)


class Downsample(Module):
    """Stride-2 transition between resolutions (conv-BN-ReLU)."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.conv = ConvBnRelu(c_in, c_out, rng, stride=2)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return self.conv(x, training)


def grid_to_nodes(feat: Tensor) -> Tensor:
    """C,h,w feature map -> (h*w),C node rows (row-major)."""
    c, h, w = feat.shape
    return feat.reshape(c, h * w).transpose()


def nodes_to_grid(nodes: Tensor, h: int, w: int) -> Tensor:
    """(h*w),C node rows -> C,h,w feature map."""
    c = nodes.shape[1]
    return nodes.transpose().reshape(c, h, w)
