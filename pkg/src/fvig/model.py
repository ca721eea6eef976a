"""The full patch-graph classifier.

Images are split into non-overlapping patches and embedded as graph nodes.
A stack of blocks follows, each block building its own neighborhood graph
from its input features (optionally attention-weighted and dilated),
optionally running the clustering update, then applying a max-relative
graph convolution with a residual; every graph block is followed by a
feed-forward block. A mean-pool over nodes and a linear head produce the
class logits.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .cluster import ClusterParams, cluster_block
from .graph import build_graph, dilation_rates
from .saliency import ChannelSaliencyParams, channel_saliency_forward
from .tensor import (
    Tensor,
    concat_lastdim,
    dropout,
    gather_neighbors,
    leaky_relu,
    matmul,
    reshape,
)


class ConfigError(ValueError):
    """Invalid or inconsistent model configuration."""


@dataclass
class ModelConfig:
    image_size: int = 32
    patch_size: int = 8
    dim: int = 32
    latent_dim: int = 0          # 0 means "same as dim"
    depth: int = 2
    k: int = 4
    heads: int = 4
    dilation_schedule: str = "step4"
    leaky_slope: float = 0.2
    dropout: float = 0.1
    num_classes: int = 9
    use_channel_saliency: bool = True
    use_spatial_saliency: bool = True
    use_dilation: bool = True
    use_positional_embedding: bool = True

    @property
    def resolved_latent(self) -> int:
        return self.latent_dim if self.latent_dim else self.dim

    @property
    def num_nodes(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    def rates(self) -> list[int]:
        if not self.use_dilation:
            return [1] * self.depth
        return dilation_rates(self.depth, self.dilation_schedule)

    def validate(self) -> None:
        if self.image_size < 1 or self.patch_size < 1 or self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} must be a positive multiple of patch_size {self.patch_size}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.dim < 1 or self.resolved_latent < 1:
            raise ConfigError(f"dim {self.dim} and latent_dim {self.resolved_latent} must be >= 1")
        if self.heads < 1 or self.dim % self.heads or self.resolved_latent % self.heads:
            raise ConfigError(f"heads {self.heads} must divide dim {self.dim} and latent_dim {self.resolved_latent}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError(f"leaky_slope must be in (0, 1), got {self.leaky_slope}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        n = self.num_nodes
        try:
            rates = self.rates()
        except ValueError as err:
            raise ConfigError(str(err)) from None
        if self.k < 1 or self.k * max(rates) > n:
            raise ConfigError(f"k * max dilation = {self.k}*{max(rates)} exceeds node count {n}")

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        values = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"bad config line (expected key=value): '{line}'")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in known:
                raise ConfigError(f"unknown config key '{key}'")
            values[key] = parse_config_value(key, val, known[key])
        return cls(**values)


def parse_config_value(key: str, val: str, typ) -> object:
    name = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    if name == "bool":
        low = val.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"bad boolean for '{key}': '{val}'")
    if name == "int":
        try:
            return int(val)
        except ValueError:
            raise ConfigError(f"bad integer for '{key}': '{val}'") from None
    if name == "float":
        try:
            return float(val)
        except ValueError:
            raise ConfigError(f"bad float for '{key}': '{val}'") from None
    return val


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return Tensor(rng.normal(0.0, std, size=(fan_in, fan_out)), requires_grad=True)


def _zeros(n: int) -> Tensor:
    return Tensor(np.zeros(n), requires_grad=True)


class NodeNorm:
    """Per-node feature standardization with a learned gain and bias.

    Statistics are taken over the channel dimension of each node, so the
    result is independent of batch composition.
    """

    EPS = 1e-6

    def __init__(self, dim: int):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = _zeros(dim)

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered * ((var + self.EPS) ** -0.5) * self.gain + self.bias

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield "gain", self.gain
        yield "bias", self.bias


def max_relative_aggregate(x: Tensor, adjacency: np.ndarray) -> Tensor:
    """Concat of each node's feature with the elementwise max of (neighbor - node)."""
    b, n, d = x.shape
    neighbors = gather_neighbors(x, adjacency)
    relative = neighbors - reshape(x, (b, n, 1, d))
    return concat_lastdim([x, relative.max(axis=2)])


class GrapherBlock:
    """Graph construction + optional clustering + max-relative convolution, residual."""

    def __init__(self, config: ModelConfig, dilation: int, rng: np.random.Generator):
        d = config.dim
        self.config = config
        self.dilation = dilation
        self.norm = NodeNorm(d)
        self.saliency = (
            ChannelSaliencyParams.initialize(d, config.resolved_latent, rng, config.leaky_slope)
            if config.use_channel_saliency
            else None
        )
        self.cluster = (
            ClusterParams.initialize(d, config.resolved_latent, config.heads, rng)
            if config.use_spatial_saliency
            else None
        )
        self.agg_weight = _glorot(rng, 2 * d, d)
        self.agg_bias = _zeros(d)
        self.update_weight = _glorot(rng, d, d)
        self.update_bias = _zeros(d)

    def forward(
        self, x: Tensor, training: bool = False, rng: np.random.Generator | None = None
    ) -> tuple[Tensor, np.ndarray]:
        cfg = self.config
        normed = self.norm(x)
        alpha = channel_saliency_forward(normed, self.saliency) if self.saliency is not None else None
        adjacency = build_graph(
            normed.data,
            cfg.k,
            alpha=alpha.data if alpha is not None else None,
            dilation=self.dilation,
        )
        h = cluster_block(normed, adjacency, self.cluster) if self.cluster is not None else normed
        agg = max_relative_aggregate(h, adjacency)
        y = leaky_relu(matmul(agg, self.agg_weight) + self.agg_bias, cfg.leaky_slope)
        y = matmul(y, self.update_weight) + self.update_bias
        y = dropout(y, cfg.dropout, training, rng)
        return x + y, adjacency

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        for name, t in self.norm.parameters():
            yield f"norm.{name}", t
        if self.saliency is not None:
            for name, t in self.saliency.parameters():
                yield f"saliency.{name}", t
        if self.cluster is not None:
            for name, t in self.cluster.parameters():
                yield f"cluster.{name}", t
        yield "agg.weight", self.agg_weight
        yield "agg.bias", self.agg_bias
        yield "update.weight", self.update_weight
        yield "update.bias", self.update_bias


class FfnBlock:
    """Two-layer feed-forward expansion (dim -> 4*dim -> dim) with residual."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        d = config.dim
        self.config = config
        self.norm = NodeNorm(d)
        self.w1 = _glorot(rng, d, 4 * d)
        self.b1 = _zeros(4 * d)
        self.w2 = _glorot(rng, 4 * d, d)
        self.b2 = _zeros(d)

    def forward(self, x: Tensor, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        normed = self.norm(x)
        y = leaky_relu(matmul(normed, self.w1) + self.b1, self.config.leaky_slope)
        y = matmul(y, self.w2) + self.b2
        y = dropout(y, self.config.dropout, training, rng)
        return x + y

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        for name, t in self.norm.parameters():
            yield f"norm.{name}", t
        yield "w1", self.w1
        yield "b1", self.b1
        yield "w2", self.w2
        yield "b2", self.b2


def patchify(images: np.ndarray, patch_size: int) -> np.ndarray:
    """Flatten non-overlapping patches, raster order, channel-major within a patch."""
    b, c, h, w = images.shape
    gh, gw = h // patch_size, w // patch_size
    x = images.reshape(b, c, gh, patch_size, gw, patch_size)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(b, gh * gw, c * patch_size * patch_size)


class FViGModel:
    """Patch embedding, stacked (grapher + ffn) blocks, mean-pool classifier."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator | int = 0):
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(int(rng))
        config.validate()
        self.config = config
        d = config.dim
        patch_dim = 3 * config.patch_size**2
        self.embed_weight = _glorot(rng, patch_dim, d)
        self.embed_bias = _zeros(d)
        self.positional = (
            Tensor(rng.normal(0.0, 0.02, size=(config.num_nodes, d)), requires_grad=True)
            if config.use_positional_embedding
            else None
        )
        rates = config.rates()
        self.blocks: list[tuple[GrapherBlock, FfnBlock]] = [
            (GrapherBlock(config, rates[i], rng), FfnBlock(config, rng)) for i in range(config.depth)
        ]
        self.head_weight = _glorot(rng, d, config.num_classes)
        self.head_bias = _zeros(config.num_classes)

    def forward(
        self,
        images: np.ndarray,
        training: bool = False,
        rng: np.random.Generator | None = None,
        adjacency_out: list | None = None,
    ) -> Tensor:
        cfg = self.config
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 4 or images.shape[1] != 3 or images.shape[2:] != (cfg.image_size, cfg.image_size):
            raise ConfigError(
                f"expected images[B,3,{cfg.image_size},{cfg.image_size}], got shape {images.shape}"
            )
        x = matmul(Tensor(patchify(images, cfg.patch_size)), self.embed_weight) + self.embed_bias
        if self.positional is not None:
            x = x + self.positional
        for grapher, ffn in self.blocks:
            x, adjacency = grapher.forward(x, training, rng)
            if adjacency_out is not None:
                adjacency_out.append(adjacency)
            x = ffn.forward(x, training, rng)
        pooled = x.mean(axis=1)
        return matmul(pooled, self.head_weight) + self.head_bias

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [("embed.weight", self.embed_weight), ("embed.bias", self.embed_bias)]
        if self.positional is not None:
            out.append(("positional", self.positional))
        for i, (grapher, ffn) in enumerate(self.blocks):
            out.extend((f"blocks.{i}.grapher.{n}", t) for n, t in grapher.parameters())
            out.extend((f"blocks.{i}.ffn.{n}", t) for n, t in ffn.parameters())
        out.append(("head.weight", self.head_weight))
        out.append(("head.bias", self.head_bias))
        return out

    def zero_grad(self) -> None:
        for _, t in self.named_parameters():
            t.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, t.data.copy()) for name, t in self.named_parameters())

    def load_state_dict(self, arrays: dict) -> None:
        params = OrderedDict(self.named_parameters())
        if set(arrays) != set(params):
            missing = sorted(set(params) - set(arrays))
            extra = sorted(set(arrays) - set(params))
            raise CheckpointError(f"parameter names do not match: missing={missing}, unexpected={extra}")
        for name, t in params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise CheckpointError(f"shape of '{name}' is {arr.shape}, expected {t.data.shape}")
            t.data = arr.copy()

    def save(self, path) -> None:
        save_checkpoint(path, self.state_dict(), header=self.config.to_text())

    @classmethod
    def load(cls, path) -> "FViGModel":
        header, arrays = load_checkpoint(path)
        try:
            config = ModelConfig.from_text(header)
            config.validate()
        except ConfigError as err:
            raise CheckpointError(f"bad config header in '{path}': {err}") from None
        model = cls(config, rng=np.random.default_rng(0))
        model.load_state_dict(arrays)
        return model


def count_params(config: ModelConfig) -> "OrderedDict[str, int]":
    """Analytic parameter census by sub-module; 'total' equals the checkpoint float count."""
    config.validate()
    d = config.dim
    latent = config.resolved_latent
    depth = config.depth
    patch_dim = 3 * config.patch_size**2
    census: "OrderedDict[str, int]" = OrderedDict()
    census["patch_embed"] = patch_dim * d + d
    census["positional_embedding"] = config.num_nodes * d if config.use_positional_embedding else 0
    census["grapher_norm"] = depth * 2 * d
    census["channel_saliency"] = depth * (d * latent + 2 * latent) if config.use_channel_saliency else 0
    census["spatial_cluster"] = depth * (2 * config.heads + 2 * d * latent) if config.use_spatial_saliency else 0
    census["graph_conv"] = depth * (2 * d * d + d + d * d + d)
    census["ffn"] = depth * (2 * d + d * 4 * d + 4 * d + 4 * d * d + d)
    census["head"] = d * config.num_classes + config.num_classes
    census["total"] = sum(census.values())
    return census
