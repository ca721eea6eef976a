"""Channel-attention scores that reweight distances during graph construction.

Node features are projected into a latent space, scored once as potential
centers and once as potential neighbors, and the two score vectors are
broadcast-added into an N x N matrix that a LeakyReLU + row softmax turns
into a row-stochastic attention matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .tensor import Tensor, broadcast_add, leaky_relu, matmul, softmax_lastdim, transpose_last2


@dataclass
class ChannelSaliencyParams:
    weight: Tensor          # (dim, latent) feature projection
    self_score: Tensor      # (latent, 1) score of a node as center
    neighbor_score: Tensor  # (latent, 1) score of a node as neighbor
    leaky_slope: float = 0.2

    @classmethod
    def initialize(cls, dim: int, latent_dim: int, rng: np.random.Generator, leaky_slope: float = 0.2):
        def glorot(fan_in, fan_out):
            std = math.sqrt(2.0 / (fan_in + fan_out))
            return Tensor(rng.normal(0.0, std, size=(fan_in, fan_out)), requires_grad=True)

        return cls(
            weight=glorot(dim, latent_dim),
            self_score=glorot(latent_dim, 1),
            neighbor_score=glorot(latent_dim, 1),
            leaky_slope=leaky_slope,
        )

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield "weight", self.weight
        yield "self_score", self.self_score
        yield "neighbor_score", self.neighbor_score


def project_nodes(features: Tensor, weight: Tensor) -> Tensor:
    """Map node features [B,N,D] into the latent scoring space [B,N,D']."""
    return matmul(features, weight)


def saliency_scores(projected: Tensor, params: ChannelSaliencyParams) -> tuple[Tensor, Tensor]:
    """Per-node center score [B,N,1] and neighbor score laid out as a row [B,1,N]."""
    s_self = matmul(projected, params.self_score)
    s_neighbor = transpose_last2(matmul(projected, params.neighbor_score))
    return s_self, s_neighbor


def saliency_matrix(self_scores: Tensor, neighbor_scores: Tensor) -> Tensor:
    """Broadcast column + row scores into the pairwise matrix: out[i,j] = self[i] + neighbor[j]."""
    return broadcast_add(self_scores, neighbor_scores)


def attention_normalize(scores: Tensor, leaky_slope: float = 0.2) -> Tensor:
    """Row-stochastic attention: softmax over all columns of LeakyReLU(scores)."""
    return softmax_lastdim(leaky_relu(scores, leaky_slope))


def channel_saliency_forward(features: Tensor, params: ChannelSaliencyParams) -> Tensor:
    """Full chain from features [B,N,D] to the attention matrix [B,N,N]."""
    projected = project_nodes(features, params.weight)
    s_self, s_neighbor = saliency_scores(projected, params)
    return attention_normalize(saliency_matrix(s_self, s_neighbor), params.leaky_slope)
