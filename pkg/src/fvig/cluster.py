"""Node-level neighborhood clustering: aggregate, then dispatch.

Each node's neighborhood is pooled into a cluster center; members are
gate-weighted by their cosine similarity to the center and combined into a
cluster feature (per head, on channel slices). The cluster feature is then
dispatched back to every member as a gated residual update, mean-combined
over the clusters a node belongs to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .tensor import (
    Tensor,
    cosine_similarity,
    gather_neighbors,
    matmul,
    reshape,
    scatter_add_neighbors,
    sigmoid,
)


@dataclass
class ClusterParams:
    gate_scale: Tensor   # (heads,) similarity gain inside the gate, init 1
    gate_shift: Tensor   # (heads,) gate offset, init 0
    weight_in: Tensor    # (dim, latent) aggregation projection
    weight_out: Tensor   # (latent, dim) dispatch projection
    heads: int = 1
    sim_eps: float = 1e-8

    def __post_init__(self):
        dim, latent = self.weight_in.shape
        if self.heads < 1:
            raise ValueError(f"head count must be >= 1, got {self.heads}")
        if dim % self.heads or latent % self.heads:
            raise ValueError(f"head count {self.heads} must divide dim {dim} and latent {latent}")
        if self.sim_eps <= 0:
            raise ValueError(f"sim_eps must be positive, got {self.sim_eps}")

    @classmethod
    def initialize(cls, dim: int, latent_dim: int, heads: int, rng: np.random.Generator, sim_eps: float = 1e-8):
        def glorot(fan_in, fan_out):
            std = math.sqrt(2.0 / (fan_in + fan_out))
            return Tensor(rng.normal(0.0, std, size=(fan_in, fan_out)), requires_grad=True)

        # unit gain / zero shift starts every gate near sigmoid(similarity)
        return cls(
            gate_scale=Tensor(np.ones(heads), requires_grad=True),
            gate_shift=Tensor(np.zeros(heads), requires_grad=True),
            weight_in=glorot(dim, latent_dim),
            weight_out=glorot(latent_dim, dim),
            heads=heads,
            sim_eps=sim_eps,
        )

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield "gate_scale", self.gate_scale
        yield "gate_shift", self.gate_shift
        yield "weight_in", self.weight_in
        yield "weight_out", self.weight_out


def cluster_centers(features: Tensor, adjacency: np.ndarray) -> Tensor:
    """Average-pooled neighborhood feature per node: [B,N,D]."""
    return gather_neighbors(features, adjacency).mean(axis=2)


def member_similarity(
    centers: Tensor, features: Tensor, adjacency: np.ndarray, params: ClusterParams
) -> tuple[Tensor, Tensor]:
    """Per-head cosine similarity s[B,N,K,M] of each member to its center, and gates sigmoid(scale*s + shift)."""
    b, n, k = adjacency.shape
    m = params.heads
    dh = features.shape[-1] // m
    members = gather_neighbors(features, adjacency)
    member_heads = reshape(members, (b, n, k, m, dh))
    center_heads = reshape(centers, (b, n, 1, m, dh))
    s = cosine_similarity(center_heads, member_heads, eps=params.sim_eps)
    g = sigmoid(s * params.gate_scale + params.gate_shift)
    return s, g


def aggregate_single(center: Tensor, members: Tensor, gates: Tensor) -> Tensor:
    """Gate-weighted combination (center + sum_j g_j * member_j) / (1 + sum_j g_j).

    ``center`` is [..., D], ``members`` [..., K, D], ``gates`` [..., K].
    """
    lam = 1.0 + gates.sum(axis=-1)
    weighted = (reshape(gates, gates.shape + (1,)) * members).sum(axis=-2)
    return (center + weighted) / reshape(lam, lam.shape + (1,))


def aggregate_multihead(
    features: Tensor, adjacency: np.ndarray, params: ClusterParams
) -> tuple[Tensor, Tensor]:
    """Cluster feature per node [B,N,latent] and the member gates [B,N,K,M].

    Similarity and gating run on channel slices of the raw features; the
    shared projection is applied to full vectors and its output is sliced
    per head, then the per-head combinations are concatenated.
    """
    b, n, k = adjacency.shape
    m = params.heads
    latent = params.weight_in.shape[1]
    ph = latent // m

    members = gather_neighbors(features, adjacency)
    centers = members.mean(axis=2)
    _, gates = member_similarity(centers, features, adjacency, params)

    lam = 1.0 + gates.sum(axis=2)                                      # [B,N,M]
    proj_centers = reshape(matmul(centers, params.weight_in), (b, n, m, ph))
    proj_members = reshape(matmul(members, params.weight_in), (b, n, k, m, ph))
    gated_sum = (reshape(gates, (b, n, k, m, 1)) * proj_members).sum(axis=2)
    head_out = (proj_centers + gated_sum) / reshape(lam, (b, n, m, 1))
    return reshape(head_out, (b, n, latent)), gates


def dispatch(
    features: Tensor,
    adjacency: np.ndarray,
    clustered: Tensor,
    gates: Tensor,
    params: ClusterParams,
    combine: str = "mean",
) -> Tensor:
    """Send each cluster's feature back to its members as a gated residual.

    A node selected by several neighborhoods receives the mean of their
    contributions (``combine="mean"``, keeps the update magnitude
    independent of in-degree) or their plain sum (``combine="sum"``).
    """
    if combine not in ("mean", "sum"):
        raise ValueError(f"combine must be 'mean' or 'sum', got '{combine}'")
    b, n, k = adjacency.shape
    m = params.heads
    latent = clustered.shape[-1]
    ph = latent // m

    cluster_heads = reshape(clustered, (b, n, 1, m, ph))
    gated = reshape(gates, (b, n, k, m, 1)) * cluster_heads
    delta = matmul(reshape(gated, (b, n, k, latent)), params.weight_out)
    scattered = scatter_add_neighbors(delta, adjacency, n)
    if combine == "mean":
        counts = np.zeros((b, n))
        np.add.at(counts, (np.arange(b)[:, None, None], adjacency), 1.0)
        scattered = scattered * Tensor(1.0 / np.maximum(counts, 1.0)[:, :, None])
    return features + scattered


def cluster_block(features: Tensor, adjacency: np.ndarray, params: ClusterParams, combine: str = "mean") -> Tensor:
    """Aggregate then dispatch: the full clustering update over one adjacency."""
    clustered, gates = aggregate_multihead(features, adjacency, params)
    return dispatch(features, adjacency, clustered, gates, params, combine=combine)
