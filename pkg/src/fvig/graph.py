"""Neighborhood construction over node features.

Adjacency is a per-node index list: plain top-k by squared Euclidean
distance, attention-weighted top-k, or a dilated variant that strides over
a widened candidate list. Selection is a hard decision; gradients never
flow through the chosen indices, only through values gathered with them.

Every row starts with the node's own index, and ranking ties break toward
the smaller index (stable sort), so construction is fully deterministic.
"""

from __future__ import annotations

import numpy as np

ROW_SUM_TOL = 1e-6


def pairwise_sq_euclidean(features: np.ndarray) -> np.ndarray:
    """Per-batch matrix of squared Euclidean distances between node features.

    Computed from explicit differences, so the result is exactly symmetric
    with an exactly zero diagonal.
    """
    v = np.asarray(features, dtype=np.float64)
    if v.ndim != 3:
        raise ValueError(f"expected features[B,N,D], got shape {v.shape}")
    diff = v[:, :, None, :] - v[:, None, :, :]
    return np.einsum("bijd,bijd->bij", diff, diff)


def _check_k(k: int, n: int) -> None:
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range [1, {n}]")


def _ranked(weights: np.ndarray, m: int) -> np.ndarray:
    """First ``m`` neighbors per row: self first, others by ascending (weight, index)."""
    b, n, _ = weights.shape
    w = np.array(weights, dtype=np.float64)
    di = np.arange(n)
    w[:, di, di] = np.inf  # self is prepended explicitly, keep it out of the sort
    order = np.argsort(w, axis=-1, kind="stable")[:, :, : m - 1]
    self_col = np.broadcast_to(di[None, :, None], (b, n, 1))
    return np.concatenate([self_col, order], axis=-1).astype(np.int64)


def knn_adjacency(dist: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest nodes per row (self included, at position 0)."""
    dist = np.asarray(dist, dtype=np.float64)
    _check_k(k, dist.shape[-1])
    return _ranked(dist, k)


def saliency_adjacency(alpha: np.ndarray, dist: np.ndarray, k: int) -> np.ndarray:
    """Top-k under the attention-weighted metric: smallest ``alpha * dist`` per row.

    ``alpha`` must be row-stochastic; a row-constant ``alpha`` reproduces
    ``knn_adjacency`` since positive scaling preserves the ordering.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    dist = np.asarray(dist, dtype=np.float64)
    if alpha.shape != dist.shape:
        raise ValueError(f"alpha shape {alpha.shape} does not match distance shape {dist.shape}")
    _check_k(k, dist.shape[-1])
    row_sums = alpha.sum(axis=-1)
    if np.any(np.abs(row_sums - 1.0) > ROW_SUM_TOL):
        worst = float(np.abs(row_sums - 1.0).max())
        raise ValueError(f"attention rows must sum to 1 within {ROW_SUM_TOL}, worst deviation {worst:.3e}")
    return _ranked(alpha * dist, k)


def dilated_select(dist: np.ndarray, k: int, d: int) -> np.ndarray:
    """Every d-th entry of the k*d nearest ordered candidates (self survives at 0)."""
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[-1]
    if d < 1:
        raise ValueError(f"dilation must be >= 1, got {d}")
    if k < 1 or k * d > n:
        raise ValueError(f"k*d = {k}*{d} exceeds node count {n}")
    return _ranked(dist, k * d)[:, :, ::d]


def build_graph(
    features: np.ndarray,
    k: int,
    alpha: np.ndarray | None = None,
    dilation: int = 1,
) -> np.ndarray:
    """Distance computation + (optionally weighted) top-k + dilation in one call."""
    dist = pairwise_sq_euclidean(features)
    n = dist.shape[-1]
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    if k < 1 or k * dilation > n:
        raise ValueError(f"k*dilation = {k}*{dilation} exceeds node count {n}")
    if alpha is not None:
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.shape != dist.shape:
            raise ValueError(f"alpha shape {alpha.shape} does not match distance shape {dist.shape}")
        row_sums = alpha.sum(axis=-1)
        if np.any(np.abs(row_sums - 1.0) > ROW_SUM_TOL):
            worst = float(np.abs(row_sums - 1.0).max())
            raise ValueError(f"attention rows must sum to 1 within {ROW_SUM_TOL}, worst deviation {worst:.3e}")
        weights = alpha * dist
    else:
        weights = dist
    return _ranked(weights, k * dilation)[:, :, ::dilation]


def dilation_rates(depth: int, schedule: str = "step4") -> list[int]:
    """Per-layer dilation rates.

    ``step4``   — starts at 1, +1 every 4 layers, capped at 4.
    ``range25`` — starts at 2, +1 every 4 layers, capped at 5.
    Anything else is parsed as an explicit comma-separated list whose
    length must equal ``depth``.
    """
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    if schedule == "step4":
        return [min(4, 1 + i // 4) for i in range(depth)]
    if schedule == "range25":
        return [min(5, 2 + i // 4) for i in range(depth)]
    try:
        rates = [int(part) for part in schedule.split(",")]
    except ValueError:
        raise ValueError(f"unknown dilation schedule '{schedule}'") from None
    if len(rates) != depth:
        raise ValueError(f"dilation list has {len(rates)} entries but depth is {depth}")
    if any(r < 1 for r in rates):
        raise ValueError(f"dilation rates must be >= 1, got {rates}")
    return rates


def export_record(image_id: str, layer: int, center_index: int, neighbors, dilation: int, k: int) -> dict:
    """JSON-ready description of one node's neighborhood at one layer."""
    return {
        "image_id": image_id,
        "layer": int(layer),
        "center_index": int(center_index),
        "neighbor_indices": [int(j) for j in neighbors],
        "dilation": int(dilation),
        "k": int(k),
    }
