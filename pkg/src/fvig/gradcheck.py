"""Central-finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic and numeric gradients.

    ``max_rel_error`` uses |analytic - numeric| / max(|analytic|, |numeric|, 1),
    i.e. relative error for O(1)-or-larger gradients and absolute error below
    that scale, which keeps finite-difference noise on zero gradients from
    registering as failure.
    """

    max_rel_error: float
    worst_index: int
    analytic_at_worst: float
    numeric_at_worst: float
    tol: float
    num_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1.0)


def grad_check(
    f: Callable[[Tensor], Tensor],
    x,
    h: float = 1e-6,
    tol: float = 1e-4,
    indices: Sequence[int] | None = None,
) -> GradCheckReport:
    """Compare df/dx from ``backward`` against central differences.

    ``f`` maps a tensor to a scalar tensor and must be deterministic.
    ``indices`` restricts the numeric probe to the given flat positions of
    ``x`` (all positions when omitted).
    """
    if h <= 0:
        raise ValueError(f"step size h must be positive, got {h}")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    f(leaf).backward()
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)
    analytic = analytic.ravel()

    if indices is None:
        indices = range(base.size)
    worst = (-1.0, -1, 0.0, 0.0)
    checked = 0
    for i in indices:
        probe = base.copy()
        probe.flat[i] += h
        fp = float(f(Tensor(probe)).data)
        probe.flat[i] -= 2 * h
        fm = float(f(Tensor(probe)).data)
        numeric = (fp - fm) / (2 * h)
        err = relative_error(analytic[i], numeric)
        if err > worst[0]:
            worst = (err, int(i), float(analytic[i]), numeric)
        checked += 1
    return GradCheckReport(
        max_rel_error=worst[0],
        worst_index=worst[1],
        analytic_at_worst=worst[2],
        numeric_at_worst=worst[3],
        tol=tol,
        num_checked=checked,
    )


def model_grad_check(
    model,
    loss_fn: Callable[[], Tensor],
    num_params: int = 20,
    h: float = 1e-6,
    tol: float = 1e-4,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Spot-check randomly selected model parameters against central differences.

    ``loss_fn`` must recompute the scalar loss from the model's current
    parameter values each time it is called.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    params = list(model.named_parameters())
    model.zero_grad()
    loss_fn().backward()

    sizes = np.array([t.size for _, t in params])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(num_params, total), replace=False)
    bounds = np.cumsum(sizes)

    worst = (-1.0, -1, 0.0, 0.0)
    for flat in sorted(int(p) for p in picks):
        slot = int(np.searchsorted(bounds, flat, side="right"))
        offset = flat - (0 if slot == 0 else int(bounds[slot - 1]))
        tensor = params[slot][1]
        analytic = 0.0 if tensor.grad is None else float(tensor.grad.flat[offset])
        keep = tensor.data.flat[offset]
        tensor.data.flat[offset] = keep + h
        fp = float(loss_fn().data)
        tensor.data.flat[offset] = keep - h
        fm = float(loss_fn().data)
        tensor.data.flat[offset] = keep
        numeric = (fp - fm) / (2 * h)
        err = relative_error(analytic, numeric)
        if err > worst[0]:
            worst = (err, flat, analytic, numeric)
    return GradCheckReport(
        max_rel_error=worst[0],
        worst_index=worst[1],
        analytic_at_worst=worst[2],
        numeric_at_worst=worst[3],
        tol=tol,
        num_checked=len(picks),
    )
