"""Training objectives and Dynamic Weight Average task balancing."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .codec import BG, BIF, CONF
from .errors import GeometryError, NumericError

log = logging.getLogger(__name__)

BCE_EPS = 1e-7


@dataclass(frozen=True)
class GridLossParams:
    lambda_a: float = 5.0  # cells holding a junction
    lambda_b: float = 1.0  # empty cells
    class_term: str = "all"  # "all" cells or "object" cells only

    def __post_init__(self):
        if self.lambda_a < 0 or self.lambda_b < 0:
            raise ValueError("grid loss weights must be non-negative")
        if self.class_term not in ("all", "object"):
            raise ValueError("class_term must be 'all' or 'object'")


def _check_shapes(pred, target):
    if tuple(pred.shape) != tuple(target.shape):
        raise GeometryError(f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ")


def _as_tensor(x, like=None):
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if isinstance(like, torch.Tensor) else torch.float64
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def bce_loss(pred, target, eps: float = BCE_EPS) -> torch.Tensor:
    """Mean binary cross-entropy with predictions clamped to [eps, 1 - eps]."""
    pred = _as_tensor(pred)
    target = _as_tensor(target, pred).to(pred.dtype)
    _check_shapes(pred, target)
    p = pred.clamp(eps, 1.0 - eps)
    return -(target * torch.log(p) + (1.0 - target) * torch.log1p(-p)).mean()


def mse_heatmap_loss(pred, target) -> torch.Tensor:
    pred = _as_tensor(pred)
    target = _as_tensor(target, pred).to(pred.dtype)
    _check_shapes(pred, target)
    return ((pred - target) ** 2).mean()


def grid_loss(pred, target, params: GridLossParams = GridLossParams()) -> torch.Tensor:
    """Weighted squared-error grid loss, summed over cells.

    ``pred`` and ``target`` are ``[..., S, S, 4]``. Object cells are those
    whose target confidence is 1. Leading batch dimensions are averaged.
    """
    pred = _as_tensor(pred)
    target = _as_tensor(target, pred).to(pred.dtype)
    _check_shapes(pred, target)
    if pred.shape[-1] != 4:
        raise GeometryError("grid tensors need 4 channels")
    obj = (target[..., CONF] > 0.5).to(pred.dtype)
    conf_err = (target[..., CONF] - pred[..., CONF]) ** 2
    cls_err = ((target[..., BIF : BG + 1] - pred[..., BIF : BG + 1]) ** 2).sum(-1)
    if params.class_term == "object":
        cls_err = cls_err * obj
    per_cell = params.lambda_a * obj * conf_err + params.lambda_b * (1.0 - obj) * conf_err + cls_err
    per_sample = per_cell.sum(dim=(-2, -1))
    return per_sample.mean() if per_sample.ndim else per_sample


def _scalar(v) -> float:
    return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)


@dataclass
class TaskLossVector:
    l_rv: float | torch.Tensor
    l_faz: float | torch.Tensor
    l_rvj_heatmap: float | torch.Tensor
    l_rvj_grid: float | torch.Tensor

    def per_task(self) -> tuple:
        """(RV, FAZ, RVJ) task losses; the junction task sums its two branches."""
        return self.l_rv, self.l_faz, self.l_rvj_heatmap + self.l_rvj_grid

    def as_floats(self) -> dict[str, float]:
        return {
            "rv": _scalar(self.l_rv),
            "faz": _scalar(self.l_faz),
            "rvj_heatmap": _scalar(self.l_rvj_heatmap),
            "rvj_grid": _scalar(self.l_rvj_grid),
        }


@dataclass
class DwaState:
    n_tasks: int = 3
    temperature: float = 2.0
    history: list[list[float]] = field(default_factory=list)
    weights: list[float] | None = None

    def __post_init__(self):
        if self.weights is None:
            self.weights = [1.0] * self.n_tasks

    def to_dict(self) -> dict:
        return {
            "n_tasks": self.n_tasks,
            "temperature": self.temperature,
            "history": [list(h) for h in self.history],
            "weights": list(self.weights),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DwaState":
        return cls(d["n_tasks"], d["temperature"], [list(h) for h in d["history"]], list(d["weights"]))


def dwa_weights(prev: Sequence[float], prev2: Sequence[float], temperature: float = 2.0) -> list[float]:
    """Task weights from relative descent rates ``prev / prev2``; they sum to N."""
    n = len(prev)
    rates = np.asarray(prev, dtype=np.float64) / np.asarray(prev2, dtype=np.float64)
    z = rates / temperature
    e = np.exp(z - z.max())
    return [float(v) for v in n * e / e.sum()]


def dwa_update(state: DwaState, epoch_losses: Sequence[float]) -> DwaState:
    """Record one epoch's mean task losses and compute next epoch's weights.

    The first two epochs run with uniform weights. A zero loss in the older
    epoch makes the descent rate undefined; weights fall back to uniform.
    """
    losses = [float(v) for v in epoch_losses]
    if len(losses) != state.n_tasks:
        raise GeometryError(f"expected {state.n_tasks} task losses, got {len(losses)}")
    history = (state.history + [losses])[-2:]
    weights = [1.0] * state.n_tasks
    if len(history) == 2:
        prev2, prev = history
        if any(v == 0 for v in prev2):
            log.warning("degenerate history: zero task loss, using uniform task weights")
        else:
            weights = dwa_weights(prev, prev2, state.temperature)
    return DwaState(state.n_tasks, state.temperature, history, weights)


def total_loss(v: TaskLossVector, weights: DwaState | Sequence[float]):
    lams = weights.weights if isinstance(weights, DwaState) else list(weights)
    tasks = v.per_task()
    if len(lams) != len(tasks):
        raise GeometryError(f"{len(lams)} weights for {len(tasks)} tasks")
    for t in tasks:
        if not math.isfinite(_scalar(t)):
            raise NumericError("non-finite task loss")
    total = 0.0
    for lam, t in zip(lams, tasks):
        total = total + lam * t
    return total
