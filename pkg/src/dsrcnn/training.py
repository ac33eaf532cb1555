"""Class-balanced cross-entropy on every side output plus the fused map, minimized by SGD."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .model import ForwardResult, Model, forward
from .tensor import ShapeError, Tensor, add_scalars, backward

PRED_CLAMP = 1e-9


class TrainingAborted(FloatingPointError):
    """A gradient or loss went non-finite.  ``history`` holds the losses recorded so far."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history or []


@dataclass
class LossBreakdown:
    side_losses: list[float]
    fuse_loss: float
    total: float

    def as_row(self) -> list[float]:
        return [*self.side_losses, self.fuse_loss, self.total]


@dataclass
class SgdConfig:
    learning_rate: float = 2e-5
    momentum: float = 0.9
    weight_decay: float = 0.0
    iterations: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def class_balance_alpha(gt) -> float:
    """Fraction of background pixels, |Y-| / (|Y+| + |Y-|)."""
    gt = np.asarray(gt)
    if gt.size == 0:
        raise ValueError("ground truth is empty")
    positives = int(np.count_nonzero(gt))
    return (gt.size - positives) / gt.size


def balanced_bce(pred: Tensor, gt) -> Tensor:
    """Class-balanced cross-entropy summed over pixels, as a scalar tensor.

    Predictions are clamped to [1e-9, 1 - 1e-9] inside the logarithms; the
    gradient is taken at the clamped value and passed straight through.
    """
    gt = np.asarray(gt)
    if gt.ndim == 2:
        gt = gt[None, None]
    if gt.shape != pred.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    pos = gt > 0.5
    alpha = class_balance_alpha(pos)
    p = np.clip(pred.data, PRED_CLAMP, 1 - PRED_CLAMP)
    loss = -alpha * np.log(p[pos]).sum() - (1 - alpha) * np.log1p(-p[~pos]).sum()

    def _backward(g):
        d = np.where(pos, -alpha / p, (1 - alpha) / (1 - p))
        return (g * d,)

    return Tensor._from_op(np.full((1, 1, 1, 1), loss), "balanced_bce", (pred,), _backward)


def total_loss(result: ForwardResult, gt) -> tuple[Tensor, LossBreakdown]:
    """Sum of the five side losses and the fused loss.

    Returns the differentiable total and its float breakdown.
    """
    sides = [balanced_bce(m, gt) for m in result.side_maps]
    fuse = balanced_bce(result.fused_map, gt)
    total = add_scalars([*sides, fuse])
    breakdown = LossBreakdown(
        side_losses=[float(s.data[0, 0, 0, 0]) for s in sides],
        fuse_loss=float(fuse.data[0, 0, 0, 0]),
        total=float(total.data[0, 0, 0, 0]),
    )
    return total, breakdown


def compute_gradients(model: Model, image, gt, train: bool = False,
                      rng: Optional[np.random.Generator] = None) -> tuple[dict[str, np.ndarray], LossBreakdown]:
    model.zero_grad()
    result = forward(model, image, train=train, rng=rng)
    loss, breakdown = total_loss(result, gt)
    backward(loss, model.parameters())
    grads = {name: p.grad for name, p in model.named_parameters()}
    return grads, breakdown


def sgd_step(model: Model, grads: dict[str, np.ndarray], cfg: SgdConfig,
             velocity: Optional[dict[str, np.ndarray]] = None) -> dict[str, np.ndarray]:
    """Momentum SGD, in place on ``model``.  Returns the updated velocity."""
    velocity = {} if velocity is None else velocity
    named = model.named_parameters()
    for name, p in named:
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingAborted(f"non-finite gradient in {name}")
    for name, p in named:
        g = grads[name]
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p.data
        v = velocity.get(name)
        v = -cfg.learning_rate * g if v is None else cfg.momentum * v - cfg.learning_rate * g
        velocity[name] = v
        p.data = p.data + v
    return velocity


def train(model: Model, corpus: Sequence[tuple[np.ndarray, np.ndarray]], cfg: SgdConfig,
          callback: Optional[Callable[[int, LossBreakdown], None]] = None) -> tuple[Model, list[LossBreakdown]]:
    """Single-image SGD over ``corpus`` for ``cfg.iterations`` steps.

    Images are ``(1, c, h, w)`` arrays, masks ``(h, w)`` binary arrays.  The
    visiting order is reshuffled each epoch from ``cfg.seed``; the same seed
    also drives dropout.
    """
    if not corpus:
        raise ValueError("training corpus is empty")
    for i, (_, gt) in enumerate(corpus):
        if not np.all((gt == 0) | (gt == 1)):
            raise ValueError(f"ground truth {i} is not binary")
    rng = np.random.default_rng(cfg.seed)
    velocity: dict[str, np.ndarray] = {}
    history: list[LossBreakdown] = []
    order: list[int] = []
    for it in range(cfg.iterations):
        if not order:
            order = list(rng.permutation(len(corpus)))
        image, gt = corpus[order.pop(0)]
        grads, breakdown = compute_gradients(model, image, gt, train=True, rng=rng)
        if not np.isfinite(breakdown.total):
            raise TrainingAborted(f"non-finite loss at iteration {it}", history)
        history.append(breakdown)
        if callback is not None:
            callback(it, breakdown)
        try:
            velocity = sgd_step(model, grads, cfg, velocity)
        except TrainingAborted as exc:
            raise TrainingAborted(f"iteration {it}: {exc}", history) from None
    model.zero_grad()
    return model, history
