"""Central finite-difference checks against the analytic backward pass."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .model import Model, forward
from .tensor import Tensor, backward, weighted_sum
from .training import compute_gradients, total_loss


def numerical_gradient(fn: Callable[[], float], array: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """d fn / d array by central differences, perturbing ``array`` in place."""
    if not array.flags.c_contiguous:
        raise ValueError("array must be C-contiguous to be perturbed in place")
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = fn()
        flat[i] = orig - eps
        down = fn()
        flat[i] = orig
        out[i] = (up - down) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """||a - n|| / max(||a||, ||n||); zero when both norms fall below ``floor``."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_op(fn: Callable[..., Tensor], inputs: list[np.ndarray], eps: float = 1e-5,
             seed: int = 0) -> list[float]:
    """Gradient check of ``sum(w * fn(*inputs))`` for a fixed random ``w``.

    Returns one relative error per input.
    """
    tensors = [Tensor(x, requires_grad=True) for x in inputs]
    out = fn(*tensors)
    weights = np.random.default_rng(seed).standard_normal(out.shape)

    def scalar() -> float:
        return float((fn(*[Tensor(t.data) for t in tensors]).data * weights).sum())

    backward(weighted_sum(out, weights), tensors)
    return [relative_error(t.grad, numerical_gradient(scalar, t.data, eps)) for t in tensors]


def _graph(root: Tensor) -> list[Tensor]:
    seen, order, stack = set(), [], [root]
    while stack:
        node = stack.pop()
        if node.id in seen:
            continue
        seen.add(node.id)
        order.append(node)
        stack.extend(node.parents)
    return sorted(order, key=lambda t: t.id)


def _pool_windows(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    oh, ow = -(-h // 2), -(-w // 2)
    padded = np.full((n, c, 2 * oh, 2 * ow), -np.inf)
    padded[:, :, :h, :w] = x
    return padded.reshape(n, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, 4)


def switch_margin(root: Tensor) -> float:
    """Distance of the graph under ``root`` from its nearest relu or max-pool switch.

    Central differences only measure the derivative when no perturbation crosses
    such a switch, so a margin well above the step makes a point safe to check.
    """
    margin = np.inf
    for node in _graph(root):
        if node.op == "relu":
            margin = min(margin, float(np.abs(node.parents[0].data).min()))
        elif node.op == "max_pool2d":
            top2 = np.sort(_pool_windows(node.parents[0].data), axis=-1)[..., -2:]
            gap = top2[..., 1] - top2[..., 0]
            # ties among dead relu outputs only break when a relu input crosses zero
            gap = gap[top2[..., 1] != 0]
            if gap.size:
                margin = min(margin, float(gap.min()))
    return margin


def switch_pattern(root: Tensor) -> bytes:
    """Fingerprint of every relu sign and pool argmax under ``root``."""
    parts = []
    for node in _graph(root):
        if node.op == "relu":
            parts.append(np.packbits(node.parents[0].data > 0).tobytes())
        elif node.op == "max_pool2d":
            parts.append(_pool_windows(node.parents[0].data).argmax(axis=-1).astype(np.uint8).tobytes())
    return b"|".join(parts)


def check_model(model: Model, image: np.ndarray, gt: np.ndarray, eps: float = 1e-5,
                names=None, switched: Optional[list] = None) -> dict[str, float]:
    """Relative error of every parameter array's gradient of the total loss (inference mode).

    When ``switched`` is a list, the names of parameter arrays whose
    perturbations flipped a relu or pool decision are appended to it.
    """
    grads, _ = compute_gradients(model, image, gt)
    grads = {k: v.copy() for k, v in grads.items()}
    base = switch_pattern(total_loss(forward(model, image), gt)[0]) if switched is not None else None
    current = [None]

    def loss() -> float:
        value, breakdown = total_loss(forward(model, image), gt)
        if base is not None and current[0] not in switched and switch_pattern(value) != base:
            switched.append(current[0])
        return breakdown.total

    errors = {}
    for name, p in model.named_parameters():
        if names is not None and name not in names:
            continue
        current[0] = name
        errors[name] = relative_error(grads[name], numerical_gradient(loss, p.data, eps))
    return errors
