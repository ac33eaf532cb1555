"""Recurrent convolutional layer, unfolded into a static stack of T + 1 stages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ConvParams, OpGraph, ShapeError, Tensor, add, conv2d, relu


@dataclass
class RclParams:
    """Feed-forward and recurrent convolutions shared across all iterations.

    The bias lives on ``feed_forward``; ``recurrent.bias`` is kept at zero and
    is not trained.
    """

    feed_forward: ConvParams
    recurrent: ConvParams
    T: int = 2

    def __post_init__(self):
        rk = self.recurrent.kernel.shape
        if rk[0] != rk[1]:
            raise ShapeError(f"recurrent kernel must map a state onto itself, got shape {rk}")
        if rk[0] != self.feed_forward.out_channels:
            raise ShapeError(
                f"recurrent kernel has {rk[0]} channels but feed-forward produces "
                f"{self.feed_forward.out_channels}"
            )
        if self.T < 0:
            raise ValueError(f"T must be >= 0, got {self.T}")

    @classmethod
    def create(cls, ff_kernel, rec_kernel, bias=None, T: int = 2, name: str = "") -> "RclParams":
        ff_kernel = np.asarray(ff_kernel, dtype=np.float64)
        rec_kernel = np.asarray(rec_kernel, dtype=np.float64)
        pad = ff_kernel.shape[2] // 2
        ff = ConvParams.create(ff_kernel, bias, padding=pad, name=f"{name}.ff" if name else "")
        rec = ConvParams.create(rec_kernel, None, padding=rec_kernel.shape[2] // 2,
                                name=f"{name}.rec" if name else "")
        rec.bias.requires_grad = False
        return cls(ff, rec, T)

    @property
    def channels(self) -> int:
        return self.feed_forward.out_channels

    def parameters(self) -> list[Tensor]:
        return [self.feed_forward.kernel, self.feed_forward.bias, self.recurrent.kernel]


def rcl_forward(u: Tensor, params: RclParams, T: int | None = None) -> Tensor:
    """Run the layer for ``T`` iterations (``params.T`` by default) and return the last state.

    x(0) = relu(ff(u));  x(t) = relu(ff(u) + rec(x(t-1)))
    The feed-forward response is computed once and reused at every step.
    """
    steps = params.T if T is None else T
    if u.shape[1] != params.feed_forward.in_channels:
        raise ShapeError(
            f"rcl: input has {u.shape[1]} channels, feed-forward kernel expects "
            f"{params.feed_forward.in_channels}"
        )
    ff = conv2d(u, params.feed_forward)
    x = relu(ff)
    for _ in range(steps):
        x = relu(add(ff, conv2d(x, params.recurrent)))
    return x


def rcl_unfold(params: RclParams, input_shape=(1, None, 8, 8)) -> OpGraph:
    """Build the unfolded graph for a probe input and return it.

    The convolution depth of the graph along its longest path is ``T + 1``.
    """
    n, c, h, w = input_shape
    c = params.feed_forward.in_channels if c is None else c
    probe = Tensor(np.zeros((n, c, h, w)), requires_grad=True)
    return OpGraph(rcl_forward(probe, params))


def receptive_footprint(kernel_side: int, T: int) -> int:
    """Side of the output region touched by a single-pixel input change."""
    return kernel_side + T * (kernel_side - 1)
