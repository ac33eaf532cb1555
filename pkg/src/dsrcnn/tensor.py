"""Dense 4-D tensors with reverse-mode differentiation.

Every value flowing through the network is a ``Tensor`` of shape
``(batch, channels, height, width)`` in float64.  Operations record their
inputs and a backward closure; ``backward`` walks the resulting ``OpGraph``
in reverse topological order and accumulates gradients into leaf tensors.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

_ids = itertools.count()

# exp() overflows float64 just above 709
_SIGMOID_CLAMP = 700.0


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class GraphError(RuntimeError):
    """Raised for malformed computation graphs."""


class Tensor:
    """A float64 array of rank 4 plus an optional gradient slot.

    Leaf tensors with ``requires_grad`` act as parameters.  Tensors produced
    by operations remember their parents and how to push gradients back.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "op", "parents", "_backward", "id")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim != 4:
            raise ShapeError(f"tensor must be 4-D (n, c, h, w), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ShapeError(f"tensor dimensions must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self.id = next(_ids)

    @classmethod
    def _from_op(cls, data: np.ndarray, op: str, parents: Sequence["Tensor"], backward_fn) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out.name = None
        out.op = op
        out.parents = tuple(parents)
        out._backward = backward_fn if out.requires_grad else None
        out.id = next(_ids)
        return out

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class ConvParams:
    """Kernel ``(out_c, in_c, k_h, k_w)``, bias ``(out_c,)``, stride and padding.

    With ``transposed`` set the kernel is that of the forward convolution
    being transposed, i.e. ``(in_c, out_c, k_h, k_w)`` from the point of view
    of ``transposed_conv2d``, and the bias follows ``kernel.shape[1]``.
    """

    kernel: Tensor
    bias: Tensor
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    transposed: bool = False

    def __post_init__(self):
        kshape = self.kernel.shape
        if self.bias.shape != (1, self.out_channels, 1, 1):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match kernel out channels {self.out_channels}"
            )
        if any(s < 1 for s in self.stride):
            raise ValueError(f"stride must be positive, got {self.stride}")
        if any(p < 0 for p in self.padding):
            raise ValueError(f"padding must be non-negative, got {self.padding}")
        if self.padding[0] >= kshape[2] or self.padding[1] >= kshape[3]:
            raise ValueError(f"padding {self.padding} must be smaller than kernel {kshape[2:]}")

    @classmethod
    def create(cls, kernel, bias=None, stride=1, padding=0, name: str = "", trainable: bool = True,
               transposed: bool = False):
        kernel = np.asarray(kernel, dtype=np.float64)
        if bias is None:
            bias = np.zeros(kernel.shape[1 if transposed else 0])
        bias = np.asarray(bias, dtype=np.float64).reshape(1, -1, 1, 1)
        return cls(
            kernel=Tensor(kernel, requires_grad=trainable, name=f"{name}.kernel" if name else None),
            bias=Tensor(bias, requires_grad=trainable, name=f"{name}.bias" if name else None),
            stride=_pair(stride),
            padding=_pair(padding),
            transposed=transposed,
        )

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[1 if self.transposed else 0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[0 if self.transposed else 1]

    @property
    def kernel_size(self) -> tuple[int, int]:
        return self.kernel.shape[2], self.kernel.shape[3]

    def parameters(self) -> list[Tensor]:
        return [self.kernel, self.bias]


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


class OpGraph:
    """Topologically ordered nodes feeding one output tensor.

    Construction fails on a cycle.  Leaves come first; the output is last.
    """

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes = self._toposort(output)

    @staticmethod
    def _toposort(root: Tensor) -> list[Tensor]:
        order: list[Tensor] = []
        state: dict[int, int] = {}  # 1 = on stack, 2 = done
        stack: list[tuple[Tensor, int]] = [(root, 0)]
        while stack:
            node, i = stack.pop()
            if i == 0:
                if state.get(node.id) == 2:
                    continue
                state[node.id] = 1
            if i < len(node.parents):
                stack.append((node, i + 1))
                parent = node.parents[i]
                mark = state.get(parent.id)
                if mark == 1:
                    raise GraphError(f"cycle detected through {parent!r}")
                if mark is None:
                    stack.append((parent, 0))
            else:
                state[node.id] = 2
                order.append(node)
        return order

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.is_leaf]

    def count(self, op: str) -> int:
        return sum(1 for n in self.nodes if n.op == op)

    def depth(self, op: Optional[str] = None) -> int:
        """Longest path length counting only nodes of kind ``op`` (all ops if None)."""
        best: dict[int, int] = {}
        for node in self.nodes:
            here = 1 if (op is None and not node.is_leaf) or node.op == op else 0
            best[node.id] = here + max((best[p.id] for p in node.parents), default=0)
        return best[self.output.id]


def backward(loss: Tensor, params: Iterable[Tensor] = (), graph: Optional[OpGraph] = None) -> OpGraph:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad.

    ``loss`` must be a scalar tensor of shape (1, 1, 1, 1).  Any tensor in
    ``params`` that is not reachable from ``loss`` gets a zero gradient.
    Returns the graph that was traversed.
    """
    if loss.shape != (1, 1, 1, 1):
        raise ShapeError(f"loss must be scalar (1, 1, 1, 1), got {loss.shape}")
    graph = graph or OpGraph(loss)
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(node.id, None)
        if g is None or not node.requires_grad:
            continue
        if node.is_leaf:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
    for p in params:
        if p.grad is None:
            p.zero_grad()
    return graph


# ---------------------------------------------------------------------------
# operations


def _conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    # (n, c, oh, ow, kh, kw) strided view, no copy
    n, c, h, w = xp.shape
    s0, s1, s2, s3 = xp.strides
    shape = (n, c, (h - kh) // sh + 1, (w - kw) // sw + 1, kh, kw)
    return as_strided(xp, shape, (s0, s1, s2 * sh, s3 * sw, s2, s3), writeable=False)


def _pad(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if not (ph or pw):
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * ph, w + 2 * pw))
    out[:, :, ph : ph + h, pw : pw + w] = x
    return out


def _col2im(cols: np.ndarray, padded_shape, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Scatter-add ``cols`` (n, c, oh, ow, kh, kw) back onto a padded input."""
    out = np.zeros(padded_shape)
    oh, ow = cols.shape[2], cols.shape[3]
    if oh * ow < kh * kw:
        # large sparse kernels (deep upsampling): loop over the few window positions
        for i in range(oh):
            for j in range(ow):
                out[:, :, i * sh : i * sh + kh, j * sw : j * sw + kw] += cols[:, :, i, j]
        return out
    for a in range(kh):
        for b in range(kw):
            out[:, :, a : a + sh * (oh - 1) + 1 : sh, b : b + sw * (ow - 1) + 1 : sw] += cols[:, :, :, :, a, b]
    return out


def _conv_forward(x: np.ndarray, k: np.ndarray, stride, padding):
    ph, pw = padding
    xp = _pad(x, ph, pw)
    win = _windows(xp, k.shape[2], k.shape[3], *stride)
    out = np.tensordot(win, k, axes=([1, 4, 5], [1, 2, 3]))  # (n, oh, ow, o)
    return out.transpose(0, 3, 1, 2), xp, win


def _conv_input_grad(g: np.ndarray, k: np.ndarray, xp_shape, stride, padding, x_shape) -> np.ndarray:
    cols = np.tensordot(g, k, axes=([1], [0]))  # (n, oh, ow, c, kh, kw)
    cols = cols.transpose(0, 3, 1, 2, 4, 5)
    dxp = _col2im(cols, xp_shape, k.shape[2], k.shape[3], *stride)
    ph, pw = padding
    return dxp[:, :, ph : ph + x_shape[2], pw : pw + x_shape[3]]


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Cross-correlation of ``x`` with ``p.kernel`` plus bias."""
    n, c, h, w = x.shape
    if p.transposed:
        raise ValueError("conv2d given transposed ConvParams")
    if c != p.in_channels:
        raise ShapeError(
            f"conv2d: input has {c} channels but kernel {p.kernel.shape} expects {p.in_channels}"
        )
    kh, kw = p.kernel_size
    oh = _conv_output_size(h, kh, p.stride[0], p.padding[0])
    ow = _conv_output_size(w, kw, p.stride[1], p.padding[1])
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv2d: input {h}x{w} with kernel {kh}x{kw}, stride {p.stride}, "
            f"padding {p.padding} gives empty output {oh}x{ow}"
        )
    k = p.kernel.data
    out, xp, win = _conv_forward(x.data, k, p.stride, p.padding)
    out = out + p.bias.data

    def _backward(g):
        dx = _conv_input_grad(g, k, xp.shape, p.stride, p.padding, x.shape) if x.requires_grad else None
        dk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])) if p.kernel.requires_grad else None
        db = g.sum(axis=(0, 2, 3), keepdims=True) if p.bias.requires_grad else None
        return dx, dk, db

    return Tensor._from_op(np.ascontiguousarray(out), "conv2d", (x, p.kernel, p.bias), _backward)


def transposed_conv2d(x: Tensor, p: ConvParams, output_size: tuple[int, int]) -> Tensor:
    """Adjoint of a padding-free ``conv2d`` with stride ``p.stride``, center-cropped.

    The uncropped result has size ``(h - 1) * s + k``; the crop keeps the
    central ``output_size`` window (extra row/column goes to the far edge).
    """
    n, c, h, w = x.shape
    if not p.transposed:
        raise ValueError("transposed_conv2d needs ConvParams created with transposed=True")
    if c != p.in_channels:
        raise ShapeError(
            f"transposed_conv2d: input has {c} channels but kernel {p.kernel.shape} expects {p.in_channels}"
        )
    kh, kw = p.kernel_size
    sh, sw = p.stride
    full_h, full_w = (h - 1) * sh + kh, (w - 1) * sw + kw
    out_h, out_w = output_size
    for axis, out_sz, full, src, s in (("height", out_h, full_h, h, sh), ("width", out_w, full_w, w, sw)):
        if not (src - 1) * s + 1 <= out_sz <= full:
            raise ShapeError(
                f"transposed_conv2d: {axis} {out_sz} unreachable from input {src} with "
                f"stride {s} (reachable range {(src - 1) * s + 1}..{full})"
            )
    top, left = (full_h - out_h) // 2, (full_w - out_w) // 2
    k = p.kernel.data
    out_c = p.out_channels

    cols = np.tensordot(x.data, k, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
    full = _col2im(cols, (n, out_c, full_h, full_w), kh, kw, sh, sw)
    out = full[:, :, top : top + out_h, left : left + out_w] + p.bias.data

    def _backward(g):
        gfull = np.zeros((n, out_c, full_h, full_w))
        gfull[:, :, top : top + out_h, left : left + out_w] = g
        win = _windows(gfull, kh, kw, sh, sw)  # (n, out_c, h, w, kh, kw)
        dx = None
        if x.requires_grad:
            dx = np.tensordot(win, k, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        dk = np.tensordot(x.data, win, axes=([0, 2, 3], [0, 2, 3])) if p.kernel.requires_grad else None
        db = g.sum(axis=(0, 2, 3), keepdims=True) if p.bias.requires_grad else None
        return dx, dk, db

    return Tensor._from_op(np.ascontiguousarray(out), "transposed_conv2d", (x, p.kernel, p.bias), _backward)


def bilinear_kernel(factor: int, channels: int = 1) -> np.ndarray:
    """Bilinear upsampling weights of side ``2f - f % 2`` for ``channels`` -> ``channels``."""
    size = 2 * factor - factor % 2
    center = factor - 1 if size % 2 == 1 else factor - 0.5
    og = 1 - np.abs(np.arange(size) - center) / factor
    filt = np.outer(og, og)
    kernel = np.zeros((channels, channels, size, size))
    for i in range(channels):
        kernel[i, i] = filt
    return kernel


def max_pool2d(x: Tensor) -> tuple[Tensor, np.ndarray]:
    """2x2 max pooling, stride 2, ceil mode.

    Returns the pooled tensor and the flat argmax (0..3) inside each window.
    Ties go to the first position in row-major window order.
    """
    n, c, h, w = x.shape
    oh, ow = -(-h // 2), -(-w // 2)
    padded = np.full((n, c, 2 * oh, 2 * ow), -np.inf)
    padded[:, :, :h, :w] = x.data
    blocks = padded.reshape(n, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def _backward(g):
        onehot = np.zeros((n, c, oh, ow, 4))
        np.put_along_axis(onehot, arg[..., None], g[..., None], axis=-1)
        full = onehot.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * oh, 2 * ow)
        return (np.ascontiguousarray(full[:, :, :h, :w]),)

    return Tensor._from_op(out, "max_pool2d", (x,), _backward), arg


def sigmoid(x: Tensor) -> Tensor:
    z = np.clip(x.data, -_SIGMOID_CLAMP, _SIGMOID_CLAMP)
    out = 1.0 / (1.0 + np.exp(-z))

    def _backward(g):
        return (g * out * (1.0 - out),)

    return Tensor._from_op(out, "sigmoid", (x,), _backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)

    def _backward(g):
        return (g * mask,)

    return Tensor._from_op(out, "relu", (x,), _backward)


def dropout(x: Tensor, ratio: float = 0.5, train: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout.  Identity (the same tensor object) outside training."""
    if not 0 <= ratio < 1:
        raise ValueError(f"dropout ratio must be in [0, 1), got {ratio}")
    if not train or ratio == 0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an explicit rng")
    scale = 1.0 / (1.0 - ratio)
    mask = (rng.random(x.shape) >= ratio) * scale

    def _backward(g):
        return (g * mask,)

    return Tensor._from_op(x.data * mask, "dropout", (x,), _backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")

    def _backward(g):
        return g, g

    return Tensor._from_op(a.data + b.data, "add", (a, b), _backward)


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    if not inputs:
        raise ShapeError("concat_channels needs at least one input")
    n, _, h, w = inputs[0].shape
    for t in inputs[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ShapeError(
                f"concat_channels: {t.shape} does not match batch/spatial dims of {inputs[0].shape}"
            )
    if len(inputs) == 1:
        return inputs[0]
    offsets = np.cumsum([0] + [t.shape[1] for t in inputs])

    def _backward(g):
        return tuple(g[:, offsets[i] : offsets[i + 1]] for i in range(len(inputs)))

    return Tensor._from_op(np.concatenate([t.data for t in inputs], axis=1), "concat_channels", inputs, _backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"slice_channels: [{start}, {stop}) out of range for {x.shape[1]} channels")

    def _backward(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return Tensor._from_op(x.data[:, start:stop].copy(), "slice_channels", (x,), _backward)


def sum_all(x: Tensor) -> Tensor:
    def _backward(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._from_op(np.array(x.data.sum()).reshape(1, 1, 1, 1), "sum", (x,), _backward)


def add_scalars(terms: Sequence[Tensor]) -> Tensor:
    """Sum of scalar tensors, accumulated left to right."""
    for t in terms:
        if t.shape != (1, 1, 1, 1):
            raise ShapeError(f"add_scalars expects scalar tensors, got {t.shape}")
    total = sum(float(t.data[0, 0, 0, 0]) for t in terms)

    def _backward(g):
        return tuple(g for _ in terms)

    return Tensor._from_op(np.full((1, 1, 1, 1), total), "sum", tuple(terms), _backward)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(weights * x)`` for a constant weight array."""
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), x.shape)

    def _backward(g):
        return (g * w,)

    return Tensor._from_op(np.array((x.data * w).sum()).reshape(1, 1, 1, 1), "sum", (x,), _backward)
