"""Reduced-size gradient checks and oracle comparisons, runnable from the CLI."""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional

import numpy as np

from . import metrics, oracles, tensor
from .gradcheck import check_model, check_op
from .model import ModelConfig, build_model, forward
from .rcl import RclParams, rcl_forward
from .tensor import ConvParams, Tensor, conv2d, max_pool2d, relu, sigmoid, transposed_conv2d
from .training import ForwardResult, total_loss

GRAD_TOL = 1e-4
FAULTS = ("conv-backward", "conv-forward")


@contextlib.contextmanager
def inject_fault(kind: Optional[str]) -> Iterator[None]:
    """Temporarily corrupt a convolution kernel so the checks must fail."""
    if kind is None:
        yield
        return
    if kind == "conv-backward":
        name, original = "_conv_input_grad", tensor._conv_input_grad

        def corrupted(*args, **kwargs):
            return original(*args, **kwargs) * 1.01
    elif kind == "conv-forward":
        name, original = "_conv_forward", tensor._conv_forward

        def corrupted(*args, **kwargs):
            out, xp, win = original(*args, **kwargs)
            return out + 1e-3, xp, win
    else:
        raise ValueError(f"unknown fault {kind!r}; choose from {FAULTS}")
    setattr(tensor, name, corrupted)
    try:
        yield
    finally:
        setattr(tensor, name, original)


def _conv_oracle(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    k = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    got = conv2d(Tensor(x), ConvParams.create(k, b, padding=1)).data
    err = np.abs(got - oracles.conv2d_loop(x, k, b, 1, 1)).max()
    return err < 1e-12, f"max abs diff {err:.2e}"


def _tconv_oracle(rng):
    x = rng.standard_normal((1, 2, 3, 4))
    k = rng.standard_normal((2, 1, 4, 4))
    b = rng.standard_normal(1)
    got = transposed_conv2d(Tensor(x), ConvParams.create(k, b, stride=2, transposed=True), (6, 8)).data
    err = np.abs(got - oracles.transposed_conv2d_zero_stuffing(x, k, b, 2, (6, 8))).max()
    return err < 1e-12, f"max abs diff {err:.2e}"


def _pool_oracle(rng):
    x = rng.standard_normal((1, 2, 7, 6))
    err = np.abs(max_pool2d(Tensor(x))[0].data - oracles.max_pool_loop(x)).max()
    return err == 0, f"max abs diff {err:.2e}"


def _op_gradients(rng):
    kc = rng.standard_normal((3, 2, 3, 3))
    kt = rng.standard_normal((2, 2, 4, 4))
    cases = {
        "conv2d": (lambda x, k, b: conv2d(x, ConvParams(k, b, (1, 1), (1, 1))),
                   [rng.standard_normal((1, 2, 5, 5)), kc, rng.standard_normal((1, 3, 1, 1))]),
        "transposed_conv2d": (lambda x, k, b: transposed_conv2d(x, ConvParams(k, b, (2, 2), (0, 0), True), (6, 7)),
                              [rng.standard_normal((1, 2, 3, 4)), kt, rng.standard_normal((1, 2, 1, 1))]),
        "max_pool2d": (lambda x: max_pool2d(x)[0], [rng.permutation(70).reshape(1, 2, 5, 7) / 10.0]),
        "sigmoid": (sigmoid, [rng.standard_normal((1, 2, 4, 4))]),
        "relu": (relu, [rng.standard_normal((1, 2, 4, 4))]),
    }
    worst = 0.0
    for fn, inputs in cases.values():
        worst = max(worst, *check_op(fn, inputs))
    return worst < GRAD_TOL, f"worst relative error {worst:.2e}"


def _adjoint(rng):
    x = rng.standard_normal((1, 2, 8, 6))
    k = rng.standard_normal((3, 2, 4, 4))
    y = rng.standard_normal((1, 3, 4, 3))
    fwd = conv2d(Tensor(x), ConvParams.create(k, padding=1, stride=2)).data
    adj = transposed_conv2d(Tensor(y), ConvParams.create(k, stride=2, transposed=True), (8, 6)).data
    lhs, rhs = float((fwd * y).sum()), float((x * adj).sum())
    rel = abs(lhs - rhs) / max(abs(lhs), abs(rhs))
    return rel < 1e-10, f"relative gap {rel:.2e}"


def _rcl_law(rng):
    u = Tensor(rng.standard_normal((1, 2, 9, 9)))
    p = RclParams.create(rng.standard_normal((3, 2, 3, 3)), rng.standard_normal((3, 3, 3, 3)),
                         rng.standard_normal(3), T=0)
    same = np.array_equal(rcl_forward(u, p).data, relu(conv2d(u, p.feed_forward)).data)
    sides = []
    for T in (0, 1, 2):
        impulse = np.zeros((1, 1, 15, 15))
        impulse[0, 0, 7, 7] = 1.0
        q = RclParams.create(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), T=T)
        rows = np.flatnonzero(rcl_forward(Tensor(impulse), q).data[0, 0].any(axis=1))
        sides.append(int(rows[-1] - rows[0] + 1))
    return same and sides == [3, 5, 7], f"T=0 identical: {same}; footprints {sides}"


def _model_gradients(rng):
    cfg = ModelConfig(block_channels=[2, 2, 2, 2, 2], convs_per_block=[1, 1, 1, 1, 1], rcl_T=1, seed=3)
    model = build_model(cfg)
    image = rng.random((1, 3, 16, 16))
    gt = np.zeros((16, 16))
    gt[4:11, 3:9] = 1
    errors = check_model(model, image, gt)
    name, worst = max(errors.items(), key=lambda kv: kv[1])
    return worst < GRAD_TOL, f"{len(errors)} parameter arrays, worst {name} {worst:.2e}"


def _geometry(rng):
    model = build_model(ModelConfig(block_channels=[2, 2, 2, 2, 2], convs_per_block=[1, 1, 1, 1, 1]))
    shapes = []
    for size in ((16, 16), (37, 41)):
        result = forward(model, rng.random((1, 3, *size)))
        shapes.append(all(m.shape[2:] == size for m in result.maps))
    return all(shapes), "all six maps match the input size" if all(shapes) else "size mismatch"


def _loss_closed_form(rng):
    gt = np.zeros((3, 4))
    gt[0, :3] = 1
    half = Tensor(np.full((1, 1, 3, 4), 0.5))
    result = ForwardResult([half] * 5, half, [], half)
    total = total_loss(result, gt)[1].total
    expected = 6 * 4.5 * np.log(2)
    return abs(total - expected) < 1e-9, f"total {total:.12f} vs {expected:.12f}"


def _metric_oracles(rng):
    failures = []
    for _ in range(5):
        h, w = rng.integers(6, 11, size=2)
        s = rng.random((h, w))
        g = rng.random((h, w)) < 0.4
        g[h // 2, w // 2] = True
        if abs(metrics.mae(s, g) - oracles.mae_loop(s, g)) > 1e-12:
            failures.append("mae")
        pred = metrics.binarize_at(s, 0.5)
        if metrics.precision_recall(pred, g) != oracles.precision_recall_loop(pred, g):
            failures.append("precision_recall")
        d, idx = metrics.distance_transform(g)
        od, oidx = oracles.edt_all_pairs(g)
        if not (np.array_equal(d, od) and np.array_equal(idx, oidx)):
            failures.append("distance_transform")
        scores = oracles.otsu_scan(s)
        if scores[round(metrics.otsu_threshold(s) * 256)] != max(scores):
            failures.append("otsu_threshold")
        if abs(metrics.weighted_f(s, g) - oracles.weighted_f_naive(s, g)) > 1e-10:
            failures.append("weighted_f")
        if metrics.weighted_f(g, g) != 1.0 or metrics.mae(g, g) != 0.0:
            failures.append("identity")
    return not failures, "all agree" if not failures else "disagree: " + ", ".join(sorted(set(failures)))


CHECKS: list[tuple[str, Callable]] = [
    ("conv2d vs loop oracle", _conv_oracle),
    ("transposed_conv2d vs zero-stuffing oracle", _tconv_oracle),
    ("max_pool2d vs window oracle", _pool_oracle),
    ("op gradients vs finite differences", _op_gradients),
    ("transposed_conv2d is the adjoint of conv2d", _adjoint),
    ("rcl degenerate case and receptive-field law", _rcl_law),
    ("tiny model gradients vs finite differences", _model_gradients),
    ("output geometry", _geometry),
    ("loss closed form", _loss_closed_form),
    ("metric oracles", _metric_oracles),
]


def run(fault: Optional[str] = None, seed: int = 0, echo: Callable[[str], None] = print) -> bool:
    """Run every check; print one PASS/FAIL line each.  Returns overall success."""
    ok = True
    with inject_fault(fault):
        for i, (name, check) in enumerate(CHECKS):
            rng = np.random.default_rng([seed, i])
            try:
                passed, detail = check(rng)
            except Exception as exc:  # a crash is a failure, not an abort
                passed, detail = False, f"{type(exc).__name__}: {exc}"
            ok &= bool(passed)
            echo(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    echo("selftest " + ("passed" if ok else "FAILED"))
    return ok
