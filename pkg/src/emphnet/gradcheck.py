"""Central finite-difference verification of every differentiable operator.

Each registered check builds a tiny double-precision case, runs the
analytic backward pass, then perturbs every input element by +/-eps and
compares.  Kinked operators (relu, max pooling) draw inputs with margins
far wider than eps so the difference quotient never straddles a corner.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as tt
from .attention import (SSEMConfig, TSEMConfig, ssem_forward, ssem_init,
                        tsem_forward, tsem_init)
from .convops import (batch_norm_eval, batch_norm_train, conv1d, conv2d,
                      conv3d, global_avg_pool_spatial, lstm, maxpool1d,
                      maxpool2d)
from .ctc import ctc_loss
from .tensor import Tensor

EPS = 1e-5
DEFAULT_TOL = 1e-4

# a check builds (leaves, loss_fn); loss_fn rebuilds the graph from the
# leaves' current data and returns a scalar Tensor
Builder = Callable[[np.random.Generator], tuple[list[Tensor], Callable[[], Tensor]]]


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def _leaf(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _margin_leaf(rng, *shape, gap: float = 0.1) -> Tensor:
    """Values with pairwise gaps >= gap and magnitudes >= gap/2."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n) - n / 2 + 0.5) * gap
    return Tensor(vals.reshape(shape), requires_grad=True)


def _loss(out: Tensor, rng) -> Tensor:
    w = Tensor(rng.standard_normal(out.shape))
    return tt.tsum(tt.mul(out, w))


def finite_diff_check(loss_fn: Callable[[], Tensor], leaves: list[Tensor],
                      eps: float = EPS) -> float:
    """Worst relative error between analytic and central-difference grads."""
    for leaf in leaves:
        leaf.zero_grad()
    tt.backward(loss_fn())
    worst = 0.0
    for leaf in leaves:
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        flat = leaf.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            with tt.no_grad():
                up = loss_fn().item()
            flat[j] = orig - eps
            with tt.no_grad():
                down = loss_fn().item()
            flat[j] = orig
            fd = (up - down) / (2.0 * eps)
            err = abs(aflat[j] - fd) / max(1.0, abs(aflat[j]), abs(fd))
            worst = max(worst, err)
    return worst


# -- registered checks -------------------------------------------------------

def _binary(kind):
    def build(rng):
        a, b = _leaf(rng, 2, 3), _leaf(rng, 3)  # broadcast on purpose
        fn = {"add": tt.add, "sub": tt.sub, "mul": tt.mul}[kind]
        return [a, b], lambda: _loss(fn(a, b), np.random.default_rng(7))
    return build


def _pointwise(kind):
    def build(rng):
        x = _margin_leaf(rng, 2, 5) if kind == "relu" else _leaf(rng, 2, 5)
        fn = {"sigmoid": tt.sigmoid, "relu": tt.relu, "tanh": tt.tanh}[kind]
        return [x], lambda: _loss(fn(x), np.random.default_rng(7))
    return build


def _scalar_args(rng):
    x = _leaf(rng, 3, 4)
    return [x], lambda: _loss(tt.scale(tt.scalar_shift(x, -0.5), 1.7),
                              np.random.default_rng(7))


def _reshape_transpose(rng):
    x = _leaf(rng, 2, 3, 4)
    def fn():
        return _loss(tt.reshape(tt.transpose(x, (2, 0, 1)), (4, 6)),
                     np.random.default_rng(7))
    return [x], fn


def _concat_narrow(rng):
    a, b = _leaf(rng, 2, 3), _leaf(rng, 4, 3)
    def fn():
        joined = tt.concat([a, b], axis=0)
        return _loss(tt.narrow(joined, 0, 1, 4), np.random.default_rng(7))
    return [a, b], fn


def _reductions(rng):
    x = _leaf(rng, 3, 4)
    def fn():
        return tt.add(tt.tsum(tt.mean(x, axis=1)), tt.mean(tt.tsum(x, axis=0)))
    return [x], fn


def _linear(rng):
    x, w, b = _leaf(rng, 4, 3), _leaf(rng, 2, 3), _leaf(rng, 2)
    return [x, w, b], lambda: _loss(tt.linear(x, w, b), np.random.default_rng(7))


def _log_softmax(rng):
    x = _leaf(rng, 3, 5)
    return [x], lambda: _loss(tt.log_softmax(x, axis=1), np.random.default_rng(7))


def _conv1d_check(rng):
    x, w, b = _leaf(rng, 2, 3, 8), _leaf(rng, 4, 3, 3), _leaf(rng, 4)
    def fn():
        return _loss(conv1d(x, w, b, stride=2, padding=1), np.random.default_rng(7))
    return [x, w, b], fn


def _conv2d_check(rng):
    x, w, b = _leaf(rng, 2, 2, 6, 6), _leaf(rng, 3, 2, 3, 3), _leaf(rng, 3)
    def fn():
        return _loss(conv2d(x, w, b, stride=2, padding=1), np.random.default_rng(7))
    return [x, w, b], fn


def _conv2d_dilated(rng):
    x, w = _leaf(rng, 1, 2, 7, 7), _leaf(rng, 2, 2, 3, 3)
    def fn():
        return _loss(conv2d(x, w, None, padding=2, dilation=2), np.random.default_rng(7))
    return [x, w], fn


def _conv3d_check(rng):
    x, w, b = _leaf(rng, 1, 2, 4, 5, 5), _leaf(rng, 2, 2, 3, 3, 3), _leaf(rng, 2)
    def fn():
        return _loss(conv3d(x, w, b, padding=1), np.random.default_rng(7))
    return [x, w, b], fn


def _conv3d_grouped(rng):
    x, w = _leaf(rng, 1, 4, 3, 4, 4), _leaf(rng, 4, 1, 3, 1, 1)
    def fn():
        return _loss(conv3d(x, w, None, padding=(1, 0, 0), groups=4),
                     np.random.default_rng(7))
    return [x, w], fn


def _maxpool1d_check(rng):
    x = _margin_leaf(rng, 1, 2, 9)
    return [x], lambda: _loss(maxpool1d(x, 2, 2), np.random.default_rng(7))


def _maxpool2d_check(rng):
    x = _margin_leaf(rng, 1, 2, 6, 6)
    return [x], lambda: _loss(maxpool2d(x, 3, 2, padding=1), np.random.default_rng(7))


def _gap_check(rng):
    x = _leaf(rng, 3, 2, 4, 4)
    return [x], lambda: _loss(global_avg_pool_spatial(x), np.random.default_rng(7))


def _bn_train(rng):
    x, g, b = _leaf(rng, 5, 3, 2, 2), _leaf(rng, 3), _leaf(rng, 3)
    def fn():
        out, _, _ = batch_norm_train(x, g, b)
        return _loss(out, np.random.default_rng(7))
    return [x, g, b], fn


def _bn_eval(rng):
    x, g, b = _leaf(rng, 4, 3, 2, 2), _leaf(rng, 3), _leaf(rng, 3)
    mean = rng.standard_normal(3)
    var = rng.uniform(0.5, 2.0, 3)
    def fn():
        return _loss(batch_norm_eval(x, g, b, mean, var), np.random.default_rng(7))
    return [x, g, b], fn


def _lstm_check(reverse):
    def build(rng):
        x = _leaf(rng, 4, 3)
        w_ih, w_hh, b = _leaf(rng, 12, 3), _leaf(rng, 12, 3), _leaf(rng, 12)
        def fn():
            return _loss(lstm(x, w_ih, w_hh, b, reverse=reverse),
                         np.random.default_rng(7))
        return [x, w_ih, w_hh, b], fn
    return build


def _ctc_check(rng):
    logits = _leaf(rng, 5, 4)
    labels = [1, 2, 1]
    def fn():
        return ctc_loss(tt.log_softmax(logits, axis=1), labels, 5)
    return [logits], fn


def _ssem_composite(rng):
    cfg = SSEMConfig(reduction=2, kernel_t=3, kernel_s=3, branch_count=2)
    params = ssem_init(4, cfg, rng, dtype=np.float64)
    params["project.w"] = _leaf(rng, 4, 2, 1, 1, 1)  # waking the zero init
    params["project.b"] = _leaf(rng, 4)
    x = _leaf(rng, 3, 4, 4, 4)
    leaves = [x] + [params[k] for k in sorted(params)]
    def fn():
        out, _ = ssem_forward(x, cfg, params)
        return _loss(out, np.random.default_rng(7))
    return leaves, fn


def _tsem_composite(rng):
    cfg = TSEMConfig(reduction=2, kernel_t=3)
    params = tsem_init(4, cfg, rng, dtype=np.float64)
    params["project.w"] = _leaf(rng, 4, 2, 1)
    params["project.b"] = _leaf(rng, 4)
    x = _leaf(rng, 4, 4, 3, 3)
    leaves = [x] + [params[k] for k in sorted(params)]
    def fn():
        out, _ = tsem_forward(x, cfg, params)
        return _loss(out, np.random.default_rng(7))
    return leaves, fn


CHECKS: dict[str, Builder] = {
    "add": _binary("add"),
    "sub": _binary("sub"),
    "mul": _binary("mul"),
    "scale_shift": _scalar_args,
    "sigmoid": _pointwise("sigmoid"),
    "relu": _pointwise("relu"),
    "tanh": _pointwise("tanh"),
    "reshape_transpose": _reshape_transpose,
    "concat_narrow": _concat_narrow,
    "sum_mean": _reductions,
    "linear": _linear,
    "log_softmax": _log_softmax,
    "conv1d": _conv1d_check,
    "conv2d": _conv2d_check,
    "conv2d_dilated": _conv2d_dilated,
    "conv3d": _conv3d_check,
    "conv3d_grouped": _conv3d_grouped,
    "maxpool1d": _maxpool1d_check,
    "maxpool2d": _maxpool2d_check,
    "global_avg_pool": _gap_check,
    "batch_norm_train": _bn_train,
    "batch_norm_eval": _bn_eval,
    "lstm_forward": _lstm_check(False),
    "lstm_reverse": _lstm_check(True),
    "ctc_loss": _ctc_check,
    "ssem_module": _ssem_composite,
    "tsem_module": _tsem_composite,
}


def run_gradcheck(seeds=range(20), tol: float = DEFAULT_TOL,
                  checks: dict[str, Builder] | None = None) -> list[CheckResult]:
    """Worst-over-seeds error per check, in registry order."""
    table = checks if checks is not None else CHECKS
    results = []
    for name, build in table.items():
        worst = 0.0
        for seed in seeds:
            leaves, loss_fn = build(np.random.default_rng([seed, len(name)]))
            worst = max(worst, finite_diff_check(loss_fn, leaves))
        results.append(CheckResult(name, worst, tol))
    return results
