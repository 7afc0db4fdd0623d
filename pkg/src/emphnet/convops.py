"""Structured operators: convolutions, pooling, batch norm, LSTM.

Convolutions of every rank funnel through one padded 5-d im2col engine:
windows are gathered once into a (groups, cin_g * taps, positions) matrix
and contracted with BLAS.  The backward pass reuses the saved columns for
the weight gradient and scatters the input gradient tap by tap through
strided views, which never alias for a fixed tap.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError
from .tensor import Tensor, make_op

_AXIS_NAMES = {1: ("length",), 2: ("height", "width"), 3: ("depth", "height", "width")}


def _as_triple(v, rank: int, lead):
    """Lift per-axis conv parameters of a rank-`rank` conv to 3 spatial axes."""
    if isinstance(v, int):
        v = (v,) * rank
    v = tuple(int(u) for u in v)
    if len(v) != rank:
        raise ShapeError(f"expected {rank} per-axis values, got {len(v)}")
    return (lead,) * (3 - rank) + v


def _conv_checks(x, weight, stride, padding, dilation, groups, rank):
    names = _AXIS_NAMES[rank]
    if x.ndim != rank + 2:
        raise ShapeError(f"conv{rank}d input must have {rank + 2} dims, got {x.ndim}")
    if weight.ndim != rank + 2:
        raise ShapeError(f"conv{rank}d weight must have {rank + 2} dims, got {weight.ndim}")
    for s in stride:
        if s < 1:
            raise ConfigError(f"stride must be positive, got {stride}")
    for d in dilation:
        if d < 1:
            raise ConfigError(f"dilation must be positive, got {dilation}")
    for p in padding:
        if p < 0:
            raise ConfigError(f"padding must be non-negative, got {padding}")
    c_in, c_out = x.shape[1], weight.shape[0]
    if groups < 1 or c_in % groups or c_out % groups:
        raise ConfigError(
            f"groups={groups} must divide both input channels ({c_in}) and output channels ({c_out})"
        )
    if weight.shape[1] != c_in // groups:
        raise ShapeError(
            f"weight expects {weight.shape[1]} channels per group, input supplies {c_in // groups}"
        )
    for ax in range(rank):
        k, d, p = weight.shape[2 + ax], dilation[3 - rank + ax], padding[3 - rank + ax]
        extent = x.shape[2 + ax] + 2 * p
        effective = d * (k - 1) + 1
        if extent < effective:
            raise ShapeError(
                f"conv{rank}d {names[ax]} axis: padded extent {extent} is smaller than the "
                f"dilated kernel extent {effective}"
            )


def _pad_spatial(arr: np.ndarray, pd: int, ph: int, pw: int) -> np.ndarray:
    if not (pd or ph or pw):
        return arr
    n, c, d, h, w = arr.shape
    out = np.zeros((n, c, d + 2 * pd, h + 2 * ph, w + 2 * pw), dtype=arr.dtype)
    out[:, :, pd : pd + d, ph : ph + h, pw : pw + w] = arr
    return out


def _conv_core(x: Tensor, weight: Tensor, bias: Tensor | None, stride, padding, dilation, groups: int):
    """Grouped, strided, dilated convolution on (N, C, D, H, W) arrays."""
    n, c_in = x.shape[:2]
    c_out = weight.shape[0]
    kd, kh, kw = weight.shape[2:]
    sd, sh, sw = stride
    dd, dh, dw = dilation
    pd, ph, pw = padding
    ed, eh, ew = dd * (kd - 1) + 1, dh * (kh - 1) + 1, dw * (kw - 1) + 1

    taps = kd * kh * kw
    cig, cog = c_in // groups, c_out // groups
    # pointwise kernels skip the window gather entirely
    simple = taps == 1 and stride == (1, 1, 1) and padding == (0, 0, 0)

    if simple:
        xp = x.data
        do_, ho_, wo_ = x.shape[2:]
        positions = n * do_ * ho_ * wo_
        cols = x.data.transpose(1, 0, 2, 3, 4).reshape(groups, cig, positions)
    else:
        xp = _pad_spatial(x.data, pd, ph, pw)
        win = sliding_window_view(xp, (ed, eh, ew), axis=(2, 3, 4))
        win = win[:, :, ::sd, ::sh, ::sw, ::dd, ::dh, ::dw]
        do_, ho_, wo_ = win.shape[2:5]
        positions = n * do_ * ho_ * wo_
        # (C, Kd, Kh, Kw, N, Do, Ho, Wo) gather, then group-major column matrix
        cols = np.ascontiguousarray(win.transpose(1, 5, 6, 7, 0, 2, 3, 4)).reshape(
            groups, cig * taps, positions
        )
    w3 = weight.data.reshape(groups, cog, cig * taps)
    out = np.matmul(w3, cols)  # (G, Cog, N*P)
    out = out.reshape(c_out, n, do_ * ho_ * wo_).transpose(1, 0, 2).reshape(n, c_out, do_, ho_, wo_)
    if bias is not None:
        if bias.shape != (c_out,):
            raise ShapeError(f"bias {bias.shape} must be ({c_out},)")
        out = out + bias.data.reshape(1, c_out, 1, 1, 1)

    # stride-1 convs (the common case) get their input gradient from one
    # flipped-kernel GEMM; anything strided falls back to the tap scatter
    qd, qh, qw = ed - 1 - pd, eh - 1 - ph, ew - 1 - pw
    gemm_dx = sd == sh == sw == 1 and min(qd, qh, qw) >= 0

    def dx_gemm(g):
        if simple:
            gcols = g.transpose(1, 0, 2, 3, 4).reshape(groups, cog, positions)
            wt = weight.data.reshape(groups, cog, cig).transpose(0, 2, 1)
        else:
            gp = _pad_spatial(g, qd, qh, qw)
            gwin = sliding_window_view(gp, (ed, eh, ew), axis=(2, 3, 4))[..., ::dd, ::dh, ::dw]
            gcols = np.ascontiguousarray(gwin.transpose(1, 5, 6, 7, 0, 2, 3, 4)).reshape(
                groups, cog * taps, n * x.shape[2] * x.shape[3] * x.shape[4]
            )
            wt = weight.data.reshape(groups, cog, cig, kd, kh, kw)[..., ::-1, ::-1, ::-1]
            wt = np.ascontiguousarray(wt.transpose(0, 2, 1, 3, 4, 5)).reshape(groups, cig, cog * taps)
        dx = np.matmul(wt, gcols).reshape(c_in, n, x.shape[2], x.shape[3], x.shape[4])
        return dx.transpose(1, 0, 2, 3, 4)

    def dx_scatter(g, gf):
        dcols = np.matmul(w3.transpose(0, 2, 1), gf)  # (G, Cig*taps, N*P)
        dcols = dcols.reshape(c_in, kd, kh, kw, n, do_, ho_, wo_)
        gxp = np.zeros_like(xp)
        for a in range(kd):
            za = slice(a * dd, a * dd + do_ * sd, sd)
            for b in range(kh):
                zb = slice(b * dh, b * dh + ho_ * sh, sh)
                for c in range(kw):
                    zc = slice(c * dw, c * dw + wo_ * sw, sw)
                    gxp[:, :, za, zb, zc] += dcols[:, a, b, c].transpose(1, 0, 2, 3, 4)
        return gxp[:, :, pd : pd + x.shape[2], ph : ph + x.shape[3], pw : pw + x.shape[4]]

    def bwd(g):
        gf = g.reshape(n, c_out, do_ * ho_ * wo_).transpose(1, 0, 2).reshape(
            groups, cog, positions
        )
        weight.accumulate(np.matmul(gf, cols.transpose(0, 2, 1)).reshape(weight.shape))
        if bias is not None:
            bias.accumulate(g.sum(axis=(0, 2, 3, 4)))
        x.accumulate(dx_gemm(g) if gemm_dx else dx_scatter(g, gf))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, bwd)


def conv3d(x, weight, bias=None, stride=1, padding=0, dilation=1, groups=1):
    """3-d convolution over (N, C, depth, height, width)."""
    stride = _as_triple(stride, 3, 1)
    padding = _as_triple(padding, 3, 0)
    dilation = _as_triple(dilation, 3, 1)
    _conv_checks(x, weight, stride, padding, dilation, groups, 3)
    return _conv_core(x, weight, bias, stride, padding, dilation, groups)


def conv2d(x, weight, bias=None, stride=1, padding=0, dilation=1, groups=1):
    """2-d convolution over (N, C, height, width)."""
    stride = _as_triple(stride, 2, 1)
    padding = _as_triple(padding, 2, 0)
    dilation = _as_triple(dilation, 2, 1)
    _conv_checks(x, weight, stride, padding, dilation, groups, 2)
    x5 = _lift(x, 2)
    w5 = _lift(weight, 2)
    out = _conv_core(x5, w5, bias, stride, padding, dilation, groups)
    return _squeeze_depth(out, (2,))


def conv1d(x, weight, bias=None, stride=1, padding=0, dilation=1, groups=1):
    """1-d convolution over (N, C, length)."""
    stride = _as_triple(stride, 1, 1)
    padding = _as_triple(padding, 1, 0)
    dilation = _as_triple(dilation, 1, 1)
    _conv_checks(x, weight, stride, padding, dilation, groups, 1)
    x5 = _lift(x, 1)
    w5 = _lift(weight, 1)
    out = _conv_core(x5, w5, bias, stride, padding, dilation, groups)
    return _squeeze_depth(out, (2, 3))


def _lift(t: Tensor, rank: int) -> Tensor:
    """View a low-rank conv operand as 5-d; gradient reshapes back."""
    shape = t.shape[:2] + (1,) * (3 - rank) + t.shape[2:]
    out = t.data.reshape(shape)

    def bwd(g):
        t.accumulate(g.reshape(t.shape))

    return make_op(out, (t,), bwd)


def _squeeze_depth(t: Tensor, axes) -> Tensor:
    shape = tuple(s for i, s in enumerate(t.shape) if i not in axes)
    out = t.data.reshape(shape)

    def bwd(g):
        t.accumulate(g.reshape(t.shape))

    return make_op(out, (t,), bwd)


def same_padding(kernel: int, dilation: int = 1) -> int:
    """Padding that preserves extent under stride 1 (odd kernels only)."""
    if kernel % 2 == 0:
        raise ConfigError(f"same padding needs an odd kernel, got {kernel}")
    return dilation * (kernel - 1) // 2


# -- pooling -----------------------------------------------------------------


def maxpool1d(x: Tensor, kernel: int, stride: int) -> Tensor:
    """Max pooling over the last axis of (N, C, L); ties pick the first index."""
    if x.ndim != 3:
        raise ShapeError(f"maxpool1d input must be 3-d, got {x.ndim}-d")
    if kernel < 1 or stride < 1:
        raise ConfigError(f"kernel and stride must be positive, got {kernel}, {stride}")
    n, c, length = x.shape
    if length < kernel:
        raise ShapeError(f"maxpool1d length axis: extent {length} is smaller than kernel {kernel}")
    win = sliding_window_view(x.data, kernel, axis=2)[:, :, ::stride]  # (N, C, Lo, k)
    amax = win.argmax(axis=3)
    out = np.take_along_axis(win, amax[..., None], axis=3)[..., 0]
    lo = out.shape[2]
    pos = amax + np.arange(lo) * stride  # source index per output slot

    def bwd(g):
        gx = np.zeros((n * c, length), dtype=g.dtype)
        rows = np.repeat(np.arange(n * c), lo)
        np.add.at(gx, (rows, pos.reshape(-1)), g.reshape(-1))
        x.accumulate(gx.reshape(x.shape))

    return make_op(out, (x,), bwd)


def global_avg_pool_spatial(x: Tensor) -> Tensor:
    """(T, C, H, W) -> (T, C) spatial mean."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool_spatial input must be 4-d, got {x.ndim}-d")
    h, w = x.shape[2:]
    out = x.data.mean(axis=(2, 3))

    def bwd(g):
        x.accumulate(np.broadcast_to(g[:, :, None, None] / (h * w), x.shape))

    return make_op(out, (x,), bwd)


def maxpool2d(x: Tensor, kernel: int, stride: int, padding: int = 0) -> Tensor:
    """Square-window max pooling over (N, C, H, W); ties pick the first index."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d input must be 4-d, got {x.ndim}-d")
    n, c, h, w = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                constant_values=-np.inf) if padding else x.data
    hp, wp = xp.shape[2:]
    if hp < kernel or wp < kernel:
        raise ShapeError(f"maxpool2d window {kernel} exceeds padded extents ({hp}, {wp})")
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2:4]
    flat = win.reshape(n, c, ho, wo, kernel * kernel)
    amax = flat.argmax(axis=4)
    out = np.take_along_axis(flat, amax[..., None], axis=4)[..., 0]
    ki, kj = np.divmod(amax, kernel)
    src_i = ki + np.arange(ho)[None, None, :, None] * stride
    src_j = kj + np.arange(wo)[None, None, None, :] * stride

    def bwd(g):
        gxp = np.zeros((n * c, hp * wp), dtype=g.dtype)
        rows = np.repeat(np.arange(n * c), ho * wo)
        cols_ = (src_i * wp + src_j).reshape(-1)
        np.add.at(gxp, (rows, cols_), g.reshape(-1))
        gxp = gxp.reshape(n, c, hp, wp)
        if padding:
            gxp = gxp[:, :, padding : padding + h, padding : padding + w]
        x.accumulate(gxp)

    return make_op(out, (x,), bwd)


# -- batch normalization -------------------------------------------------------


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
    """Normalize per channel (axis 1) over all other axes using batch stats.

    Returns (out, batch_mean, batch_var) with the stats as plain arrays so
    the caller can fold them into running averages; var is the biased one
    used for normalization.
    """
    axes = (0,) + tuple(range(2, x.ndim))
    shape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    m = float(np.prod([x.shape[a] for a in axes]))
    mu = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shape)) * inv.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def bwd(g):
        dxhat = g * gamma.data.reshape(shape)
        s1 = dxhat.sum(axis=axes).reshape(shape)
        s2 = (dxhat * xhat).sum(axis=axes).reshape(shape)
        x.accumulate((inv.reshape(shape) / m) * (m * dxhat - s1 - xhat * s2))
        gamma.accumulate((g * xhat).sum(axis=axes))
        beta.accumulate(g.sum(axis=axes))

    return make_op(out, (x, gamma, beta), bwd), mu, var


def batch_norm_eval(x: Tensor, gamma: Tensor, beta: Tensor, mean: np.ndarray, var: np.ndarray,
                    eps: float = 1e-5) -> Tensor:
    """Normalize with frozen statistics; stats are constants for the tape."""
    shape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    inv = (1.0 / np.sqrt(var + eps)).reshape(shape)
    xhat = (x.data - mean.reshape(shape)) * inv
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def bwd(g):
        x.accumulate(g * gamma.data.reshape(shape) * inv)
        gamma.accumulate((g * xhat).sum(axis=(0,) + tuple(range(2, x.ndim))))
        beta.accumulate(g.sum(axis=(0,) + tuple(range(2, x.ndim))))

    return make_op(out, (x, gamma, beta), bwd)


# -- recurrence ----------------------------------------------------------------


def lstm(x: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor, reverse: bool = False) -> Tensor:
    """Single-direction LSTM over a (T, D) sequence, zero initial state.

    Gate rows of w_ih/w_hh are ordered [input, forget, cell, output].
    Output is (T, H) indexed by the original time axis regardless of
    direction; reverse=True runs the recurrence from the last frame.
    """
    t_len, d_in = x.shape
    if w_ih.ndim != 2 or w_ih.shape[1] != d_in or w_ih.shape[0] % 4:
        raise ShapeError(f"w_ih {w_ih.shape} incompatible with input width {d_in}")
    hidden = w_ih.shape[0] // 4
    if w_hh.shape != (4 * hidden, hidden):
        raise ShapeError(f"w_hh {w_hh.shape} must be ({4 * hidden}, {hidden})")
    if bias.shape != (4 * hidden,):
        raise ShapeError(f"bias {bias.shape} must be ({4 * hidden},)")

    order = range(t_len - 1, -1, -1) if reverse else range(t_len)
    order = list(order)
    xp = x.data @ w_ih.data.T + bias.data  # (T, 4H)
    gi = np.empty((t_len, hidden), dtype=xp.dtype)
    gf = np.empty_like(gi)
    gc = np.empty_like(gi)
    go = np.empty_like(gi)
    cell = np.empty_like(gi)
    tanh_c = np.empty_like(gi)
    h_out = np.zeros((t_len, hidden), dtype=xp.dtype)
    h_prev = np.zeros(hidden, dtype=xp.dtype)
    c_prev = np.zeros(hidden, dtype=xp.dtype)
    with np.errstate(over="ignore"):  # saturated gates round to exactly 0/1
        for t in order:
            a = xp[t] + h_prev @ w_hh.data.T
            ai, af, ac, ao = a[:hidden], a[hidden:2 * hidden], a[2 * hidden:3 * hidden], a[3 * hidden:]
            gi[t] = 1.0 / (1.0 + np.exp(-ai))
            gf[t] = 1.0 / (1.0 + np.exp(-af))
            gc[t] = np.tanh(ac)
            go[t] = 1.0 / (1.0 + np.exp(-ao))
            cell[t] = gf[t] * c_prev + gi[t] * gc[t]
            tanh_c[t] = np.tanh(cell[t])
            h_out[t] = go[t] * tanh_c[t]
            h_prev, c_prev = h_out[t], cell[t]

    def bwd(g):
        da_all = np.zeros((t_len, 4 * hidden), dtype=g.dtype)
        dw_hh = np.zeros_like(w_hh.data)
        dh_next = np.zeros(hidden, dtype=g.dtype)
        dc_next = np.zeros(hidden, dtype=g.dtype)
        for k in range(t_len - 1, -1, -1):
            t = order[k]
            t_prev = order[k - 1] if k else None
            dh = g[t] + dh_next
            do = dh * tanh_c[t]
            dc = dc_next + dh * go[t] * (1.0 - tanh_c[t] ** 2)
            c_before = cell[t_prev] if t_prev is not None else 0.0
            di = dc * gc[t]
            df = dc * c_before
            dgc = dc * gi[t]
            da = np.concatenate([
                di * gi[t] * (1.0 - gi[t]),
                df * gf[t] * (1.0 - gf[t]),
                dgc * (1.0 - gc[t] ** 2),
                do * go[t] * (1.0 - go[t]),
            ])
            da_all[t] = da
            h_before = h_out[t_prev] if t_prev is not None else np.zeros(hidden, dtype=g.dtype)
            dw_hh += np.outer(da, h_before)
            dh_next = da @ w_hh.data
            dc_next = dc * gf[t]
        x.accumulate(da_all @ w_ih.data)
        w_ih.accumulate(da_all.T @ x.data)
        w_hh.accumulate(dw_hh)
        bias.accumulate(da_all.sum(axis=0))

    return make_op(h_out, (x, w_ih, w_hh, bias), bwd)
