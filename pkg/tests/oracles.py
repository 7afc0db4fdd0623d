"""Deliberately naive reference implementations used only by the tests.

Everything here trades speed for obviousness: plain nested loops, no
vectorization, float64 throughout.  The package must agree with these.
"""

from __future__ import annotations

import numpy as np


def conv3d_ref(x, w, b=None, stride=(1, 1, 1), padding=(0, 0, 0), dilation=(1, 1, 1), groups=1):
    """Direct-sum 3-d convolution over (N, C, D, H, W)."""
    n, ci, d, h, ww = x.shape
    co = w.shape[0]
    kd, kh, kw = w.shape[2:]
    sd, sh, sw = stride
    pd, ph, pw = padding
    dd, dh, dw = dilation
    cig, cog = ci // groups, co // groups
    xp = np.zeros((n, ci, d + 2 * pd, h + 2 * ph, ww + 2 * pw), dtype=np.float64)
    xp[:, :, pd:pd + d, ph:ph + h, pw:pw + ww] = x
    od = (xp.shape[2] - (dd * (kd - 1) + 1)) // sd + 1
    oh = (xp.shape[3] - (dh * (kh - 1) + 1)) // sh + 1
    ow = (xp.shape[4] - (dw * (kw - 1) + 1)) // sw + 1
    out = np.zeros((n, co, od, oh, ow), dtype=np.float64)
    for nn in range(n):
        for oc in range(co):
            g = oc // cog
            for zd in range(od):
                for zh in range(oh):
                    for zw in range(ow):
                        acc = 0.0
                        for ic in range(cig):
                            for a in range(kd):
                                for bb in range(kh):
                                    for c in range(kw):
                                        acc += (
                                            xp[nn, g * cig + ic,
                                               zd * sd + a * dd,
                                               zh * sh + bb * dh,
                                               zw * sw + c * dw]
                                            * w[oc, ic, a, bb, c]
                                        )
                        out[nn, oc, zd, zh, zw] = acc
    if b is not None:
        out += b.reshape(1, co, 1, 1, 1)
    return out


def conv2d_ref(x, w, b=None, stride=(1, 1), padding=(0, 0), dilation=(1, 1), groups=1):
    x5 = x[:, :, None]
    w5 = w[:, :, None]
    out = conv3d_ref(x5, w5, b, (1,) + tuple(stride), (0,) + tuple(padding),
                     (1,) + tuple(dilation), groups)
    return out[:, :, 0]


def conv1d_ref(x, w, b=None, stride=1, padding=0, dilation=1, groups=1):
    x5 = x[:, :, None, None]
    w5 = w[:, :, None, None]
    out = conv3d_ref(x5, w5, b, (1, 1, stride), (0, 0, padding), (1, 1, dilation), groups)
    return out[:, :, 0, 0]


def maxpool1d_ref(x, kernel, stride):
    n, c, length = x.shape
    lo = (length - kernel) // stride + 1
    out = np.zeros((n, c, lo))
    for nn in range(n):
        for cc in range(c):
            for o in range(lo):
                out[nn, cc, o] = max(x[nn, cc, o * stride + k] for k in range(kernel))
    return out


def matmul_ref(a, b):
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            out[i, j] = sum(a[i, t] * b[t, j] for t in range(k))
    return out


def edit_distance_ref(hyp, ref):
    """Total Levenshtein cost only (no backtrace) for cross-checking counts."""
    n, m = len(hyp), len(ref)
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        for j in range(1, m + 1):
            cur[j] = min(prev[j - 1] + (hyp[i - 1] != ref[j - 1]),
                         cur[j - 1] + 1,
                         prev[j] + 1)
        prev = cur
    return prev[m]
