"""CTC loss, greedy decoding, and word-error-rate accounting.

Blank is always class 0; gloss labels are 1-based.  The loss runs the
standard blank-extended forward recursion entirely in log space, and its
gradient comes from the matching backward recursion, so no probability is
ever materialized outside the log domain.
"""

from __future__ import annotations

import itertools
from typing import Iterable, Sequence

import numpy as np

from .errors import InfeasibleAlignmentError, ShapeError, UndefinedMetricError
from .tensor import Tensor, make_op

BLANK = 0

NEG_INF = -np.inf


def _extended(labels: Sequence[int]) -> np.ndarray:
    ext = np.full(2 * len(labels) + 1, BLANK, dtype=np.int64)
    ext[1::2] = labels
    return ext


def _check_labels(labels: Sequence[int], n_classes: int) -> None:
    if not labels:
        raise ShapeError("label sequence must be non-empty")
    for y in labels:
        if not 1 <= y < n_classes:
            raise ShapeError(f"label {y} outside the class range [1, {n_classes - 1}]")


def min_frames(labels: Sequence[int]) -> int:
    """Fewest time steps that can emit the sequence (repeats need a blank)."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def ctc_loss(log_probs: Tensor, labels: Sequence[int], valid_len: int) -> Tensor:
    """Negative log probability of `labels` under a (T, classes) log-prob lattice.

    Only the first valid_len rows participate; gradient rows beyond that
    are exactly zero.  A label sequence that cannot fit in valid_len steps
    raises InfeasibleAlignmentError before any arithmetic runs.
    """
    if log_probs.ndim != 2:
        raise ShapeError(f"ctc_loss lattice must be 2-d, got {log_probs.ndim}-d")
    t_total, n_classes = log_probs.shape
    if not 1 <= valid_len <= t_total:
        raise ShapeError(f"valid_len {valid_len} outside [1, {t_total}]")
    labels = list(labels)
    _check_labels(labels, n_classes)
    need = min_frames(labels)
    if valid_len < need:
        raise InfeasibleAlignmentError(
            f"{len(labels)} labels (with repeats) need at least {need} steps, "
            f"only {valid_len} are valid"
        )

    ext = _extended(labels)
    s_len = ext.size
    lp = log_probs.data[:valid_len]
    # states allowed to also receive a diagonal-skip transition from s-2
    skip_ok = np.zeros(s_len, dtype=bool)
    if s_len > 2:
        skip_ok[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])

    alpha = np.full((valid_len, s_len), NEG_INF)
    alpha[0, 0] = lp[0, ext[0]]
    if s_len > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, valid_len):
        prev = alpha[t - 1]
        stay = prev
        step = np.concatenate(([NEG_INF], prev[:-1]))
        skip = np.concatenate(([NEG_INF, NEG_INF], prev[:-2]))
        skip = np.where(skip_ok, skip, NEG_INF)
        alpha[t] = lp[t, ext] + np.logaddexp(np.logaddexp(stay, step), skip)

    log_z = np.logaddexp(alpha[-1, -1], alpha[-1, -2]) if s_len > 1 else alpha[-1, -1]
    if not np.isfinite(log_z):
        raise FloatingPointError("ctc forward probability underflowed to zero")

    def bwd(g):
        beta = np.full((valid_len, s_len), NEG_INF)
        beta[-1, -1] = lp[-1, ext[-1]]
        if s_len > 1:
            beta[-1, -2] = lp[-1, ext[-2]]
        for t in range(valid_len - 2, -1, -1):
            nxt = beta[t + 1]
            stay = nxt
            step = np.concatenate((nxt[1:], [NEG_INF]))
            skip = np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))
            skip_fwd = np.concatenate((skip_ok[2:], [False, False]))
            skip = np.where(skip_fwd, skip, NEG_INF)
            beta[t] = lp[t, ext] + np.logaddexp(np.logaddexp(stay, step), skip)

        # posterior over lattice cells; emission at t is counted twice in
        # alpha+beta, so divide it back out
        with np.errstate(invalid="ignore"):
            gamma = np.exp(alpha + beta - lp[:, ext] - log_z)
        gamma = np.nan_to_num(gamma, nan=0.0, posinf=0.0, neginf=0.0)
        grad = np.zeros_like(log_probs.data)
        for s in range(s_len):
            grad[:valid_len, ext[s]] -= gamma[:, s]
        log_probs.accumulate(float(np.asarray(g).reshape(())) * grad)

    return make_op(np.asarray(-log_z), (log_probs,), bwd)


def ctc_brute_force_oracle(log_probs: np.ndarray, labels: Sequence[int], valid_len: int) -> float:
    """Loss by enumerating every alignment path; intentionally tiny-only.

    Sums path probabilities over all class sequences of length valid_len
    whose collapse equals `labels`.  Returns +inf when the target is
    unreachable.  Bounded to valid_len <= 8 and <= 4 gloss classes so the
    enumeration stays exact and fast.
    """
    lp = np.asarray(log_probs, dtype=np.float64)[:valid_len]
    n_classes = lp.shape[1]
    if valid_len > 8:
        raise ShapeError(f"oracle is bounded to 8 steps, got {valid_len}")
    if n_classes > 5:
        raise ShapeError(f"oracle is bounded to 4 gloss classes, got {n_classes - 1}")
    target = list(labels)
    total = NEG_INF
    for path in itertools.product(range(n_classes), repeat=valid_len):
        if collapse_path(path) != target:
            continue
        total = np.logaddexp(total, sum(lp[t, k] for t, k in enumerate(path)))
    return float(-total)


def collapse_path(path: Iterable[int]) -> list[int]:
    """Merge repeats, then drop blanks (the CTC many-to-one mapping)."""
    out: list[int] = []
    prev = None
    for k in path:
        if k != prev and k != BLANK:
            out.append(int(k))
        prev = k
    return out


def greedy_decode(log_probs: np.ndarray, valid_len: int) -> list[int]:
    """Best-path decode: per-step argmax (ties -> lowest id), then collapse."""
    lp = np.asarray(log_probs)
    if not 1 <= valid_len <= lp.shape[0]:
        raise ShapeError(f"valid_len {valid_len} outside [1, {lp.shape[0]}]")
    return collapse_path(lp[:valid_len].argmax(axis=1))


def edit_alignment(hyp: Sequence[int], ref: Sequence[int]) -> tuple[int, int, int]:
    """(substitutions, insertions, deletions) transforming hyp into ref.

    Insertions add reference symbols missing from the hypothesis;
    deletions remove hypothesis symbols with no reference counterpart.
    Tie-breaking prefers substitution, then insertion, then deletion.
    """
    n, m = len(hyp), len(ref)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            same = hyp[i - 1] == ref[j - 1]
            d[i, j] = min(d[i - 1, j - 1] + (0 if same else 1),
                          d[i, j - 1] + 1,
                          d[i - 1, j] + 1)
    sub = ins = dele = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and hyp[i - 1] == ref[j - 1] and d[i, j] == d[i - 1, j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + 1 and hyp[i - 1] != ref[j - 1]:
            sub += 1
            i, j = i - 1, j - 1
        elif j > 0 and d[i, j] == d[i, j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dele += 1
            i -= 1
    return sub, ins, dele


def wer(pairs: Iterable[tuple[Sequence[int], Sequence[int]]]) -> float:
    """Corpus error rate in percent: summed edit operations over summed
    reference lengths.  Raises UndefinedMetricError on an empty reference
    corpus rather than returning a silent 0 or NaN."""
    ops = 0
    ref_total = 0
    for hyp, ref in pairs:
        s, i, d = edit_alignment(hyp, ref)
        ops += s + i + d
        ref_total += len(ref)
    if ref_total == 0:
        raise UndefinedMetricError("word error rate over an empty reference corpus")
    return 100.0 * ops / ref_total
