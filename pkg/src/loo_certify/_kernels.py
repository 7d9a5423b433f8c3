"""Fast one-dimensional Gaussian kernel sums.

Computes ``S_q(t) = sum_j w_qj * exp(-(t - x_j)^2 / (2 h^2))`` for many
targets ``t``. Sources are bucketed into boxes of width ``sqrt(2) h``; a box
with few sources is summed directly, a dense box is summed through a
truncated Hermite expansion about its centre (the one-dimensional fast Gauss
transform far-field expansion). Boxes farther than ``CUTOFF`` scaled units
from the target are skipped, which drops terms below ``exp(-42)`` relative.

All loops run in a fixed order, so results are bit-reproducible.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

ORDER = 24
CUTOFF = 6.5
DIRECT_MAX = 24


@njit(cache=True, nogil=True)
def _box_moments(s, w, starts, centers, order):
    nb = centers.shape[0]
    nw = w.shape[0]
    A = np.zeros((nb, nw, order))
    for b in range(nb):
        c = centers[b]
        for j in range(starts[b], starts[b + 1]):
            d = s[j] - c
            term = 1.0
            for p in range(order):
                for q in range(nw):
                    A[b, q, p] += w[q, j] * term
                term *= d / (p + 1)
    return A


@njit(cache=True, nogil=True)
def _first_at_least(ids, v):
    lo = 0
    hi = ids.shape[0]
    while lo < hi:
        mid = (lo + hi) // 2
        if ids[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True, nogil=True)
def _sums(s, w, ids, starts, centers, A, lo, t, self_pos, cutoff, direct_max, out):
    nb = ids.shape[0]
    nw = w.shape[0]
    order = A.shape[2]
    acc = np.zeros(nw)
    for m in range(t.shape[0]):
        tm = t[m]
        e = self_pos[m]
        b_lo = math.floor(tm - cutoff - lo)
        b_hi = math.floor(tm + cutoff - lo)
        for q in range(nw):
            acc[q] = 0.0
        b = _first_at_least(ids, b_lo)
        while b < nb and ids[b] <= b_hi:
            j0 = starts[b]
            j1 = starts[b + 1]
            if j1 - j0 <= direct_max or (j0 <= e < j1):
                for j in range(j0, j1):
                    if j == e:
                        continue
                    d = tm - s[j]
                    k = math.exp(-d * d)
                    for q in range(nw):
                        acc[q] += w[q, j] * k
            else:
                x = tm - centers[b]
                h_prev = math.exp(-x * x)
                h_cur = 2.0 * x * h_prev
                for q in range(nw):
                    acc[q] += A[b, q, 0] * h_prev + A[b, q, 1] * h_cur
                for p in range(1, order - 1):
                    h_next = 2.0 * x * h_cur - 2.0 * p * h_prev
                    for q in range(nw):
                        acc[q] += A[b, q, p + 1] * h_next
                    h_prev = h_cur
                    h_cur = h_next
            b += 1
        for q in range(nw):
            out[q, m] = acc[q]


def gauss_sums(x, weights, t, h, self_index=None):
    """Weighted Gaussian sums of sources ``x`` evaluated at targets ``t``.

    Parameters
    ----------
    x : (n,) array of source locations.
    weights : (nw, n) array; one row per weight vector.
    t : (M,) array of targets.
    h : bandwidth.
    self_index : optional (M,) int array. ``self_index[m] = j`` excludes
        source ``j`` from target ``m`` (leave-one-out sums); ``-1`` excludes
        nothing.

    Returns
    -------
    (nw, M) array of unnormalised sums ``sum_j w_j exp(-(t - x_j)^2 / 2h^2)``.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    w = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    scale = 1.0 / (math.sqrt(2.0) * h)
    perm = np.argsort(x, kind="stable")
    s = x[perm] * scale
    w = np.ascontiguousarray(w[:, perm])
    lo = math.floor(s[0])
    box = np.floor(s - lo).astype(np.int64)
    ids, starts = np.unique(box, return_index=True)
    starts = np.append(starts, s.shape[0]).astype(np.int64)
    centers = lo + ids + 0.5
    A = _box_moments(s, w, starts, centers, ORDER)
    if self_index is None:
        self_pos = np.full(t.shape[0], -1, dtype=np.int64)
    else:
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.shape[0])
        self_index = np.asarray(self_index, dtype=np.int64)
        self_pos = np.where(self_index >= 0, inv[np.maximum(self_index, 0)], -1)
    out = np.zeros((w.shape[0], t.shape[0]))
    _sums(s, w, ids.astype(np.int64), starts, centers, A, float(lo), t * scale,
          self_pos.astype(np.int64), CUTOFF, DIRECT_MAX, out)
    return out
