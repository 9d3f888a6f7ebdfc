"""Numba inner loops for the sample-rate converter, WSOLA, and the reverb.

These are the only per-sample recurrences in the package; everything else is
vectorized numpy.  All kernels are compiled without fastmath so results are
bit-reproducible, and with ``nogil`` so a thread pool can overlap items.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def resample_core(x, out_len, step, half_width, table):
    """Windowed-sinc interpolation of ``x`` at positions ``m * step``.

    ``table`` holds the half-kernel on a uniform grid over [0, 1] of
    normalized distance; rows are re-normalized to unit sum so DC is
    preserved exactly.  Out-of-range taps clamp to the edge samples.
    """
    n = x.shape[0]
    grid = table.shape[0] - 1
    y = np.empty(out_len)
    for m in range(out_len):
        p = m * step
        first = int(np.ceil(p - half_width))
        last = int(np.floor(p + half_width))
        acc = 0.0
        wsum = 0.0
        for i in range(first, last + 1):
            u = abs(i - p) / half_width
            ti = u * grid
            j = int(ti)
            if j >= grid:
                continue
            frac = ti - j
            w = table[j] + (table[j + 1] - table[j]) * frac
            idx = i
            if idx < 0:
                idx = 0
            elif idx >= n:
                idx = n - 1
            acc += w * x[idx]
            wsum += w
        y[m] = acc / wsum
    return y


@njit(cache=True, nogil=True)
def wsola_core(x, out_len, win, hop, tol):
    """Overlap-add time stretch with waveform-similarity alignment.

    Copies windowed input segments to output frames spaced ``hop`` apart,
    picking each segment within ``tol`` samples of its nominal position so
    that it best continues the previously copied one (normalized cross
    correlation over the ``hop``-sample overlap).  The overlap-add result is
    divided by the accumulated window so any hop yields unit gain.
    """
    n = x.shape[0]
    width = win.shape[0]
    y = np.zeros(out_len + width)
    norm = np.zeros(out_len + width)
    n_frames = out_len // hop + 1
    # stretch factor implied by frame positions: input advances hop/alpha
    alpha = out_len / n
    a_prev = 0
    for m in range(n_frames):
        nominal = int(round(m * hop / alpha))
        if nominal > n - width:
            nominal = n - width
        if nominal < 0:
            nominal = 0
        if m == 0:
            a = 0
        else:
            lo = nominal - tol
            hi = nominal + tol
            if lo < 0:
                lo = 0
            if hi > n - width:
                hi = n - width
            if hi <= lo:
                a = nominal
            else:
                # natural continuation of the previous segment
                t0 = a_prev + hop
                best = lo
                best_score = -1e300
                for cand in range(lo, hi + 1):
                    num = 0.0
                    den = 0.0
                    for j in range(hop):
                        ti = t0 + j
                        if ti >= n:
                            ti = n - 1
                        num += x[ti] * x[cand + j]
                        den += x[cand + j] * x[cand + j]
                    score = num / np.sqrt(den + 1e-30)
                    if score > best_score:
                        best_score = score
                        best = cand
                a = best
        opos = m * hop
        for j in range(width):
            if a + j < n:
                y[opos + j] += x[a + j] * win[j]
                norm[opos + j] += win[j]
        a_prev = a
    out = np.empty(out_len)
    for i in range(out_len):
        if norm[i] > 1e-12:
            out[i] = y[i] / norm[i]
        else:
            out[i] = 0.0
    return out


@njit(cache=True, nogil=True)
def partial_fisher_yates(uniforms, positives, total):
    """Uniform without-replacement index draws, one positive excluded.

    ``uniforms`` is (B, T, K, N) in [0, 1); each (b, t, k) tuple yields N
    distinct indices into [0, total) skipping ``positives[b, t, k]``.  The
    virtual array [0, total-1) is never materialized: a timestamped overlay
    records displaced entries, so each tuple costs O(N).
    """
    b_n, t_n, k_n, draw_n = uniforms.shape
    m = total - 1  # candidate count once the positive is excluded
    out = np.empty((b_n, t_n, k_n, draw_n), dtype=np.int64)
    value = np.zeros(m, dtype=np.int64)
    stamp = np.full(m, -1, dtype=np.int64)
    tick = 0
    for b in range(b_n):
        for t in range(t_n):
            for k in range(k_n):
                pos = positives[b, t, k]
                for j in range(draw_n):
                    r = j + int(uniforms[b, t, k, j] * (m - j))
                    if r >= m:
                        r = m - 1
                    vr = value[r] if stamp[r] == tick else r
                    vj = value[j] if stamp[j] == tick else j
                    value[r] = vj
                    stamp[r] = tick
                    out[b, t, k, j] = vr if vr < pos else vr + 1
                tick += 1
    return out


@njit(cache=True, nogil=True)
def dtw_core(cost):
    """Monotone alignment over steps {(1,0),(0,1),(1,1)}.

    Minimizes (total cost, path length) lexicographically, so equal-cost
    ties resolve to the shorter path; returns both components.
    """
    tx, ty = cost.shape
    acc = np.empty((tx, ty))
    length = np.empty((tx, ty), dtype=np.int64)
    acc[0, 0] = cost[0, 0]
    length[0, 0] = 1
    for i in range(1, tx):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
        length[i, 0] = i + 1
    for j in range(1, ty):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
        length[0, j] = j + 1
    for i in range(1, tx):
        for j in range(1, ty):
            best = acc[i - 1, j - 1]
            best_len = length[i - 1, j - 1]
            if acc[i - 1, j] < best or (acc[i - 1, j] == best and length[i - 1, j] < best_len):
                best = acc[i - 1, j]
                best_len = length[i - 1, j]
            if acc[i, j - 1] < best or (acc[i, j - 1] == best and length[i, j - 1] < best_len):
                best = acc[i, j - 1]
                best_len = length[i, j - 1]
            acc[i, j] = best + cost[i, j]
            length[i, j] = best_len + 1
    return acc[tx - 1, ty - 1], length[tx - 1, ty - 1]


@njit(cache=True, nogil=True)
def freeverb_core(x, comb_delays, allpass_delays, feedback, damp, input_gain):
    """Parallel lowpass-feedback combs into a series allpass chain (wet path)."""
    n = x.shape[0]
    wet = np.zeros(n)
    for ci in range(comb_delays.shape[0]):
        d = comb_delays[ci]
        buf = np.zeros(d)
        fstore = 0.0
        idx = 0
        for i in range(n):
            out = buf[idx]
            fstore = out * (1.0 - damp) + fstore * damp
            buf[idx] = x[i] * input_gain + fstore * feedback
            wet[i] += out
            idx += 1
            if idx == d:
                idx = 0
    for ai in range(allpass_delays.shape[0]):
        d = allpass_delays[ai]
        buf = np.zeros(d)
        idx = 0
        for i in range(n):
            bufout = buf[idx]
            buf[idx] = wet[i] + bufout * 0.5
            wet[i] = bufout - wet[i]
            idx += 1
            if idx == d:
                idx = 0
    return wet
