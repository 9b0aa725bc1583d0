"""Streaming numba kernels behind the large-trace pipeline.

All kernels consume one layer of one chunk of sequences in flattened CSR-ish
form: `counts[t]` activations for token t, expert ids concatenated in `flat`,
sequence boundaries in `seq_off` (token index offsets, length num_sequences+1).

The inputs must come from a validated trace: expert ids below nexp and no
duplicates within a token.  The kernels skip bounds checks for speed and will
write out of range on invalid data, so the decoders validate first.

Results are plain integer arrays that merge by addition, so chunking and
threading cannot change any reported number.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def hist_kernel(counts, flat, seq_off, m, nexp, hist):
    """Accumulate per-expert window-frequency counts into hist (nexp, m+1).

    Sliding-window with lazy accounting: an expert's histogram row is only
    touched when its in-window count changes, adding the run of window
    positions since the previous change.  O(total activations), not O(E*W).
    """
    cnt = np.zeros(nexp, dtype=np.int32)
    last = np.zeros(nexp, dtype=np.int32)
    nseq = seq_off.shape[0] - 1
    tok_off = np.empty(counts.shape[0] + 1, dtype=np.int64)
    tok_off[0] = 0
    for i in range(counts.shape[0]):
        tok_off[i + 1] = tok_off[i] + counts[i]
    for s in range(nseq):
        t0, t1 = seq_off[s], seq_off[s + 1]
        n = t1 - t0
        W = n - m + 1
        if W <= 0:
            continue
        cnt[:] = 0
        last[:] = 0
        for t in range(t0, t0 + m):
            for j in range(tok_off[t], tok_off[t + 1]):
                cnt[flat[j]] += 1
        for p in range(1, W):
            tout = t0 + p - 1
            tin = t0 + p + m - 1
            for j in range(tok_off[tout], tok_off[tout + 1]):
                e = flat[j]
                hist[e, cnt[e]] += p - last[e]
                last[e] = p
                cnt[e] -= 1
            for j in range(tok_off[tin], tok_off[tin + 1]):
                e = flat[j]
                if last[e] != p:
                    hist[e, cnt[e]] += p - last[e]
                    last[e] = p
                cnt[e] += 1
        for e in range(nexp):
            hist[e, cnt[e]] += W - last[e]


@njit(cache=True, nogil=True)
def lru_depth_kernel(counts, flat, seq_off, nexp, depth_hist):
    """Count LRU stack depths into depth_hist (nexp+1,).

    depth_hist[d] for d < nexp: activations found at stack depth d, which hit
    any cache of capacity > d.  depth_hist[nexp]: first-touch misses.  The
    stack resets at sequence starts; activations within a token are processed
    in stored (ascending index) order, each counted before its own insertion.
    A single pass gives hit counts for every capacity at once.
    """
    stack = np.empty(nexp, dtype=np.int64)
    nseq = seq_off.shape[0] - 1
    tok_off = np.empty(counts.shape[0] + 1, dtype=np.int64)
    tok_off[0] = 0
    for i in range(counts.shape[0]):
        tok_off[i + 1] = tok_off[i] + counts[i]
    for s in range(nseq):
        depth = 0
        for t in range(seq_off[s], seq_off[s + 1]):
            for j in range(tok_off[t], tok_off[t + 1]):
                e = flat[j]
                pos = -1
                for i in range(depth):
                    if stack[i] == e:
                        pos = i
                        break
                if pos < 0:
                    depth_hist[nexp] += 1
                    if depth < nexp:
                        depth += 1
                    for i in range(depth - 1, 0, -1):
                        stack[i] = stack[i - 1]
                else:
                    depth_hist[pos] += 1
                    for i in range(pos, 0, -1):
                        stack[i] = stack[i - 1]
                stack[0] = e
    return depth_hist


@njit(cache=True, nogil=True)
def sch_kernel(counts, flat, seq_off, m, nexp, hits_by_cap):
    """Best per-segment cache hits for every capacity at once.

    Sequences split into consecutive segments of m tokens (final partial
    kept).  A capacity-c cache repopulated per segment hits the c most
    frequent experts of that segment, so hits_by_cap[c] accumulates the sum
    of the top c per-segment counts for every c in one pass.
    """
    cnt = np.zeros(nexp, dtype=np.int64)
    touched = np.empty(nexp, dtype=np.int64)
    vals = np.empty(nexp, dtype=np.int64)
    nseq = seq_off.shape[0] - 1
    tok_off = np.empty(counts.shape[0] + 1, dtype=np.int64)
    tok_off[0] = 0
    for i in range(counts.shape[0]):
        tok_off[i + 1] = tok_off[i] + counts[i]
    for s in range(nseq):
        t0, t1 = seq_off[s], seq_off[s + 1]
        seg_start = t0
        while seg_start < t1:
            seg_end = min(seg_start + m, t1)
            ntouch = 0
            for t in range(seg_start, seg_end):
                for j in range(tok_off[t], tok_off[t + 1]):
                    e = flat[j]
                    if cnt[e] == 0:
                        touched[ntouch] = e
                        ntouch += 1
                    cnt[e] += 1
            for i in range(ntouch):
                vals[i] = cnt[touched[i]]
                cnt[touched[i]] = 0
            sub = np.sort(vals[:ntouch])[::-1]
            run = 0
            for i in range(ntouch):
                run += sub[i]
                hits_by_cap[i + 1] += run
            for c in range(ntouch + 1, nexp + 1):
                hits_by_cap[c] += run
            seg_start = seg_end
    return hits_by_cap


@njit(cache=True, nogil=True)
def vocab_kernel(counts, flat, tok_ids, votes):
    """Count activations per (expert, token id) into votes (nexp, vocab)."""
    j = 0
    for t in range(counts.shape[0]):
        v = tok_ids[t]
        for _ in range(counts[t]):
            votes[flat[j], v] += 1
            j += 1


def warmup() -> None:
    """Compile every kernel on a trivial input (first call is slow otherwise)."""
    counts = np.array([1, 1], dtype=np.uint8)
    flat = np.array([0, 1], dtype=np.uint32)
    off = np.array([0, 2], dtype=np.int64)
    hist_kernel(counts, flat, off, 1, 2, np.zeros((2, 2), dtype=np.int64))
    lru_depth_kernel(counts, flat, off, 2, np.zeros(3, dtype=np.int64))
    sch_kernel(counts, flat, off, 1, 2, np.zeros(3, dtype=np.int64))
    vocab_kernel(counts, flat, np.zeros(2, dtype=np.uint32), np.zeros((2, 1), dtype=np.int64))
