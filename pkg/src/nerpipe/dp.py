"""Log-space dynamic programs and hashing kernels for linear-chain taggers.

The DP kernels take *effective* score matrices: constraint-masked entries
are expected to carry the NEG_INF sentinel already.  The sentinel is a
large negative finite number rather than -inf so that sums of several
masked scores never produce NaN.

Compiled with numba: training makes one forward-backward pass per sentence
per epoch, decoding hashes every character window, and pure-Python
recursions would dominate the pipeline runtime.  All reductions accumulate
sequentially, so results are bit-identical across runs and across the
separate gather/decode entry points.
"""

from __future__ import annotations

import numpy as np
from numba import njit

NEG_INF = -1.0e30
# Scores at or below this are treated as "no valid path".
INFEASIBLE_SCORE = -1.0e29

# Hashing constants shared with the vectorized reference implementation.
GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
PAIR_BASE = np.uint64(0x110002)
BOS_CODE = np.uint64(0x110000)
EOS_CODE = np.uint64(0x110001)


@njit(cache=True, nogil=True, inline="always")
def _mix64(x: np.uint64) -> np.uint64:
    x = x + GOLDEN
    x ^= x >> np.uint64(30)
    x *= MIX1
    x ^= x >> np.uint64(27)
    x *= MIX2
    x ^= x >> np.uint64(31)
    return x


@njit(cache=True, nogil=True, inline="always")
def _code_at(codes: np.ndarray, seg_start: int, seg_len: int, q: int) -> np.uint64:
    """Character code at sentence-relative position q, with boundary sentinels."""
    if q < 0:
        return BOS_CODE
    if q >= seg_len:
        return EOS_CODE
    return codes[seg_start + q]


@njit(cache=True, nogil=True, inline="always")
def _feature_id(codes: np.ndarray, seg_start: int, seg_len: int, window: int,
                slot_keys: np.ndarray, hash_dim: np.uint64, i: int, k: int) -> np.int64:
    """Hashed id of feature column k at position i; mirrors the numpy layout:
    2w+1 unigrams, then 2w bigrams, then the parity feature."""
    uni = 2 * window + 1
    if k < uni:
        value = _code_at(codes, seg_start, seg_len, i + k - window)
    elif k < uni + 2 * window:
        q = i + (k - uni) - window
        value = _code_at(codes, seg_start, seg_len, q) * PAIR_BASE \
            + _code_at(codes, seg_start, seg_len, q + 1)
    else:
        value = np.uint64(i & 1)
    return np.int64(_mix64(slot_keys[k] ^ value) % hash_dim)


@njit(cache=True, nogil=True)
def hash_features(codes: np.ndarray, window: int, slot_keys: np.ndarray,
                  hash_dim: np.uint64) -> np.ndarray:
    """Feature ids for one sentence given its raw character codes."""
    length = codes.shape[0]
    width = slot_keys.shape[0]
    ids = np.empty((length, width), dtype=np.int64)
    for i in range(length):
        for k in range(width):
            ids[i, k] = _feature_id(codes, 0, length, window, slot_keys, hash_dim, i, k)
    return ids


@njit(cache=True, nogil=True)
def gather_sum(ids: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Emission rows: sum of weight rows over feature ids, accumulated in order."""
    length, width = ids.shape
    num_tags = weights.shape[1]
    out = np.zeros((length, num_tags), dtype=np.float64)
    for i in range(length):
        for k in range(width):
            row = ids[i, k]
            for y in range(num_tags):
                out[i, y] += weights[row, y]
    return out


@njit(cache=True, nogil=True)
def batch_hashed_decode(codes: np.ndarray, offsets: np.ndarray, window: int,
                        slot_keys: np.ndarray, hash_dim: np.uint64,
                        weights: np.ndarray, trans: np.ndarray,
                        start: np.ndarray, end: np.ndarray):
    """Hash + gather + Viterbi over adjacent code segments in one call.

    ``offsets`` has one more entry than there are sentences; sentence i owns
    ``codes[offsets[i]:offsets[i+1]]``.  Returns the flat tag-index paths
    (aligned with ``codes``) and the minimum per-sentence best score, used
    by the caller to detect infeasible constraint masks.
    """
    width = slot_keys.shape[0]
    num_tags = weights.shape[1]
    paths = np.empty(codes.shape[0], dtype=np.int64)
    min_best = np.inf
    for si in range(offsets.shape[0] - 1):
        seg_start = offsets[si]
        seg_len = offsets[si + 1] - seg_start
        if seg_len == 0:
            continue
        emissions = np.zeros((seg_len, num_tags), dtype=np.float64)
        for i in range(seg_len):
            for k in range(width):
                row = _feature_id(codes, seg_start, seg_len, window,
                                  slot_keys, hash_dim, i, k)
                for y in range(num_tags):
                    emissions[i, y] += weights[row, y]
        path, best = viterbi(emissions, trans, start, end)
        paths[seg_start : seg_start + seg_len] = path
        if best < min_best:
            min_best = best
    return paths, min_best


@njit(cache=True, nogil=True)
def _logsumexp(values: np.ndarray) -> float:
    m = values[0]
    for i in range(1, values.shape[0]):
        if values[i] > m:
            m = values[i]
    s = 0.0
    for i in range(values.shape[0]):
        s += np.exp(values[i] - m)
    return m + np.log(s)


@njit(cache=True, nogil=True)
def forward_logz(emissions: np.ndarray, trans: np.ndarray,
                 start: np.ndarray, end: np.ndarray) -> float:
    """log of the sum of exp(path score) over all tag sequences."""
    length, num_tags = emissions.shape
    alpha = start + emissions[0]
    work = np.empty(num_tags, dtype=np.float64)
    for i in range(1, length):
        new_alpha = np.empty(num_tags, dtype=np.float64)
        for y in range(num_tags):
            for yp in range(num_tags):
                work[yp] = alpha[yp] + trans[yp, y]
            new_alpha[y] = _logsumexp(work) + emissions[i, y]
        alpha = new_alpha
    return _logsumexp(alpha + end)


@njit(cache=True, nogil=True)
def forward_backward(emissions: np.ndarray, trans: np.ndarray,
                     start: np.ndarray, end: np.ndarray):
    """Returns (logz, unary marginals (L,T), summed pairwise marginals (T,T)).

    unary[i, y] = p(tag_i = y); pair[y', y] = sum over i of
    p(tag_{i-1} = y', tag_i = y).
    """
    length, num_tags = emissions.shape

    alpha = np.empty((length, num_tags), dtype=np.float64)
    alpha[0] = start + emissions[0]
    work = np.empty(num_tags, dtype=np.float64)
    for i in range(1, length):
        for y in range(num_tags):
            for yp in range(num_tags):
                work[yp] = alpha[i - 1, yp] + trans[yp, y]
            alpha[i, y] = _logsumexp(work) + emissions[i, y]
    logz = _logsumexp(alpha[length - 1] + end)

    beta = np.empty((length, num_tags), dtype=np.float64)
    beta[length - 1] = end
    for i in range(length - 2, -1, -1):
        for yp in range(num_tags):
            for y in range(num_tags):
                work[y] = trans[yp, y] + emissions[i + 1, y] + beta[i + 1, y]
            beta[i, yp] = _logsumexp(work)

    unary = np.empty((length, num_tags), dtype=np.float64)
    for i in range(length):
        for y in range(num_tags):
            unary[i, y] = np.exp(alpha[i, y] + beta[i, y] - logz)

    pair = np.zeros((num_tags, num_tags), dtype=np.float64)
    for i in range(1, length):
        for yp in range(num_tags):
            for y in range(num_tags):
                pair[yp, y] += np.exp(
                    alpha[i - 1, yp] + trans[yp, y] + emissions[i, y] + beta[i, y] - logz
                )
    return logz, unary, pair


@njit(cache=True, nogil=True)
def viterbi(emissions: np.ndarray, trans: np.ndarray,
            start: np.ndarray, end: np.ndarray):
    """Returns (best path as int64 array, best score).

    Ties break toward the lowest tag index: comparisons are strict, so the
    first maximum encountered wins.
    """
    length, num_tags = emissions.shape
    delta = np.empty(num_tags, dtype=np.float64)
    fresh = np.empty(num_tags, dtype=np.float64)
    for y in range(num_tags):
        delta[y] = start[y] + emissions[0, y]
    back = np.zeros((length, num_tags), dtype=np.int64)
    for i in range(1, length):
        for y in range(num_tags):
            best_score = delta[0] + trans[0, y]
            best_prev = 0
            for yp in range(1, num_tags):
                score = delta[yp] + trans[yp, y]
                if score > best_score:
                    best_score = score
                    best_prev = yp
            fresh[y] = best_score + emissions[i, y]
            back[i, y] = best_prev
        delta, fresh = fresh, delta

    best_last = 0
    best_total = delta[0] + end[0]
    for y in range(1, num_tags):
        total = delta[y] + end[y]
        if total > best_total:
            best_total = total
            best_last = y
    path = np.empty(length, dtype=np.int64)
    path[length - 1] = best_last
    for i in range(length - 1, 0, -1):
        path[i - 1] = back[i, path[i]]
    return path, best_total
