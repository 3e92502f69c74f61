# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Mirrors ``mtinstruct._pure`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t
from libc.math cimport floor

cnp.import_array()

cdef double INV53 = 1.0 / 9007199254740992.0


cdef inline uint64_t rotl(uint64_t x, int k) nogil:
    return (x << k) | (x >> (64 - k))


cdef inline uint64_t next_u64(uint64_t* s) nogil:
    cdef uint64_t result = rotl(s[1] * 5, 7) * 9
    cdef uint64_t t = s[1] << 17
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = rotl(s[3], 45)
    return result


cdef inline double uniform(uint64_t* s) nogil:
    return <double>(next_u64(s) >> 11) * INV53


def alias_draws(state, prob, alias, Py_ssize_t steps):
    cdef uint64_t s[4]
    cdef int i
    for i in range(4):
        s[i] = <uint64_t>int(state[i])
    cdef double[::1] p = np.ascontiguousarray(prob, dtype=np.float64)
    cdef int64_t[::1] a = np.ascontiguousarray(alias, dtype=np.int64)
    cdef Py_ssize_t n = p.shape[0]
    out_arr = np.empty(steps, dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    cdef Py_ssize_t k, col
    cdef double scaled
    with nogil:
        for k in range(steps):
            scaled = uniform(s) * n
            col = <Py_ssize_t>scaled
            if scaled - col < p[col]:
                out[k] = col
            else:
                out[k] = a[col]
    return out_arr, (int(s[0]), int(s[1]), int(s[2]), int(s[3]))


cdef void fisher_yates(int64_t* perm, Py_ssize_t n, uint64_t* s) nogil:
    cdef Py_ssize_t i, j
    cdef int64_t tmp
    for i in range(n):
        perm[i] = i
    i = n - 1
    while i > 0:
        j = <Py_ssize_t>(uniform(s) * (i + 1))
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
        i -= 1


def assign_records(choices, counts, states):
    cdef int64_t[::1] ch = np.ascontiguousarray(choices, dtype=np.int64)
    cdef int64_t[::1] cnt = np.ascontiguousarray(counts, dtype=np.int64)
    cdef Py_ssize_t k = cnt.shape[0]
    st_arr = np.empty((k, 4), dtype=np.uint64)
    cdef Py_ssize_t d, w
    for d in range(k):
        for w in range(4):
            st_arr[d, w] = int(states[d][w])
    cdef uint64_t[:, ::1] st = st_arr
    offsets_arr = np.zeros(k + 1, dtype=np.int64)
    for d in range(k):
        offsets_arr[d + 1] = offsets_arr[d] + cnt[d]
    cdef int64_t[::1] off = offsets_arr
    perm_arr = np.empty(max(int(offsets_arr[k]), 1), dtype=np.int64)
    cdef int64_t[::1] perm = perm_arr
    cursor_arr = np.full(k, -1, dtype=np.int64)
    cdef int64_t[::1] cur = cursor_arr
    out_arr = np.empty(ch.shape[0], dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    cdef Py_ssize_t step
    with nogil:
        for step in range(ch.shape[0]):
            d = ch[step]
            if cur[d] < 0 or cur[d] == cnt[d]:
                fisher_yates(&perm[off[d]], cnt[d], &st[d, 0])
                cur[d] = 0
            out[step] = perm[off[d] + cur[d]]
            cur[d] += 1
    return out_arr


def iou_pairs(a, b):
    cdef double[:, ::1] A = np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(-1, 4))
    cdef double[:, ::1] B = np.ascontiguousarray(np.asarray(b, dtype=np.float64).reshape(-1, 4))
    cdef Py_ssize_t n = A.shape[0], i
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double iw, ih, inter, union
    with nogil:
        for i in range(n):
            iw = min(A[i, 2], B[i, 2]) - max(A[i, 0], B[i, 0])
            ih = min(A[i, 3], B[i, 3]) - max(A[i, 1], B[i, 1])
            inter = iw * ih if (iw > 0 and ih > 0) else 0.0
            union = ((A[i, 2] - A[i, 0]) * (A[i, 3] - A[i, 1])
                     + (B[i, 2] - B[i, 0]) * (B[i, 3] - B[i, 1]) - inter)
            if union > 0 and inter > 0:
                out[i] = inter / union
    return out_arr


cdef void axis_weights(Py_ssize_t src, Py_ssize_t target, int64_t* lo, int64_t* hi, double* f) nogil:
    cdef Py_ssize_t t
    cdef double pos
    for t in range(target):
        if target == 1:
            pos = (src - 1) / 2.0
        else:
            pos = <double>(t * (src - 1)) / <double>(target - 1)
        lo[t] = <int64_t>floor(pos)
        if lo[t] > src - 1:
            lo[t] = src - 1
        hi[t] = lo[t] + 1 if lo[t] + 1 < src else src - 1
        f[t] = pos - lo[t]


def bilinear_resize(grid, Py_ssize_t target):
    cdef double[:, :, ::1] g = np.ascontiguousarray(grid, dtype=np.float64)
    cdef Py_ssize_t s = g.shape[0], d = g.shape[2]
    lo_arr = np.empty(target, dtype=np.int64)
    hi_arr = np.empty(target, dtype=np.int64)
    f_arr = np.empty(target, dtype=np.float64)
    cdef int64_t[::1] lo = lo_arr
    cdef int64_t[::1] hi = hi_arr
    cdef double[::1] f = f_arr
    axis_weights(s, target, &lo[0], &hi[0], &f[0])
    rows_arr = np.empty((target, s, d), dtype=np.float64)
    out_arr = np.empty((target, target, d), dtype=np.float64)
    cdef double[:, :, ::1] rows = rows_arr
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t r, c, ch
    cdef double v0
    with nogil:
        for r in range(target):
            for c in range(s):
                for ch in range(d):
                    v0 = g[lo[r], c, ch]
                    rows[r, c, ch] = v0 + f[r] * (g[hi[r], c, ch] - v0)
        for r in range(target):
            for c in range(target):
                for ch in range(d):
                    v0 = rows[r, lo[c], ch]
                    out[r, c, ch] = v0 + f[c] * (rows[r, hi[c], ch] - v0)
    return out_arr
