# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-query kernels; see _fallback.py for the reference versions."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef double TO_UNIT = 1.0 / 9007199254740992.0


cdef inline uint64_t _splitmix(uint64_t* state) noexcept nogil:
    state[0] += <uint64_t>0x9E3779B97F4A7C15ULL
    cdef uint64_t z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef void _insertion_sort(int64_t* a, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef int64_t v
    for i in range(1, n):
        v = a[i]
        j = i - 1
        while j >= 0 and a[j] > v:
            a[j + 1] = a[j]
            j -= 1
        a[j + 1] = v


def pack_ece_batch(const int64_t[:] indptr, const int64_t[:] nb_ent,
                   const int64_t[:] nb_rel, const int64_t[:] nb_time,
                   const int64_t[:] subj, const int64_t[:] rel,
                   const int64_t[:] qtime, const int64_t[:] answer,
                   const uint64_t[:] seeds, Py_ssize_t k,
                   bint history_only, bint strict):
    cdef Py_ssize_t b = subj.shape[0]
    out_ent_arr = np.zeros((b, k), dtype=np.int64)
    out_rel_arr = np.zeros((b, k), dtype=np.int64)
    out_time_arr = np.zeros((b, k), dtype=np.int64)
    counts_arr = np.zeros(b, dtype=np.int64)
    cdef int64_t[:, :] out_ent = out_ent_arr
    cdef int64_t[:, :] out_rel = out_rel_arr
    cdef int64_t[:, :] out_time = out_time_arr
    cdef int64_t[:] counts = counts_arr

    cdef Py_ssize_t max_deg = 0, q, i, j, n, lo, hi, mid, c
    cdef int64_t s, p, t, a, tmp
    cdef uint64_t state, x
    for i in range(indptr.shape[0] - 1):
        if indptr[i + 1] - indptr[i] > max_deg:
            max_deg = indptr[i + 1] - indptr[i]
    cdef int64_t* cand = <int64_t*>malloc((max_deg + 1) * sizeof(int64_t))
    if cand == NULL:
        raise MemoryError()
    try:
        with nogil:
            for q in range(b):
                s = subj[q]; p = rel[q]; t = qtime[q]; a = answer[q]
                lo = indptr[s]; hi = indptr[s + 1]
                if history_only:
                    # first position with time > t
                    i = lo; j = hi
                    while i < j:
                        mid = (i + j) // 2
                        if nb_time[mid] <= t:
                            i = mid + 1
                        else:
                            j = mid
                    hi = i
                n = 0
                for i in range(lo, hi):
                    if strict:
                        if nb_ent[i] == a:
                            continue
                    elif nb_ent[i] == a and nb_rel[i] == p and nb_time[i] == t:
                        continue
                    cand[n] = i
                    n += 1
                if n > k:
                    state = seeds[q]
                    for i in range(k):
                        x = _splitmix(&state)
                        j = i + <Py_ssize_t>(((x >> 11) * TO_UNIT) * (n - i))
                        tmp = cand[i]; cand[i] = cand[j]; cand[j] = tmp
                    n = k
                    _insertion_sort(cand, n)
                counts[q] = n
                for c in range(n):
                    out_ent[q, c] = nb_ent[cand[c]]
                    out_rel[q, c] = nb_rel[cand[c]]
                    out_time[q, c] = nb_time[cand[c]]
    finally:
        free(cand)
    return out_ent_arr, out_rel_arr, out_time_arr, counts_arr


def count_ranks(scores, const int64_t[:] answers, const int64_t[:] filt_indptr,
                const int64_t[:] filt_idx):
    cdef double[:, :] sc = np.ascontiguousarray(scores, dtype=np.float64)
    cdef Py_ssize_t b = sc.shape[0], n = sc.shape[1], q, e, i
    greater_arr = np.zeros(b, dtype=np.int64)
    ties_arr = np.zeros(b, dtype=np.int64)
    cdef int64_t[:] greater = greater_arr
    cdef int64_t[:] ties = ties_arr
    cdef unsigned char* skip = <unsigned char*>malloc(n + 1)
    cdef double target, v
    cdef int64_t g, tt
    if skip == NULL:
        raise MemoryError()
    try:
        with nogil:
            for e in range(n):
                skip[e] = 0
            for q in range(b):
                for i in range(filt_indptr[q], filt_indptr[q + 1]):
                    skip[filt_idx[i]] = 1
                skip[answers[q]] = 1
                target = sc[q, answers[q]]
                g = 0; tt = 0
                for e in range(n):
                    if skip[e]:
                        continue
                    v = sc[q, e]
                    if v > target:
                        g += 1
                    elif v == target:
                        tt += 1
                greater[q] = g
                ties[q] = tt
                for i in range(filt_indptr[q], filt_indptr[q + 1]):
                    skip[filt_idx[i]] = 0
                skip[answers[q]] = 0
    finally:
        free(skip)
    return greater_arr, ties_arr
