# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot loops in ``_pure``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef enum:
    DONE = 0
    HITS = 1
    CUR = 2
    STEPS = 3
    TARGET = 4
    MAX_STEPS = 5
    LOST = 6


def mc_advance(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
               const double[::1] cum, long start, long rw, long sw,
               const double[::1] u, cnp.int64_t[::1] st):
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t k = 0
    cdef Py_ssize_t j, lo, hi
    cdef long done = st[DONE], hits = st[HITS], cur = st[CUR], steps = st[STEPS]
    cdef long target = st[TARGET], max_steps = st[MAX_STEPS], lost = st[LOST]
    cdef long nxt
    cdef double x
    with nogil:
        while k < n and done < target:
            x = u[k]
            k += 1
            lo = indptr[cur]
            hi = indptr[cur + 1]
            nxt = indices[hi - 1]
            for j in range(lo, hi):
                if x < cum[j]:
                    nxt = indices[j]
                    break
            steps += 1
            if nxt == rw or nxt == sw or steps >= max_steps:
                if nxt == rw:
                    hits += 1
                elif nxt != sw:
                    lost += 1
                done += 1
                cur = start
                steps = 0
            else:
                cur = nxt
    st[DONE] = done
    st[HITS] = hits
    st[CUR] = cur
    st[STEPS] = steps
    st[LOST] = lost
    return k


def crossprod(codes, w, y, Py_ssize_t q):
    cdef const cnp.int64_t[:, ::1] c = np.ascontiguousarray(codes, dtype=np.int64)
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0]
    cdef Py_ssize_t f = c.shape[1]
    ztwz_arr = np.zeros((q, q))
    ztwy_arr = np.zeros(q)
    cdef double[:, ::1] ztwz = ztwz_arr
    cdef double[::1] ztwy = ztwy_arr
    cdef Py_ssize_t i, a, b
    cdef double wi, wyi
    with nogil:
        for i in range(n):
            wi = wv[i]
            wyi = wi * yv[i]
            for a in range(f):
                ztwy[c[i, a]] += wyi
                for b in range(f):
                    ztwz[c[i, a], c[i, b]] += wi
    return ztwz_arr, ztwy_arr
