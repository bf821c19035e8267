# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Shift-and-add convolution over a list of kernel taps (OpenMP over output rows)."""
from cython.parallel import prange


def conv_taps(const double[:, :, ::1] src, const Py_ssize_t[:, ::1] offsets,
              const double[::1] weights, double[:, :, ::1] out, int threads=1):
    """out[t, y, x] += sum_k weights[k] * src[t + o[k,0], y + o[k,1], x + o[k,2]].

    Taps are visited in list order for every output cell, so the result does not
    depend on the number of threads.
    """
    cdef Py_ssize_t nt = out.shape[0]
    cdef Py_ssize_t ny = out.shape[1]
    cdef Py_ssize_t nx = out.shape[2]
    cdef Py_ssize_t ntaps = weights.shape[0]
    cdef Py_ssize_t row, t, y, x, k
    cdef double w
    cdef const double* s
    cdef double* o
    if threads < 1:
        threads = 1
    for row in prange(nt * ny, nogil=True, num_threads=threads, schedule="static"):
        t = row // ny
        y = row - t * ny
        o = &out[t, y, 0]
        for k in range(ntaps):
            w = weights[k]
            s = &src[t + offsets[k, 0], y + offsets[k, 1], offsets[k, 2]]
            for x in range(nx):
                o[x] = o[x] + w * s[x]
