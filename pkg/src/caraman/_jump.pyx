# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled jump-chain kernel; mirrors caraman._jump_py exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL


cdef inline double _uniform(uint64_t key, uint64_t n) nogil:
    cdef uint64_t z = key + GOLDEN * (n + 1)
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    z = z ^ (z >> 31)
    return (<double>(z >> 11) + 1.0) * (1.0 / 9007199254740992.0)


def run_jump_chain(double[:, ::1] cum, init, uint64_t[::1] keys, double horizon):
    cdef Py_ssize_t n_states = cum.shape[0]
    cdef int64_t[::1] state = np.array(init, dtype=np.int64)
    cdef Py_ssize_t n = state.shape[0]
    cdef Py_ssize_t i, j, last
    cdef int64_t s
    cdef uint64_t c
    cdef double t, rate, u1, u2, dt, target
    with nogil:
        for i in range(n):
            s = state[i]
            t = 0.0
            c = 0
            while True:
                rate = cum[s, n_states - 1]
                if rate <= 0:
                    break
                u1 = _uniform(keys[i], c)
                u2 = _uniform(keys[i], c + 1)
                c += 2
                dt = (-log(u1)) / rate
                if t + dt > horizon:
                    break
                t = t + dt
                target = u2 * rate
                last = -1
                for j in range(n_states):
                    if target < cum[s, j]:
                        last = j
                        break
                if last < 0:
                    for j in range(n_states):
                        if (j == 0 and cum[s, 0] > 0) or (j > 0 and cum[s, j] > cum[s, j - 1]):
                            last = j
                s = last
            state[i] = s
    return np.asarray(state)
