# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled closed-form benefit kernel; mirrors _table_py.benefits_for_masks."""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def benefits_for_masks(cnp.int64_t[::1] masks,
                       double[:, ::1] a,
                       double[:, ::1] b,
                       double[::1] g_norms,
                       double[::1] theta_norms,
                       double[::1] counts,
                       double epsilon,
                       double tau):
    cdef Py_ssize_t n_masks = masks.shape[0]
    cdef Py_ssize_t num_clients = a.shape[0]
    cdef Py_ssize_t m, i, p, q, pp, qq, size, pos, out_pos
    cdef cnp.int64_t mask, probe
    cdef Py_ssize_t total = 0
    cdef Py_ssize_t[64] members
    cdef double denom, num_g, rad_g, num_t, rad_t, wg_p, wt_p, tau_sq, u, val

    if num_clients > 62:
        raise ValueError("kernel supports at most 62 clients")

    for m in range(n_masks):
        probe = masks[m]
        while probe:
            probe &= probe - 1
            total += 1

    out_arr = np.empty(total, dtype=np.float64)
    cdef double[::1] out = out_arr
    out_pos = 0

    for m in range(n_masks):
        mask = masks[m]
        size = 0
        for p in range(num_clients):
            if mask & ((<cnp.int64_t> 1) << p):
                members[size] = p
                size += 1
        if size == 1:
            out[out_pos] = 0.0
            out_pos += 1
            continue
        if size == 2:
            i = members[0]
            q = members[1]
            val = a[i, q] + epsilon * b[i, q]
            out[out_pos] = val
            out[out_pos + 1] = val
            out_pos += 2
            continue
        for pos in range(size):
            i = members[pos]
            denom = 0.0
            num_g = 0.0
            rad_g = 0.0
            num_t = 0.0
            rad_t = 0.0
            for pp in range(size):
                p = members[pp]
                if p == i:
                    continue
                denom += counts[p]
                wg_p = counts[p] * g_norms[p]
                wt_p = counts[p] * theta_norms[p]
                num_g += wg_p * a[i, p]
                num_t += wt_p * b[i, p]
                for qq in range(size):
                    q = members[qq]
                    if q == i:
                        continue
                    if q == p:
                        rad_g += wg_p * wg_p
                        rad_t += wt_p * wt_p
                    else:
                        rad_g += wg_p * counts[q] * g_norms[q] * a[p, q]
                        rad_t += wt_p * counts[q] * theta_norms[q] * b[p, q]
            tau_sq = tau * denom
            tau_sq *= tau_sq
            u = 0.0
            if rad_g > tau_sq:
                u += num_g / sqrt(rad_g)
            if epsilon != 0.0 and rad_t > tau_sq:
                u += epsilon * (num_t / sqrt(rad_t))
            out[out_pos] = u
            out_pos += 1

    return out_arr
