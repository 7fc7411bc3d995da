# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled theta-scheme time march for tridiagonal parabolic operators."""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef int _march(const double[:] init, const double[:, :] lower,
                const double[:, :] diag, const double[:, :] upper,
                const double[:, :] src, double dt, double theta,
                bint reverse, double[:, :] out) noexcept nogil:
    cdef Py_ssize_t n_steps = out.shape[0] - 1
    cdef Py_ssize_t n = out.shape[1]
    cdef Py_ssize_t i, step, a, b
    cdef double w_exp = dt * (1.0 - theta)
    cdef double w_imp = dt * theta
    cdef double denom, ay
    cdef double *cp = <double *> malloc(n * sizeof(double))
    cdef double *dp = <double *> malloc(n * sizeof(double))
    if cp == NULL or dp == NULL:
        free(cp)
        free(dp)
        return -1

    a = n_steps if reverse else 0
    for i in range(n):
        out[a, i] = init[i]

    for step in range(n_steps):
        if reverse:
            a = n_steps - step
            b = a - 1
        else:
            a = step
            b = a + 1
        # explicit part: y_a + dt(1-theta)(A_a y_a + s_a) + dt theta s_b
        for i in range(n):
            ay = diag[a, i] * out[a, i]
            if i > 0:
                ay = ay + lower[a, i] * out[a, i - 1]
            if i < n - 1:
                ay = ay + upper[a, i] * out[a, i + 1]
            dp[i] = out[a, i] + w_exp * (ay + src[a, i]) + w_imp * src[b, i]
        # Thomas sweep on (I - dt theta A_b)
        denom = 1.0 - w_imp * diag[b, 0]
        if denom == 0.0:
            free(cp)
            free(dp)
            return -2
        cp[0] = -w_imp * upper[b, 0] / denom
        dp[0] = dp[0] / denom
        for i in range(1, n):
            denom = (1.0 - w_imp * diag[b, i]) + w_imp * lower[b, i] * cp[i - 1]
            if denom == 0.0:
                free(cp)
                free(dp)
                return -2
            if i < n - 1:
                cp[i] = -w_imp * upper[b, i] / denom
            dp[i] = (dp[i] + w_imp * lower[b, i] * dp[i - 1]) / denom
        out[b, n - 1] = dp[n - 1]
        for i in range(n - 2, -1, -1):
            out[b, i] = dp[i] - cp[i] * out[b, i + 1]

    free(cp)
    free(dp)
    return 0


def theta_march(init, lower, diag, upper, src, double dt, double theta, bint reverse):
    """See :func:`mfg_inverse._kernels_py.theta_march`."""
    cdef const double[:] init_v = np.ascontiguousarray(init, dtype=np.float64)
    cdef const double[:, :] lo = np.asarray(lower, dtype=np.float64)
    cdef const double[:, :] di = np.asarray(diag, dtype=np.float64)
    cdef const double[:, :] up = np.asarray(upper, dtype=np.float64)
    cdef const double[:, :] s = np.asarray(src, dtype=np.float64)
    out = np.empty((s.shape[0], s.shape[1]), dtype=np.float64)
    cdef double[:, :] out_v = out
    cdef int status
    with nogil:
        status = _march(init_v, lo, di, up, s, dt, theta, reverse, out_v)
    if status == -1:
        raise MemoryError("tridiagonal work buffers")
    if status == -2:
        raise np.linalg.LinAlgError("singular tridiagonal step matrix")
    return out
