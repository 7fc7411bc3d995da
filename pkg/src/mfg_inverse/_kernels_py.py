"""Pure-Python fallback for the compiled time-march kernel."""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded


def theta_march(init, lower, diag, upper, src, dt, theta, reverse):
    """March ``y' = A(t) y + s(t)`` with the theta scheme.

    ``lower``, ``diag`` and ``upper`` hold the three bands of ``A`` at every
    time level (``lower[:, 0]`` and ``upper[:, -1]`` are ignored). Each step
    goes from level ``a`` to ``b`` (``b = a + 1``, or ``a - 1`` when
    ``reverse``) and solves::

        (I - dt*theta*A_b) y_b = y_a + dt*(1-theta)*(A_a y_a + s_a) + dt*theta*s_b

    Returns the full ``(n_t + 1, n_x)`` trajectory.
    """
    lower = np.asarray(lower, dtype=float)
    diag = np.asarray(diag, dtype=float)
    upper = np.asarray(upper, dtype=float)
    src = np.asarray(src, dtype=float)
    n_levels, n = src.shape
    out = np.empty((n_levels, n))
    steps = range(n_levels - 1, 0, -1) if reverse else range(n_levels - 1)
    out[steps[0]] = init
    w_exp = dt * (1.0 - theta)
    w_imp = dt * theta
    ab = np.empty((3, n))
    for a in steps:
        b = a - 1 if reverse else a + 1
        y = out[a]
        ay = diag[a] * y
        ay[1:] += lower[a, 1:] * y[:-1]
        ay[:-1] += upper[a, :-1] * y[1:]
        rhs = y + w_exp * (ay + src[a]) + w_imp * src[b]
        ab[0, 0] = 0.0
        ab[0, 1:] = -w_imp * upper[b, :-1]
        ab[1] = 1.0 - w_imp * diag[b]
        ab[2, :-1] = -w_imp * lower[b, 1:]
        ab[2, -1] = 0.0
        out[b] = solve_banded((1, 1), ab, rhs, check_finite=False)
    return out
