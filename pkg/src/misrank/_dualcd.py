"""Compiled inner loop of the dual coordinate-descent hinge solver."""

import numpy as np
from numba import njit

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


@njit(cache=True)
def _next(state):
    # xorshift64
    x = state[0]
    x ^= (x << np.uint64(13)) & _MASK
    x ^= x >> np.uint64(7)
    x ^= (x << np.uint64(17)) & _MASK
    state[0] = x
    return x


@njit(cache=True)
def dual_cd_epochs(indptr, indices, data, y, upper, qdiag, alpha, w, resid, mult, rho, state, max_epochs, tol):
    """Run shuffled coordinate-descent epochs on the augmented dual.

    Updates ``alpha``, ``w`` (= sum alpha_i y_i x_i) and ``resid[0]``
    (= sum alpha_i y_i) in place. Returns (epochs run, max projected gradient
    of the last epoch).
    """
    n = y.size
    order = np.arange(n)
    epochs = 0
    violation = 0.0
    for _ in range(max_epochs):
        for i in range(n - 1, 0, -1):
            j = np.int64(_next(state) % np.uint64(i + 1))
            t = order[i]
            order[i] = order[j]
            order[j] = t
        violation = 0.0
        for k in range(n):
            i = order[k]
            dot = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                dot += w[indices[p]] * data[p]
            g = y[i] * (dot + mult + rho * resid[0]) - 1.0
            a = alpha[i]
            if a <= 0.0:
                pg = min(g, 0.0)
            elif a >= upper[i]:
                pg = max(g, 0.0)
            else:
                pg = g
            if abs(pg) > violation:
                violation = abs(pg)
            if pg != 0.0:
                new = min(max(a - g / qdiag[i], 0.0), upper[i])
                step = (new - a) * y[i]
                if step != 0.0:
                    alpha[i] = new
                    for p in range(indptr[i], indptr[i + 1]):
                        w[indices[p]] += step * data[p]
                    resid[0] += step
        epochs += 1
        if violation <= tol:
            break
    return epochs, violation
