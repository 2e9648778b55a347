"""Compiled Euler-Maruyama block integrator for the built-in potentials and fields.

Arithmetic mirrors the numpy path operation by operation (no fastmath, same
evaluation order), so both engines produce the same trajectories.
"""

import numba
import numpy as np

OVERDAMPED, NONREVERSIBLE, STRATONOVICH = 0, 1, 2
QUADRATIC, WARPED = 0, 1


@numba.njit(cache=True, nogil=True)
def _grad_hess(pot, params, S, x, grad, hess):
    d = x.shape[0]
    if pot == QUADRATIC:
        for i in range(d):
            acc = S[i, 0] * x[0]
            for j in range(1, d):
                acc = acc + S[i, j] * x[j]
            grad[i] = acc
            for j in range(d):
                hess[i, j] = S[i, j]
    else:
        b = params[0]
        r = x[1] + b * x[0] ** 2 - 100.0 * b
        grad[0] = x[0] / 50.0 + 4.0 * b * x[0] * r
        grad[1] = 2.0 * r
        hess[0, 0] = 1.0 / 50.0 + 4.0 * b * r + 8.0 * b * b * x[0] ** 2
        hess[0, 1] = 4.0 * b * x[0]
        hess[1, 0] = hess[0, 1]
        hess[1, 1] = 2.0


@numba.njit(cache=True, nogil=True)
def integrate_block(kind, pot, params, S, K, x, draws, n_steps, dt, threshold, states, blown_at):
    """Advance every row of ``x`` by ``n_steps`` steps, writing states into ``states``.

    A row that leaves the threshold stops there and its step is stored in
    ``blown_at`` (``-1`` for rows that stay finite).
    """
    n, d = x.shape
    sqrt2 = np.sqrt(2.0)
    sqrt_dt = np.sqrt(dt)
    grad = np.empty(d)
    hess = np.empty((d, d))
    g = np.empty(d)
    jac = np.empty((d, d))
    drift = np.empty(d)
    for row in range(n):
        blown_at[row] = -1
        xr = x[row].copy()
        for s in range(n_steps):
            _grad_hess(pot, params, S, xr, grad, hess)
            if kind != OVERDAMPED:
                for i in range(d):
                    acc = K[i, 0] * grad[0]
                    for j in range(1, d):
                        acc = acc + K[i, j] * grad[j]
                    g[i] = acc
            if kind == OVERDAMPED:
                for i in range(d):
                    drift[i] = -grad[i]
            elif kind == NONREVERSIBLE:
                for i in range(d):
                    drift[i] = -grad[i] + g[i]
            else:
                for i in range(d):
                    for c in range(d):
                        acc = K[i, 0] * hess[0, c]
                        for j in range(1, d):
                            acc = acc + K[i, j] * hess[j, c]
                        jac[i, c] = acc
                for i in range(d):
                    acc = jac[i, 0] * g[0]
                    for j in range(1, d):
                        acc = acc + jac[i, j] * g[j]
                    drift[i] = -grad[i] + acc
            blown = False
            for i in range(d):
                noise = sqrt2 * draws[row, s, i]
                if kind == STRATONOVICH:
                    noise = noise + sqrt2 * g[i] * draws[row, s, d]
                xr[i] = xr[i] + dt * drift[i] + sqrt_dt * noise
                if not abs(xr[i]) <= threshold:
                    blown = True
            for i in range(d):
                states[row, s, i] = xr[i]
            if blown:
                blown_at[row] = s
                break
        for i in range(d):
            x[row, i] = xr[i]
