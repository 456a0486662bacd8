"""Compiled Metropolis chains.

Each chain owns a splitmix64 stream seeded from Python, so a chain's output
depends only on its inputs and seed, never on thread scheduling. Kernels
release the GIL and are driven from a thread pool.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def _next(state):
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def _uniform(state):
    return (_next(state) >> _S11) * _INV53


@njit(cache=True, inline="always")
def _randint(state, n):
    return np.int64(_uniform(state) * n)


@njit(cache=True, nogil=True)
def integer_chain(x0, cov, r, half_phi, prices, budget, budget_tol, has_budget,
                  esg_coef, esg_rhs, esg_tol, has_esg, mu_b, mu_e,
                  n_steps, t_hi, t_lo, seed):
    """Lot-transfer annealing over compositions with adaptive constraint penalties.

    Returns ``(best_x, best_q, found, final_x, final_q, final_budget_excess,
    final_esg_excess, accepted)``; ``best_*`` is the lowest-objective state
    that met every constraint, if any was visited.
    """
    k = x0.shape[0]
    x = x0.copy()
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed)
    g = cov @ x.astype(np.float64)
    q = half_phi * (x.astype(np.float64) @ g) - r @ x.astype(np.float64)
    spend = 0.0
    esg = 0.0
    for i in range(k):
        if has_budget:
            spend += prices[i] * x[i]
        if has_esg:
            esg += esg_coef[i] * x[i]
    best_x = x.copy()
    best_q = np.inf
    found = False
    if (not has_budget or spend <= budget + budget_tol) and (not has_esg or esg <= esg_rhs + esg_tol):
        best_q = q
        found = True
    accepted = 0
    if k == 1 or n_steps == 0:
        exb = max(spend - budget, 0.0) if has_budget else 0.0
        exe = max(esg - esg_rhs, 0.0) if has_esg else 0.0
        return best_x, best_q, found, x, q, exb, exe, accepted

    block = max(n_steps // 100, 1)
    ratio = (t_lo / t_hi) ** (1.0 / max(n_steps - 1, 1))
    temp = t_hi
    for step in range(n_steps):
        i = _randint(state, k)
        while x[i] == 0:
            i = _randint(state, k)
        j = _randint(state, k - 1)
        if j >= i:
            j += 1
        dq = half_phi * (2.0 * (g[j] - g[i]) + cov[i, i] + cov[j, j] - 2.0 * cov[i, j]) - (r[j] - r[i])
        de = dq
        new_spend = spend
        new_esg = esg
        if has_budget:
            new_spend = spend + prices[j] - prices[i]
            old_ex = max(spend - budget, 0.0)
            new_ex = max(new_spend - budget, 0.0)
            de += mu_b * (new_ex * new_ex - old_ex * old_ex)
        if has_esg:
            new_esg = esg + esg_coef[j] - esg_coef[i]
            old_ex = max(esg - esg_rhs, 0.0)
            new_ex = max(new_esg - esg_rhs, 0.0)
            de += mu_e * (new_ex * new_ex - old_ex * old_ex)
        if de <= 0.0 or _uniform(state) < np.exp(-de / temp):
            x[i] -= 1
            x[j] += 1
            for m in range(k):
                g[m] += cov[m, j] - cov[m, i]
            q += dq
            spend = new_spend
            esg = new_esg
            accepted += 1
            if q < best_q:
                if (not has_budget or spend <= budget + budget_tol) and (not has_esg or esg <= esg_rhs + esg_tol):
                    best_q = q
                    found = True
                    for m in range(k):
                        best_x[m] = x[m]
        if (step + 1) % block == 0:
            if has_budget and spend > budget + budget_tol:
                mu_b *= 2.0
            if has_esg and esg > esg_rhs + esg_tol:
                mu_e *= 2.0
        temp *= ratio
    exb = max(spend - budget, 0.0) if has_budget else 0.0
    exe = max(esg - esg_rhs, 0.0) if has_esg else 0.0
    return best_x, best_q, found, x, q, exb, exe, accepted


@njit(cache=True, nogil=True)
def _quench(a, f, quad, max_sweeps):
    n = a.shape[0]
    gain = 0.0
    for _ in range(max_sweeps):
        improved = False
        for i in range(n):
            de = (1 - 2 * a[i]) * f[i]
            if de < -1e-12 * (1.0 + abs(f[i])):
                a[i] = 1 - a[i]
                d = 1.0 if a[i] == 1 else -1.0
                for m in range(n):
                    f[m] += d * quad[m, i]
                gain += de
                improved = True
        if not improved:
            break
    return gain


@njit(cache=True, nogil=True)
def qubo_chain(a0, linear, quad, offset, n_sweeps, t_hi, t_lo, seed):
    """Single-bit-flip Metropolis with a geometric schedule, then a zero-temperature quench.

    Returns ``(best_bits, best_energy, accepted)``.
    """
    n = a0.shape[0]
    a = a0.copy()
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed)
    f = linear + quad @ a.astype(np.float64)
    e = offset + linear @ a.astype(np.float64) + 0.5 * (a.astype(np.float64) @ (quad @ a.astype(np.float64)))
    best = a.copy()
    best_e = e
    accepted = 0
    ratio = (t_lo / t_hi) ** (1.0 / max(n_sweeps - 1, 1))
    temp = t_hi
    for _ in range(n_sweeps):
        for i in range(n):
            de = (1 - 2 * a[i]) * f[i]
            if de <= 0.0 or _uniform(state) < np.exp(-de / temp):
                a[i] = 1 - a[i]
                d = 1.0 if a[i] == 1 else -1.0
                for m in range(n):
                    f[m] += d * quad[m, i]
                e += de
                accepted += 1
                if e < best_e:
                    best_e = e
                    for m in range(n):
                        best[m] = a[m]
        temp *= ratio
    fb = linear + quad @ best.astype(np.float64)
    best_e += _quench(best, fb, quad, 10 * n + 10)
    return best, best_e, accepted


@njit(cache=True, nogil=True)
def quench(a0, linear, quad, max_sweeps):
    a = a0.copy()
    f = linear + quad @ a.astype(np.float64)
    _quench(a, f, quad, max_sweeps)
    return a
