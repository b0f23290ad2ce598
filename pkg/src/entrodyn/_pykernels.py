"""Pure-numpy fallback for the compiled kernels in ``_ckernels.pyx``.

Same signatures and return conventions; used when the extension is not
built or when ``ENTRODYN_BACKEND=python`` is set.
"""

from __future__ import annotations

import numpy as np

from .entropy import EntropyKernel, NumericalFailure, _kernel_choice, gibbs_map

_KERNELS = {}


def _kernel(code: int, q: float) -> EntropyKernel:
    key = (code, q)
    if key not in _KERNELS:
        _KERNELS[key] = (
            EntropyKernel("gibbs") if code == 0 else EntropyKernel("log") if code == 1 else EntropyKernel("tsallis", q)
        )
    return _KERNELS[key]


def _blocks(off):
    return [slice(int(off[k]), int(off[k + 1])) for k in range(len(off) - 1)]


def _payoffs(U, shape, off, x):
    n = len(shape)
    blocks = _blocks(off)
    out = np.empty(int(off[n]))
    for k in range(n):
        t = U[k].reshape(tuple(int(a) for a in shape))
        for j in reversed(range(n)):
            if j != k:
                t = np.tensordot(t, x[blocks[j]], axes=([j], [0]))
        out[blocks[k]] = t
    return out


def payoff_vectors(U, shape, off, x, out):
    out[:] = _payoffs(U, shape, off, np.asarray(x))


def choice_kernel(code, q, y, out):
    y = np.asarray(y, dtype=float)
    if len(y) == 1:
        out[0] = 1.0
        return 0
    try:
        out[:] = gibbs_map(y) if code == 0 else _kernel_choice(_kernel(code, q), y)
    except NumericalFailure:
        return 1
    return 0


def _ed(U, shape, off, code, q, temps, rates, x):
    kern = _kernel(code, q)
    u = _payoffs(U, shape, off, x)
    out = np.empty_like(x)
    for k, b in enumerate(_blocks(off)):
        xk = x[b]
        w = 1.0 / kern.d2theta(xk)
        d = kern.dtheta(xk)
        th = 1.0 / w.sum()
        out[b] = rates[k] * w * ((u[b] - th * np.dot(u[b], w)) - temps[k] * (d - th * np.dot(d, w)))
    return out


def ed_theta_field(U, shape, off, code, q, temps, rates, x, out):
    out[:] = _ed(U, shape, off, code, q, np.asarray(temps), np.asarray(rates), np.asarray(x, dtype=float))


def _zd(U, shape, off, code, q, temps, rates, z, xbuf):
    out = np.empty_like(z)
    r = 0
    blocks = _blocks(off)
    for k, b in enumerate(blocks):
        n = b.stop - b.start
        y = np.concatenate([[0.0], z[r : r + n - 1]])
        tmp = np.empty(n)
        if choice_kernel(code, q, y, tmp) != 0:
            return None
        xbuf[b] = tmp
        r += n - 1
    u = _payoffs(U, shape, off, xbuf)
    r = 0
    for k, b in enumerate(blocks):
        n = b.stop - b.start
        ub = u[b]
        out[r : r + n - 1] = rates[k] * (ub[1:] - ub[0] - temps[k] * z[r : r + n - 1])
        r += n - 1
    return out


def zd_field(U, shape, off, code, q, temps, rates, z, out, xbuf):
    res = _zd(U, shape, off, code, q, np.asarray(temps), np.asarray(rates), np.asarray(z, dtype=float), xbuf)
    if res is None:
        return 1
    out[:] = res
    return 0


def rk4_strategy(U, shape, off, code, q, temps, rates, x0, dt, n_steps, rest_tol, floor, record_every):
    temps = np.asarray(temps)
    rates = np.asarray(rates)
    blocks = _blocks(off)
    x = np.array(x0, dtype=float)
    states, times = [x.copy()], [0.0]
    status, step = 0, 0
    f = lambda v: _ed(U, shape, off, code, q, temps, rates, v)  # noqa: E731
    while True:
        k1 = f(x)
        if np.max(np.abs(k1)) < rest_tol:
            status = 1
            break
        if step >= n_steps:
            break
        xs = x + 0.5 * dt * k1
        if not np.all(xs > 0):
            status = 2
            break
        k2 = f(xs)
        xs = x + 0.5 * dt * k2
        if not np.all(xs > 0):
            status = 2
            break
        k3 = f(xs)
        xs = x + dt * k3
        if not np.all(xs > 0):
            status = 2
            break
        k4 = f(xs)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        for b in blocks:
            x[b] /= x[b].sum()
        step += 1
        if not np.all(np.isfinite(x)):
            status = 3
        elif np.any(x < floor):
            status = 2
        if status or step % record_every == 0:
            states.append(x.copy())
            times.append(step * dt)
        if status:
            break
    if times[-1] != step * dt:
        states.append(x.copy())
        times.append(step * dt)
    return np.array(states), np.array(times), status, step


def rk4_score(U, shape, off, code, q, temps, rates, z0, dt, n_steps, rest_tol, zcap, record_every):
    temps = np.asarray(temps)
    rates = np.asarray(rates)
    xbuf = np.empty(int(off[-1]))
    z = np.array(z0, dtype=float)
    zs, times = [z.copy()], [0.0]
    status, step = 0, 0

    def f(v):
        return _zd(U, shape, off, code, q, temps, rates, v, xbuf)

    while True:
        k1 = f(z)
        if k1 is None:
            status = 3
            break
        if len(k1) == 0 or np.max(np.abs(k1)) < rest_tol:
            status = 1
            break
        if step >= n_steps:
            break
        k2 = f(z + 0.5 * dt * k1)
        k3 = f(z + 0.5 * dt * k2) if k2 is not None else None
        k4 = f(z + dt * k3) if k3 is not None else None
        if k4 is None:
            status = 3
            break
        z = z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        step += 1
        if not np.all(np.isfinite(z)):
            status = 3
        elif np.any(np.abs(z) > zcap):
            status = 4
        if status or step % record_every == 0:
            zs.append(z.copy())
            times.append(step * dt)
        if status:
            break
    if times[-1] != step * dt:
        zs.append(z.copy())
        times.append(step * dt)
    return np.array(zs).reshape(len(zs), len(z)), np.array(times), status, step


def _update(code, q, T, gamma, x, chosen, uhat):
    ind = np.zeros(len(x))
    ind[chosen] = 1.0
    if code == 0:
        pos = x > 0
        logs = np.zeros(len(x))
        logs[pos] = np.log(x[pos])
        ent = float(np.dot(x[pos], logs[pos]))
        return x + gamma * ((ind - x) * uhat - T * np.where(pos, x * (logs - ent), 0.0))
    kern = _kernel(code, q)
    w = 1.0 / kern.d2theta(x)
    d = kern.dtheta(x)
    th = 1.0 / w.sum()
    sd = float(np.dot(d, w))
    base = uhat / x[chosen]
    return x + gamma * w * (base * (ind - th * w[chosen]) - T * (d - th * sd))


def strategy_update(code, q, T, gamma, x, chosen, uhat, out):
    out[:] = _update(code, q, T, gamma, np.array(x, dtype=float), int(chosen), float(uhat))


def learn(U, shape, off, code, q, temps, x0, gammas, uniforms, noise, revise, delays, max_delay, X, actions, seen):
    n_players = len(shape)
    blocks = _blocks(off)
    shape_t = tuple(int(a) for a in shape)
    cur = np.array(x0, dtype=float)
    X[0] = cur
    counters = np.zeros(n_players, dtype=np.intp)
    cums = None
    n_iter = uniforms.shape[0]
    for n in range(n_iter):
        cums = [np.cumsum(cur[b]) for b in blocks]
        for k in range(n_players):
            a = int(np.searchsorted(cums[k], uniforms[n, k], side="right"))
            actions[n, k] = min(a, shape_t[k] - 1)
        nxt = cur.copy()
        for k in range(n_players):
            if not revise[n, k]:
                seen[n, k] = 0.0
                continue
            tau = 0
            if max_delay > 0:
                tau = min(int(delays[n, k, actions[n, k]]), n)
            src = n - tau
            joint = [int(actions[src, j]) if j != k else int(actions[n, k]) for j in range(n_players)]
            p = int(np.ravel_multi_index(joint, shape_t))
            uhat = U[k, p] + noise[n, k]
            seen[n, k] = uhat
            counters[k] += 1
            nxt[blocks[k]] = _update(code, q, temps[k], gammas[counters[k]], cur[blocks[k]], int(actions[n, k]), uhat)
        cur = nxt
        X[n + 1] = cur
        if not np.all(np.isfinite(cur)):
            return 2, n + 1
        if np.any(cur < -1e-14) or (code != 0 and np.any(cur <= 0.0)):
            return 1, n + 1
    return 0, n_iter
