# cython: language_level=3
"""Compiled inner loops: decomposable-kernel fields, RK4 drivers, strategy-learning loop.

Kernel codes: 0 = Gibbs, 1 = log, 2 = Tsallis(q). All arrays are float64
C-contiguous; profiles are flat with per-player offsets ``off``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, pow, fabs, isfinite

cnp.import_array()

DEF MAX_PLAYERS = 64


cdef inline double d1(int code, double q, double x) noexcept nogil:
    if code == 0:
        return 1.0 + log(x)
    elif code == 1:
        return -1.0 / x
    return (1.0 - q * pow(x, q - 1.0)) / (1.0 - q)


cdef inline double d2(int code, double q, double x) noexcept nogil:
    if code == 0:
        return 1.0 / x
    elif code == 1:
        return 1.0 / (x * x)
    return q * pow(x, q - 2.0)


cdef inline double invd1(int code, double q, double s) noexcept nogil:
    if code == 0:
        return exp(s - 1.0)
    elif code == 1:
        return -1.0 / s
    return pow((1.0 - (1.0 - q) * s) / q, 1.0 / (q - 1.0))


cdef int c_choice(int code, double q, const double* y, Py_ssize_t n, double* out) noexcept nogil:
    cdef Py_ssize_t a
    cdef int it, done = 0
    cdef double ymax, s, lo, hi, g, slope, tot, step, scale
    if n == 1:
        out[0] = 1.0
        return 0
    ymax = y[0]
    for a in range(1, n):
        if y[a] > ymax:
            ymax = y[a]
    if code == 0:
        tot = 0.0
        for a in range(n):
            out[a] = exp(y[a] - ymax)
            tot += out[a]
        for a in range(n):
            out[a] /= tot
        return 0
    lo = d1(code, q, 1.0 / n)
    hi = d1(code, q, 1.0)
    s = 0.5 * (lo + hi)
    tot = 1.0
    for it in range(200):
        tot = 0.0
        for a in range(n):
            out[a] = invd1(code, q, s - (ymax - y[a]))
            tot += out[a]
        g = tot - 1.0
        if g > 0:
            hi = s
        else:
            lo = s
        scale = fabs(s) if fabs(s) > 1.0 else 1.0
        if fabs(g) <= 2e-16 * n or hi - lo <= 4e-16 * scale:
            done = 1
            break
        slope = 0.0
        for a in range(n):
            slope += 1.0 / d2(code, q, out[a])
        step = s - g / slope
        if lo < step < hi:
            s = step
        else:
            s = 0.5 * (lo + hi)
    if not done:
        return 1
    for a in range(n):
        out[a] /= tot
    return 0


cdef void c_payoffs(const double[:, ::1] U, const Py_ssize_t* shape, const Py_ssize_t* off,
                    Py_ssize_t N, const double* x, double* out, Py_ssize_t* idx) noexcept nogil:
    cdef Py_ssize_t p, k, j, P = U.shape[1]
    cdef double prod
    for j in range(off[N]):
        out[j] = 0.0
    for j in range(N):
        idx[j] = 0
    for p in range(P):
        for k in range(N):
            prod = 1.0
            for j in range(N):
                if j != k:
                    prod *= x[off[j] + idx[j]]
            out[off[k] + idx[k]] += U[k, p] * prod
        j = N - 1
        while j >= 0:
            idx[j] += 1
            if idx[j] < shape[j]:
                break
            idx[j] = 0
            j -= 1


cdef void c_ed_field(const double[:, ::1] U, const Py_ssize_t* shape, const Py_ssize_t* off,
                     Py_ssize_t N, int code, double q, const double* temps, const double* rates,
                     const double* x, double* out, double* ubuf, Py_ssize_t* idx) noexcept nogil:
    cdef Py_ssize_t k, a, b0, b1
    cdef double inv_sum, th, su, sd, w
    c_payoffs(U, shape, off, N, x, ubuf, idx)
    for k in range(N):
        b0 = off[k]
        b1 = off[k + 1]
        inv_sum = 0.0
        su = 0.0
        sd = 0.0
        for a in range(b0, b1):
            w = 1.0 / d2(code, q, x[a])
            inv_sum += w
            su += ubuf[a] * w
            sd += d1(code, q, x[a]) * w
        th = 1.0 / inv_sum
        for a in range(b0, b1):
            w = 1.0 / d2(code, q, x[a])
            out[a] = rates[k] * w * ((ubuf[a] - th * su) - temps[k] * (d1(code, q, x[a]) - th * sd))


cdef int c_zd_field(const double[:, ::1] U, const Py_ssize_t* shape, const Py_ssize_t* off,
                    Py_ssize_t N, int code, double q, const double* temps, const double* rates,
                    const double* z, double* out, double* xbuf, double* ubuf, double* ybuf,
                    Py_ssize_t* idx) noexcept nogil:
    cdef Py_ssize_t k, a, n, r = 0, r0
    cdef int st
    for k in range(N):
        n = off[k + 1] - off[k]
        ybuf[0] = 0.0
        for a in range(1, n):
            ybuf[a] = z[r + a - 1]
        st = c_choice(code, q, ybuf, n, xbuf + off[k])
        if st != 0:
            return st
        r += n - 1
    c_payoffs(U, shape, off, N, xbuf, ubuf, idx)
    r = 0
    for k in range(N):
        n = off[k + 1] - off[k]
        for a in range(1, n):
            out[r + a - 1] = rates[k] * (ubuf[off[k] + a] - ubuf[off[k]] - temps[k] * z[r + a - 1])
        r += n - 1
    return 0


def payoff_vectors(const double[:, ::1] U, const Py_ssize_t[::1] shape, const Py_ssize_t[::1] off,
                   const double[::1] x, double[::1] out):
    cdef Py_ssize_t N = shape.shape[0]
    cdef Py_ssize_t idx[MAX_PLAYERS]
    c_payoffs(U, &shape[0], &off[0], N, &x[0], &out[0], idx)


def choice_kernel(int code, double q, const double[::1] y, double[::1] out):
    return c_choice(code, q, &y[0], y.shape[0], &out[0])


def ed_theta_field(const double[:, ::1] U, const Py_ssize_t[::1] shape, const Py_ssize_t[::1] off,
                   int code, double q, const double[::1] temps, const double[::1] rates,
                   const double[::1] x, double[::1] out):
    cdef Py_ssize_t N = shape.shape[0]
    cdef Py_ssize_t idx[MAX_PLAYERS]
    cdef double[::1] ubuf = np.empty(off[N])
    c_ed_field(U, &shape[0], &off[0], N, code, q, &temps[0], &rates[0], &x[0], &out[0], &ubuf[0], idx)


def zd_field(const double[:, ::1] U, const Py_ssize_t[::1] shape, const Py_ssize_t[::1] off,
             int code, double q, const double[::1] temps, const double[::1] rates,
             const double[::1] z, double[::1] out, double[::1] xbuf):
    cdef Py_ssize_t N = shape.shape[0]
    cdef Py_ssize_t idx[MAX_PLAYERS]
    cdef double[::1] ubuf = np.empty(off[N])
    cdef double[::1] ybuf = np.empty(off[N])
    cdef const double* zp = &z[0] if z.shape[0] > 0 else NULL
    cdef double* op = &out[0] if out.shape[0] > 0 else NULL
    return c_zd_field(U, &shape[0], &off[0], N, code, q, &temps[0], &rates[0], zp, op,
                      &xbuf[0], &ubuf[0], &ybuf[0], idx)


def rk4_strategy(const double[:, ::1] U, const Py_ssize_t[::1] shape, const Py_ssize_t[::1] off,
                 int code, double q, const double[::1] temps, const double[::1] rates,
                 const double[::1] x0, double dt, Py_ssize_t n_steps, double rest_tol,
                 double floor, Py_ssize_t record_every):
    """Fixed-step RK4 of the kernel dynamics in strategy space.

    Returns (states, times, status, steps): status 0 = reached n_steps,
    1 = field norm below rest_tol, 2 = a coordinate fell below floor,
    3 = non-finite state.
    """
    cdef Py_ssize_t N = shape.shape[0], D = off[N]
    cdef Py_ssize_t idx[MAX_PLAYERS]
    cdef Py_ssize_t nrec = n_steps // record_every + 2
    states_np = np.empty((nrec, D))
    times_np = np.empty(nrec)
    cdef double[:, ::1] states = states_np
    cdef double[::1] times = times_np
    cdef double[::1] x = np.array(x0, dtype=float)
    cdef double[::1] xs = np.empty(D)
    cdef double[::1] k1 = np.empty(D)
    cdef double[::1] k2 = np.empty(D)
    cdef double[::1] k3 = np.empty(D)
    cdef double[::1] k4 = np.empty(D)
    cdef double[::1] ubuf = np.empty(D)
    cdef Py_ssize_t step = 0, a, k, rec = 0
    cdef int status = 0, bad
    cdef double nrm, tot
    with nogil:
        for a in range(D):
            states[0, a] = x[a]
        times[0] = 0.0
        rec = 1
        while True:
            c_ed_field(U, &shape[0], &off[0], N, code, q, &temps[0], &rates[0], &x[0], &k1[0], &ubuf[0], idx)
            nrm = 0.0
            for a in range(D):
                if fabs(k1[a]) > nrm:
                    nrm = fabs(k1[a])
            if nrm < rest_tol:
                status = 1
                break
            if step >= n_steps:
                break
            bad = 0
            for a in range(D):
                xs[a] = x[a] + 0.5 * dt * k1[a]
                if not xs[a] > 0.0:
                    bad = 1
            if bad:
                status = 2
                break
            c_ed_field(U, &shape[0], &off[0], N, code, q, &temps[0], &rates[0], &xs[0], &k2[0], &ubuf[0], idx)
            for a in range(D):
                xs[a] = x[a] + 0.5 * dt * k2[a]
                if not xs[a] > 0.0:
                    bad = 1
            if bad:
                status = 2
                break
            c_ed_field(U, &shape[0], &off[0], N, code, q, &temps[0], &rates[0], &xs[0], &k3[0], &ubuf[0], idx)
            for a in range(D):
                xs[a] = x[a] + dt * k3[a]
                if not xs[a] > 0.0:
                    bad = 1
            if bad:
                status = 2
                break
            c_ed_field(U, &shape[0], &off[0], N, code, q, &temps[0], &rates[0], &xs[0], &k4[0], &ubuf[0], idx)
            for a in range(D):
                x[a] = x[a] + dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a])
            for k in range(N):
                tot = 0.0
                for a in range(off[k], off[k + 1]):
                    tot += x[a]
                for a in range(off[k], off[k + 1]):
                    x[a] /= tot
            step += 1
            for a in range(D):
                if not isfinite(x[a]):
                    status = 3
                elif x[a] < floor:
                    status = 2
            if status != 0 or step % record_every == 0:
                for a in range(D):
                    states[rec, a] = x[a]
                times[rec] = step * dt
                rec += 1
            if status != 0:
                break
        if times[rec - 1] != step * dt:
            for a in range(D):
                states[rec, a] = x[a]
            times[rec] = step * dt
            rec += 1
    return states_np[:rec].copy(), times_np[:rec].copy(), status, step


def rk4_score(const double[:, ::1] U, const Py_ssize_t[::1] shape, const Py_ssize_t[::1] off,
              int code, double q, const double[::1] temps, const double[::1] rates,
              const double[::1] z0, double dt, Py_ssize_t n_steps, double rest_tol,
              double zcap, Py_ssize_t record_every):
    """Fixed-step RK4 of the relative-score dynamics.

    Returns (scores, times, status, steps): status 0 = reached n_steps,
    1 = field norm below rest_tol, 3 = choice-map failure or non-finite,
    4 = some |z| exceeded zcap (vertex reached).
    """
    cdef Py_ssize_t N = shape.shape[0], D = off[N], R = z0.shape[0]
    cdef Py_ssize_t idx[MAX_PLAYERS]
    cdef Py_ssize_t nrec = n_steps // record_every + 2
    zs_np = np.empty((nrec, R))
    times_np = np.empty(nrec)
    cdef double[:, ::1] zs = zs_np
    cdef double[::1] times = times_np
    cdef Py_ssize_t Rb = R if R > 0 else 1
    cdef double[::1] z = np.zeros(Rb)
    cdef double[::1] zt = np.zeros(Rb)
    cdef double[::1] k1 = np.zeros(Rb)
    cdef double[::1] k2 = np.zeros(Rb)
    cdef double[::1] k3 = np.zeros(Rb)
    cdef double[::1] k4 = np.zeros(Rb)
    cdef double[::1] xbuf = np.empty(D)
    cdef double[::1] ubuf = np.empty(D)
    cdef double[::1] ybuf = np.empty(D)
    cdef Py_ssize_t step = 0, a, rec = 0
    cdef int status = 0
    cdef double nrm
    for a in range(R):
        z[a] = z0[a]
    with nogil:
        for a in range(R):
            zs[0, a] = z[a]
        times[0] = 0.0
        rec = 1
        while True:
            if c_zd_field(U, &shape[0], &off[0], N, code, q, &temps[0], &rates[0], &z[0], &k1[0],
                          &xbuf[0], &ubuf[0], &ybuf[0], idx) != 0:
                status = 3
                break
            nrm = 0.0
            for a in range(R):
                if fabs(k1[a]) > nrm:
                    nrm = fabs(k1[a])
            if nrm < rest_tol:
                status = 1
                break
            if step >= n_steps:
                break
            for a in range(R):
                zt[a] = z[a] + 0.5 * dt * k1[a]
            if c_zd_field(U, &shape[0], &off[0], N, code, q, &temps[0], &rates[0], &zt[0], &k2[0],
                          &xbuf[0], &ubuf[0], &ybuf[0], idx) != 0:
                status = 3
                break
            for a in range(R):
                zt[a] = z[a] + 0.5 * dt * k2[a]
            if c_zd_field(U, &shape[0], &off[0], N, code, q, &temps[0], &rates[0], &zt[0], &k3[0],
                          &xbuf[0], &ubuf[0], &ybuf[0], idx) != 0:
                status = 3
                break
            for a in range(R):
                zt[a] = z[a] + dt * k3[a]
            if c_zd_field(U, &shape[0], &off[0], N, code, q, &temps[0], &rates[0], &zt[0], &k4[0],
                          &xbuf[0], &ubuf[0], &ybuf[0], idx) != 0:
                status = 3
                break
            for a in range(R):
                z[a] = z[a] + dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a])
            step += 1
            for a in range(R):
                if not isfinite(z[a]):
                    status = 3
                elif fabs(z[a]) > zcap:
                    status = 4
            if status != 0 or step % record_every == 0:
                for a in range(R):
                    zs[rec, a] = z[a]
                times[rec] = step * dt
                rec += 1
            if status != 0:
                break
        if times[rec - 1] != step * dt:
            for a in range(R):
                zs[rec, a] = z[a]
            times[rec] = step * dt
            rec += 1
    return zs_np[:rec].copy(), times_np[:rec].copy(), status, step


cdef int c_update(int code, double q, double T, double gamma, double* x, Py_ssize_t n,
                  Py_ssize_t chosen, double uhat, double* out) noexcept nogil:
    cdef Py_ssize_t a
    cdef double ent, inv_sum, sd, th, w, base
    if code == 0:
        ent = 0.0
        for a in range(n):
            if x[a] > 0.0:
                ent += x[a] * log(x[a])
        for a in range(n):
            if x[a] > 0.0:
                out[a] = x[a] + gamma * (((1.0 if a == chosen else 0.0) - x[a]) * uhat
                                         - T * x[a] * (log(x[a]) - ent))
            else:
                out[a] = x[a] + gamma * ((1.0 if a == chosen else 0.0) - x[a]) * uhat
        return 0
    inv_sum = 0.0
    sd = 0.0
    for a in range(n):
        w = 1.0 / d2(code, q, x[a])
        inv_sum += w
        sd += d1(code, q, x[a]) * w
    th = 1.0 / inv_sum
    base = uhat / x[chosen]
    w = th / d2(code, q, x[chosen])
    for a in range(n):
        out[a] = x[a] + gamma / d2(code, q, x[a]) * (
            base * ((1.0 if a == chosen else 0.0) - w) - T * (d1(code, q, x[a]) - th * sd))
    return 0


def strategy_update(int code, double q, double T, double gamma, const double[::1] x,
                    Py_ssize_t chosen, double uhat, double[::1] out):
    cdef double[::1] xc = np.array(x, dtype=float)
    c_update(code, q, T, gamma, &xc[0], xc.shape[0], chosen, uhat, &out[0])


def learn(const double[:, ::1] U, const Py_ssize_t[::1] shape, const Py_ssize_t[::1] off,
          int code, double q, const double[::1] temps, const double[::1] x0,
          const double[::1] gammas, const double[:, ::1] uniforms, const double[:, ::1] noise,
          const unsigned char[:, ::1] revise, const int[:, :, ::1] delays, int max_delay,
          double[:, ::1] X, int[:, ::1] actions, double[:, ::1] seen):
    """Strategy-based learning loop (synchronous or asynchronous with delays).

    Row 0 of X holds x0; row n holds the state after iteration n. Returns
    (status, step): 0 = completed, 1 = coordinate below -1e-14 (or a
    non-Gibbs coordinate hit 0), 2 = non-finite value.
    """
    cdef Py_ssize_t N = shape.shape[0], D = off[N], n_iter = uniforms.shape[0]
    cdef Py_ssize_t n, k, a, na, j, p, tau, src
    cdef Py_ssize_t counters[MAX_PLAYERS]
    cdef Py_ssize_t joint[MAX_PLAYERS]
    cdef double[::1] cur = np.array(x0, dtype=float)
    cdef double[::1] nxt = np.empty(D)
    cdef double cum, uhat, g
    cdef int status = 0
    for a in range(D):
        X[0, a] = cur[a]
    for k in range(N):
        counters[k] = 0
    with nogil:
        for n in range(n_iter):
            for k in range(N):
                na = shape[k]
                cum = 0.0
                actions[n, k] = <int>(na - 1)
                for a in range(na):
                    cum += cur[off[k] + a]
                    if uniforms[n, k] < cum:
                        actions[n, k] = <int>a
                        break
            for a in range(D):
                nxt[a] = cur[a]
            for k in range(N):
                if not revise[n, k]:
                    seen[n, k] = 0.0
                    continue
                tau = 0
                if max_delay > 0:
                    tau = delays[n, k, actions[n, k]]
                    if tau > n:
                        tau = n
                src = n - tau
                p = 0
                for j in range(N):
                    if j == k:
                        p = p * shape[j] + actions[n, k]
                    else:
                        p = p * shape[j] + actions[src, j]
                uhat = U[k, p] + noise[n, k]
                seen[n, k] = uhat
                counters[k] += 1
                g = gammas[counters[k]]
                c_update(code, q, temps[k], g, &cur[off[k]], shape[k], actions[n, k], uhat, &nxt[off[k]])
            for a in range(D):
                if not isfinite(nxt[a]):
                    status = 2
                elif nxt[a] < -1e-14 or (code != 0 and nxt[a] <= 0.0):
                    status = 1
            for a in range(D):
                cur[a] = nxt[a]
                X[n + 1, a] = cur[a]
            if status != 0:
                break
    return status, (n + 1 if status != 0 else n_iter)
