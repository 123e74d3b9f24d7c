# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: Shapley sweeps, Nash Q-learning and the closed-loop simulator.

Every kernel consumes pre-generated random numbers and mutates caller-owned
buffers, so the pure-Python twin in ``_core_py`` reproduces it step for step.
"""
from libc.math cimport fabs, pow

import numpy as np

BACKEND = "cython"


cdef inline double _max(double x, double y) nogil:
    return x if x >= y else y


cdef inline double _min(double x, double y) nogil:
    return x if x <= y else y


cdef inline void _saddle(double a, double b, double c, double d,
                         double* v, double* p, double* q) nogil:
    # payoff [[a, b], [c, d]]: rows nu (minimizer), columns attack (maximizer)
    cdef double r0 = _max(a, b)
    cdef double r1 = _max(c, d)
    cdef double c0 = _min(a, c)
    cdef double c1 = _min(b, d)
    cdef double minimax = _min(r0, r1)
    cdef double maximin = _max(c0, c1)
    cdef double den, scale, pp, qq
    if maximin >= minimax:
        v[0] = minimax
        if r0 == minimax and r1 == minimax:
            p[0] = 0.5
        elif r0 == minimax:
            p[0] = 0.0
        else:
            p[0] = 1.0
        if c0 == maximin and c1 == maximin:
            q[0] = 0.5
        elif c0 == maximin:
            q[0] = 0.0
        else:
            q[0] = 1.0
        return
    den = a - b - c + d
    scale = _max(_max(fabs(a), fabs(b)), _max(fabs(c), fabs(d)))
    if fabs(den) <= 1e-12 * _max(1.0, scale):
        v[0] = 0.5 * (minimax + maximin)
        p[0] = 0.5
        q[0] = 0.5
        return
    pp = (a - b) / den
    qq = (a - c) / den
    if pp < 0.0:
        pp = 0.0
    elif pp > 1.0:
        pp = 1.0
    if qq < 0.0:
        qq = 0.0
    elif qq > 1.0:
        qq = 1.0
    p[0] = pp
    q[0] = qq
    v[0] = a + pp * (c - a)


def saddle(double a, double b, double c, double d):
    cdef double v, p, q
    _saddle(a, b, c, d, &v, &p, &q)
    return v, p, q


cdef inline double _state_value(double[:, :, ::1] Q, unsigned char[::1] forced, Py_ssize_t s) nogil:
    cdef double v, p, q
    if forced[s]:
        return Q[s, 1, 1]
    _saddle(Q[s, 0, 0], Q[s, 0, 1], Q[s, 1, 0], Q[s, 1, 1], &v, &p, &q)
    return v


def shapley_iterate(double[:, :, ::1] r, long long[:, :, :, ::1] succ, double[:, :, :, ::1] prob,
                    unsigned char[::1] forced, double eta, double[::1] V, double tol, long long max_iter):
    """Jacobi sweeps of the minimax Bellman operator, in place on ``V``.

    Stops once ``max|TV - V| <= tol * max(1, max|V|)``; returns
    ``(iterations, residual, converged)``.
    """
    cdef Py_ssize_t S = V.shape[0]
    cdef Py_ssize_t s, i, j, k
    cdef long long it = 0
    cdef double res = 0.0, vmax, diff, v, p, q
    cdef double[:, :, ::1] Qb = np.empty((S, 2, 2))
    cdef double[::1] Vn = np.empty(S)
    cdef bint converged = False
    with nogil:
        while it < max_iter:
            it += 1
            for s in range(S):
                for i in range(2):
                    for j in range(2):
                        v = r[s, i, j]
                        for k in range(2):
                            v = v + eta * prob[s, i, j, k] * V[succ[s, i, j, k]]
                        Qb[s, i, j] = v
            res = 0.0
            vmax = 1.0
            for s in range(S):
                Vn[s] = _state_value(Qb, forced, s)
                diff = fabs(Vn[s] - V[s])
                if diff > res:
                    res = diff
                if fabs(Vn[s]) > vmax:
                    vmax = fabs(Vn[s])
            for s in range(S):
                V[s] = Vn[s]
            if res <= tol * vmax:
                converged = True
                break
    return it, res, converged


def qlearn_chunk(long long[:, :, :, ::1] succ, double[:, :, :, ::1] prob, double[:, :, :, ::1] cost,
                 unsigned char[::1] forced, double eta,
                 double[:, :, ::1] Q, long long[:, :, ::1] visits, long long[::1] carry,
                 double[:, ::1] uni,
                 double alpha_exponent, double alpha_scale, double eps_floor, double eps_decay,
                 long long steps_per_episode, long long initial_state):
    """Run ``uni.shape[0]`` Nash Q-learning updates in place.

    ``carry = [state, global_step]``.  Each step reads five uniforms:
    controller explore flag, controller action, attacker explore flag,
    attacker action, channel outcome.
    """
    cdef Py_ssize_t n = uni.shape[0]
    cdef Py_ssize_t t
    cdef long long s = carry[0]
    cdef long long step = carry[1]
    cdef long long s2, nu, at, cnt
    cdef double eps, v, pc, pa, target, alpha
    with nogil:
        for t in range(n):
            if step % steps_per_episode == 0:
                s = initial_state
            eps = pow(eps_decay, <double>step)
            if eps < eps_floor:
                eps = eps_floor
            if forced[s]:
                nu = 1
                at = 1
            else:
                _saddle(Q[s, 0, 0], Q[s, 0, 1], Q[s, 1, 0], Q[s, 1, 1], &v, &pc, &pa)
                if uni[t, 0] < eps:
                    nu = 1 if uni[t, 1] < 0.5 else 0
                else:
                    nu = 1 if uni[t, 1] < pc else 0
                if uni[t, 2] < eps:
                    at = 1 if uni[t, 3] < 0.5 else 0
                else:
                    at = 1 if uni[t, 3] < pa else 0
            if uni[t, 4] < prob[s, nu, at, 0]:
                s2 = succ[s, nu, at, 0]
                target = cost[s, nu, at, 0]
            else:
                s2 = succ[s, nu, at, 1]
                target = cost[s, nu, at, 1]
            target = target + eta * _state_value(Q, forced, s2)
            cnt = visits[s, nu, at] + 1
            visits[s, nu, at] = cnt
            alpha = pow(1.0 + alpha_scale * <double>(cnt - 1), -alpha_exponent)
            Q[s, nu, at] = Q[s, nu, at] + alpha * (target - Q[s, nu, at])
            s = s2
            step += 1
    carry[0] = s
    carry[1] = step


def simulate_chunk(double[:, ::1] A, double[:, ::1] B, double[:, ::1] C, double[:, ::1] L,
                   double[:, ::1] K, double[:, ::1] W, double[:, ::1] U,
                   double c_s, double c_a, double[::1] pi_c, double[::1] pi_a,
                   double lam, double lam_a,
                   double[:, ::1] w, double[:, ::1] v, double[:, ::1] uni,
                   double[::1] x, double[::1] xs, double[::1] xh, double[::1] u, long long[::1] tau,
                   double[:, ::1] X, double[:, ::1] XS, double[:, ::1] XH, double[:, ::1] UO,
                   signed char[::1] NU, signed char[::1] AT, signed char[::1] GAM,
                   long long[::1] TAU, double[::1] COST):
    """Closed-loop steps; ``x, xs, xh, u, tau`` carry the state between chunks."""
    cdef Py_ssize_t n = uni.shape[0]
    cdef Py_ssize_t nx = A.shape[0]
    cdef Py_ssize_t nu_dim = B.shape[1]
    cdef Py_ssize_t ny = C.shape[0]
    cdef Py_ssize_t npol = pi_c.shape[0]
    cdef Py_ssize_t k, i, j
    cdef long long ti
    cdef int nu, at, gam
    cdef double acc, p, quad
    cdef double[::1] pred = np.empty(nx)
    cdef double[::1] innov = np.empty(ny)
    cdef double[::1] xbar = np.empty(nx)
    cdef double[::1] xnext = np.empty(nx)
    with nogil:
        for k in range(n):
            # sensor: predict with previous input, correct with y_k = C x_k + v_k
            for i in range(nx):
                acc = 0.0
                for j in range(nx):
                    acc = acc + A[i, j] * xs[j]
                for j in range(nu_dim):
                    acc = acc + B[i, j] * u[j]
                pred[i] = acc
            for i in range(ny):
                acc = 0.0
                for j in range(nx):
                    acc = acc + C[i, j] * x[j]
                acc = acc + v[k, i]
                for j in range(nx):
                    acc = acc - C[i, j] * pred[j]
                innov[i] = acc
            for i in range(nx):
                acc = pred[i]
                for j in range(ny):
                    acc = acc + K[i, j] * innov[j]
                xs[i] = acc
            # open-loop prediction at the controller
            for i in range(nx):
                acc = 0.0
                for j in range(nx):
                    acc = acc + A[i, j] * xh[j]
                for j in range(nu_dim):
                    acc = acc + B[i, j] * u[j]
                xbar[i] = acc
            ti = tau[0]
            if ti > npol - 1:
                ti = npol - 1
            nu = 1 if uni[k, 0] < pi_c[ti] else 0
            at = 1 if uni[k, 1] < pi_a[ti] else 0
            if nu == 0:
                p = 0.0
            elif at == 1:
                p = lam_a
            else:
                p = lam
            gam = 1 if uni[k, 2] < p else 0
            if nu * gam == 1:
                for i in range(nx):
                    xh[i] = xs[i]
                tau[0] = 0
            else:
                for i in range(nx):
                    xh[i] = xbar[i]
                tau[0] = tau[0] + 1
            for i in range(nu_dim):
                acc = 0.0
                for j in range(nx):
                    acc = acc + L[i, j] * xh[j]
                u[i] = acc
            quad = 0.0
            for i in range(nx):
                acc = 0.0
                for j in range(nx):
                    acc = acc + W[i, j] * x[j]
                quad = quad + x[i] * acc
            for i in range(nu_dim):
                acc = 0.0
                for j in range(nu_dim):
                    acc = acc + U[i, j] * u[j]
                quad = quad + u[i] * acc
            for i in range(nx):
                X[k, i] = x[i]
                XS[k, i] = xs[i]
                XH[k, i] = xh[i]
            for i in range(nu_dim):
                UO[k, i] = u[i]
            NU[k] = nu
            AT[k] = at
            GAM[k] = gam
            TAU[k] = tau[0]
            COST[k] = quad + c_s * nu - c_a * at
            for i in range(nx):
                acc = 0.0
                for j in range(nx):
                    acc = acc + A[i, j] * x[j]
                for j in range(nu_dim):
                    acc = acc + B[i, j] * u[j]
                xnext[i] = acc + w[k, i]
            for i in range(nx):
                x[i] = xnext[i]
