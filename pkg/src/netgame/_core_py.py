"""Pure-Python twin of the compiled kernels in ``_core.pyx``.

Same signatures, same buffers mutated in place, same floating-point
operation order; used when the extension is unavailable or when
``NETGAME_PURE=1`` is set.
"""
import numpy as np

BACKEND = "python"


def saddle(a, b, c, d):
    """Value and equilibrium mixes of the 2x2 game ``[[a, b], [c, d]]``.

    Rows are the minimizer's actions, columns the maximizer's.  Returns
    ``(value, P(row 1), P(column 1))``.  Pure saddles are detected exactly;
    a player with two optimal pure actions mixes 0.5/0.5.
    """
    r0 = a if a >= b else b
    r1 = c if c >= d else d
    c0 = a if a <= c else c
    c1 = b if b <= d else d
    minimax = r0 if r0 <= r1 else r1
    maximin = c0 if c0 >= c1 else c1
    if maximin >= minimax:
        if r0 == minimax and r1 == minimax:
            p = 0.5
        elif r0 == minimax:
            p = 0.0
        else:
            p = 1.0
        if c0 == maximin and c1 == maximin:
            q = 0.5
        elif c0 == maximin:
            q = 0.0
        else:
            q = 1.0
        return minimax, p, q
    den = a - b - c + d
    scale = max(abs(a), abs(b), abs(c), abs(d))
    if abs(den) <= 1e-12 * max(1.0, scale):
        return 0.5 * (minimax + maximin), 0.5, 0.5
    p = min(max((a - b) / den, 0.0), 1.0)
    q = min(max((a - c) / den, 0.0), 1.0)
    return a + p * (c - a), p, q


def saddle_values(Q, forced):
    """Vectorized state values for a ``(S, 2, 2)`` table."""
    a, b, c, d = Q[:, 0, 0], Q[:, 0, 1], Q[:, 1, 0], Q[:, 1, 1]
    r0 = np.where(a >= b, a, b)
    r1 = np.where(c >= d, c, d)
    c0 = np.where(a <= c, a, c)
    c1 = np.where(b <= d, b, d)
    minimax = np.where(r0 <= r1, r0, r1)
    maximin = np.where(c0 >= c1, c0, c1)
    den = a - b - c + d
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), np.maximum(np.abs(c), np.abs(d)))
    degenerate = np.abs(den) <= 1e-12 * np.maximum(1.0, scale)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.clip((a - b) / np.where(degenerate, 1.0, den), 0.0, 1.0)
    mixed = np.where(degenerate, 0.5 * (minimax + maximin), a + p * (c - a))
    v = np.where(maximin >= minimax, minimax, mixed)
    return np.where(forced.astype(bool), d, v)


def shapley_iterate(r, succ, prob, forced, eta, V, tol, max_iter):
    it = 0
    res = 0.0
    converged = False
    p0 = eta * prob[..., 0]
    p1 = eta * prob[..., 1]
    s0 = succ[..., 0]
    s1 = succ[..., 1]
    while it < max_iter:
        it += 1
        Qb = r + p0 * V[s0] + p1 * V[s1]
        Vn = saddle_values(Qb, forced)
        res = float(np.abs(Vn - V).max())
        vmax = max(1.0, float(np.abs(Vn).max()))
        V[:] = Vn
        if res <= tol * vmax:
            converged = True
            break
    return it, res, converged


def _state_value(Q, forced, s):
    if forced[s]:
        return Q[s][1][1]
    q = Q[s]
    return saddle(q[0][0], q[0][1], q[1][0], q[1][1])[0]


def qlearn_chunk(succ, prob, cost, forced, eta, Q, visits, carry, uni,
                 alpha_exponent, alpha_scale, eps_floor, eps_decay,
                 steps_per_episode, initial_state):
    Ql = Q.tolist()
    vl = visits.tolist()
    sl = succ.tolist()
    pl = prob.tolist()
    cl = cost.tolist()
    fl = [bool(f) for f in forced]
    s = int(carry[0])
    step = int(carry[1])
    for row in uni.tolist():
        if step % steps_per_episode == 0:
            s = initial_state
        eps = eps_decay ** float(step)
        if eps < eps_floor:
            eps = eps_floor
        if fl[s]:
            nu = at = 1
        else:
            q = Ql[s]
            _, pc, pa = saddle(q[0][0], q[0][1], q[1][0], q[1][1])
            if row[0] < eps:
                nu = 1 if row[1] < 0.5 else 0
            else:
                nu = 1 if row[1] < pc else 0
            if row[2] < eps:
                at = 1 if row[3] < 0.5 else 0
            else:
                at = 1 if row[3] < pa else 0
        if row[4] < pl[s][nu][at][0]:
            s2 = sl[s][nu][at][0]
            target = cl[s][nu][at][0]
        else:
            s2 = sl[s][nu][at][1]
            target = cl[s][nu][at][1]
        target = target + eta * _state_value(Ql, fl, s2)
        cnt = vl[s][nu][at] + 1
        vl[s][nu][at] = cnt
        alpha = (1.0 + alpha_scale * float(cnt - 1)) ** (-alpha_exponent)
        Ql[s][nu][at] = Ql[s][nu][at] + alpha * (target - Ql[s][nu][at])
        s = s2
        step += 1
    Q[...] = Ql
    visits[...] = vl
    carry[0] = s
    carry[1] = step


def _matvec(M, x):
    out = []
    for row in M:
        acc = 0.0
        for mij, xj in zip(row, x):
            acc = acc + mij * xj
        out.append(acc)
    return out


def simulate_chunk(A, B, C, L, K, W, U, c_s, c_a, pi_c, pi_a, lam, lam_a,
                   w, v, uni, x, xs, xh, u, tau,
                   X, XS, XH, UO, NU, AT, GAM, TAU, COST):
    Al, Bl, Cl, Ll, Kl, Wl, Ul = (m.tolist() for m in (A, B, C, L, K, W, U))
    pcl = pi_c.tolist()
    pal = pi_a.tolist()
    npol = len(pcl)
    nx = len(Al)
    ny = len(Cl)
    xl, xsl, xhl, ul = x.tolist(), xs.tolist(), xh.tolist(), u.tolist()
    t = int(tau[0])
    wl, vl, unil = w.tolist(), v.tolist(), uni.tolist()
    for k in range(len(unil)):
        pred = []
        for i in range(nx):
            acc = 0.0
            for j in range(nx):
                acc = acc + Al[i][j] * xsl[j]
            for j in range(len(ul)):
                acc = acc + Bl[i][j] * ul[j]
            pred.append(acc)
        innov = []
        for i in range(ny):
            acc = 0.0
            for j in range(nx):
                acc = acc + Cl[i][j] * xl[j]
            acc = acc + vl[k][i]
            for j in range(nx):
                acc = acc - Cl[i][j] * pred[j]
            innov.append(acc)
        for i in range(nx):
            acc = pred[i]
            for j in range(ny):
                acc = acc + Kl[i][j] * innov[j]
            xsl[i] = acc
        xbar = []
        for i in range(nx):
            acc = 0.0
            for j in range(nx):
                acc = acc + Al[i][j] * xhl[j]
            for j in range(len(ul)):
                acc = acc + Bl[i][j] * ul[j]
            xbar.append(acc)
        ti = t if t < npol - 1 else npol - 1
        r = unil[k]
        nu = 1 if r[0] < pcl[ti] else 0
        at = 1 if r[1] < pal[ti] else 0
        p = 0.0 if nu == 0 else (lam_a if at == 1 else lam)
        gam = 1 if r[2] < p else 0
        if nu * gam == 1:
            xhl = list(xsl)
            t = 0
        else:
            xhl = xbar
            t = t + 1
        ul = _matvec(Ll, xhl)
        quad = 0.0
        for i, acc in enumerate(_matvec(Wl, xl)):
            quad = quad + xl[i] * acc
        for i, acc in enumerate(_matvec(Ul, ul)):
            quad = quad + ul[i] * acc
        X[k] = xl
        XS[k] = xsl
        XH[k] = xhl
        UO[k] = ul
        NU[k] = nu
        AT[k] = at
        GAM[k] = gam
        TAU[k] = t
        COST[k] = quad + c_s * nu - c_a * at
        xn = []
        for i in range(nx):
            acc = 0.0
            for j in range(nx):
                acc = acc + Al[i][j] * xl[j]
            for j in range(len(ul)):
                acc = acc + Bl[i][j] * ul[j]
            xn.append(acc + wl[k][i])
        xl = xn
    x[:] = xl
    xs[:] = xsl
    xh[:] = xhl
    u[:] = ul
    tau[0] = t
