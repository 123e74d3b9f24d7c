"""Plant description, Riccati solvers and the covariance prediction map.

Both Riccati equations are solved by plain fixed-point iteration with a
symmetric re-projection after every step, so the code works for any state
dimension and mirrors the recursions it implements.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100_000
RANK_TOL = 1e-8


class ModelError(ValueError):
    """Raised when a plant or weight description is inconsistent."""


class ConvergenceError(RuntimeError):
    """Raised when a fixed-point iteration exhausts its budget."""

    def __init__(self, msg, iterations=None, residual=None):
        super().__init__(msg)
        self.iterations = iterations
        self.residual = residual


def _as_matrix(x, name):
    m = np.atleast_2d(np.asarray(x, dtype=float))
    if m.ndim != 2:
        raise ModelError(f"{name} must be a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ModelError(f"{name} has non-finite entries")
    return m


def _sym(x):
    return 0.5 * (x + x.T)


def _check_spd(m, name, strict=True):
    if m.shape[0] != m.shape[1]:
        raise ModelError(f"{name} must be square, got {m.shape}")
    if not np.allclose(m, m.T, atol=1e-12 * max(1.0, np.abs(m).max())):
        raise ModelError(f"{name} must be symmetric")
    lo = np.linalg.eigvalsh(_sym(m)).min()
    if strict and lo <= 0.0:
        raise ModelError(f"{name} must be positive definite (min eigenvalue {lo:.3e})")
    if not strict and lo < -1e-12 * max(1.0, np.abs(m).max()):
        raise ModelError(f"{name} must be positive semidefinite (min eigenvalue {lo:.3e})")


def controllability_matrix(A, B):
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def observability_matrix(A, C):
    return controllability_matrix(A.T, C.T).T


def _rank(m, tol=RANK_TOL):
    s = np.linalg.svd(m, compute_uv=False)
    return int(np.sum(s > tol * max(1.0, s.max(initial=0.0))))


def is_controllable(A, B):
    return _rank(controllability_matrix(A, B)) == A.shape[0]


def is_detectable(A, C):
    """PBH test on the eigenvalues of A outside the open unit disk."""
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0:
            continue
        pbh = np.vstack([lam * np.eye(n) - A, C.astype(complex)])
        if _rank(pbh) < n:
            return False
    return True


@dataclass(frozen=True, eq=False)
class PlantModel:
    """Linear plant ``x+ = A x + B u + w``, ``y = C x + v``.

    ``Q`` and ``R`` are the covariances of ``w`` and ``v``.  Construction
    validates shapes, definiteness, controllability of ``(A, B)`` and
    detectability of ``(A, C)``; ``check_structure=False`` skips the two
    rank tests (degenerate test plants only).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    check_structure: bool = True

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        C = _as_matrix(self.C, "C")
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ModelError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ModelError(f"B must have {n} rows, got {B.shape}")
        if C.shape[1] != n:
            raise ModelError(f"C must have {n} columns, got {C.shape}")
        if Q.shape != (n, n):
            raise ModelError(f"Q must be {n}x{n}, got {Q.shape}")
        if R.shape != (C.shape[0], C.shape[0]):
            raise ModelError(f"R must be {C.shape[0]}x{C.shape[0]}, got {R.shape}")
        _check_spd(Q, "Q")
        _check_spd(R, "R")
        if self.check_structure:
            if not is_controllable(A, B):
                raise ModelError("(A, B) is not controllable")
            if not is_detectable(A, C):
                raise ModelError("(A, C) is not detectable")
        for name, m in zip("ABCQR", (A, B, C, Q, R)):
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def n_u(self):
        return self.B.shape[1]

    @property
    def n_y(self):
        return self.C.shape[0]


@dataclass(frozen=True, eq=False)
class ControlWeights:
    """Quadratic state/input weights and the discount factor.

    ``undiscounted=True`` admits ``eta = 1`` for finite-horizon checks; the
    game layer always requires ``eta < 1``.
    """

    W: np.ndarray
    U: np.ndarray
    eta: float
    undiscounted: bool = False

    def __post_init__(self):
        W = _as_matrix(self.W, "W")
        U = _as_matrix(self.U, "U")
        _check_spd(W, "W", strict=False)
        _check_spd(U, "U")
        eta = float(self.eta)
        upper_ok = eta <= 1.0 if self.undiscounted else eta < 1.0
        if not (eta > 0.0 and upper_ok):
            raise ModelError(f"eta must lie in (0, 1), got {eta}")
        W.setflags(write=False)
        U.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "eta", eta)

    def check_against(self, model):
        if self.W.shape != (model.n_x, model.n_x):
            raise ModelError(f"W must be {model.n_x}x{model.n_x}, got {self.W.shape}")
        if self.U.shape != (model.n_u, model.n_u):
            raise ModelError(f"U must be {model.n_u}x{model.n_u}, got {self.U.shape}")


def filter_gain(P, model):
    """Kalman gain for filtered covariance ``P`` of the previous step."""
    Pp = model.A @ P @ model.A.T + model.Q
    S = model.C @ Pp @ model.C.T + model.R
    return np.linalg.solve(S.T, (Pp @ model.C.T).T).T


def filter_riccati_step(P, model):
    """One step ``P -> (I - K C)(A P A' + Q)`` of the filtered-covariance recursion."""
    Pp = model.A @ P @ model.A.T + model.Q
    K = filter_gain(P, model)
    return _sym((np.eye(model.n_x) - K @ model.C) @ Pp)


def _converged(res, X, tol):
    return res < tol and res <= tol * np.linalg.norm(X, 2)


def steady_state_filter_riccati(model, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Return ``(Pbar, Kbar)`` for the steady-state sensor Kalman filter.

    Iterates the filtered-covariance recursion from ``P = Q`` until the
    spectral norm of the step falls below ``tol``, both in absolute terms
    and relative to ``P`` (so tiny noise covariances are not accepted on
    the first step).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    P = np.array(model.Q, dtype=float)
    res = np.inf
    for it in range(1, max_iter + 1):
        Pn = filter_riccati_step(P, model)
        res = np.linalg.norm(Pn - P, 2)
        P = Pn
        if _converged(res, P, tol):
            return P, filter_gain(P, model)
    raise ConvergenceError(
        f"filter Riccati did not converge in {max_iter} iterations (residual {res:.3e}); "
        "check detectability of (A, C)",
        iterations=max_iter,
        residual=res,
    )


def control_riccati_step(S, model, weights):
    A, B = model.A, model.B
    eta = weights.eta
    G = eta * B.T @ S @ B + weights.U
    BSA = B.T @ S @ A
    Sn = eta * A.T @ S @ A + weights.W - eta**2 * BSA.T @ np.linalg.solve(G, BSA)
    return _sym(Sn)


def control_riccati_finite(model, weights, K_horizon):
    """Backward discounted Riccati recursion.

    Returns the list ``[S_{K+1}, S_K, ..., S_0]`` starting from the terminal
    condition ``S_{K+1} = W``.  ``K_horizon = 0`` yields ``[W]`` alone.
    """
    if K_horizon < 0:
        raise ValueError("K_horizon must be nonnegative")
    weights.check_against(model)
    seq = [np.array(weights.W, dtype=float)]
    for _ in range(K_horizon):
        seq.append(control_riccati_step(seq[-1], model, weights))
    return seq


def control_riccati_infinite(model, weights, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Fixed point of the discounted control Riccati equation.

    Iterates from ``S = W``; stops once the spectral norm of the fixed-point
    residual is below ``tol``, absolutely and relative to ``S``.
    """
    weights.check_against(model)
    S = np.array(weights.W, dtype=float)
    res = np.inf
    for _ in range(max_iter):
        Sn = control_riccati_step(S, model, weights)
        res = np.linalg.norm(Sn - S, 2)
        S = Sn
        if _converged(res, S, tol):
            return S
    raise ConvergenceError(
        f"control Riccati did not converge in {max_iter} iterations (residual {res:.3e})",
        iterations=max_iter,
        residual=res,
    )


def f_apply(X, steps, model):
    """Apply ``f(X) = A X A' + Q`` ``steps`` times; ``steps = 0`` returns ``X``."""
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    X = np.array(X, dtype=float)
    for _ in range(steps):
        X = _sym(model.A @ X @ model.A.T + model.Q)
    return X


def f_powers(X, count, model):
    """``[f^0(X), ..., f^{count-1}(X)]`` as an array of shape ``(count, n, n)``."""
    out = np.empty((count,) + np.shape(X))
    cur = np.array(X, dtype=float)
    for i in range(count):
        out[i] = cur
        cur = _sym(model.A @ cur @ model.A.T + model.Q)
    return out


def stability_margin(model, eta):
    """Lower bound on the attacked delivery rate that keeps the cost bounded.

    Returns ``1 - eta / rho(A)**2``; an attacked success rate above this
    value is sufficient.  Nilpotent ``A`` gives ``-inf`` (always satisfied).
    """
    rho = np.abs(np.linalg.eigvals(model.A)).max()
    if rho == 0.0:
        return -np.inf
    return 1.0 - eta / rho**2


def satisfies_stability(model, eta, lambda_a):
    return lambda_a > stability_margin(model, eta)
