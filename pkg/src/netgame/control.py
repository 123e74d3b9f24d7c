"""Separated feedback law built from the discounted control Riccati solution."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lti_model import DEFAULT_MAX_ITER, DEFAULT_TOL, control_riccati_infinite


@dataclass(frozen=True, eq=False)
class ControlSolution:
    S_inf: np.ndarray
    L: np.ndarray
    M_inf: np.ndarray


def control_gain(S, model, weights):
    """``L = -eta (eta B' S B + U)^{-1} B' S A`` so that ``u = L @ xhat``."""
    eta = weights.eta
    B = model.B
    G = eta * B.T @ S @ B + weights.U
    return -eta * np.linalg.solve(G, B.T @ S @ model.A)


def stage_weight(S, model, weights):
    """``eta A' S A + W - S``, the weight multiplying the controller covariance."""
    M = weights.eta * model.A.T @ S @ model.A + weights.W - S
    return 0.5 * (M + M.T)


def control_input(L, xhat):
    return np.asarray(L) @ np.asarray(xhat, dtype=float)


def solve_control(model, weights, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Infinite-horizon gain and stage weight; depends on ``(A, B, W, U, eta)`` only."""
    S = control_riccati_infinite(model, weights, tol=tol, max_iter=max_iter)
    return ControlSolution(S_inf=S, L=control_gain(S, model, weights), M_inf=stage_weight(S, model, weights))
