"""Sensor-side steady-state Kalman filter and the controller-side remote estimator."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .lti_model import f_apply, steady_state_filter_riccati


class ProtocolError(ValueError):
    """A packet was supplied (or withheld) inconsistently with ``nu * gamma``."""


@dataclass(frozen=True, eq=False)
class LocalFilterState:
    xhat_s: np.ndarray
    Pbar: np.ndarray
    Kbar: np.ndarray

    @classmethod
    def initial(cls, model, xhat_s=None, Pbar=None, Kbar=None):
        if Pbar is None or Kbar is None:
            Pbar, Kbar = steady_state_filter_riccati(model)
        if xhat_s is None:
            xhat_s = np.zeros(model.n_x)
        return cls(np.asarray(xhat_s, dtype=float), Pbar, Kbar)


@dataclass(frozen=True, eq=False)
class RemoteEstimatorState:
    """Controller estimate, holding time and the last applied input.

    The controller-side error covariance is never stored; it is
    ``f^tau(Pbar)`` and is available through :meth:`covariance`.
    """

    xhat: np.ndarray
    tau: int
    last_u: np.ndarray

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")

    @classmethod
    def initial(cls, model):
        return cls(np.zeros(model.n_x), 0, np.zeros(model.n_u))

    def covariance(self, Pbar, model):
        return f_apply(Pbar, self.tau, model)


def predict(A, x, B, u):
    """``A x + B u`` accumulated column by column in a fixed order.

    Matches the simulation kernels' arithmetic exactly, which lets a logged
    trace be replayed bit for bit.
    """
    acc = np.zeros(A.shape[0])
    for j in range(A.shape[1]):
        acc = acc + A[:, j] * x[j]
    for j in range(B.shape[1]):
        acc = acc + B[:, j] * u[j]
    return acc


def local_filter_step(state, y, u_prev, model):
    """Advance the sensor filter by one measurement with the steady gain."""
    pred = model.A @ state.xhat_s + model.B @ np.asarray(u_prev, dtype=float)
    innov = np.asarray(y, dtype=float) - model.C @ pred
    return replace(state, xhat_s=pred + state.Kbar @ innov)


def remote_update(state, nu, gamma, packet, u_prev, model):
    """Controller-side estimate after the channel outcome of this step.

    A delivered packet (``nu * gamma == 1``) replaces the estimate and resets
    the holding time; otherwise the previous estimate is propagated open loop
    and the holding time grows by one.
    """
    delivered = int(nu) * int(gamma) == 1
    if delivered and packet is None:
        raise ProtocolError("nu*gamma = 1 but no packet was delivered")
    if not delivered and packet is not None:
        raise ProtocolError("packet present although nu*gamma = 0")
    u_prev = np.asarray(u_prev, dtype=float)
    if delivered:
        return RemoteEstimatorState(np.asarray(packet, dtype=float).copy(), 0, u_prev)
    xbar = predict(model.A, state.xhat, model.B, u_prev)
    return RemoteEstimatorState(xbar, state.tau + 1, u_prev)
