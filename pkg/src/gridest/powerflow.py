"""Newton-Raphson AC power flow in polar coordinates.

Small dense solver for the steady-state initialization of the dynamic
model.  Bus types follow the usual convention: one slack bus (voltage
magnitude and angle fixed), PV buses (P and |V| fixed), PQ buses
(P and Q fixed).  All quantities are per unit on the system base.
"""
from __future__ import annotations

import numpy as np

SLACK, PV, PQ = 0, 1, 2


class PowerFlowError(RuntimeError):
    """Raised when the Newton iteration fails to meet tolerance."""


def mismatch(ybus: np.ndarray, v: np.ndarray, theta: np.ndarray,
             p_spec: np.ndarray, q_spec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Active/reactive power mismatch P_spec - P(V, theta) at every bus."""
    vc = v * np.exp(1j * theta)
    s = vc * np.conj(ybus @ vc)
    return p_spec - s.real, q_spec - s.imag


def _jacobian(ybus, v, theta, p_calc, q_calc):
    """Polar power-flow Jacobian blocks (dP/dtheta, dP/dV, dQ/dtheta, dQ/dV)."""
    n = len(v)
    g, b = ybus.real, ybus.imag
    th = theta[:, None] - theta[None, :]
    ct, st = np.cos(th), np.sin(th)
    # off-diagonal entries
    dp_dth = v[:, None] * v[None, :] * (g * st - b * ct)
    dp_dv = v[:, None] * (g * ct + b * st)
    dq_dth = -v[:, None] * v[None, :] * (g * ct + b * st)
    dq_dv = v[:, None] * (g * st - b * ct)
    # diagonals
    i = np.arange(n)
    dp_dth[i, i] = -q_calc - b.diagonal() * v**2
    dp_dv[i, i] = p_calc / v + g.diagonal() * v
    dq_dth[i, i] = p_calc - g.diagonal() * v**2
    dq_dv[i, i] = q_calc / v - b.diagonal() * v
    return dp_dth, dp_dv, dq_dth, dq_dv


def solve_power_flow(ybus: np.ndarray, bus_type: np.ndarray,
                     p_spec: np.ndarray, q_spec: np.ndarray,
                     v_set: np.ndarray, tol: float = 1e-12,
                     max_iter: int = 30):
    """Solve the power flow; returns (V complex, S injected, iterations).

    p_spec/q_spec are net injections (generation minus load); entries at
    the slack bus (and q at PV buses) are ignored.  v_set supplies the
    regulated magnitudes at slack/PV buses.  Convergence is measured as
    the infinity norm of the active/reactive mismatch at the buses where
    each quantity is constrained.
    """
    n = ybus.shape[0]
    bus_type = np.asarray(bus_type)
    pvpq = np.flatnonzero(bus_type != SLACK)
    pq = np.flatnonzero(bus_type == PQ)

    v = np.where(bus_type == PQ, 1.0, v_set).astype(float)
    theta = np.zeros(n)

    it = 0
    while True:
        dp, dq = mismatch(ybus, v, theta, p_spec, q_spec)
        f = np.concatenate([dp[pvpq], dq[pq]])
        if np.linalg.norm(f, np.inf) <= tol:
            break
        if it >= max_iter:
            raise PowerFlowError(
                f"power flow not converged after {max_iter} iterations, "
                f"mismatch {np.linalg.norm(f, np.inf):.3e}")
        vc = v * np.exp(1j * theta)
        s = vc * np.conj(ybus @ vc)
        dp_dth, dp_dv, dq_dth, dq_dv = _jacobian(ybus, v, theta, s.real, s.imag)
        jac = np.block([
            [dp_dth[np.ix_(pvpq, pvpq)], dp_dv[np.ix_(pvpq, pq)]],
            [dq_dth[np.ix_(pq, pvpq)], dq_dv[np.ix_(pq, pq)]],
        ])
        # mismatch f = spec - calc, so Newton step solves J dx = f
        dx = np.linalg.solve(jac, f)
        theta[pvpq] += dx[:len(pvpq)]
        v[pq] += dx[len(pvpq):]
        it += 1

    vc = v * np.exp(1j * theta)
    s_inj = vc * np.conj(ybus @ vc)
    return vc, s_inj, it
