"""Newton power flow against the published nine-bus operating point."""
import numpy as np
import pytest

from gridest.ninebus import load_system
from gridest.powerflow import (PowerFlowError, _jacobian, mismatch,
                               solve_power_flow)

# Classic WSCC nine-bus solution (machine base 100 MVA), magnitudes in
# per unit and angles in degrees, bus order 1..9.
V_MAG = np.array([1.0400, 1.0250, 1.0250, 1.0258, 0.9956, 1.0127,
                  1.0258, 1.0159, 1.0324])
V_ANG = np.array([0.0, 9.2800, 4.6648, -2.2168, -3.9888, -3.6874,
                  3.7197, 0.7275, 1.9667])


def _solve(system, **kw):
    nw = system.network
    p_spec = nw.p_gen_set - nw.p_load
    q_spec = -nw.q_load
    return solve_power_flow(nw.ybus, nw.bus_type, p_spec, q_spec,
                            nw.v_set, **kw)


def test_matches_published_operating_point(system):
    vc, s_inj, it = _solve(system, tol=1e-12)
    assert np.max(np.abs(np.abs(vc) - V_MAG)) < 2e-3
    ang = np.degrees(np.angle(vc))
    assert np.max(np.abs(ang - V_ANG)) < 0.1
    # slack generation covers load plus losses
    p_gen = s_inj.real[:3] + system.network.p_load[:3]
    assert p_gen[0] == pytest.approx(0.716, abs=5e-3)


def test_mismatch_zero_at_solution(system):
    nw = system.network
    vc, _, _ = _solve(system, tol=1e-13)
    dp, dq = mismatch(nw.ybus, np.abs(vc), np.angle(vc),
                      nw.p_gen_set - nw.p_load, -nw.q_load)
    pv_pq = nw.bus_type != 0
    pq = nw.bus_type == 2
    assert np.max(np.abs(dp[pv_pq])) < 1e-12
    assert np.max(np.abs(dq[pq])) < 1e-12


def test_quadratic_convergence(system):
    # Newton from flat start should land in a handful of iterations
    _, _, it = _solve(system, tol=1e-12)
    assert it <= 6


def test_jacobian_matches_finite_differences(system):
    nw = system.network
    rng = np.random.default_rng(7)
    v = 1.0 + 0.05 * rng.uniform(-1, 1, 9)
    theta = 0.1 * rng.uniform(-1, 1, 9)
    vc = v * np.exp(1j * theta)
    s = vc * np.conj(nw.ybus @ vc)
    dp_dth, dp_dv, dq_dth, dq_dv = _jacobian(nw.ybus, v, theta, s.real, s.imag)

    def calc(vv, th):
        z = vv * np.exp(1j * th)
        s = z * np.conj(nw.ybus @ z)
        return s.real, s.imag

    h = 1e-7
    for j in range(9):
        e = np.zeros(9)
        e[j] = h
        p_up, q_up = calc(v, theta + e)
        p_dn, q_dn = calc(v, theta - e)
        assert np.allclose(dp_dth[:, j], (p_up - p_dn) / (2 * h), atol=1e-6)
        assert np.allclose(dq_dth[:, j], (q_up - q_dn) / (2 * h), atol=1e-6)
        p_up, q_up = calc(v + e, theta)
        p_dn, q_dn = calc(v - e, theta)
        assert np.allclose(dp_dv[:, j], (p_up - p_dn) / (2 * h), atol=1e-6)
        assert np.allclose(dq_dv[:, j], (q_up - q_dn) / (2 * h), atol=1e-6)


def test_raises_when_not_converged(system):
    with pytest.raises(PowerFlowError):
        _solve(system, tol=1e-12, max_iter=1)


def test_fresh_load_matches_session_fixture(system):
    other = load_system()
    assert np.allclose(other.network.ybus, system.network.ybus)
    assert np.array_equal(other.network.bus_type, system.network.bus_type)
