"""Trapezoidal DAE stepper: exact linear recurrence, order, events, CSV."""
import csv
from types import SimpleNamespace

import numpy as np
import pytest

from gridest.integrator import (StepFailure, Trajectory, build_load_schedule,
                                simulate, solve_algebraic, write_trajectory_csv)
from gridest.ninebus import DisturbanceEvent, state_names


class ToyDAE:
    """Scalar linear test problem: x' = m*y, 0 = c*x - y, so x' = m*c*x.

    The algebraic coupling c plays the role of the switchable load
    (stored as p_load[0]); the exact trapezoidal update is the scalar
    recurrence x+ = x * (1 + a) / (1 - a) with a = m*c*dt/2.
    """

    def __init__(self, c=-0.5, x0=1.0):
        self.n_param = 1
        self.mass = np.array([1.0, 0.0])
        self.network = SimpleNamespace(p_load=np.array([c]),
                                       q_load=np.zeros(1))
        self._u0 = np.array([x0, c * x0])

    def steady_state(self):
        return self._u0.copy()

    def loads_at(self, t, events=()):
        p = self.network.p_load.copy()
        q = self.network.q_load.copy()
        for ev in events:
            if ev.start <= t < ev.end:
                p[ev.bus - 1] = ev.load
        return p, q

    def rhs(self, t, u, m, p, q):
        return np.array([m[0] * u[1], p[0] * u[0] - u[1]])

    def jac_u(self, t, u, m, p, q):
        return np.array([[0.0, m[0]], [p[0], -1.0]])


def test_toy_exact_recurrence():
    sys = ToyDAE(c=-0.5)
    m = np.array([1.0])
    dt = 0.05
    traj = simulate(sys, m, 1.0, dt)
    a = m[0] * (-0.5) * dt / 2
    r = (1 + a) / (1 - a)
    expected = r ** np.arange(traj.n_steps + 1)
    assert np.max(np.abs(traj.states[:, 0] - expected)) < 1e-12
    # algebraic constraint holds at every stored node
    assert np.max(np.abs(traj.states[:, 1] + 0.5 * traj.states[:, 0])) < 1e-12
    assert np.allclose(traj.times, np.arange(21) * dt)


def test_toy_second_order_convergence():
    m = np.array([1.0])
    exact = np.exp(-0.5)
    errs = []
    for dt in (0.1, 0.05, 0.025):
        traj = simulate(ToyDAE(c=-0.5), m, 1.0, dt)
        errs.append(abs(traj.states[-1, 0] - exact))
    assert 3.5 < errs[0] / errs[1] < 4.5
    assert 3.5 < errs[1] / errs[2] < 4.5


def test_toy_event_projection():
    # switch the algebraic coupling on [0.25, 0.5): x stays continuous,
    # y jumps, and the per-interval growth factors multiply exactly
    sys = ToyDAE(c=-0.5)
    m = np.array([2.0])
    dt = 0.05
    ev = DisturbanceEvent(bus=1, start=0.25, duration=0.25, load=-1.5)
    traj = simulate(sys, m, 0.75, dt, events=(ev,))

    def factor(c):
        a = m[0] * c * dt / 2
        return (1 + a) / (1 - a)

    k_on, k_off = 5, 10
    assert set(traj.pre_event) == {k_on, k_off}
    x = 1.0
    for k in range(traj.n_steps):
        c = -1.5 if k_on <= k < k_off else -0.5
        assert abs(traj.states[k + 1, 0] - x * factor(c)) < 1e-12 * abs(x)
        x *= factor(c)
    # pre-switch state kept for the adjoint; x-component continuous
    assert traj.pre_event[k_on][0] == traj.states[k_on, 0]
    assert traj.pre_event[k_on][1] == pytest.approx(-0.5 * traj.states[k_on, 0])
    assert traj.states[k_on, 1] == pytest.approx(-1.5 * traj.states[k_on, 0])


def test_load_schedule_dedupes_sets():
    sys = ToyDAE(c=-0.5)
    ev = DisturbanceEvent(bus=1, start=0.25, duration=0.25, load=-1.5)
    p_loads, q_loads, step_loads = build_load_schedule(sys, (ev,), 0.25, 1.0)
    assert len(p_loads) == 2  # nominal set reused after the event
    assert step_loads.tolist() == [0, 1, 0, 0]


def test_event_must_align_with_grid():
    sys = ToyDAE()
    ev = DisturbanceEvent(bus=1, start=0.013, duration=0.2, load=-1.0)
    with pytest.raises(ValueError, match="align"):
        simulate(sys, np.array([1.0]), 1.0, 0.05, events=(ev,))
    ev = DisturbanceEvent(bus=1, start=0.25, duration=1.0, load=-1.0)
    with pytest.raises(ValueError, match="after t_f"):
        simulate(sys, np.array([1.0]), 0.5, 0.05, events=(ev,))


def test_simulate_argument_validation():
    sys = ToyDAE()
    with pytest.raises(ValueError):
        simulate(sys, np.array([1.0, 2.0]), 1.0, 0.05)
    with pytest.raises(ValueError):
        simulate(sys, np.array([-1.0]), 1.0, 0.05)
    with pytest.raises(ValueError):
        simulate(sys, np.array([1.0]), 1.0, -0.05)
    with pytest.raises(ValueError):
        simulate(sys, np.array([1.0]), 0.0, 0.05)
    with pytest.raises(ValueError, match="multiple"):
        simulate(sys, np.array([1.0]), 0.52, 0.05)


def test_nine_bus_stays_on_equilibrium_without_events(system):
    traj = simulate(system, system.h_ref, 0.5, 0.01)
    u0 = system.steady_state()
    assert np.max(np.abs(traj.states - u0)) < 1e-12
    assert traj.newton_iters == 0  # start is exact, no correction needed


def test_nine_bus_event_run_shapes(system):
    ev = DisturbanceEvent(bus=5, start=0.1, duration=0.2, load=5.5)
    traj = simulate(system, system.h_ref, 0.5, 0.01, events=(ev,))
    assert isinstance(traj, Trajectory)
    assert traj.states.shape == (51, 45)
    assert np.all(np.isfinite(traj.states))
    assert set(traj.pre_event) == {10, 30}
    assert traj.newton_iters > 0
    # the disturbance actually moves the rotor angles
    u0 = system.steady_state()
    assert np.max(np.abs(traj.states[-1, :21] - u0[:21])) > 1e-3
    # algebraic consistency of the final stored state
    p, q = system.loads_at(0.49, (ev,))
    f = system.rhs(0.5, traj.states[-1], system.h_ref, p, q)
    assert np.max(np.abs(f[21:])) < 1e-9


def test_solve_algebraic_restores_consistency(system):
    u = system.steady_state()
    p, q = system.loads_at(0.15, (DisturbanceEvent(bus=5, start=0.1,
                                                   duration=0.2, load=5.5),))
    v = solve_algebraic(system, u, 0.15, system.h_ref, p, q)
    assert np.array_equal(v[:21], u[:21])
    f = system.rhs(0.15, v, system.h_ref, p, q)
    assert np.max(np.abs(f[21:])) < 1e-10


def test_newton_failure_is_reported():
    # algebraic constraint y^2 + 1 = 0 has no real solution: Newton
    # must stall and the stepper must say so instead of looping forever
    class Bad(ToyDAE):
        def rhs(self, t, u, m, p, q):
            return np.array([0.0, -(u[1] ** 2 + 1.0)])

        def jac_u(self, t, u, m, p, q):
            return np.array([[0.0, 0.0], [0.0, -2.0 * u[1]]])

    bad = Bad(c=-0.5)
    bad._u0 = np.array([1.0, 2.0])
    with pytest.raises(StepFailure):
        simulate(bad, np.array([1.0]), 1.0, 0.5)


def test_trajectory_csv_round_trip(tmp_path, system):
    ev = DisturbanceEvent(bus=5, start=0.1, duration=0.2, load=5.5)
    traj = simulate(system, system.h_ref, 0.3, 0.01, events=(ev,))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(traj, path, state_names(),
                         header_lines=("alpha", "beta"))
    lines = path.read_text().splitlines()
    assert lines[0] == "# alpha"
    assert lines[1] == "# beta"
    with open(path) as fh:
        rows = list(csv.reader(r for r in fh if not r.startswith("#")))
    header, data = rows[0], rows[1:]
    assert header[0] == "time"
    assert len(header) == 1 + 45 + 18
    assert header[1] == "delta_1"
    assert header[-1] == "vang_9"
    assert len(data) == 31
    vals = np.array(data, dtype=float)
    assert np.allclose(vals[:, 0], traj.times)
    assert np.allclose(vals[:, 1:46], traj.states, atol=0)
    # derived magnitude column consistent with the stored voltages
    vre, vim = traj.states[:, 27], traj.states[:, 28]
    assert np.allclose(vals[:, 46], np.hypot(vre, vim))
