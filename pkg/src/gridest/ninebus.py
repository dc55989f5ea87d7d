"""Two-axis dynamic model of the WSCC 9-bus system.

Each of the three generators carries seven differential states
(rotor angle delta, speed omega, transient EMFs E'q and E'd, and the
IEEE Type-I exciter states Efd, RF, VR) and two algebraic stator
currents (Id, Iq); the network contributes rectangular bus voltages
(Vre, Vim) at all nine buses.  The full state vector is

    u = (x, y),  x in R^21,  y in R^24,

ordered machine-major in the x block (7 states per machine) and
(Id_1, Iq_1, ..., Id_3, Iq_3, Vre_1, Vim_1, ..., Vre_9, Vim_9) in the
y block.  The semi-explicit DAE reads

    dx/dt = h(x, y; m),   0 = g(x, y),

written throughout as M du/dt = F(t, u; m) with M = diag(I, 0) and
F = (h, g).  The estimated parameter vector m holds the three inertia
constants H_i (seconds); all other constants come from the data file.

Loads are constant-admittance injections: a bus consuming (P, Q) at
the initial power-flow voltage V0 is modeled by the fixed admittance
Y_L = (P - jQ)/|V0|^2, so its actual consumption scales with
(|V|/|V0|)^2 during transients.  A disturbance temporarily replaces
the active-power value P used to form that admittance at one bus; it
enters F only through that bus's current-balance rows.  (A true
constant-power load would make the large disturbances studied here
statically infeasible: the network cannot deliver 5.5 pu behind the
transient reactances at any voltage.)
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .powerflow import PQ, PV, SLACK, solve_power_flow

N_BUS = 9
N_MACH = 3
N_X = 7 * N_MACH          # differential states
N_Y = 2 * N_MACH + 2 * N_BUS   # stator currents + bus voltages
N_STATE = N_X + N_Y

# per-machine offsets inside a 7-state block
DELTA, OMEGA, EQP, EDP, EFD, RF, VR = range(7)

_X_LABELS = ("delta", "omega", "eqp", "edp", "efd", "rf", "vr")


def ix_x(mach: int, comp: int) -> int:
    """Flat index of differential state `comp` of machine `mach`."""
    return 7 * mach + comp


def ix_id(mach: int) -> int:
    return N_X + 2 * mach


def ix_iq(mach: int) -> int:
    return N_X + 2 * mach + 1


def ix_vre(bus: int) -> int:
    """Flat index of the real voltage at 0-based bus index."""
    return N_X + 2 * N_MACH + 2 * bus


def ix_vim(bus: int) -> int:
    return N_X + 2 * N_MACH + 2 * bus + 1


def state_names() -> list[str]:
    names = [f"{lbl}_{i + 1}" for i in range(N_MACH) for lbl in _X_LABELS]
    names += [f"{lbl}_{i + 1}" for i in range(N_MACH) for lbl in ("id", "iq")]
    names += [f"{lbl}_{b + 1}" for b in range(N_BUS) for lbl in ("vre", "vim")]
    return names


@dataclass(frozen=True)
class DisturbanceEvent:
    """Temporary replacement of the active-power load at one bus.

    Active on [start, start + duration); `load` is the replacement
    active power in pu.  Bus numbering is 1-based as in the data file.
    """
    bus: int
    start: float
    duration: float
    load: float

    def __post_init__(self):
        if not 1 <= self.bus <= N_BUS:
            raise ValueError(f"event bus {self.bus} outside 1..{N_BUS}")
        if self.start < 0:
            raise ValueError("event start must be >= 0")
        if self.duration <= 0:
            raise ValueError("event duration must be positive")

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass(frozen=True)
class GeneratorParams:
    """Constants of the three machines and their exciters (arrays over machines)."""
    bus: np.ndarray       # 0-based bus index of each machine
    h_ref: np.ndarray     # reference inertia constants (s)
    d: np.ndarray         # damping torque coefficient (pu torque / pu speed)
    rs: np.ndarray
    xd: np.ndarray
    xdp: np.ndarray
    xq: np.ndarray
    xqp: np.ndarray
    td0p: np.ndarray
    tq0p: np.ndarray
    ka: np.ndarray
    ta: np.ndarray
    ke: np.ndarray
    te: np.ndarray
    kf: np.ndarray
    tf: np.ndarray
    sat_a: np.ndarray
    sat_b: np.ndarray

    def __post_init__(self):
        if not (np.all(self.xd >= self.xdp) and np.all(self.xdp > 0)):
            raise ValueError("require xd >= xdp > 0")
        if not (np.all(self.xq >= self.xqp) and np.all(self.xqp > 0)):
            raise ValueError("require xq >= xqp > 0")
        for name in ("td0p", "tq0p", "ta", "te", "tf"):
            if not np.all(getattr(self, name) > 0):
                raise ValueError(f"time constant {name} must be positive")


@dataclass(frozen=True)
class NetworkData:
    ybus: np.ndarray      # complex (9, 9) admittance matrix
    bus_type: np.ndarray  # SLACK / PV / PQ per bus
    v_set: np.ndarray     # regulated magnitudes (slack + PV; 1.0 elsewhere)
    p_gen_set: np.ndarray  # scheduled active generation per bus
    p_load: np.ndarray    # nominal constant-power loads
    q_load: np.ndarray


def _build_ybus(branches) -> np.ndarray:
    y = np.zeros((N_BUS, N_BUS), dtype=complex)
    for br in branches:
        f, t = br["from"] - 1, br["to"] - 1
        ys = 1.0 / complex(br["r"], br["x"])
        ysh = 0.5j * br.get("b", 0.0)
        y[f, f] += ys + ysh
        y[t, t] += ys + ysh
        y[f, t] -= ys
        y[t, f] -= ys
    return y


class NineBusSystem:
    """Immutable-after-init model object.

    All evaluation methods (rhs, jac_u, jac_m, residual, jacobians) are
    pure functions of their arguments once `initialize` has run, so a
    single instance can be shared across threads/processes.
    """

    def __init__(self, network: NetworkData, gens: GeneratorParams,
                 omega_s: float):
        self.network = network
        self.gens = gens
        self.omega_s = omega_s
        self.n_param = N_MACH

        # mass "matrix": diagonal 1 on differential rows, 0 on algebraic
        self.mass = np.zeros(N_STATE)
        self.mass[:N_X] = 1.0

        # real 18x18 expansion of Ybus acting on (Vre_1, Vim_1, ...)
        g, b = network.ybus.real, network.ybus.imag
        ynet = np.zeros((2 * N_BUS, 2 * N_BUS))
        ynet[0::2, 0::2] = g
        ynet[0::2, 1::2] = -b
        ynet[1::2, 0::2] = b
        ynet[1::2, 1::2] = g
        self._ynet = ynet

        self._build_template()

        # filled by initialize()
        self.tm: np.ndarray | None = None
        self.vref: np.ndarray | None = None
        self._u0: np.ndarray | None = None
        self.pf_voltages: np.ndarray | None = None
        self._inv_v0_sq: np.ndarray | None = None

    # ------------------------------------------------------------------
    # construction helpers

    def _build_template(self):
        """Constant part of F_u; state-dependent entries are written per call."""
        gens = self.gens
        j0 = np.zeros((N_STATE, N_STATE))
        for i in range(N_MACH):
            xo = 7 * i
            s0, s1 = ix_id(i), ix_iq(i)
            j0[xo + DELTA, xo + OMEGA] = 1.0
            j0[xo + EQP, xo + EQP] = -1.0 / gens.td0p[i]
            j0[xo + EQP, s0] = -(gens.xd[i] - gens.xdp[i]) / gens.td0p[i]
            j0[xo + EQP, xo + EFD] = 1.0 / gens.td0p[i]
            j0[xo + EDP, xo + EDP] = -1.0 / gens.tq0p[i]
            j0[xo + EDP, s1] = (gens.xq[i] - gens.xqp[i]) / gens.tq0p[i]
            j0[xo + EFD, xo + VR] = 1.0 / gens.te[i]
            j0[xo + RF, xo + RF] = -1.0 / gens.tf[i]
            j0[xo + RF, xo + EFD] = gens.kf[i] / gens.tf[i] ** 2
            j0[xo + VR, xo + VR] = -1.0 / gens.ta[i]
            j0[xo + VR, xo + RF] = gens.ka[i] / gens.ta[i]
            j0[xo + VR, xo + EFD] = -gens.ka[i] * gens.kf[i] / (gens.tf[i] * gens.ta[i])
            # stator rows: E'd - Vd - Rs Id + X'q Iq ; E'q - Vq - Rs Iq - X'd Id
            j0[s0, xo + EDP] = 1.0
            j0[s0, s0] = -gens.rs[i]
            j0[s0, s1] = gens.xqp[i]
            j0[s1, xo + EQP] = 1.0
            j0[s1, s0] = -gens.xdp[i]
            j0[s1, s1] = -gens.rs[i]
        j0[N_X + 2 * N_MACH:, N_X + 2 * N_MACH:] = -self._ynet
        self._jtemplate = j0

    def initialize(self) -> np.ndarray:
        """Solve the power flow and build the consistent equilibrium state.

        Sets the mechanical torques and exciter references so that the
        returned state is a fixed point of the DAE for any inertia
        vector (the equilibrium does not involve H).  Returns u0.
        """
        nw = self.network
        gens = self.gens
        p_spec = nw.p_gen_set - nw.p_load
        q_spec = -nw.q_load
        vc, s_inj, _ = solve_power_flow(nw.ybus, nw.bus_type, p_spec,
                                        q_spec, nw.v_set, tol=1e-13)
        self.pf_voltages = vc
        # load admittances are anchored at the initial voltages
        self._inv_v0_sq = 1.0 / np.abs(vc) ** 2

        gb = gens.bus
        s_gen = s_inj[gb] + nw.p_load[gb] + 1j * nw.q_load[gb]
        v_g = vc[gb]
        i_g = np.conj(s_gen / v_g)
        e = v_g + (gens.rs + 1j * gens.xq) * i_g
        delta0 = np.angle(e)
        sd, cd = np.sin(delta0), np.cos(delta0)
        vd = v_g.real * sd - v_g.imag * cd
        vq = v_g.real * cd + v_g.imag * sd
        id0 = i_g.real * sd - i_g.imag * cd
        iq0 = i_g.real * cd + i_g.imag * sd

        edp0 = vd + gens.rs * id0 - gens.xqp * iq0
        eqp0 = vq + gens.rs * iq0 + gens.xdp * id0
        efd0 = eqp0 + (gens.xd - gens.xdp) * id0
        te0 = edp0 * id0 + eqp0 * iq0 + (gens.xqp - gens.xdp) * id0 * iq0
        se0 = gens.sat_a * np.exp(gens.sat_b * efd0)
        vr0 = (gens.ke + se0) * efd0
        rf0 = gens.kf / gens.tf * efd0

        self.tm = te0
        self.vref = np.abs(v_g) + vr0 / gens.ka

        u0 = np.zeros(N_STATE)
        for i in range(N_MACH):
            xo = 7 * i
            u0[xo + DELTA] = delta0[i]
            u0[xo + OMEGA] = self.omega_s
            u0[xo + EQP] = eqp0[i]
            u0[xo + EDP] = edp0[i]
            u0[xo + EFD] = efd0[i]
            u0[xo + RF] = rf0[i]
            u0[xo + VR] = vr0[i]
            u0[ix_id(i)] = id0[i]
            u0[ix_iq(i)] = iq0[i]
        u0[ix_vre(0)::2][:N_BUS] = vc.real
        u0[ix_vim(0)::2][:N_BUS] = vc.imag
        self._u0 = u0
        return u0.copy()

    def steady_state(self) -> np.ndarray:
        if self._u0 is None:
            raise RuntimeError("system not initialized")
        return self._u0.copy()

    # ------------------------------------------------------------------
    # load schedule

    def loads_at(self, t: float, events=()) -> tuple[np.ndarray, np.ndarray]:
        """Constant-power loads active at time t ([start, end) convention)."""
        p = self.network.p_load.copy()
        q = self.network.q_load.copy()
        for ev in events:
            if ev.start <= t < ev.end:
                p[ev.bus - 1] = ev.load
        return p, q

    # ------------------------------------------------------------------
    # DAE right-hand side and Jacobians (F convention: M du/dt = F)

    def _check_ready(self):
        if self.tm is None:
            raise RuntimeError("system not initialized; call initialize()")

    def rhs(self, t: float, u: np.ndarray, m: np.ndarray,
            p_load: np.ndarray, q_load: np.ndarray) -> np.ndarray:
        """F(t, u; m) = (h, g): differential RHS rows plus algebraic residuals."""
        self._check_ready()
        gens = self.gens
        ws = self.omega_s

        delta = u[DELTA:N_X:7]
        omega = u[OMEGA:N_X:7]
        eqp = u[EQP:N_X:7]
        edp = u[EDP:N_X:7]
        efd = u[EFD:N_X:7]
        rf = u[RF:N_X:7]
        vr = u[VR:N_X:7]
        cur_d = u[N_X:N_X + 2 * N_MACH:2]
        cur_q = u[N_X + 1:N_X + 2 * N_MACH:2]
        vre = u[N_X + 2 * N_MACH::2]
        vim = u[N_X + 2 * N_MACH + 1::2]

        sd, cd = np.sin(delta), np.cos(delta)
        vre_g, vim_g = vre[gens.bus], vim[gens.bus]
        vd = vre_g * sd - vim_g * cd
        vq = vre_g * cd + vim_g * sd
        vmag = np.hypot(vre_g, vim_g)

        te = edp * cur_d + eqp * cur_q + (gens.xqp - gens.xdp) * cur_d * cur_q
        se = gens.sat_a * np.exp(gens.sat_b * efd)

        f = np.empty(N_STATE)
        f[DELTA:N_X:7] = omega - ws
        f[OMEGA:N_X:7] = ws / (2.0 * m) * (self.tm - te
                                           - gens.d * (omega - ws) / ws)
        f[EQP:N_X:7] = (-eqp - (gens.xd - gens.xdp) * cur_d + efd) / gens.td0p
        f[EDP:N_X:7] = (-edp + (gens.xq - gens.xqp) * cur_q) / gens.tq0p
        f[EFD:N_X:7] = (-(gens.ke + se) * efd + vr) / gens.te
        f[RF:N_X:7] = (-rf + gens.kf / gens.tf * efd) / gens.tf
        f[VR:N_X:7] = (-vr + gens.ka * rf - gens.ka * gens.kf / gens.tf * efd
                       + gens.ka * (self.vref - vmag)) / gens.ta

        # stator algebraic rows
        f[N_X:N_X + 2 * N_MACH:2] = edp - vd - gens.rs * cur_d + gens.xqp * cur_q
        f[N_X + 1:N_X + 2 * N_MACH:2] = eqp - vq - gens.rs * cur_q - gens.xdp * cur_d

        # network current balance: I_gen - I_load - Ybus V = 0 with the
        # load current Y_L V, Y_L = (P - jQ) / |V0|^2
        gl = p_load * self._inv_v0_sq
        bl = -q_load * self._inv_v0_sq
        il_r = gl * vre - bl * vim
        il_i = bl * vre + gl * vim
        inet = self._ynet @ u[N_X + 2 * N_MACH:]
        net_r = -inet[0::2] - il_r
        net_i = -inet[1::2] - il_i
        np.add.at(net_r, gens.bus, cur_d * sd + cur_q * cd)
        np.add.at(net_i, gens.bus, -cur_d * cd + cur_q * sd)
        f[N_X + 2 * N_MACH::2] = net_r
        f[N_X + 2 * N_MACH + 1::2] = net_i
        return f

    def jac_u(self, t: float, u: np.ndarray, m: np.ndarray,
              p_load: np.ndarray, q_load: np.ndarray) -> np.ndarray:
        """dF/du as a dense (45, 45) array."""
        self._check_ready()
        gens = self.gens
        ws = self.omega_s
        jac = self._jtemplate.copy()

        vre = u[N_X + 2 * N_MACH::2]
        vim = u[N_X + 2 * N_MACH + 1::2]

        for i in range(N_MACH):
            xo = 7 * i
            s0, s1 = ix_id(i), ix_iq(i)
            delta = u[xo + DELTA]
            efd = u[xo + EFD]
            cur_d, cur_q = u[s0], u[s1]
            bus = gens.bus[i]
            rv, iv = ix_vre(bus), ix_vim(bus)
            vre_g, vim_g = u[rv], u[iv]
            sd, cd = np.sin(delta), np.cos(delta)
            vd = vre_g * sd - vim_g * cd
            vq = vre_g * cd + vim_g * sd
            vmag = np.hypot(vre_g, vim_g)
            c = ws / (2.0 * m[i])

            # swing row (depends on m)
            jac[xo + OMEGA, xo + OMEGA] = -c * gens.d[i] / ws
            jac[xo + OMEGA, xo + EQP] = -c * cur_q
            jac[xo + OMEGA, xo + EDP] = -c * cur_d
            jac[xo + OMEGA, s0] = -c * (u[xo + EDP] + (gens.xqp[i] - gens.xdp[i]) * cur_q)
            jac[xo + OMEGA, s1] = -c * (u[xo + EQP] + (gens.xqp[i] - gens.xdp[i]) * cur_d)
            # exciter saturation
            se_slope = gens.sat_a[i] * np.exp(gens.sat_b[i] * efd) \
                * (1.0 + gens.sat_b[i] * efd)
            jac[xo + EFD, xo + EFD] = -(gens.ke[i] + se_slope) / gens.te[i]
            # terminal-voltage feedback
            jac[xo + VR, rv] = -gens.ka[i] / gens.ta[i] * vre_g / vmag
            jac[xo + VR, iv] = -gens.ka[i] / gens.ta[i] * vim_g / vmag
            # stator rows, state-dependent part
            jac[s0, xo + DELTA] = -vq
            jac[s0, rv] = -sd
            jac[s0, iv] = cd
            jac[s1, xo + DELTA] = vd
            jac[s1, rv] = -cd
            jac[s1, iv] = -sd
            # generator current injection into the network rows
            nr, ni = ix_vre(bus), ix_vim(bus)
            jac[nr, s0] = sd
            jac[nr, s1] = cd
            jac[nr, xo + DELTA] = cur_d * cd - cur_q * sd
            jac[ni, s0] = -cd
            jac[ni, s1] = sd
            jac[ni, xo + DELTA] = cur_d * sd + cur_q * cd

        # constant-admittance load currents
        for bus in np.flatnonzero((p_load != 0.0) | (q_load != 0.0)):
            gl = p_load[bus] * self._inv_v0_sq[bus]
            bl = -q_load[bus] * self._inv_v0_sq[bus]
            rv, iv = ix_vre(bus), ix_vim(bus)
            jac[rv, rv] -= gl
            jac[rv, iv] -= -bl
            jac[iv, rv] -= bl
            jac[iv, iv] -= gl
        return jac

    def jac_m(self, t: float, u: np.ndarray, m: np.ndarray,
              p_load: np.ndarray, q_load: np.ndarray) -> np.ndarray:
        """dF/dm, nonzero only in the three swing rows."""
        self._check_ready()
        gens = self.gens
        ws = self.omega_s
        omega = u[OMEGA:N_X:7]
        eqp = u[EQP:N_X:7]
        edp = u[EDP:N_X:7]
        cur_d = u[N_X:N_X + 2 * N_MACH:2]
        cur_q = u[N_X + 1:N_X + 2 * N_MACH:2]
        te = edp * cur_d + eqp * cur_q + (gens.xqp - gens.xdp) * cur_d * cur_q
        accel = self.tm - te - gens.d * (omega - ws) / ws
        jac = np.zeros((N_STATE, self.n_param))
        jac[OMEGA:N_X:7, :] = np.diag(-ws / (2.0 * m ** 2) * accel)
        return jac

    # ------------------------------------------------------------------
    # residual-convention surface (M du/dt - F and its derivatives)

    def residual(self, t: float, u: np.ndarray, udot: np.ndarray,
                 m: np.ndarray, events=()) -> np.ndarray:
        """DAE residual M du/dt - F(t, u; m) under the active load set."""
        p, q = self.loads_at(t, events)
        return self.mass * udot - self.rhs(t, u, m, p, q)

    def jacobians(self, t: float, u: np.ndarray, m: np.ndarray,
                  events=()) -> tuple[np.ndarray, np.ndarray]:
        """Derivatives of the residual w.r.t. u and m (udot held fixed)."""
        p, q = self.loads_at(t, events)
        return -self.jac_u(t, u, m, p, q), -self.jac_m(t, u, m, p, q)

    @property
    def h_ref(self) -> np.ndarray:
        return self.gens.h_ref.copy()


def load_system(path: str | Path | None = None) -> NineBusSystem:
    """Load the data file, solve the initial power flow, return the model.

    With no argument the packaged WSCC 9-bus data set is used.
    """
    if path is None:
        src = resources.files("gridest.data").joinpath("wscc9.yaml")
        raw = yaml.safe_load(src.read_text())
    else:
        raw = yaml.safe_load(Path(path).read_text())
    if raw.get("version") != 1:
        raise ValueError("unsupported data file version")

    buses = raw["buses"]
    if len(buses) != N_BUS:
        raise ValueError(f"expected {N_BUS} buses, got {len(buses)}")
    type_map = {"slack": SLACK, "pv": PV, "pq": PQ}
    bus_type = np.empty(N_BUS, dtype=int)
    v_set = np.ones(N_BUS)
    p_load = np.zeros(N_BUS)
    q_load = np.zeros(N_BUS)
    for entry in buses:
        b = entry["id"] - 1
        bus_type[b] = type_map[entry["type"]]
        v_set[b] = entry.get("v_set", 1.0)
        p_load[b] = entry.get("p_load", 0.0)
        q_load[b] = entry.get("q_load", 0.0)

    gens_raw = raw["generators"]
    if len(gens_raw) != N_MACH:
        raise ValueError(f"expected {N_MACH} generators, got {len(gens_raw)}")
    exc = raw["exciters"]

    def col(key):
        return np.array([g[key] for g in gens_raw], dtype=float)

    p_gen_set = np.zeros(N_BUS)
    for g in gens_raw:
        p_gen_set[g["bus"] - 1] = g["p_set"]

    gens = GeneratorParams(
        bus=np.array([g["bus"] - 1 for g in gens_raw]),
        h_ref=col("h"), d=col("d"), rs=col("rs"),
        xd=col("xd"), xdp=col("xdp"), xq=col("xq"), xqp=col("xqp"),
        td0p=col("td0p"), tq0p=col("tq0p"),
        ka=np.full(N_MACH, float(exc["ka"])),
        ta=np.full(N_MACH, float(exc["ta"])),
        ke=np.full(N_MACH, float(exc["ke"])),
        te=np.full(N_MACH, float(exc["te"])),
        kf=np.full(N_MACH, float(exc["kf"])),
        tf=np.full(N_MACH, float(exc["tf"])),
        sat_a=np.full(N_MACH, float(exc["sat_a"])),
        sat_b=np.full(N_MACH, float(exc["sat_b"])),
    )

    network = NetworkData(
        ybus=_build_ybus(raw["branches"]),
        bus_type=bus_type, v_set=v_set,
        p_gen_set=p_gen_set, p_load=p_load, q_load=q_load,
    )
    omega_s = 2.0 * np.pi * raw["system"]["f_hz"]
    system = NineBusSystem(network, gens, omega_s)
    system.initialize()
    return system
