"""Observation operator and synthetic measurement generation.

Observables are the bus-voltage components at a set of observation
times on the integration grid.  The default coordinates are
rectangular (v_re, v_im); a polar mode (|V|, angle) is available for
comparison studies.  Entries are laid out time-major,

    f[2*nb*k + 2*b + c],   k = time index, b = bus position, c = component,

with t = 0 never observed.  Values are pure grid extractions from the
trajectory (no interpolation), so observation times must be grid
multiples.

Synthetic data uses a counter-based PRNG so streams are reproducible
and documented: uniforms are (r >> 11 + 0.5) / 2^53 built from the raw
64-bit Philox4x64-10 stream keyed by the seed, mapped through the
inverse normal CDF and scaled by the per-entry noise std.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtri

RECT, POLAR = "rect", "polar"
_COMPONENTS = {RECT: ("v_re", "v_im"), POLAR: ("v_mag", "v_ang")}


@dataclass
class NoiseModel:
    """Independent Gaussian noise; variance per observation entry."""
    var: np.ndarray

    @classmethod
    def iid(cls, variance: float, n: int) -> "NoiseModel":
        if variance <= 0:
            raise ValueError("noise variance must be positive")
        return cls(var=np.full(n, float(variance)))

    def __post_init__(self):
        self.var = np.atleast_1d(np.asarray(self.var, dtype=float))
        if np.any(self.var <= 0):
            raise ValueError("noise variance must be positive")


@dataclass
class ObservationSet:
    """Measured (or extracted) observables with their layout metadata."""
    times: np.ndarray              # strictly increasing, > 0
    buses: np.ndarray              # 0-based bus indices, ordered
    values: np.ndarray             # flat, time-major
    coords: str = RECT
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.buses = np.asarray(self.buses, dtype=int)
        self.values = np.asarray(self.values, dtype=float)
        if self.coords not in _COMPONENTS:
            raise ValueError(f"unknown coords {self.coords!r}")
        if np.any(self.times <= 0):
            raise ValueError("observation times must be positive")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("observation times must be strictly increasing")
        q = 2 * len(self.buses) * len(self.times)
        if self.values.shape != (q,):
            raise ValueError(f"expected {q} values, got {self.values.shape}")

    @property
    def size(self) -> int:
        return self.values.size


def observation_times(t_f: float, dt_obs: float) -> np.ndarray:
    """Grid of observation instants: multiples of dt_obs in (0, t_f]."""
    n = int(np.floor(t_f / dt_obs + 1e-9))
    if n < 1:
        raise ValueError("no observation times in (0, t_f]")
    return np.arange(1, n + 1) * dt_obs


def grid_indices(times: np.ndarray, dt: float) -> np.ndarray:
    """Map observation times to trajectory node indices; exact multiples only."""
    k = np.round(np.asarray(times) / dt).astype(int)
    if not np.allclose(k * dt, times, rtol=0, atol=1e-9):
        raise ValueError("observation times must be multiples of dt")
    return k


def observe(traj, times: np.ndarray, buses=None, coords: str = RECT) -> np.ndarray:
    """Extract noiseless observables f from a trajectory (time-major flat)."""
    if buses is None:
        buses = np.arange(9)
    buses = np.asarray(buses, dtype=int)
    nodes = grid_indices(times, traj.dt)
    if nodes.max() > traj.n_steps:
        raise ValueError("observation time beyond the trajectory")
    vre = traj.states[np.ix_(nodes, [_vre_col(traj, b) for b in buses])]
    vim = traj.states[np.ix_(nodes, [_vre_col(traj, b) + 1 for b in buses])]
    if coords == RECT:
        comp0, comp1 = vre, vim
    elif coords == POLAR:
        comp0, comp1 = np.hypot(vre, vim), np.arctan2(vim, vre)
    else:
        raise ValueError(f"unknown coords {coords!r}")
    out = np.empty((len(nodes), len(buses), 2))
    out[:, :, 0] = comp0
    out[:, :, 1] = comp1
    return out.reshape(-1)


def _vre_col(traj, bus: int) -> int:
    n_state = traj.states.shape[1]
    return n_state - 18 + 2 * bus


def normal_stream(seed: int, n: int) -> np.ndarray:
    """Reproducible standard-normal draws (Philox counter stream + ndtri)."""
    raw = np.random.Philox(key=np.uint64(seed)).random_raw(n)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) / 2.0 ** 53
    return ndtri(u)


def synthesize(f_true: np.ndarray, noise: NoiseModel, seed: int) -> np.ndarray:
    """d = f + eta with eta ~ N(0, diag(var)) from the documented stream."""
    var = np.broadcast_to(noise.var, f_true.shape)
    return f_true + np.sqrt(var) * normal_stream(seed, f_true.size)


def synthesize_observations(traj, times, noise: NoiseModel, seed: int,
                            buses=None, coords: str = RECT,
                            meta: dict | None = None) -> ObservationSet:
    """Simulate the measurement process on an existing trajectory."""
    if buses is None:
        buses = np.arange(9)
    f = observe(traj, times, buses, coords)
    if noise.var.size == 1:
        noise = NoiseModel.iid(float(noise.var[0]), f.size)
    if noise.var.size != f.size:
        raise ValueError("noise variance length does not match observables")
    d = synthesize(f, noise, seed)
    info = {"seed": int(seed)}
    if meta:
        info.update(meta)
    return ObservationSet(times=np.asarray(times, float),
                          buses=np.asarray(buses, int),
                          values=d, coords=coords, meta=info)


# ----------------------------------------------------------------------
# file formats: CSV (time, bus, comp0, comp1) + JSON sidecar with the
# noise/seed/config metadata

def write_observations(obs: ObservationSet, noise: NoiseModel, path,
                       header_lines=()) -> None:
    path = Path(path)
    c0, c1 = _COMPONENTS[obs.coords]
    nb = len(obs.buses)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["time", "bus", c0, c1])
        for k, t in enumerate(obs.times):
            for j, b in enumerate(obs.buses):
                base = 2 * nb * k + 2 * j
                w.writerow([f"{t:.17g}", b + 1,
                            f"{obs.values[base]:.17g}",
                            f"{obs.values[base + 1]:.17g}"])
    if noise.var.size > 1 and np.all(noise.var == noise.var[0]):
        noise_field = {"iid": float(noise.var[0])}
    else:
        noise_field = noise.var.tolist()
    sidecar = {
        "coords": obs.coords,
        "noise_var": noise_field,
        "meta": _jsonable(obs.meta),
    }
    with open(path.with_suffix(path.suffix + ".meta.json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_observations(path) -> tuple[ObservationSet, NoiseModel]:
    path = Path(path)
    rows = []
    with open(path) as fh:
        rdr = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(rdr)
        coords = RECT if header[2] == "v_re" else POLAR
        for row in rdr:
            rows.append((float(row[0]), int(row[1]), float(row[2]), float(row[3])))
    times = sorted({r[0] for r in rows})
    buses = sorted({r[1] - 1 for r in rows})
    t_pos = {t: k for k, t in enumerate(times)}
    b_pos = {b: j for j, b in enumerate(buses)}
    values = np.full(2 * len(buses) * len(times), np.nan)
    for t, b, x0, x1 in rows:
        base = 2 * len(buses) * t_pos[t] + 2 * b_pos[b - 1]
        values[base] = x0
        values[base + 1] = x1
    if np.any(np.isnan(values)):
        raise ValueError(f"{path}: incomplete time/bus grid")

    meta_path = path.with_suffix(path.suffix + ".meta.json")
    meta: dict = {}
    noise_var = None
    if meta_path.exists():
        sidecar = json.loads(meta_path.read_text())
        meta = sidecar.get("meta", {})
        nv = sidecar.get("noise_var")
        if isinstance(nv, dict):
            noise_var = np.full(values.size, float(nv["iid"]))
        elif nv is not None:
            noise_var = np.asarray(nv, dtype=float)
    if noise_var is None:
        raise ValueError(f"{path}: missing noise metadata sidecar")
    obs = ObservationSet(times=np.asarray(times), buses=np.asarray(buses),
                         values=values, coords=coords, meta=meta)
    if noise_var.size == 1:
        noise_var = np.full(obs.size, noise_var[0])
    return obs, NoiseModel(var=noise_var)


def _jsonable(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, np.ndarray):
            out[k] = v.tolist()
        elif isinstance(v, (np.integer, np.floating)):
            out[k] = v.item()
        else:
            out[k] = v
    return out
