"""Command-line interface: simulate, synthesize, estimate, sweep, check.

Every output file starts with a reproducibility header (resolved config
plus package version) and all numbers are written with repr-precision,
so a rerun with the same config and seed is byte-identical.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__
from .bayes import AdjointObjective, estimate_adjoint
from .integrator import simulate, write_trajectory_csv
from .ninebus import DisturbanceEvent, load_system, state_names
from .observation import (observe, read_observations,
                          synthesize_observations, write_observations)
from .pce import estimate_pce
from .scenario import ScenarioConfig

FMT = "{:.17g}"


def _fmt(x) -> str:
    return FMT.format(float(x))


def _header_lines(cfg: ScenarioConfig) -> list[str]:
    return [f"gridest {__version__}",
            "config " + json.dumps(cfg.to_dict(), sort_keys=True)]


def _load_config(args) -> ScenarioConfig:
    cfg = (ScenarioConfig.from_file(args.config) if args.config
           else ScenarioConfig())
    cfg = cfg.with_overrides(
        t_f=args.t_f, dt=args.dt, dt_obs=args.dt_obs,
        noise_var=args.noise_var, seed=args.seed, method=args.method,
        pce_order=args.pce_order, pce_rule=args.pce_rule)
    if getattr(args, "no_disturbance", False):
        cfg = replace(cfg, disturbance=None)
    elif any(getattr(args, k) is not None
             for k in ("bus", "event_start", "event_duration", "load")):
        base = cfg.disturbance or DisturbanceEvent(bus=5, start=0.1,
                                                   duration=0.2, load=5.5)
        cfg = replace(cfg, disturbance=DisturbanceEvent(
            bus=base.bus if args.bus is None else args.bus,
            start=base.start if args.event_start is None else args.event_start,
            duration=(base.duration if args.event_duration is None
                      else args.event_duration),
            load=base.load if args.load is None else args.load))
    return cfg


def _synth(cfg: ScenarioConfig, system):
    """Ground-truth trajectory, then noisy observations of it."""
    times = cfg.times()
    traj = simulate(system, np.array(cfg.m_true), cfg.t_f, cfg.dt,
                    events=cfg.events())
    noise = cfg.noise(2 * 9 * len(times))
    obs = synthesize_observations(traj, times, noise, cfg.seed,
                                  meta={"seed": cfg.seed})
    return traj, obs, noise


# -- subcommands ---------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    system = load_system()
    traj = simulate(system, np.array(cfg.m_true), cfg.t_f, cfg.dt,
                    events=cfg.events())
    hdr = _header_lines(cfg)
    prefix = Path(args.out_prefix)
    traj_path = prefix.with_name(prefix.name + "_trajectory.csv")
    obs_path = prefix.with_name(prefix.name + "_observables.csv")
    write_trajectory_csv(traj, traj_path, state_names(), header_lines=hdr)
    times = cfg.times()
    clean = observe(traj, times)
    with open(obs_path, "w", newline="") as fh:
        for line in hdr:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["time", "bus", "v_re", "v_im"])
        for k, t in enumerate(times):
            for b in range(9):
                base = 18 * k + 2 * b
                w.writerow([_fmt(t), b + 1, _fmt(clean[base]),
                            _fmt(clean[base + 1])])
    print(f"simulated {len(traj.times)} steps to t={cfg.t_f} s")
    print(f"wrote {traj_path} and {obs_path}")
    return 0


def cmd_synth_data(args) -> int:
    cfg = _load_config(args)
    system = load_system()
    _, obs, noise = _synth(cfg, system)
    write_observations(obs, noise, args.out, header_lines=_header_lines(cfg))
    print(f"wrote {obs.size} noisy observations to {args.out}")
    return 0


def _report(summary, cfg: ScenarioConfig) -> str:
    std = np.sqrt(np.diag(summary.gamma_post))
    lines = [f"method: {summary.method}",
             "  param        map        std        cns"]
    cns = summary.cns if summary.cns is not None else [float("nan")] * 3
    for i, (m, s, p) in enumerate(zip(summary.m_map, std, cns)):
        lines.append(f"  m_{i + 1}    {m:10.4f} {s:10.4f}     {p:6.4f}")
    if summary.err is not None:
        lines.append(f"  Err = {summary.err:.4e}   tau = {summary.tau:.4e}")
    st = summary.stats
    if summary.method == "adjoint":
        lines.append(
            f"  cost: {st['iterations']} iterations, "
            f"{st['map_forward_solves']} forward + "
            f"{st['map_adjoint_solves']} adjoint solves (MAP), "
            f"{st['hessian_forward_solves']} gradient evals (Hessian)")
    else:
        lines.append(
            f"  cost: {st['surrogate_forward_solves']} forward sims "
            f"(surrogate, {cfg.pce_rule}, order {cfg.pce_order})")
    return "\n".join(lines)


def cmd_estimate(args) -> int:
    cfg = _load_config(args)
    system = load_system()
    obs, noise = read_observations(args.data)
    m_true = np.array(cfg.m_true)
    if cfg.method == "adjoint":
        summary = estimate_adjoint(system, obs, noise, cfg.prior(), cfg.t_f,
                                   cfg.dt, cfg.events(), m_true=m_true)
    else:
        summary, _ = estimate_pce(system, obs, noise, cfg.prior(), cfg.t_f,
                                  cfg.dt, cfg.events(), order=cfg.pce_order,
                                  rule=cfg.pce_rule, m_true=m_true,
                                  seed=cfg.seed, jobs=args.jobs)
    summary.to_json(args.out, extra={"config": cfg.to_dict(),
                                     "version": __version__})
    print(_report(summary, cfg))
    print(f"wrote {args.out}")
    return 0


_SWEEP_FIELDS = ["index", "t_f", "dt", "dt_obs", "load", "noise_var", "seed",
                 "method", "m_map_1", "m_map_2", "m_map_3",
                 "trace_gamma_post", "err", "tau", "cns_1", "cns_2", "cns_3",
                 "iterations", "forward_solves", "adjoint_solves",
                 "converged"]


def _derived_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence(entropy=master,
                                      spawn_key=(index,)).generate_state(1)[0])


def _sweep_one(packed):
    index, cfg = packed
    system = load_system()
    _, obs, noise = _synth(cfg, system)
    m_true = np.array(cfg.m_true)
    if cfg.method == "adjoint":
        s = estimate_adjoint(system, obs, noise, cfg.prior(), cfg.t_f,
                             cfg.dt, cfg.events(), m_true=m_true)
        fwd = s.stats["map_forward_solves"] + s.stats["hessian_forward_solves"]
        adj = s.stats["map_adjoint_solves"] + s.stats["hessian_forward_solves"]
        its, conv = s.stats["iterations"], s.stats["converged"]
    else:
        s, _ = estimate_pce(system, obs, noise, cfg.prior(), cfg.t_f, cfg.dt,
                            cfg.events(), order=cfg.pce_order,
                            rule=cfg.pce_rule, m_true=m_true, seed=cfg.seed)
        fwd, adj = s.stats["surrogate_forward_solves"], 0
        its, conv = s.stats["iterations"], s.stats["converged"]
    load = cfg.disturbance.load if cfg.disturbance is not None else 0.0
    return [index, _fmt(cfg.t_f), _fmt(cfg.dt), _fmt(cfg.dt_obs), _fmt(load),
            _fmt(cfg.noise_var), cfg.seed, cfg.method,
            _fmt(s.m_map[0]), _fmt(s.m_map[1]), _fmt(s.m_map[2]),
            _fmt(np.trace(s.gamma_post)), _fmt(s.err), _fmt(s.tau),
            _fmt(s.cns[0]), _fmt(s.cns[1]), _fmt(s.cns[2]),
            its, fwd, adj, int(conv)]


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    axes = {"t_f": args.t_f_list, "dt_obs": args.dt_obs_list,
            "load": args.load_list, "noise_var": args.noise_var_list}
    for name, vals in axes.items():
        if vals is not None and len(vals) == 0:
            raise SystemExit(f"sweep axis {name} is empty")
    grid = list(product(
        axes["t_f"] or [cfg.t_f], axes["dt_obs"] or [cfg.dt_obs],
        axes["load"] or [None], axes["noise_var"] or [cfg.noise_var]))
    if not grid:
        raise SystemExit("sweep grid is empty")
    scenarios = []
    for i, (t_f, dt_obs, load, nv) in enumerate(grid):
        dist = cfg.disturbance
        if load is not None:
            if dist is None:
                raise SystemExit("--load-list requires a disturbance")
            dist = DisturbanceEvent(bus=dist.bus, start=dist.start,
                                    duration=dist.duration, load=load)
        scenarios.append((i, cfg.with_overrides(
            t_f=t_f, dt_obs=dt_obs, noise_var=nv, disturbance=dist,
            seed=_derived_seed(cfg.seed, i))))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_one, scenarios))
    else:
        rows = [_sweep_one(s) for s in scenarios]
    with open(args.out, "w", newline="") as fh:
        for line in _header_lines(cfg):
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(_SWEEP_FIELDS)
        w.writerows(rows)
    print(f"wrote {len(rows)} scenario rows to {args.out}")
    return 0


def cmd_gradient_check(args) -> int:
    cfg = _load_config(args)
    system = load_system()
    _, obs, noise = _synth(cfg, system)
    objective = AdjointObjective(system, obs, noise, cfg.prior(), cfg.t_f,
                                 cfg.dt, cfg.events())
    rng = np.random.default_rng(cfg.seed)
    points = [np.array(cfg.prior_mean)]
    for _ in range(args.n_random):
        points.append(points[0] * (1.0 + 0.2 * rng.uniform(-1, 1, 3)))
    worst = 0.0
    print("  point                          max rel err")
    for m in points:
        g_adj = objective.gradient(m)
        g_fd = np.empty_like(g_adj)
        for i in range(m.size):
            h = args.fd_step * abs(m[i])
            e = np.zeros_like(m)
            e[i] = h
            g_fd[i] = (objective.value(m + e) - objective.value(m - e)) / (2 * h)
        rel = np.max(np.abs(g_adj - g_fd) / np.maximum(np.abs(g_fd), 1e-30))
        worst = max(worst, rel)
        print(f"  [{m[0]:8.4f} {m[1]:7.4f} {m[2]:7.4f}]   {rel:.3e}")
    ok = worst <= args.tol
    print(f"worst relative error {worst:.3e} "
          f"({'<=' if ok else '>'} tol {args.tol:.1e})")
    return 0 if ok else 1


# -- parser ---------------------------------------------------------------

def _scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="scenario YAML file")
    p.add_argument("--t-f", dest="t_f", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--dt-obs", dest="dt_obs", type=float)
    p.add_argument("--noise-var", dest="noise_var", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--method", choices=("adjoint", "pce"))
    p.add_argument("--pce-order", dest="pce_order", type=int)
    p.add_argument("--pce-rule", dest="pce_rule",
                   choices=("stochastic-testing", "tensor", "sparse"))
    p.add_argument("--bus", type=int, help="disturbance bus (1-based)")
    p.add_argument("--event-start", dest="event_start", type=float)
    p.add_argument("--event-duration", dest="event_duration", type=float)
    p.add_argument("--load", type=float, help="disturbance load in pu")
    p.add_argument("--no-disturbance", dest="no_disturbance",
                   action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gridest",
        description="Estimate generator inertias from transient voltages")
    ap.add_argument("--version", action="version",
                    version=f"gridest {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="forward-simulate the truth scenario")
    _scenario_flags(p)
    p.add_argument("--out-prefix", default="scenario")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synth-data", help="write noisy synthetic observations")
    _scenario_flags(p)
    p.add_argument("--out", default="observations.csv")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("estimate", help="MAP + Laplace posterior from data")
    _scenario_flags(p)
    p.add_argument("--data", required=True, help="observations CSV")
    p.add_argument("--out", default="posterior.json")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sweep", help="grid of scenarios, long-format CSV")
    _scenario_flags(p)
    p.add_argument("--t-f-list", dest="t_f_list", type=float, nargs="*")
    p.add_argument("--dt-obs-list", dest="dt_obs_list", type=float, nargs="*")
    p.add_argument("--load-list", dest="load_list", type=float, nargs="*")
    p.add_argument("--noise-var-list", dest="noise_var_list", type=float,
                   nargs="*")
    p.add_argument("--out", default="sweep.csv")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradient-check",
                       help="adjoint gradient vs central differences")
    _scenario_flags(p)
    p.add_argument("--n-random", dest="n_random", type=int, default=0)
    p.add_argument("--fd-step", dest="fd_step", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradient_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
