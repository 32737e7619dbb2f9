"""Command-line front end.

Every run writes ``manifest.json`` into the output directory before any
computation, then NDJSON event streams and CSV summaries.  Numbers are
rendered with 12 significant digits, so a rerun with the same manifest
produces byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, SimConfig, parse_config
from .diffusive import (diffusion_params, jump_generator_vs_diffusive, mean_field_convergence,
                        run_diffusive_density, run_diffusive_sse)
from .jumps import run_ensemble, run_trajectory, sample_outcome, trajectory_rng
from .kick import posterior_state
from .lattice import WaveFunction, gaussian_state, product_state
from .meter import output_density, povm_residual
from .mixing import DensityMatrix, nonselective_entropy_path, run_density_trajectory, symmetrize
from .oracle import (compare_to_oracle, ensemble_average, make_diffusive_master_rhs, make_jump_master_rhs,
                     ode_integrate, oracle_vs_oracle)

OUT_ENV = "SPONTLOC_OUT"
POVM_TOL = 1e-8
SUBCOMMANDS = ("kick", "trajectory", "ensemble", "mixing", "limits", "verify", "povm-check")
LIMIT_ACTIONS = ("mean-field", "central-limit", "diffusive-sse", "diffusive-density")
PAIRINGS = ("jump-vs-oracle", "diffusive-vs-oracle", "jump-oracle-vs-diffusive-oracle")


def fmt(v):
    """12-significant-digit rendering used for every number written."""
    if v is None:
        return None
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return int(v)
    return float(f"{float(v):.12g}")


def _cell(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return f"{float(v):.12g}"


class Writer:
    def __init__(self, out_dir: Path):
        self.out = out_dir
        self.out.mkdir(parents=True, exist_ok=True)

    def json(self, name: str, obj) -> None:
        (self.out / name).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def ndjson(self, name: str, rows) -> None:
        with open(self.out / name, "w") as fh:
            for row in rows:
                fh.write(json.dumps({k: fmt(v) if not isinstance(v, str) else v for k, v in row.items()})
                         + "\n")

    def csv(self, name: str, header, rows) -> None:
        with open(self.out / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])


def _moments(vec: np.ndarray, x: np.ndarray):
    p = np.abs(vec) ** 2
    return float(p.sum()), float(p @ x), float(p @ x**2)


def _outputs(args) -> list[str]:
    sub = args.command
    if sub == "kick":
        return ["kick.ndjson", "pointer_density.csv"]
    if sub == "trajectory":
        return ["trajectory.ndjson"]
    if sub == "ensemble":
        return ["ensemble.csv"]
    if sub == "mixing":
        out = ["mixing_events.ndjson", "entropy.csv"]
        return out + (["nonselective_entropy.csv"] if args.nonselective_kicks else [])
    if sub == "limits":
        if args.action in ("mean-field", "central-limit"):
            return ["convergence.csv"]
        return ["paths.ndjson", "summary.csv"]
    if sub == "verify":
        return ["report.csv"]
    return ["povm.csv"]


def manifest(args, cfg: SimConfig) -> dict:
    extra = {k: v for k, v in sorted(vars(args).items())
             if k not in {f.name for f in fields(SimConfig)} and k not in ("config", "out", "command")}
    return {"toolkit": "spontloc", "version": __version__, "subcommand": args.command,
            "options": extra, "seed": cfg.seed, "config": cfg.as_dict(), "outputs": _outputs(args)}


# subcommands


def cmd_kick(cfg: SimConfig, args, w: Writer) -> int:
    kernel, eta = cfg.kernel(), cfg.initial_state()
    y = sample_outcome(kernel, eta, trajectory_rng(cfg.seed, args.index))
    post = posterior_state(kernel, eta, y)
    n2, mx, mx2 = _moments(post.posterior.vector, cfg.grid().positions)
    w.ndjson("kick.ndjson", [{"t": 0.0, "y": y, "likelihood": post.likelihood, "mean_x": mx,
                              "var_x": mx2 - mx**2}])
    w.csv("pointer_density.csv", ["y", "density"],
          zip(kernel.packet.y, output_density(kernel, eta)))
    return 0


def cmd_trajectory(cfg: SimConfig, args, w: Writer) -> int:
    rec = run_trajectory(cfg, cfg.hamiltonian(), cfg.kernel(), cfg.initial_state(), args.index)
    x = cfg.grid().positions
    rows = []
    events = [(t, 0, {"kind": "event", "t": t, "y": y}) for t, y in rec.events]
    snaps = []
    for t, vec in zip(rec.sample_times, rec.states):
        n2, mx, mx2 = _moments(vec, x)
        snaps.append((float(t), 1, {"kind": "snapshot", "t": t, "y": None, "norm2": n2,
                                    "mean_x": mx / n2, "var_x": mx2 / n2 - (mx / n2) ** 2}))
    rows = [r for _, _, r in sorted(events + snaps, key=lambda e: (e[0], e[1]))]
    w.ndjson("trajectory.ndjson", rows)
    return 0


def cmd_ensemble(cfg: SimConfig, args, w: Writer) -> int:
    res = run_ensemble(cfg, cfg.hamiltonian(), cfg.kernel(), cfg.initial_state(), threads=cfg.threads)
    x = cfg.grid().positions
    p = np.abs(res.states) ** 2
    n = p.shape[0]
    obs = {"weight": p.sum(-1), "x": p @ x, "x2": p @ x**2}

    def ms(a):
        return a.mean(0), (a.std(0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(a.shape[1]))

    stats = {k: ms(v) for k, v in obs.items()}
    rows = []
    for i, t in enumerate(res.sample_times):
        row = [t]
        for k in ("weight", "x", "x2"):
            row += [stats[k][0][i], stats[k][1][i]]
        rows.append(row)
    w.csv("ensemble.csv", ["t", "weight_mean", "weight_sem", "x_mean", "x_sem", "x2_mean", "x2_sem"], rows)
    return 0


def initial_many(cfg: SimConfig, M: int, separation: float) -> WaveFunction:
    g = cfg.grid()
    if M == 1:
        return cfg.initial_state()
    singles = [gaussian_state(g, cfg.x0 + (k - (M - 1) / 2) * separation, cfg.width, cfg.k0, cfg.hbar)
               for k in range(M)]
    return symmetrize(product_state(*singles), M)


def cmd_mixing(cfg: SimConfig, args, w: Writer) -> int:
    M = cfg.particles
    eta = initial_many(cfg, M, args.separation)
    rho0 = DensityMatrix.from_state(eta)
    H, kernel = cfg.hamiltonian(M), cfg.kernel()
    traj = run_density_trajectory(cfg, H, kernel, rho0, args.index)
    w.ndjson("mixing_events.ndjson", [{"t": t, "y": y} for t, y in traj.record.events])
    w.csv("entropy.csv", ["t", "entropy", "trace_weight"],
          zip(traj.record.sample_times, traj.entropies(), traj.traces))
    if args.nonselective_kicks:
        ent = nonselective_entropy_path(rho0, kernel, args.nonselective_kicks, H, 1.0 / (M * cfg.nu), cfg.hbar)
        w.csv("nonselective_entropy.csv", ["kick", "entropy"], enumerate(ent))
    return 0


def _nus(text: str):
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_limits(cfg: SimConfig, args, w: Writer) -> int:
    H, x = cfg.hamiltonian(), cfg.grid().positions
    packet = cfg.pointer_packet()
    eta = cfg.initial_state().vector
    if args.action == "mean-field":
        rho0 = np.outer(eta, eta.conj())
        rep = mean_field_convergence(_nus(args.nus or "50,100,200"), cfg.gamma, H, x, packet, rho0,
                                     cfg.horizon, cfg.dt, cfg.hbar)
        w.csv("convergence.csv", ["nu", "error", "fitted_exponent"], rep.rows())
        return 0
    if args.action == "central-limit":
        rep = jump_generator_vs_diffusive(_nus(args.nus or "100,1000,10000"), cfg.gamma, H, x, packet,
                                          hbar=cfg.hbar)
        w.csv("convergence.csv", ["nu", "error", "fitted_exponent"], rep.rows())
        return 0
    params = diffusion_params(H, x, packet, cfg.gamma, cfg.dt, "complex_v", 1, cfg.hbar)
    st = cfg.sample_times
    if args.action == "diffusive-sse":
        run = run_diffusive_sse(params, eta, cfg.horizon, cfg.trajectories, cfg.seed, st)
        p = np.abs(run.states) ** 2
        norm2, mean_x = p.sum(-1), p @ x
    else:
        run = run_diffusive_density(params, np.outer(eta, eta.conj()), cfg.horizon, cfg.trajectories,
                                    cfg.seed, st)
        diag = np.einsum("nsii->nsi", run.states).real
        norm2, mean_x = diag.sum(-1), diag @ x
    rows = ({"path": i, "t": t, "y": None, "norm2": norm2[i, s], "mean_x": mean_x[i, s]}
            for i in range(norm2.shape[0]) for s, t in enumerate(st))
    w.ndjson("paths.ndjson", rows)
    n = norm2.shape[0]
    sem = norm2.std(0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(st.size)
    w.csv("summary.csv", ["t", "norm2_mean", "norm2_sem"], zip(st, norm2.mean(0), sem))
    return 0


def run_pairing(cfg: SimConfig, pairing: str):
    H, x = cfg.hamiltonian(), cfg.grid().positions
    eta = cfg.initial_state()
    rho0 = np.outer(eta.vector, eta.vector.conj())
    st = cfg.sample_times
    packet = cfg.pointer_packet()
    if pairing == "jump-vs-oracle":
        kernel = cfg.kernel()
        res = run_ensemble(cfg, H, kernel, eta, threads=cfg.threads)
        oracle = ode_integrate(make_jump_master_rhs(H, kernel, cfg.nu, 1, cfg.hbar), rho0, cfg.horizon,
                               1e-3, st, estimate_error=False)
        return compare_to_oracle(pairing, st, ensemble_average(res.states), oracle.states, cfg.tolerance,
                                 renormalize=True)
    if pairing == "diffusive-vs-oracle":
        params = diffusion_params(H, x, packet, cfg.gamma, cfg.dt, "complex_v", 1, cfg.hbar)
        run = run_diffusive_sse(params, eta.vector, cfg.horizon, cfg.trajectories, cfg.seed, st)
        oracle = ode_integrate(make_diffusive_master_rhs(H, x, cfg.gamma, packet.sigma2, 1, cfg.hbar), rho0,
                               cfg.horizon, 1e-3, st, estimate_error=False)
        return compare_to_oracle(pairing, st, ensemble_average(run.states), oracle.states, cfg.tolerance,
                                 renormalize=True)
    kernel = cfg.kernel(-cfg.gamma / np.sqrt(cfg.nu))
    jump = ode_integrate(make_jump_master_rhs(H, kernel, cfg.nu, 1, cfg.hbar), rho0, cfg.horizon, 1e-3, st,
                         estimate_error=False)
    diff = ode_integrate(make_diffusive_master_rhs(H, x, cfg.gamma, packet.sigma2, 1, cfg.hbar), rho0,
                         cfg.horizon, 1e-3, st, estimate_error=False)
    return oracle_vs_oracle(pairing, st, jump.states, diff.states, cfg.tolerance)


def cmd_verify(cfg: SimConfig, args, w: Writer) -> int:
    rep = run_pairing(cfg, args.pairing)
    w.csv("report.csv", ["t", "trace_distance", "sem_band", "tolerance", "passed"],
          ([t, d, s, rep.tolerance, int(d <= rep.tolerance and s <= rep.tolerance)] for t, d, s in rep.rows()))
    status = "PASS" if rep.passed else "FAIL"
    print(f"{args.pairing}: max trace distance {rep.max_distance:.3e}, max SEM band {rep.max_sem:.3e} "
          f"(tolerance {rep.tolerance}) {status}")
    return 0 if rep.passed else 2


def cmd_povm(cfg: SimConfig, args, w: Writer) -> int:
    kernel = cfg.kernel()
    res = povm_residual(kernel)
    w.csv("povm.csv", ["x", "effect_diagonal"], zip(kernel.positions, kernel.effect_diagonal))
    print(f"POVM residual {res:.3e}")
    return 0 if res <= POVM_TOL else 2


HANDLERS = {"kick": cmd_kick, "trajectory": cmd_trajectory, "ensemble": cmd_ensemble, "mixing": cmd_mixing,
            "limits": cmd_limits, "verify": cmd_verify, "povm-check": cmd_povm}


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [grid] [meter] [dynamics] [run] sections")
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or the current directory)")
    group = common.add_argument_group("configuration overrides")
    for f in fields(SimConfig):
        group.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="spontloc", description="Continual position measurement simulator")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("kick", "trajectory"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--index", type=int, default=0, help="trajectory index within the seed stream")
    sub.add_parser("ensemble", parents=[common])
    p = sub.add_parser("mixing", parents=[common])
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--separation", type=float, default=1.0, help="distance between initial packets")
    p.add_argument("--nonselective-kicks", type=int, default=0)
    p = sub.add_parser("limits", parents=[common])
    p.add_argument("action", choices=LIMIT_ACTIONS)
    p.add_argument("--nus", help="comma-separated rates")
    p = sub.add_parser("verify", parents=[common])
    p.add_argument("pairing", choices=PAIRINGS)
    sub.add_parser("povm-check", parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {f.name: getattr(args, f.name) for f in fields(SimConfig)}
    try:
        cfg = parse_config(args.config, overrides)
        out = Path(args.out or os.environ.get(OUT_ENV) or ".")
        w = Writer(out)
        w.json("manifest.json", manifest(args, cfg))
        return HANDLERS[args.command](cfg, args, w)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
