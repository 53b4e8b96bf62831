"""Command-line entry points.

Subcommands: simulate | ensemble | couple | diagnose | average.  Every run
writes resolved_config.json next to its outputs; a fixed config and seed
determine every output byte.  Exit codes: 0 success, 2 configuration
error, 3 numerical blow-up.

ECSPDE_THREADS > 1 splits ensemble paths across worker processes; results
are merged in path order and are bit-identical to a serial run.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import constants
from .config import ConfigError, build_run, env_threads, load_config, write_resolved
from .coupling import CouplingConfig, CouplingError, lambda_next, run_coupling_experiment
from .diagnostics import (
    EnergyLedger,
    LedgerError,
    energy_balance_residual,
    save_report_json,
    tail_event_check,
)
from .dynamics import BlowUpError, DynamicsError, integrate
from .ergodicity import stationarity_test, time_average
from .config import scalar_field_from_spec, vector_field_from_spec
from .dynamics import SystemState
from .storage import write_state_snapshot

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BLOWUP = 3


def _ledger_name(path_index: int) -> str:
    return f"ledger_path{path_index:04d}.csv"


def _integrate_chunk(args):
    cfg, paths = args
    setup = build_run(cfg)
    traj = integrate(
        setup.state0,
        setup.params,
        setup.basis,
        setup.schedule,
        seed=cfg["seed"],
        paths=tuple(paths),
        hk_list=cfg["hk_list"],
        lowmodes=cfg["lowmodes"],
    )
    return traj.ledger.times, traj.ledger.columns, traj.ledger.meta


def _run_paths(cfg, paths):
    """Integrate a path set, splitting across ECSPDE_THREADS workers."""
    threads = env_threads()
    if threads <= 1 or len(paths) <= 1:
        setup = build_run(cfg)
        traj = integrate(
            setup.state0,
            setup.params,
            setup.basis,
            setup.schedule,
            seed=cfg["seed"],
            paths=tuple(paths),
            hk_list=cfg["hk_list"],
            lowmodes=cfg["lowmodes"],
        )
        return traj.ledger
    chunks = [list(paths[i::threads]) for i in range(threads)]
    chunks = [c for c in chunks if c]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(_integrate_chunk, [(cfg, c) for c in chunks]))
    times = results[0][0]
    names = list(results[0][1].keys())
    by_path = {}
    for (ts, cols, meta), chunk in zip(results, chunks):
        for j, p in enumerate(chunk):
            by_path[p] = {name: cols[name][:, j] for name in names}
    columns = {
        name: np.stack([by_path[p][name] for p in paths], axis=1) for name in names
    }
    meta = results[0][2]
    meta["paths"] = [int(p) for p in paths]
    return EnergyLedger(times, columns, meta)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.steps is not None:
        cfg["schedule"]["t_final"] = args.steps * cfg["schedule"]["dt"]
    out = args.out or cfg["output_dir"]
    write_resolved(cfg, out)
    setup = build_run(cfg)
    traj = integrate(
        setup.state0,
        setup.params,
        setup.basis,
        setup.schedule,
        seed=cfg["seed"],
        paths=(0,),
        hk_list=cfg["hk_list"],
        lowmodes=cfg["lowmodes"],
    )
    traj.ledger.to_csv(os.path.join(out, _ledger_name(0)), 0)
    for t, snap in zip(traj.snapshot_times, traj.snapshots):
        step_index = int(round(t / setup.schedule.dt))
        write_state_snapshot(os.path.join(out, f"snapshot_{step_index:08d}.bin"), snap)
    print(f"simulate: {traj.ledger.n_rows} ledger rows, {len(traj.snapshots)} snapshots -> {out}")
    return EXIT_OK


def cmd_ensemble(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = args.out or cfg["output_dir"]
    write_resolved(cfg, out)
    paths = tuple(range(args.paths))
    ledger = _run_paths(cfg, paths)
    for j, p in enumerate(paths):
        ledger.to_csv(os.path.join(out, _ledger_name(p)), j)
    final = {
        name: {
            "mean": float(ledger.column(name)[-1].mean()),
            "se": float(
                ledger.column(name)[-1].std(ddof=1) / math.sqrt(len(paths))
                if len(paths) > 1
                else 0.0
            ),
        }
        for name in ("q_l2", "q_l4", "u_h1", "u_h2")
    }
    save_report_json(
        os.path.join(out, "ensemble_summary.json"),
        {"paths": len(paths), "seed": cfg["seed"], "final_row": final},
    )
    print(f"ensemble: {len(paths)} paths -> {out}")
    return EXIT_OK


def cmd_couple(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    coup = cfg["coupling"]
    if args.shell is not None:
        coup["shell_m"] = args.shell
    if getattr(args, "lambda_") is not None:
        coup["lambda"] = args.lambda_
    if args.budget is not None:
        coup["budget_k"] = args.budget
    out = args.out or cfg["output_dir"]
    write_resolved(cfg, out)
    setup = build_run(cfg)
    lam = coup["lambda"]
    if lam is None:
        lam = 2.0 * math.sqrt(lambda_next(coup["shell_m"]))
    ccfg = CouplingConfig(
        shell_m=int(coup["shell_m"]),
        lam=float(lam),
        budget_k=float(coup["budget_k"]),
        r_threshold=coup["r_threshold"],
        strict=False,
    )
    grid = setup.grid
    slaved0 = SystemState(
        scalar_field_from_spec(grid, coup["slaved_initial"]["q"]),
        vector_field_from_spec(grid, coup["slaved_initial"]["u"]),
    )
    paths = tuple(range(args.paths))
    report = run_coupling_experiment(
        setup.state0,
        slaved0,
        setup.params,
        setup.basis,
        ccfg,
        setup.schedule,
        seed=cfg["seed"],
        paths=paths,
        contraction_target=float(coup["contraction_target"]),
    )
    for j, p in enumerate(paths):
        report.ledger.to_csv(os.path.join(out, f"coupling_ledger_path{p:04d}.csv"), j)
    save_report_json(
        os.path.join(out, "contraction_report.json"),
        {
            "shell_m": ccfg.shell_m,
            "lambda": ccfg.lam,
            "budget_k": ccfg.budget_k,
            "lambda_next": report.lambda_next,
            "implied_n": report.implied_n,
            "rates": report.rates,
            "median_rate": float(np.median(report.rates[np.isfinite(report.rates)]))
            if np.any(np.isfinite(report.rates))
            else None,
            "tau_inf_frac": report.tau_inf_frac,
            "contracted_frac": report.contracted_frac,
            "final_ratio": report.final_ratio,
        },
    )
    print(f"couple: {len(paths)} pairs, contracted_frac={report.contracted_frac:.3f} -> {out}")
    return EXIT_OK


def _load_run_ledgers(run_dir, prefix="ledger_path"):
    names = sorted(
        f for f in os.listdir(run_dir) if f.startswith(prefix) and f.endswith(".csv")
    )
    if not names:
        raise ConfigError(f"no {prefix}*.csv ledgers found in {run_dir}")
    ledgers = [EnergyLedger.from_csv(os.path.join(run_dir, f)) for f in names]
    times = ledgers[0].times
    for led in ledgers[1:]:
        if not np.array_equal(led.times, times):
            raise ConfigError("ledger time grids differ across paths")
    columns = {
        name: np.concatenate([led.column(name) for led in ledgers], axis=1)
        for name in ledgers[0].columns
    }
    meta = {}
    resolved = os.path.join(run_dir, "resolved_config.json")
    if os.path.exists(resolved):
        from .diagnostics import state_norms
        from .spectral import l2_norm

        with open(resolved) as fh:
            cfg = json.load(fh)
        setup = build_run(cfg)
        basis = setup.basis
        meta = {
            "f_l2": float(l2_norm(setup.params.f)) if setup.params.f is not None else 0.0,
            "g_l2_sq": basis.g_l2_sq(),
            "g_h1_sq": basis.g_hs_sq(1.0),
            "gtilde_l4": basis.gtilde_lp(4.0),
            "gtilde_l2_sq": basis.gtilde_l2_sq(),
            "gtilde_hm12_sq": basis.gtilde_hs_sq(-0.5),
            "initial": {
                k: np.atleast_1d(v).tolist() for k, v in state_norms(setup.state0).items()
            },
            "config": cfg,
        }
    return EnergyLedger(times, columns, meta)


def cmd_diagnose(args) -> int:
    cfg = load_config(args.config)
    out = args.out or args.run
    ledger = _load_run_ledgers(args.run)
    resid = energy_balance_residual(ledger)
    with open(os.path.join(out, "energy_residual.csv"), "w") as fh:
        header = ["t"] + [f"residual_path{j:04d}" for j in range(resid.shape[1])]
        fh.write(",".join(header) + "\n")
        for r in range(resid.shape[0]):
            fh.write(",".join(f"{v:.17g}" for v in [ledger.times[r], *resid[r]]) + "\n")
    report = {
        "max_abs_residual": float(np.max(np.abs(resid))),
        "final_mean_residual": float(resid[-1].mean()),
        "paths": resid.shape[1],
    }
    if resid.shape[1] > 1:
        se = float(resid[-1].std(ddof=1) / math.sqrt(resid.shape[1]))
        report["final_se"] = se
        report["final_mean_within_3se"] = bool(abs(resid[-1].mean()) <= 3 * se)
    if ledger.meta:
        r_grid = np.linspace(0.0, 20.0, 21)
        tails = tail_event_check(ledger, constants.as_dict(), r_grid)
        report["tail_events"] = {
            "r_grid": tails["r_grid"],
            "empirical_e": tails["empirical_e"],
            "empirical_f": tails["empirical_f"],
            "bound_e": tails["bound_e"],
            "bound_f": tails["bound_f"],
            "e_ok": tails["e_ok"],
            "f_ok": tails["f_ok"],
        }
    save_report_json(os.path.join(out, "diagnostics.json"), report)
    print(f"diagnose: max |residual| = {report['max_abs_residual']:.3e} -> {out}")
    return EXIT_OK


def cmd_average(args) -> int:
    cfg = load_config(args.config)
    out = args.out or args.run
    ledger = _load_run_ledgers(args.run)
    erg = cfg["ergodicity"]
    burn_in = args.burn_in
    if burn_in is None:
        burn_in = erg["burn_in_frac"] * float(ledger.times[-1])
    try:
        report = time_average(
            ledger, tuple(erg["observables"]), burn_in=burn_in, windows=int(erg["windows"])
        )
    except LedgerError as e:
        raise ConfigError(str(e)) from e
    verdict = stationarity_test(report, rel_tol=float(erg["rel_tol"]))
    with open(os.path.join(out, "averages.csv"), "w") as fh:
        fh.write("observable,mean,se_windows,se_paths," +
                 ",".join(f"window{i}" for i in range(report.windows)) + "\n")
        for name, avg in report.averages.items():
            row = [avg.mean, avg.se_windows, avg.se_paths, *avg.window_means]
            fh.write(name + "," + ",".join(f"{v:.17g}" for v in row) + "\n")
    save_report_json(
        os.path.join(out, "average_summary.json"),
        {
            "burn_in": burn_in,
            "windows": report.windows,
            "stationary": verdict.stationary,
            "details": verdict.details,
            "means": {k: v.mean for k, v in report.averages.items()},
        },
    )
    print(f"average: stationary={verdict.stationary} -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ecspde", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="integrate one trajectory")
    sim.add_argument("--config", required=True)
    sim.add_argument("--steps", type=int, default=None, help="override step count")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--out", default=None)
    sim.set_defaults(func=cmd_simulate)

    ens = sub.add_parser("ensemble", help="integrate an ensemble of paths")
    ens.add_argument("--config", required=True)
    ens.add_argument("--paths", type=int, required=True)
    ens.add_argument("--seed", type=int, default=None)
    ens.add_argument("--out", default=None)
    ens.set_defaults(func=cmd_ensemble)

    coup = sub.add_parser("couple", help="shared-noise coupling experiment")
    coup.add_argument("--config", required=True)
    coup.add_argument("--shell", type=int, default=None)
    coup.add_argument("--lambda", dest="lambda_", type=float, default=None)
    coup.add_argument("--budget", type=float, default=None)
    coup.add_argument("--paths", type=int, default=1)
    coup.add_argument("--seed", type=int, default=None)
    coup.add_argument("--out", default=None)
    coup.set_defaults(func=cmd_couple)

    diag = sub.add_parser("diagnose", help="energy/tail diagnostics of a run")
    diag.add_argument("--config", required=True)
    diag.add_argument("--run", required=True)
    diag.add_argument("--out", default=None)
    diag.set_defaults(func=cmd_diagnose)

    avg = sub.add_parser("average", help="time averages and stationarity verdict")
    avg.add_argument("--config", required=True)
    avg.add_argument("--run", required=True)
    avg.add_argument("--burn-in", type=float, default=None)
    avg.add_argument("--out", default=None)
    avg.set_defaults(func=cmd_average)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CouplingError, LedgerError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (BlowUpError,) as e:
        print(f"blow-up: {e}", file=sys.stderr)
        return EXIT_BLOWUP
    except DynamicsError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
