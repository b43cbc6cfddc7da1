"""Command line entry point: simulate, estimate, calibrate, benchmark.

Every option may also come from a JSON file given with ``--config``; keys
mirror the long flag names (dashes or underscores). Flags given on the
command line take precedence over the file.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import csvio
from .bench import (FILTERS, SMOOTHERS, DroneScenario, ScalarWalkConfig,
                    conversion_table, drone_models, run_benchmark, simulate_drone,
                    simulate_scalar_walk)
from .calibration import GAUSSIAN_DOF, ScaleFactorTable, build_scale_table
from .exceptions import (GridError, InfeasibleScenarioError, MomentError,
                         ScaleMatrixError, TableLookupError)
from .grid_oracle import (additive_likelihood, additive_transition, grid_moments,
                          grid_run_auto, scalar_t_logpdf)
from .kalman import kf_run, rts_smooth
from .montecarlo import NonlinearModel, mc_run
from .student import (ApproximationStrategy, TBelief, Variant, simplistic_run,
                      tf_run, ts_smooth)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SCENARIOS = ("scalar-walk", "drone")
ESTIMATORS = ("kf", "kf-clairvoyant", "t", "t-simplistic", "mc-t", "grid-oracle")
STRATEGIES = ("conservative", "kld", "moment")

DEFAULTS = {
    "simulate": {"scenario": "scalar-walk", "seed": 0, "steps": None, "nu": 3.0,
                 "no_events": False, "out": None},
    "estimate": {"scenario": "scalar-walk", "filter": "t", "strategy": "kld",
                 "table": None, "seed": 0, "steps": None, "nu": 3.0,
                 "no_events": False, "smooth": False, "samples": 10_000,
                 "outlier_step": None, "outlier_offset": 0.0, "out": None},
    "calibrate": {"dims": "1,2,3,4", "dofs": "1e6,30,10,6,5,4,3", "targets": "3",
                  "samples": 1_000_000, "seed": 0, "out": None},
    "benchmark": {"scenario": "drone", "seed": 0, "runs": 500, "no_events": False,
                  "table": None, "out_dir": None},
}


class ConfigError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tfilt", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, *names):
        p.add_argument("--config", help="JSON file with option values")
        if "scenario" in names:
            p.add_argument("--scenario", choices=SCENARIOS)
        if "seed" in names:
            p.add_argument("--seed", type=int)
        if "steps" in names:
            p.add_argument("--steps", type=int)
        if "nu" in names:
            p.add_argument("--nu", type=float,
                           help="dof of all scalar-walk densities (and of its filter model)")
        if "no_events" in names:
            p.add_argument("--no-events", action="store_true", default=None,
                           help="drone without maneuvers and outliers")
        if "table" in names:
            p.add_argument("--table", help="scale factor table CSV")

    p = sub.add_parser("simulate", help="write a simulated trajectory")
    common(p, "scenario", "seed", "steps", "nu", "no_events")
    p.add_argument("--out")

    p = sub.add_parser("estimate", help="run a filter (and smoother) on simulated data")
    common(p, "scenario", "seed", "steps", "nu", "no_events", "table")
    p.add_argument("--filter", choices=ESTIMATORS)
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--smooth", action="store_true", default=None)
    p.add_argument("--samples", type=int, help="sample count of the Monte Carlo filter")
    p.add_argument("--outlier-step", type=int)
    p.add_argument("--outlier-offset", type=float)
    p.add_argument("--out")

    p = sub.add_parser("calibrate", help="tabulate KLD-optimal scale factors")
    common(p, "seed")
    p.add_argument("--dims", help="comma separated dimensions")
    p.add_argument("--dofs", help="comma separated source dofs")
    p.add_argument("--targets", help="comma separated target dofs")
    p.add_argument("--samples", type=int)
    p.add_argument("--out")

    p = sub.add_parser("benchmark", help="Monte Carlo comparison on the drone scenario")
    common(p, "scenario", "seed", "no_events", "table")
    p.add_argument("--runs", type=int)
    p.add_argument("--out-dir")
    return ap


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge builtin defaults, the JSON config file and explicit flags."""
    cfg = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, val in data.items():
            key = key.replace("-", "_")
            if key not in cfg:
                raise ConfigError(f"unknown config key {key!r} for {command}")
            cfg[key] = val
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    seed = cfg.get("seed")
    if seed is not None and not (isinstance(seed, int) and 0 <= seed < 2 ** 64):
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if command in ("simulate", "estimate", "benchmark"):
        if cfg["scenario"] not in SCENARIOS:
            raise ConfigError(f"unknown scenario {cfg['scenario']!r}")
    return cfg


def _require(cfg: dict, key: str) -> str:
    if not cfg.get(key):
        raise ConfigError(f"--{key.replace('_', '-')} is required")
    return cfg[key]


def _walk_config(cfg: dict) -> ScalarWalkConfig:
    nu = float(cfg["nu"])
    steps = 15 if cfg["steps"] is None else int(cfg["steps"])
    return ScalarWalkConfig(steps=steps, prior_nu=nu, q_nu=nu, r_nu=nu,
                            seed=cfg["seed"])


def _drone(cfg: dict) -> DroneScenario:
    s = DroneScenario()
    if cfg.get("steps") is not None:
        if int(cfg["steps"]) < 2:
            raise ConfigError("drone trajectories need at least 2 steps")
        s = replace(s, steps=int(cfg["steps"]))
    return s.without_events() if cfg.get("no_events") else s


def _comments(command: str, cfg: dict) -> list[str]:
    # output locations are left out so reruns elsewhere stay byte-identical
    echoed = {k: v for k, v in cfg.items() if k not in ("out", "out_dir")}
    return [f"tfilt {command}"] + csvio.config_comment(echoed)


def cmd_simulate(cfg: dict) -> int:
    out = _require(cfg, "out")
    if cfg["scenario"] == "scalar-walk":
        x, y = simulate_scalar_walk(_walk_config(cfg))
        csvio.write_scalar_trajectory(out, x, y, _comments("simulate", cfg))
    else:
        traj = simulate_drone(_drone(cfg), cfg["seed"])
        csvio.write_drone_trajectory(out, traj, _comments("simulate", cfg))
    return EXIT_OK


def _strategy(cfg: dict, needed: list, table=None) -> ApproximationStrategy:
    """Strategy from the config; KLD factors come from ``--table``, from
    ``table`` or are computed for the ``needed`` (n, nu, nu') cells."""
    name = cfg["strategy"]
    if name not in STRATEGIES:
        raise ConfigError(f"unknown strategy {name!r}")
    if name != "kld":
        return ApproximationStrategy(Variant(name))
    if cfg.get("table"):
        table = ScaleFactorTable.from_csv(cfg["table"])
    elif table is None:
        entries = {}
        for n, src, dst in needed:
            entries.update(build_scale_table([n], [src], [dst], seed=cfg["seed"]).entries)
        table = ScaleFactorTable(entries)
    return ApproximationStrategy(Variant.KLD_SCALED, table)


def _kf_rows(m, ys, smooth):
    steps = kf_run(m, ys)
    rows = csvio.estimate_rows("filter", [s.filtered for s in steps], m.m,
                               [s.diag for s in steps])
    if smooth:
        rows += csvio.estimate_rows("smoother", rts_smooth(steps, m), m.m)
    return rows


def _t_rows(m, ys, strategy, smooth):
    rec = tf_run(m, ys, strategy)
    rows = csvio.estimate_rows("filter", [r.filtered for r in rec], m.m,
                               [r.diag for r in rec])
    if smooth:
        rows += csvio.estimate_rows("smoother", ts_smooth(rec, m), m.m)
    return rows


def cmd_estimate(cfg: dict) -> int:
    out = _require(cfg, "out")
    filt = cfg["filter"]
    if filt not in ESTIMATORS:
        raise ConfigError(f"unknown filter {filt!r}")
    smooth = bool(cfg["smooth"])
    comments = _comments("estimate", cfg)
    if cfg["scenario"] == "scalar-walk":
        wc = _walk_config(cfg)
        _, ys = simulate_scalar_walk(wc)
        if cfg.get("outlier_step") is not None:
            k = int(cfg["outlier_step"])
            if not 1 <= k <= wc.steps:
                raise ConfigError("outlier step outside 1..steps")
            ys = ys.copy()
            ys[k - 1] += float(cfg["outlier_offset"])
        model = wc.model()
        nu = wc.prior_nu
        needed, table = [(1, nu + 1, nu)], None
        if filt == "kf-clairvoyant":
            raise ConfigError("kf-clairvoyant needs the drone scenario")
    else:
        if filt == "grid-oracle":
            raise ConfigError("grid-oracle supports the scalar-walk scenario only")
        s = _drone(cfg)
        ys = simulate_drone(s, cfg["seed"]).measurements[1:]
        table = conversion_table(seed=cfg["seed"])
        if cfg.get("table"):
            table = ScaleFactorTable.from_csv(cfg["table"])
        nominal, clair, model = drone_models(s, table)
        needed = [(4, 5.0, 3.0)]
    if filt == "kf":
        km = nominal if cfg["scenario"] == "drone" else model
        rows = _kf_rows(km, ys, smooth)
    elif filt == "kf-clairvoyant":
        rows = _kf_rows(clair, ys, smooth)
    elif filt == "t":
        rows = _t_rows(model, ys, _strategy(cfg, needed, table), smooth)
    elif filt == "t-simplistic":
        if smooth:
            raise ConfigError("t-simplistic has no smoother")
        rows = csvio.estimate_rows("filter", simplistic_run(model, ys), model.m)
    elif filt == "mc-t":
        if smooth:
            raise ConfigError("mc-t has no smoother")
        F, H = model.F, model.H
        nm = NonlinearModel(lambda x, v: x @ F.T + v, lambda x, e: x @ H.T + e,
                            model.Q, model.R, model.gamma, model.delta,
                            N=int(cfg["samples"]))
        mean, P0, eta0 = model.prior_moments()
        rows = csvio.estimate_rows("filter", mc_run(nm, TBelief(mean, P0, eta0), ys,
                                                    seed=cfg["seed"]), model.m)
    else:
        run = grid_run_auto(
            -40.0, 40.0, 2001,
            lambda x: scalar_t_logpdf(x, wc.prior_scale, wc.prior_nu),
            additive_transition(1.0, wc.q_scale, wc.q_nu),
            additive_likelihood(1.0, wc.r_scale, wc.r_nu), ys, smooth=smooth)
        rows = []
        for lab, seq in (("filter", run.filtered), ("smoother", run.smoothed)):
            for k, d in enumerate(seq):
                mean, var = grid_moments(d)
                rows.append((lab, k, mean, var) + (None,) * 6)
        dens = Path(out).with_suffix(".density.csv")
        csvio.write_density_dump(dens, run, comments)
    csvio.write_estimates(out, model.n, model.m, rows, comments)
    return EXIT_OK


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse number list {text!r}") from None


def cmd_calibrate(cfg: dict) -> int:
    out = _require(cfg, "out")
    dims = [int(d) for d in _floats(cfg["dims"])]
    dofs, targets = _floats(cfg["dofs"]), _floats(cfg["targets"])
    if not dims or min(dims) < 1 or not dofs or not targets:
        raise ConfigError("dims, dofs and targets must be nonempty and positive")
    if min(dofs + targets) <= 0:
        raise ConfigError("dofs must be positive")
    if min(targets) > max(dofs):
        raise ConfigError("invalid dof pairs: every target exceeds every source (nu' > nu)")
    dofs = [GAUSSIAN_DOF if math.isinf(v) else v for v in dofs]
    table = build_scale_table(dims, dofs, targets, N=int(cfg["samples"]),
                              seed=cfg["seed"])
    table.to_csv(out, "\n".join(_comments("calibrate", cfg)))
    return EXIT_OK


def cmd_benchmark(cfg: dict) -> int:
    out_dir = Path(_require(cfg, "out_dir"))
    if cfg["scenario"] != "drone":
        raise ConfigError("benchmark supports the drone scenario only")
    runs = int(cfg["runs"])
    if runs < 1:
        raise ConfigError("runs must be at least 1")
    table = ScaleFactorTable.from_csv(cfg["table"]) if cfg.get("table") else None
    res = run_benchmark(_drone(cfg), runs=runs, seed=cfg["seed"], table=table)
    comments = _comments("benchmark", cfg)
    labels = list(FILTERS + SMOOTHERS)
    csvio.write_rows(out_dir / "errors.csv", ("run", "filter", "rmse"),
                     [(i, lab, res.summaries[lab].rmse[i])
                      for i in range(runs) for lab in labels], comments)
    kde_rows, kde_comments = [], list(comments)
    for lab in labels:
        s = res.summaries[lab]
        if s.kde_grid is not None:
            kde_rows.extend((lab, x, d) for x, d in zip(s.kde_grid, s.kde_density))
    for note in res.notices:
        kde_comments.append(note)
        print(f"notice: {note}", file=sys.stderr)
    csvio.write_rows(out_dir / "kde.csv", ("filter", "x", "density"), kde_rows,
                     kde_comments)
    step_rows = [(run, lab, k, e) for run, tr in sorted(res.traces.items())
                 for lab in labels for k, e in enumerate(tr[lab])]
    csvio.write_rows(out_dir / "step_errors.csv", ("run", "filter", "k", "error"),
                     step_rows, comments)
    summ_comments = comments + [
        f"sign test t-filter < kf-nominal: p = {res.sign_test():.6g}",
        f"conversion factors: {json.dumps(res.conversion, sort_keys=True)}"]
    csvio.write_rows(out_dir / "summary.csv",
                     ("filter", "runs", "median_rmse", "mean_rmse"),
                     [(lab, runs, res.summaries[lab].median,
                       float(np.mean(res.summaries[lab].rmse))) for lab in labels],
                     summ_comments)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate,
            "calibrate": cmd_calibrate, "benchmark": cmd_benchmark}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = resolve(args.command, args)
        return COMMANDS[args.command](cfg)
    except (ScaleMatrixError, GridError, MomentError, InfeasibleScenarioError,
            RuntimeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, TableLookupError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
