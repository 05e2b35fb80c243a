"""Command-line front end.

Every command writes CSV files plus a plain-text summary into ``--out``.
Exit codes: 0 success, 2 configuration error, 3 simulation failure.
Columns named ``wall_clock_*`` are the only ones that vary between reruns.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings

import numpy as np

from . import analysis, mlmc
from .config import ConfigError, RunConfig, load_config
from .model import probe_conditions
from .noise import make_streams
from .taem import SimulationError, TaemConfig, simulate_terminal, write_skeleton_csv

EXIT_OK, EXIT_CONFIG, EXIT_SIMULATION = 0, 2, 3


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_summary(path, lines):
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _fit_line(name, fit):
    return (f"{name}: slope={fit.slope!r} intercept={fit.intercept!r} "
            f"r_squared={fit.r_squared!r} points={fit.n_points}")


def _constants(cfg: RunConfig, model, driver, phi):
    """(K0, K1, K2): configured values, with K0/K2 calibrated by a pilot run when missing."""
    K1 = cfg.K1 if cfg.K1 is not None else mlmc.default_k1(phi, model.x0, cfg.stationary_second_moment)
    K0, K2 = cfg.K0, cfg.K2
    cal = None
    if K0 is None or K2 is None:
        cal = mlmc.calibrate_constants(model, driver, phi, cfg.pilot_levels, cfg.pilot_samples, cfg.seed,
                                       horizon=cfg.horizon, base_step=cfg.base_step,
                                       level_ratio=cfg.level_ratio, workers=cfg.workers)
        K0 = cal.K0 if K0 is None else K0
        K2 = cal.K2 if K2 is None else K2
    return (K0, K1, K2), cal


def _calibration_lines(cal):
    if cal is None:
        return ["calibration: none (constants from configuration)"]
    return [f"calibration: K0={cal.K0!r} K2={cal.K2!r} decay_exponent={cal.decay!r} "
            f"decay_ok={cal.decay_ok} pilot_levels={list(cal.levels)}"]


# ---------------------------------------------------------------------------
# commands


def cmd_path(cfg: RunConfig) -> int:
    model, driver = cfg.build_model(), cfg.build_driver()
    tc = TaemConfig(cfg.base_step, cfg.level_ratio, cfg.horizon)
    res = simulate_terminal(model, driver, tc, make_streams(cfg.seed, 0, cfg.path_level, 0),
                            level=cfg.path_level, record=True)
    write_skeleton_csv(os.path.join(cfg.out, "path.csv"), res)
    _write_summary(os.path.join(cfg.out, "path_summary.txt"), [
        f"model: {model.name}", f"driver: {cfg.driver}", f"horizon: {cfg.horizon!r}",
        f"step_scale: {tc.delta(cfg.path_level)!r}", f"steps: {res.steps}",
        f"terminal: {[float(v) for v in res.terminal]}", f"seed: {cfg.seed}",
    ])
    return EXIT_OK


def cmd_strong_error(cfg: RunConfig) -> int:
    model, driver = cfg.build_model(), cfg.build_driver()
    rows, lines = [], [f"model: {model.name} (h0={model.taming_base!r})", f"driver: {cfg.driver}",
                       f"samples: {cfg.table_samples}", f"seed: {cfg.seed}"]
    for T in cfg.horizons:
        table = analysis.strong_error_table(model, driver, cfg.levels, T, cfg.table_samples, cfg.seed,
                                            cfg.level_ratio, cfg.workers)
        for k, l in enumerate(table.levels):
            rows.append([float(T), int(l), int(table.samples[k]), int(table.failures[k]), table.mse[k],
                         table.log2_mse[k], table.mean_steps[k, 0], table.mean_steps[k, 1]])
        fit, rate = analysis.fit_rate(table)
        lines.append(_fit_line(f"T={T!r} log2 MSE vs level", fit) + f" Lambda0={rate!r}")
    _write_csv(os.path.join(cfg.out, "strong_error.csv"),
               ["horizon", "level", "samples", "failures", "mse", "log2_mse", "mean_steps_fine",
                "mean_steps_coarse"], rows)
    _write_summary(os.path.join(cfg.out, "strong_error_summary.txt"), lines)
    return EXIT_OK


def cmd_mlmc(cfg: RunConfig) -> int:
    model, driver, phi = cfg.build_model(), cfg.build_driver(), cfg.build_functional()
    alpha = cfg.contraction_rate
    consts, cal = _constants(cfg, model, driver, phi)
    p = mlmc.plan(cfg.epsilon, alpha, *consts, level_ratio=cfg.level_ratio, lipschitz=phi.lipschitz_const)
    est = mlmc.estimate(p, model, driver, phi, cfg.seed, cfg.base_step, cfg.workers, cfg.max_failure_rate)
    _write_csv(os.path.join(cfg.out, "mlmc_levels.csv"),
               ["level", "planned", "samples", "failures", "mean", "variance", "steps"],
               [list(r.values()) for r in est.rows()])
    _write_summary(os.path.join(cfg.out, "mlmc_summary.txt"), [
        f"estimate: {est.value!r}", f"estimated_variance: {est.variance!r}", f"epsilon: {p.epsilon!r}",
        f"horizon: {p.horizon}", f"max_level: {p.max_level}", f"alpha: {p.alpha!r}",
        f"K0: {p.K0!r}", f"K1: {p.K1!r}", f"K2: {p.K2!r}", f"lipschitz: {p.lipschitz!r}",
        f"clamped: {','.join(p.clamped) or 'none'}",
        f"predicted_cost: {mlmc.predicted_cost(p)!r}", f"step_cost: {est.step_cost}",
        f"seed: {cfg.seed}", *_calibration_lines(cal),
        f"wall_clock_seconds: {est.wall_clock!r}",
    ])
    return EXIT_OK


def cmd_variance_study(cfg: RunConfig) -> int:
    model, driver, phi = cfg.build_model(), cfg.build_driver(), cfg.build_functional()
    cfg.contraction_rate  # rejects a non-contracting model before the pilot runs
    consts, cal = _constants(cfg, model, driver, phi)
    study = analysis.variance_study(model, driver, phi, cfg.epsilon_grid(consts[2]), cfg.repetitions,
                                    cfg.seed, consts, cfg.base_step, cfg.level_ratio, cfg.workers,
                                    max_failure_rate=cfg.max_failure_rate)
    rows = []
    for e, n, p, v, vals in zip(study.epsilons, cfg.repetitions, study.plans, study.variances, study.values):
        rows.append([e, n, p.horizon, p.max_level, p.samples[0], float(np.mean(vals)), v,
                     np.log2(e), np.log2(v) if v > 0 else float("nan")])
    _write_csv(os.path.join(cfg.out, "variance_study.csv"),
               ["epsilon", "repetitions", "horizon", "max_level", "samples_level0", "mean_estimate",
                "variance", "log2_epsilon", "log2_variance"], rows)
    _write_summary(os.path.join(cfg.out, "variance_study_summary.txt"), [
        f"functional: {phi.name}", f"seed: {cfg.seed}",
        _fit_line("log2 Var vs log2 eps", study.fit), f"degenerate: {study.degenerate}",
        *_calibration_lines(cal),
    ])
    return EXIT_OK


def cmd_cost_study(cfg: RunConfig) -> int:
    model, driver, phi = cfg.build_model(), cfg.build_driver(), cfg.build_functional()
    cfg.contraction_rate  # rejects a non-contracting model before the pilot runs
    consts, cal = _constants(cfg, model, driver, phi)
    study = analysis.cost_study(model, driver, phi, cfg.epsilon_grid(consts[2]), cfg.seed, consts,
                                cfg.base_step, cfg.level_ratio, cfg.workers)
    rows = [[e, p.horizon, p.max_level, pc, sc, wc] for e, p, pc, sc, wc in
            zip(study.epsilons, study.plans, study.predicted, study.step_cost, study.wall_clock)]
    _write_csv(os.path.join(cfg.out, "cost_study.csv"),
               ["epsilon", "horizon", "max_level", "predicted_cost", "step_cost", "wall_clock_seconds"], rows)
    _write_summary(os.path.join(cfg.out, "cost_study_summary.txt"), [
        f"functional: {phi.name}", f"seed: {cfg.seed}",
        _fit_line("predicted cost", study.predicted_fit),
        _fit_line("step-count cost", study.step_fit),
        *_calibration_lines(cal),
        _fit_line("wall_clock cost", study.wall_fit),
    ])
    return EXIT_OK


def cmd_probe_conditions(cfg: RunConfig) -> int:
    model, driver = cfg.build_model(), cfg.build_driver()
    rng = np.random.default_rng(cfg.seed)
    n, d, R = cfg.probe_points, model.dim, cfg.probe_radius
    cloud = rng.uniform(-R, R, (n, d))
    pairs = rng.uniform(-R, R, (n, 2, d))
    rep = probe_conditions(model, cloud, pairs, driver)
    _write_csv(os.path.join(cfg.out, "probe_conditions.csv"),
               ["quantity", "declared", "observed"],
               [["zeta0", model.dissipativity[0], rep.zeta0_bound],
                ["zeta1", model.dissipativity[1], rep.zeta1_required],
                ["alpha", model.contraction_rate, rep.alpha_bound],
                ["jump_growth_L0", model.L0, rep.max_gamma_growth]])
    _write_summary(os.path.join(cfg.out, "probe_conditions_summary.txt"),
                   [f"ok: {rep.ok}", *rep.violations])
    return EXIT_OK


COMMANDS = {
    "path": cmd_path,
    "strong-error": cmd_strong_error,
    "mlmc": cmd_mlmc,
    "variance-study": cmd_variance_study,
    "cost-study": cmd_cost_study,
    "probe-conditions": cmd_probe_conditions,
}

# per-command numeric overrides: flag -> (config field, type)
_OVERRIDES = {
    "--horizon": ("horizon", float),
    "--level": ("path_level", int),
    "--h0": ("h0", float),
    "--base-step": ("base_step", float),
    "--level-ratio": ("level_ratio", int),
    "--samples": ("samples", int),
    "--levels": ("levels", int, "+"),
    "--horizons": ("horizons", float, "+"),
    "--epsilon": ("epsilon", float),
    "--epsilons": ("epsilons", float, "+"),
    "--repetitions": ("repetitions", int, "+"),
    "--alpha": ("alpha", float),
    "--K0": ("K0", float),
    "--K1": ("K1", float),
    "--K2": ("K2", float),
    "--pilot-samples": ("pilot_samples", int),
    "--max-failure-rate": ("max_failure_rate", float),
    "--probe-points": ("probe_points", int),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taemlmc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--model")
        p.add_argument("--driver")
        p.add_argument("--functional")
        for flag, spec in _OVERRIDES.items():
            p.add_argument(flag, dest=spec[0], type=spec[1], nargs=spec[2] if len(spec) > 2 else None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config") and v is not None}
    try:
        cfg = load_config(args.config).replace(**overrides)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, f"{args.command}_config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_SIMULATION


if __name__ == "__main__":
    sys.exit(main())
