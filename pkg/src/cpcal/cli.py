"""Command-line entry point: reproducible workflows over TOML configs.

Subcommands: generate | simulate | calibrate | sensitivity | report |
selftest. Every artifact embeds the seed and the config digest in a
leading comment line; outputs are CSV plus a JSON run summary. Exit codes:
0 success, 1 validation/config error, 2 simulation failure surfaced to the
top level.
"""

import argparse
import hashlib
import json
import math
import pathlib
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import (bayesopt, fipreport, gndfield, kernels, microstructure,
               objective, polycrystal, sensitivity, slipcrystal)

_SCHEMA = {
    "run": {"seed", "out_dir", "threads"},
    "microstructure": {"n_grains", "mean_diameter_2d_um", "sd_diameter_2d_um",
                       "twin_fraction", "ensemble_csv"},
    "loading": {"amplitude", "r_ratio", "rate_per_s", "cycles",
                "steps_per_quarter"},
    "material": {"n_rate", "tau_c0", "c_geom", "rho_ssd", "h0", "tau_s",
                 "m_exp", "h_kin", "h_dyn", "gamma_dot0", "c11", "c12",
                 "c44", "g_shear", "burgers", "forest_mode"},
    "objective": {"lambda_weight", "n_points", "penalty_mpa", "sim_cycles"},
    "bounds": set(bayesopt.PARAM_NAMES),
    "calibrate": {"n_initial", "budget", "experiments", "amplitudes"},
    "sensitivity": {"n_samples", "targets"},
    "report": {"twin_fraction", "top_k", "cycles"},
}


class ConfigError(ValueError):
    pass


def _load_config(path):
    p = pathlib.Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = p.read_bytes()
    try:
        cfg = tomllib.loads(raw.decode())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    for section, table in cfg.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(table, dict):
            raise ConfigError(f"[{section}] must be a table")
        unknown = set(table) - _SCHEMA[section]
        if unknown:
            raise ConfigError(
                f"unknown key(s) {sorted(unknown)} in [{section}]")
    digest = hashlib.sha256(raw).hexdigest()[:12]
    return cfg, digest


def _require(cfg, section, keys=()):
    if section not in cfg:
        raise ConfigError(f"missing config section [{section}]")
    for k in keys:
        if k not in cfg[section]:
            raise ConfigError(f"missing key {k!r} in [{section}]")
    return cfg[section]


def _out_dir(cfg):
    out = pathlib.Path(cfg.get("run", {}).get("out_dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(cfg):
    return int(cfg.get("run", {}).get("seed", 0))


def _build_ensemble(cfg, seed):
    ms = _require(cfg, "microstructure")
    if "ensemble_csv" in ms:
        ens = microstructure.read_ensemble_csv(ms["ensemble_csv"])
        ens.volume_check()
        return ens
    stats = {"mean": float(ms.get("mean_diameter_2d_um", 23.37)),
             "sd": float(ms.get("sd_diameter_2d_um", 19.2))}
    return microstructure.sample_ensemble(
        stats, int(ms.get("n_grains", 300)),
        float(ms.get("twin_fraction", 0.0)), seed)


def _build_program(cfg, amplitude=None, cycles=None):
    ld = _require(cfg, "loading", ("amplitude",))
    return polycrystal.LoadingProgram(
        amplitude=float(amplitude if amplitude is not None
                        else ld["amplitude"]),
        r_ratio=float(ld.get("r_ratio", -1.0)),
        rate=float(ld.get("rate_per_s", 0.02)),
        cycles=int(cycles if cycles is not None else ld.get("cycles", 3)),
        steps_per_quarter=int(ld.get("steps_per_quarter", 50)))


def _build_material(cfg):
    mt = _require(cfg, "material", bayesopt.PARAM_NAMES)
    kwargs = {k: float(v) for k, v in mt.items() if k != "forest_mode"}
    if "forest_mode" in mt:
        kwargs["forest_mode"] = mt["forest_mode"]
    params = slipcrystal.MaterialParams(**kwargs)
    params.validate()
    return params


def _build_bounds(cfg):
    table = dict(bayesopt.DEFAULT_BOUNDS_TABLE)
    for name, pair in cfg.get("bounds", {}).items():
        table[name] = (float(pair[0]), float(pair[1]))
    return bayesopt.Bounds(table=table)


def _build_objective_cfg(cfg):
    ob = cfg.get("objective", {})
    ocfg = objective.ObjectiveConfig(
        lam=float(ob.get("lambda_weight", 0.5)),
        n_points=int(ob.get("n_points", 44)),
        penalty=float(ob.get("penalty_mpa", objective.PENALTY_MPA)),
        sim_cycles=int(ob.get("sim_cycles", 3)))
    ocfg.validate()
    return ocfg


def _write_summary(out, name, payload):
    path = out / name
    with open(path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")
    return str(path)


def _cmd_generate(cfg, digest):
    seed = _seed(cfg)
    out = _out_dir(cfg)
    ens = _build_ensemble(cfg, seed)
    path = out / "ensemble.csv"
    microstructure.write_ensemble_csv(ens, path, seed=seed,
                                      config_digest=digest)
    _write_summary(out, "generate_summary.json", {
        "seed": seed, "config": digest, "n_grains": len(ens.grains),
        "twin_volume_fraction": ens.twin_volume_fraction,
        "ensemble_csv": str(path)})
    print(f"wrote {path} ({len(ens.grains)} grains, twin fraction "
          f"{ens.twin_volume_fraction:.3f})")
    return 0


def _cmd_simulate(cfg, digest):
    seed = _seed(cfg)
    out = _out_dir(cfg)
    ens = _build_ensemble(cfg, seed)
    params = _build_material(cfg)
    program = _build_program(cfg)
    run = polycrystal.run_uniaxial(ens, params, program)
    path = out / "curve.csv"
    polycrystal.write_curve_csv(run.curve, path, seed=seed,
                                config_digest=digest)
    _write_summary(out, "simulate_summary.json", {
        "seed": seed, "config": digest, "failed": run.failed,
        "n_steps": int(len(run.curve.time)), "curve_csv": str(path),
        "peak_stress_mpa": float(np.max(np.abs(run.curve.stress)))})
    if run.failed:
        print("simulation failed (penalty path)", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0


def _make_simulator(ens, cfg, sim_cycles):
    def simulator(params, amplitude):
        program = _build_program(cfg, amplitude=amplitude, cycles=sim_cycles)
        return polycrystal.run_uniaxial(ens, params, program,
                                        keep_states=False)
    return simulator


def _cmd_calibrate(cfg, digest):
    seed = _seed(cfg)
    out = _out_dir(cfg)
    cal = _require(cfg, "calibrate", ("experiments",))
    ocfg = _build_objective_cfg(cfg)
    cases = [objective.load_experiment(p) for p in cal["experiments"]]
    bounds = _build_bounds(cfg)
    case = objective.CalibrationCase(cases=cases, bounds=bounds)
    bocfg = bayesopt.BOConfig(
        n_initial=int(cal.get("n_initial", 50)),
        budget=int(cal.get("budget", 75)), seed=seed, lam=ocfg.lam,
        n_points=ocfg.n_points, penalty=ocfg.penalty,
        sim_cycles=ocfg.sim_cycles)
    ens = _build_ensemble(cfg, seed)
    simulator = _make_simulator(ens, cfg, ocfg.sim_cycles)
    history, best = bayesopt.calibrate(case, bocfg, simulator)
    hist_path = out / "history.csv"
    bayesopt.write_history_csv(history, hist_path, seed=seed,
                               config_digest=digest)
    bayesopt.write_trajectories_csv(history, out / "trajectories.csv",
                                    seed=seed, config_digest=digest)
    best_row = history.best()
    bayesopt.write_best_params(best, out / "best_params.csv",
                               objective_value=best_row.objective,
                               seed=seed, config_digest=digest)
    _write_summary(out, "calibrate_summary.json", {
        "seed": seed, "config": digest,
        "best_objective_mpa": float(best_row.objective),
        "best_iteration": int(best_row.iteration),
        "n_evaluations": len(history.rows),
        "n_failed": int(sum(r.failed for r in history.rows)),
        "history_csv": str(hist_path)})
    print(f"best objective {best_row.objective:.3f} MPa at iteration "
          f"{best_row.iteration}; wrote {hist_path}")
    return 0


def _cmd_sensitivity(cfg, digest):
    seed = _seed(cfg)
    out = _out_dir(cfg)
    sn = cfg.get("sensitivity", {})
    n_samples = int(sn.get("n_samples", 100))
    bounds = _build_bounds(cfg)
    ens = _build_ensemble(cfg, seed)
    ocfg = _build_objective_cfg(cfg)
    simulator = _make_simulator(ens, cfg, ocfg.sim_cycles)
    design = bayesopt.lhs_sample(bounds, n_samples, seed)
    base = slipcrystal.MaterialParams(*[1.0] * 9)
    runs = []
    amplitude = float(_require(cfg, "loading", ("amplitude",))["amplitude"])
    for vec in design:
        params = base.replace_calibrated(vec)
        try:
            runs.append(simulator(params, amplitude))
        except Exception:
            runs.append(polycrystal.PolycrystalRun(
                curve=None, per_grain_final=[], failed=True))
    kinds = sn.get("targets")
    targets = [sensitivity.ProbeTarget(k) for k in kinds] if kinds else None
    reports = sensitivity.sensitivity_study(design, runs, bounds,
                                            targets=targets, seed=seed)
    path = out / "shap.csv"
    sensitivity.write_report_csv(reports, path, seed=seed,
                                 config_digest=digest)
    summary = {"seed": seed, "config": digest, "shap_csv": str(path),
               "n_successful": int(sum(not r.failed for r in runs))}
    for kind, rep in reports.items():
        summary[f"r2_{kind}"] = None if rep is None else rep.r2_holdout
        if rep is not None:
            summary[f"ranking_{kind}"] = rep.ranking()
    _write_summary(out, "sensitivity_summary.json", summary)
    print(f"wrote {path}")
    return 0


def _cmd_report(cfg, digest):
    seed = _seed(cfg)
    out = _out_dir(cfg)
    rp = cfg.get("report", {})
    params = _build_material(cfg)
    program = _build_program(cfg, cycles=rp.get("cycles"))
    ms = _require(cfg, "microstructure")
    stats = {"mean": float(ms.get("mean_diameter_2d_um", 23.37)),
             "sd": float(ms.get("sd_diameter_2d_um", 19.2))}
    base = microstructure.sample_ensemble(stats, int(ms.get("n_grains", 300)),
                                          0.0, seed)
    comp = fipreport.compare_twinned(
        base, params, program, top_k=int(rp.get("top_k", 150)), seed=seed,
        twin_target=float(rp.get("twin_fraction", 0.45)))
    reports = [
        fipreport.failure_report(comp.base_records, base, ensemble_id=0),
        fipreport.failure_report(comp.twin_records, comp.twinned_ensemble,
                                 ensemble_id=1),
    ]
    path = out / "failure_report.csv"
    fipreport.write_failure_csv(reports, path, seed=seed,
                                config_digest=digest)
    polycrystal.write_curve_csv(comp.base_curve, out / "curve_base.csv",
                                seed=seed, config_digest=digest)
    polycrystal.write_curve_csv(comp.twin_curve, out / "curve_twinned.csv",
                                seed=seed, config_digest=digest)
    _write_summary(out, "report_summary.json", {
        "seed": seed, "config": digest,
        "lognormal_base_mu_sigma": list(comp.base_fit),
        "lognormal_twin_mu_sigma": list(comp.twin_fit),
        "max_curve_diff_mpa": comp.max_curve_diff,
        "peak_stress_mpa": comp.peak_stress,
        "failure_report_csv": str(path)})
    print(f"wrote {path}")
    return 0


def _cmd_selftest(args):
    """Self-calibration oracle: pseudo-experiment from the reference
    parameter set, then BO must beat the LHS phase and land <= 25 MPa."""
    seed = args.seed
    n_grains = 60 if args.quick else 300
    n_initial = 12 if args.quick else 50
    budget = 15 if args.quick else 75
    target = 40.0 if args.quick else 25.0
    print(f"selftest: {n_grains} grains, n_initial={n_initial}, "
          f"budget={budget}, seed={seed}")
    ens = microstructure.sample_ensemble({"mean": 23.37, "sd": 19.2},
                                         n_grains, 0.0, seed)
    params = slipcrystal.table_params()
    program = polycrystal.LoadingProgram(amplitude=0.005, cycles=3)
    truth = polycrystal.run_uniaxial(ens, params, program, keep_states=False)
    if truth.failed:
        print("FAIL: pseudo-experiment simulation failed")
        return 2
    exp = objective.experiment_from_curve(truth.curve, (2, 3))
    case = objective.CalibrationCase(cases=[exp], bounds=bayesopt.Bounds())
    bocfg = bayesopt.BOConfig(n_initial=n_initial, budget=budget, seed=seed,
                              lam=0.5)

    def simulator(p, amplitude):
        prog = polycrystal.LoadingProgram(amplitude=amplitude, cycles=3)
        return polycrystal.run_uniaxial(ens, p, prog, keep_states=False)

    history, best = bayesopt.calibrate(case, bocfg, simulator)
    objs = history.objectives()
    best_lhs = float(objs[:n_initial].min()) if n_initial else float("inf")
    final = float(objs.min())
    ok_improved = final < best_lhs
    ok_target = final <= target
    print(f"best LHS objective: {best_lhs:.3f} MPa")
    print(f"final best objective: {final:.3f} MPa (target <= {target})")
    print(f"improved over LHS phase: {'PASS' if ok_improved else 'FAIL'}")
    print(f"objective target: {'PASS' if ok_target else 'FAIL'}")
    return 0 if (ok_improved and ok_target) else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cpcal",
        description="cyclic crystal-plasticity calibration toolkit")
    parser.add_argument("--threads", type=int, default=0,
                        help="cap kernel parallelism (default: all cores)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
            ("generate", "draw a synthetic grain ensemble"),
            ("simulate", "run one cyclic simulation"),
            ("calibrate", "Bayesian-optimize the constitutive parameters"),
            ("sensitivity", "Shapley sensitivity over LHS simulations"),
            ("report", "twin comparison and failure-site report")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="TOML config file")
    p = sub.add_parser("selftest", help="run the self-calibration oracle")
    p.add_argument("--quick", action="store_true",
                   help="reduced problem size (smoke test)")
    p.add_argument("--seed", type=int, default=7)
    return parser


_COMMANDS = {
    "generate": _cmd_generate,
    "simulate": _cmd_simulate,
    "calibrate": _cmd_calibrate,
    "sensitivity": _cmd_sensitivity,
    "report": _cmd_report,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads:
        kernels.set_threads(args.threads)
    if args.command == "selftest":
        return _cmd_selftest(args)
    try:
        cfg, digest = _load_config(args.config)
        return _COMMANDS[args.command](cfg, digest)
    except (ConfigError, ValueError, objective.ExperimentFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"simulation failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
