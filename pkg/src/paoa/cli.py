"""Command-line harness: ``paoa <subcommand> [options]``.

Settings come from an optional YAML file (``--config``), then ``--set key=value``
overrides (dotted keys reach nested tables), then dedicated flags. Every command
writes the resolved settings to ``<out>/<command>.config.yaml``.

Exit codes: 0 success, 2 invalid input, 3 training budget exhausted before the
optimiser converged (best-seen parameters are still written).
"""

from __future__ import annotations

import argparse
import copy
import math
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__, io
from .analysis import (
    extrapolate_two_schedule, fit_two_schedule, metric_curve,
)
from .circuit import TwoSchedule
from .device import Gompertz, SymmetricTanh
from .emulator import Emulator, VariabilitySpec, calibrate_array, synthesize_array
from .problems import exact_ground_state, gen_sk_instance, majority_target_distribution, \
    majority_truth_set
from .rng import derive_seed
from .variational import (
    OptimizerConfig, average_schedules, cross_entropy_cost, kl_divergence, majority_counts,
    train_instance, train_majority,
)

EXIT_OK, EXIT_INVALID, EXIT_BUDGET = 0, 2, 3
OUTPUT_ROOT_ENV = "PAOA_OUTPUT_ROOT"
MODES = ("tanh_tanh", "tanh_gompertz", "gompertz_gompertz")

RESULT_COLUMNS = ["depth", "activation_train", "activation_infer", "mean_energy", "e_sol",
                  "residual_energy", "approx_ratio", "ci_low", "ci_high", "n_runs",
                  "n_instances", "seed"]

DEFAULTS = {
    "seed": 0,
    "mode": "tanh_tanh",
    "n": 26,
    "depths": [1, 3, 5, 9, 13, 17],
    "train_seeds": [0, 1],
    "test_seeds": [100, 101],
    "runs_train": 10_000,
    "runs_infer": 10_000,
    "ci_mode": "runs",
    "n_resamples": 10_000,
    "initial_beta": 1.0,
    "optimizer": {"max_iterations": 300, "eps_step": 1e-4, "initial_step": 0.5, "cost_seed": 0},
    "activation": {"alpha": 1.4, "kappa": math.log(2.0)},
    "array": None,
    "theta": None,
    "workers": 1,
    "output_dir": None,
    "majority": {"depths": [1, 2, 3, 4], "runs_per_eval": 100_000, "runs_eval": 1_000_000,
                 "initial_coupling": 0.1, "epsilon": 0.5},
    "calibration": {"windows": 10_000, "vg_min": -2.0, "vg_max": 2.0, "vg_points": 41},
    "array_spec": {"rows": 64, "cols": 64, "theta": 25.0, "t_int": 1e-6},
    "variability": {},
}


class UsageError(ValueError):
    pass


# --- configuration ---------------------------------------------------------

def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _set_dotted(cfg: dict, key: str, value):
    *parents, leaf = key.split(".")
    node = cfg
    for part in parents:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise UsageError(f"cannot set {key!r}: {part!r} is not a table")
    node[leaf] = value


def resolve_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        loaded = yaml.safe_load(Path(args.config).read_text()) or {}
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a mapping")
        cfg = _merge(cfg, loaded)
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        _set_dotted(cfg, key.strip(), yaml.safe_load(raw))
    for name in ("seed", "workers", "array", "mode", "n"):
        value = getattr(args, name, None)
        if value is not None:
            cfg[name] = value
    if args.out is not None:
        cfg["output_dir"] = args.out
    if cfg["output_dir"] is None:
        cfg["output_dir"] = os.environ.get(OUTPUT_ROOT_ENV, "paoa_out")
    _validate(cfg)
    return cfg


def _validate(cfg: dict):
    if cfg["mode"] not in MODES:
        raise UsageError(f"mode must be one of {MODES}, got {cfg['mode']!r}")
    if set(cfg["train_seeds"]) & set(cfg["test_seeds"]):
        raise UsageError("train and test instance seeds must be disjoint")
    if int(cfg["workers"]) < 1:
        raise UsageError("workers must be >= 1")
    if any(int(p) < 1 for p in cfg["depths"]):
        raise UsageError("depths must be >= 1")


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot(cfg: dict, command: str):
    doc = {"paoa_version": __version__, "command": command, **cfg}
    (_out_dir(cfg) / f"{command}.config.yaml").write_text(yaml.safe_dump(doc, sort_keys=True))


def _optimizer(cfg: dict, runs: int) -> OptimizerConfig:
    o = cfg["optimizer"]
    return OptimizerConfig(max_iterations=int(o["max_iterations"]), eps_step=float(o["eps_step"]),
                           initial_step=float(o["initial_step"]), cost_seed=int(o["cost_seed"]),
                           runs_per_eval=int(runs), workers=int(cfg["workers"]))


def _activation(name: str, cfg: dict):
    if name == "tanh":
        return SymmetricTanh()
    a = cfg["activation"]
    return Gompertz(float(a["alpha"]), float(a["kappa"]))


def _mode_parts(cfg: dict) -> tuple[str, str]:
    train, infer = cfg["mode"].split("_")
    return train, infer


# --- instances -------------------------------------------------------------

def _instances_from_seeds(cfg: dict, seeds) -> list:
    return [gen_sk_instance(int(cfg["n"]), int(s)) for s in seeds]


def _load_instances(paths) -> list:
    return [io.load_instance(p) for p in paths]


def _ground_states(instances, paths=None) -> list[float]:
    out = []
    for k, inst in enumerate(instances):
        sidecar = io.ground_state_path(paths[k]) if paths else None
        if sidecar is not None and sidecar.exists():
            out.append(io.load_ground_state(sidecar).e_sol)
        else:
            out.append(exact_ground_state(inst).e_sol)
    return out


def _test_set(cfg: dict, args):
    if getattr(args, "instances", None):
        insts = _load_instances(args.instances)
        return insts, _ground_states(insts, args.instances)
    insts = _instances_from_seeds(cfg, cfg["test_seeds"])
    return insts, _ground_states(insts)


# --- commands --------------------------------------------------------------

def cmd_gen_instances(cfg: dict, args) -> int:
    out = _out_dir(cfg) / "instances"
    n = int(cfg["n"])
    for k in range(args.count):
        inst = gen_sk_instance(n, derive_seed(int(cfg["seed"]), k))
        io.save_instance(out / f"sk_n{n}_{k:03d}.json", inst)
    _snapshot(cfg, "gen-instances")
    return EXIT_OK


def cmd_solve_exact(cfg: dict, args) -> int:
    for path in args.instances:
        inst = io.load_instance(path)
        io.save_ground_state(io.ground_state_path(path), exact_ground_state(inst), inst)
    _snapshot(cfg, "solve-exact")
    return EXIT_OK


def _trace_rows(result):
    best = result.best_so_far()
    return [(i, i + 1, c, b) for (i, c), b in zip(result.cost_trace, best)]


def cmd_train(cfg: dict, args) -> int:
    train_name, _ = _mode_parts(cfg)
    activation = _activation(train_name, cfg)
    opt = _optimizer(cfg, cfg["runs_train"])
    if args.instances:
        instances = _load_instances(args.instances)
    else:
        instances = _instances_from_seeds(cfg, cfg["train_seeds"])
    seeds = [inst.seed for inst in instances]
    exhausted = False
    base = _out_dir(cfg) / "train"
    for p in sorted(int(d) for d in cfg["depths"]):
        schedules = []
        for inst in instances:
            result = train_instance(inst, p, activation, opt, float(cfg["initial_beta"]))
            exhausted |= result.termination_reason == "max_iterations"
            schedules.append(result.parameters)
            io.save_schedule(base / f"p{p}" / f"instance_{inst.seed}.json", result.parameters,
                             activation, {"instance_seeds": [inst.seed],
                                          "config": dict(cfg["optimizer"]),
                                          "termination": result.termination_reason})
            io.write_csv(base / f"p{p}" / f"trace_{inst.seed}.csv",
                         ["iteration", "evaluations", "cost", "best_cost"], _trace_rows(result),
                         opt.cost_seed)
        io.save_schedule(base / f"p{p}" / "average.json", average_schedules(schedules), activation,
                         {"instance_seeds": seeds, "config": dict(cfg["optimizer"])})
    _snapshot(cfg, "train")
    return EXIT_BUDGET if exhausted else EXIT_OK


def _backend(cfg: dict):
    if not cfg["array"]:
        return None
    array, calibration = io.load_array(cfg["array"])
    if calibration is None:
        raise UsageError(f"array file {cfg['array']} carries no calibration; run calibrate first")
    return Emulator(array, calibration, theta=cfg["theta"])


def _result_rows(metrics, train_name: str, infer_name: str, seed: int):
    rows = []
    for m in metrics:
        rows.append([m.depth, train_name, infer_name, m.mean_energy, m.mean_e_sol,
                     m.residual.mean, m.ratio.mean, m.ratio.ci_low, m.ratio.ci_high,
                     m.n_runs, m.n_instances, seed])
    return rows


def _evaluate(cfg: dict, instances, e_sols, schedules: dict, train_name: str, infer_name: str):
    backend = _backend(cfg)
    activation = _activation(infer_name, cfg)
    if backend is not None:
        infer_name = "emulator"
    metrics = metric_curve(instances, e_sols, schedules, activation, int(cfg["runs_infer"]),
                           int(cfg["seed"]), backend=backend, ci_mode=cfg["ci_mode"],
                           n_resamples=int(cfg["n_resamples"]), workers=int(cfg["workers"]))
    return _result_rows(metrics, train_name, infer_name, int(cfg["seed"]))


def _schedule_files(cfg: dict, args) -> list[Path]:
    if args.schedules:
        return [Path(s) for s in args.schedules]
    base = _out_dir(cfg) / "train"
    files = [base / f"p{int(p)}" / "average.json" for p in cfg["depths"]]
    missing = [str(f) for f in files if not f.exists()]
    if missing:
        raise UsageError(f"missing schedule files: {', '.join(missing)}")
    return files


def cmd_infer(cfg: dict, args) -> int:
    train_name, infer_name = _mode_parts(cfg)
    schedules = {}
    for path in _schedule_files(cfg, args):
        schedule, trained_with, _ = io.load_schedule(path)
        if trained_with.kind != train_name:
            raise UsageError(f"{path} was trained with {trained_with.kind}, mode expects {train_name}")
        schedules[schedule.p] = schedule
    instances, e_sols = _test_set(cfg, args)
    rows = _evaluate(cfg, instances, e_sols, schedules, train_name, infer_name)
    name = args.name or f"results_{cfg['mode']}{'_emulator' if cfg['array'] else ''}.csv"
    io.write_csv(_out_dir(cfg) / name, RESULT_COLUMNS, rows, cfg["seed"])
    _snapshot(cfg, "infer")
    return EXIT_OK


def cmd_extrapolate(cfg: dict, args) -> int:
    schedule, activation, doc = io.load_schedule(args.schedule)
    models = fit_two_schedule(schedule)
    fit = {"source_p": schedule.p, "beta1": io.model_to_dict(models[0]),
           "beta2": io.model_to_dict(models[1])}
    out = _out_dir(cfg) / "extrapolate"
    schedules = {schedule.p: schedule}
    for target in args.targets:
        ext = extrapolate_two_schedule(models, int(target))
        schedules[int(target)] = ext
        io.save_schedule(out / f"p{int(target)}.json", ext, activation, doc.get("provenance"), fit)
    if not args.no_eval:
        instances, e_sols = _test_set(cfg, args)
        rows = _evaluate(cfg, instances, e_sols, schedules, activation.kind, activation.kind)
        io.write_csv(out / "results_extrapolated.csv", RESULT_COLUMNS, rows, cfg["seed"])
    _snapshot(cfg, "extrapolate")
    return EXIT_OK


def cmd_majority(cfg: dict, args) -> int:
    train_name, infer_name = _mode_parts(cfg)
    mj = cfg["majority"]
    train_act, infer_act = _activation(train_name, cfg), _activation(infer_name, cfg)
    opt = _optimizer(cfg, mj["runs_per_eval"])
    target = majority_target_distribution()
    truth = majority_truth_set()
    out = _out_dir(cfg) / "majority"
    eval_seed = int(cfg["seed"])
    exhausted = False
    kl_rows, last = [], None
    for p in sorted(int(d) for d in mj["depths"]):
        result = train_majority(p, train_act, opt, float(mj["initial_coupling"]),
                                float(mj["epsilon"]))
        exhausted |= result.termination_reason == "max_iterations"
        io.write_csv(out / f"trace_p{p}.csv", ["iteration", "evaluations", "cost", "best_cost"],
                     _trace_rows(result), opt.cost_seed)
        counts = majority_counts(result.parameters, infer_act, int(mj["runs_eval"]), eval_seed,
                                 int(cfg["workers"]))
        q = counts / counts.sum()
        top8 = set(np.argsort(-q, kind="stable")[:8].tolist())
        kl_rows.append([p, train_name, infer_name, kl_divergence(target, q),
                        cross_entropy_cost(counts, target, float(mj["epsilon"])),
                        int(top8 == truth), result.evaluations_used])
        io.write_json(out / f"couplings_p{p}.json",
                      {"format_version": io.FORMAT_VERSION, "p": p,
                       "activation": train_act.to_dict(),
                       "j_upper": [list(map(float, layer)) for layer in
                                   result.parameters.to_vector().reshape(p, -1)]})
        last = (p, q)
    p, q = last
    io.write_csv(out / "distribution.csv", ["state", "bits", "target", "probability", "depth"],
                 [[k, format(k, "04b"), target[k], q[k], p] for k in range(16)], eval_seed)
    io.write_csv(out / "kl_vs_depth.csv", ["depth", "activation_train", "activation_infer", "kl",
                                           "cross_entropy", "top8_correct", "evaluations"],
                 kl_rows, eval_seed)
    _snapshot(cfg, "majority")
    return EXIT_BUDGET if exhausted else EXIT_OK


def _variability(cfg: dict) -> VariabilitySpec:
    try:
        return VariabilitySpec(**cfg["variability"])
    except TypeError as exc:
        raise UsageError(f"bad variability table: {exc}") from None


def cmd_synth_array(cfg: dict, args) -> int:
    a = cfg["array_spec"]
    array = synthesize_array(_variability(cfg), int(a["rows"]), int(a["cols"]), int(cfg["seed"]),
                             float(a["theta"]), float(a["t_int"]))
    io.save_array(_out_dir(cfg) / (args.name or "array.json"), array)
    _snapshot(cfg, "synth-array")
    return EXIT_OK


def cmd_calibrate(cfg: dict, args) -> int:
    if cfg["array"]:
        array, _ = io.load_array(cfg["array"])
    else:
        a = cfg["array_spec"]
        array = synthesize_array(_variability(cfg), int(a["rows"]), int(a["cols"]),
                                 int(cfg["seed"]), float(a["theta"]), float(a["t_int"]))
    c = cfg["calibration"]
    grid = np.linspace(float(c["vg_min"]), float(c["vg_max"]), int(c["vg_points"]))
    cal = calibrate_array(array, grid, int(c["windows"]), int(cfg["seed"]), cfg["theta"])
    out = _out_dir(cfg)
    io.save_array(out / (args.name or "array_calibrated.json"), array, cal)
    rows = [[i, i // array.cols, i % array.cols, array.alpha[i], array.kappa_at_ref[i],
             cal.fitted_alpha[i], cal.fitted_kappa[i], cal.v_bias[i], cal.gain_k[i]]
            for i in range(array.size)]
    io.write_csv(out / "calibration_report.csv",
                 ["pixel", "row", "col", "alpha", "kappa", "fitted_alpha", "fitted_kappa",
                  "v_bias", "gain_k"], rows, cfg["seed"])
    _snapshot(cfg, "calibrate")
    return EXIT_OK


# --- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML settings file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a setting (dotted keys for nested tables)")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV} or ./paoa_out)")

    parser = argparse.ArgumentParser(prog="paoa", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"paoa {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-instances", parents=[common], help="write random SK instances")
    p.add_argument("--n", type=int)
    p.add_argument("--count", type=int, default=1)
    p.set_defaults(func=cmd_gen_instances)

    p = sub.add_parser("solve-exact", parents=[common], help="exact ground states as sidecars")
    p.add_argument("instances", nargs="+")
    p.set_defaults(func=cmd_solve_exact)

    p = sub.add_parser("train", parents=[common], help="train two-schedule ansatz per depth")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--n", type=int)
    p.add_argument("--instances", nargs="*", help="instance files (default: train_seeds)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="evaluate averaged schedules")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--n", type=int)
    p.add_argument("--array", help="calibrated array file; switches to the emulator backend")
    p.add_argument("--schedules", nargs="*", help="schedule files (default: train/p*/average.json)")
    p.add_argument("--instances", nargs="*", help="instance files (default: test_seeds)")
    p.add_argument("--name", help="results file name")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("extrapolate", parents=[common], help="extend a schedule to deeper circuits")
    p.add_argument("schedule")
    p.add_argument("--targets", type=int, nargs="+", default=[100, 1000])
    p.add_argument("--n", type=int)
    p.add_argument("--array", help="calibrated array file; switches to the emulator backend")
    p.add_argument("--instances", nargs="*")
    p.add_argument("--no-eval", action="store_true", help="only write the schedule files")
    p.set_defaults(func=cmd_extrapolate)

    p = sub.add_parser("majority", parents=[common], help="train the 4-bit majority sampler")
    p.add_argument("--mode", choices=MODES)
    p.set_defaults(func=cmd_majority)

    p = sub.add_parser("calibrate", parents=[common], help="sweep and calibrate every pixel")
    p.add_argument("--array", help="array file (default: synthesise from array_spec)")
    p.add_argument("--name", help="calibrated array file name")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("synth-array", parents=[common], help="draw a virtual pixel array")
    p.add_argument("--name", help="array file name")
    p.set_defaults(func=cmd_synth_array)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return args.func(cfg, args)
    except (ValueError, KeyError, FileNotFoundError, yaml.YAMLError) as exc:
        print(f"paoa {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
