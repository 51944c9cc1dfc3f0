"""Command-line entry point.

Every command accepts ``--config FILE`` (INI, one section per command name)
and explicit flags, which take precedence.  The effective configuration is
echoed to stdout as an INI section that can be fed back with ``--config``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Optional

import numpy as np

from . import dynamics, evaluation, timeseries
from .discovery import SUMMARY_HEADER, MergeConfig, discover, write_report_json
from .network import init_model, load_model, save_model
from .training import TrainConfig, train, write_history_csv

log = logging.getLogger("pudyn")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# option tables

def _int_list(text: str) -> list[int]:
    """``"1000,3000"`` or ``"0-9"`` (inclusive range) or a mix of both."""
    out: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError(f"empty integer list {text!r}")
    return out


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text) -> Optional[float]:
    return None if str(text).strip().lower() in ("", "none", "auto") else float(text)


def _optional_int(text) -> Optional[int]:
    return None if str(text).strip().lower() in ("", "none", "auto") else int(text)


def _optional_str(text) -> Optional[str]:
    return None if str(text).strip().lower() in ("", "none") else str(text)


# (dest, parser, default, help); a default of None means "derived at run time"
Opt = tuple[str, Callable[[str], Any], Any, str]

COMMON: list[Opt] = [
    ("seed", int, 0, "random seed"),
    ("out", str, "runs", "output directory"),
    ("jobs", int, 1, "parallel workers (sweep only)"),
]

DATA: list[Opt] = [
    ("system", str, "lorenz63", "built-in system name"),
    ("trajectories", int, 30, "number of trajectories"),
    ("points", int, 3000, "total number of points"),
    ("dt", _optional_float, None, "RK4 step (system default)"),
    ("clamp", _optional_str, None, "project every step onto [lo,hi], e.g. 0,20"),
]

TRAIN: list[Opt] = [
    ("units", _optional_int, None, "product units (system default)"),
    ("epochs", int, 5000, "training epochs"),
    ("batch_size", int, 30, "mini-batch size"),
    ("lr_coefficients", float, 0.03, "learning rate of the output coefficients"),
    ("lr_exponents", float, 0.003, "learning rate of exponents and biases"),
    ("gamma", float, 0.999, "per-epoch learning-rate decay"),
]

MERGE: list[Opt] = [
    ("epsilon", float, 0.1, "merge and match tolerance"),
    ("delta", float, 1e-3, "pruning threshold"),
]

EPT: list[Opt] = [
    ("system", str, "lorenz63", "true system"),
    ("model", str, None, "model JSON file"),
    ("trials", int, 3, "number of random starts"),
    ("warmup", int, 50_000, "warm-up steps of the true system"),
    ("horizon", int, 50_000, "comparison horizon in steps"),
    ("decimals", int, 3, "rounding of the model before comparison"),
    ("discard_imag", _bool, False, "project the model state onto the reals each step"),
    ("dump_errors", _bool, False, "write per-step error series"),
]

SIGNAL: list[Opt] = [
    ("input", _optional_str, None, "signal CSV t,ax,ay,az (synthetic gait if omitted)"),
    ("duration", float, 40.0, "synthetic signal length in seconds"),
    ("rate", float, 200.0, "synthetic sample rate in Hz"),
    ("cutoff", float, 15.0, "low-pass cutoff in Hz"),
    ("order", int, 4, "Butterworth order"),
]

GAIT: list[Opt] = SIGNAL + [
    ("train_seconds", float, 10.0, "length of the training segment"),
    ("units", int, 300, "product units"),
    ("epochs", int, 500, "training epochs"),
    ("batch_size", int, 30, "mini-batch size"),
    ("lr_coefficients", float, 0.01, "learning rate of the output coefficients"),
    ("lr_exponents", float, 0.003, "learning rate of exponents and biases"),
    ("gamma", float, 0.99, "per-epoch learning-rate decay"),
    ("exponent_scale", float, 0.001, "std of the initial exponents and biases"),
    ("coefficient_scale", float, 0.1, "std of the initial coefficients"),
    ("lags", int, 50, "number of embedding lags"),
    ("window", _optional_int, None, "moving-RMSE window in samples (one second)"),
]

SWEEP: list[Opt] = [
    ("system", str, "lorenz63", "built-in system name"),
    ("points_grid", _int_list, [1000, 3000, 5000], "total point counts"),
    ("trajectories_grid", _int_list, list(range(10, 101, 10)), "trajectory counts"),
    ("seeds", _int_list, list(range(10)), "seeds, e.g. 0-9"),
    ("dt", _optional_float, None, "RK4 step (system default)"),
    ("clamp", _optional_str, None, "project every step onto [lo,hi]"),
] + TRAIN + MERGE

COMMANDS: dict[str, list[Opt]] = {
    "simulate": DATA,
    "train": DATA + TRAIN,
    "discover": DATA + TRAIN + MERGE + [("model", _optional_str, None, "skip training and use this model")],
    "ept": EPT,
    "gait": GAIT,
    "filter": [o for o in SIGNAL if o[0] != "input"] + [("input", str, None, "signal CSV t,ax,ay,az")],
    "sweep": SWEEP,
}

HELP = {
    "simulate": "generate a training dataset CSV",
    "train": "train a product-unit network on simulated data",
    "discover": "train, then extract, merge, prune, match and render equations",
    "ept": "effective prediction time of a model file",
    "gait": "filter, embed, train and forecast a 3-axis signal",
    "filter": "Butterworth low-pass a signal CSV",
    "sweep": "discovery over a grid of point and trajectory counts",
}


def _flag(dest: str) -> str:
    return "--" + dest.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pudyn", description="Product-unit equation discovery and forecasting.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", help="INI file; section [%s] supplies defaults" % name)
        for dest, _, default, text in COMMON + opts:
            if name != "sweep" and dest == "jobs":
                continue
            # parsing and type conversion happen in resolve_config
            p.add_argument(_flag(dest), dest=dest, default=None,
                           help=f"{text} (default: {_fmt(default) if default is not None else 'auto'})")
    return parser


def _fmt(value) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return "none" if value is None else str(value)


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Built-in defaults, overridden by the config file, overridden by flags."""
    opts = [o for o in COMMON + COMMANDS[command] if not (command != "sweep" and o[0] == "jobs")]
    parsers = {d: p for d, p, _, _ in opts}
    cfg = {d: default for d, _, default, _ in opts}
    raw: dict[str, str] = {}
    if args.config:
        cp = configparser.ConfigParser()
        try:
            with open(args.config) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        section = dict(cp.defaults())
        if cp.has_section(command):
            section.update(cp.items(command))
        for key, value in section.items():
            key = key.replace("-", "_")
            if key not in parsers:
                raise UsageError(f"{args.config}: unknown key {key!r} for {command}")
            raw[key] = value
    for dest in parsers:
        v = getattr(args, dest, None)
        if v is not None:
            raw[dest] = v
    for key, value in raw.items():
        try:
            cfg[key] = parsers[key](value)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid value for {_flag(key)}: {exc}") from None
    return cfg


def fill_system_defaults(cfg: dict) -> dynamics.SystemSpec:
    try:
        system = dynamics.get_system(cfg["system"])
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    cfg["system"] = system.name
    if "dt" in cfg and cfg["dt"] is None:
        cfg["dt"] = system.dt
    if "units" in cfg and cfg["units"] is None:
        cfg["units"] = system.n_units
    return system


def echo_config(command: str, cfg: dict, stream=None) -> str:
    lines = [f"[{command}]"] + [f"{k} = {_fmt(v)}" for k, v in cfg.items()]
    text = "\n".join(lines) + "\n"
    print(text, file=stream or sys.stdout, end="", flush=True)
    return text


def _write_status(run_dir: str, status: str, **extra) -> None:
    with open(os.path.join(run_dir, "status.json"), "w") as fh:
        json.dump({"status": status, **extra}, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands

def run_name(cfg: dict) -> str:
    return f"{cfg['system']}_{cfg['points']}_{cfg['trajectories']}_{cfg['seed']}"


def _clamp_box(cfg):
    if cfg.get("clamp") is None:
        return None
    try:
        lo, hi = (float(v) for v in cfg["clamp"].split(","))
    except ValueError:
        raise UsageError(f"--clamp expects lo,hi, got {cfg['clamp']!r}") from None
    return (lo, hi)


def _dataset(cfg: dict, system):
    tc = dynamics.TrajectoryConfig.for_system(
        system, cfg["trajectories"], cfg["points"], seed=cfg["seed"], dt=cfg["dt"],
        state_clamp=_clamp_box(cfg),
    )
    try:
        tc.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return dynamics.generate_dataset(system, tc)


def _train_config(cfg: dict) -> TrainConfig:
    tc = TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        lr_coefficients=cfg["lr_coefficients"], lr_exponents=cfg["lr_exponents"],
        decay_gamma=cfg["gamma"], seed=cfg["seed"],
    )
    try:
        tc.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return tc


def _run_dir(cfg: dict) -> str:
    d = os.path.join(cfg["out"], run_name(cfg))
    os.makedirs(d, exist_ok=True)
    return d


def cmd_simulate(cfg: dict) -> int:
    system = fill_system_defaults(cfg)
    echo_config("simulate", cfg)
    ds = _dataset(cfg, system)
    d = _run_dir(cfg)
    path = os.path.join(d, "dataset.csv")
    dynamics.write_dataset_csv(ds, path)
    print(f"wrote {len(ds)} points from {cfg['trajectories']} trajectories (dt={ds.dt}) to {path}")
    return 0


def _train_into(cfg: dict, system, d: str):
    ds = _dataset(cfg, system)
    model = init_model(system.state_dim, cfg["units"], system.state_dim, cfg["seed"])
    result = train(model, ds, _train_config(cfg))
    result.model.meta.update(system=system.name, seed=cfg["seed"], points=cfg["points"],
                             trajectories=cfg["trajectories"])
    save_model(result.model, os.path.join(d, "model.json"))
    write_history_csv(result.history, os.path.join(d, "history.csv"))
    return result


def cmd_train(cfg: dict) -> int:
    system = fill_system_defaults(cfg)
    text = echo_config("train", cfg)
    d = _run_dir(cfg)
    with open(os.path.join(d, "config.ini"), "w") as fh:
        fh.write(text)
    _write_status(d, "running")
    result = _train_into(cfg, system, d)
    _write_status(d, "ok", final_loss=result.final_loss, skipped_batches=result.skipped_batches)
    print(f"final loss {result.final_loss:.6g}; model written to {d}")
    return 0


def discover_run(cfg: dict) -> dict:
    """One discovery run; returns its summary row.  Shared by ``discover`` and ``sweep``."""
    system = fill_system_defaults(cfg)
    d = _run_dir(cfg)
    _write_status(d, "running")
    if cfg.get("model"):
        model = load_model(cfg["model"])
        final_loss = float("nan")
    else:
        result = _train_into(cfg, system, d)
        model, final_loss = result.model, result.final_loss
    res = discover(model, system, MergeConfig(cfg["epsilon"], cfg["delta"]))
    row = {
        "system": system.name, "seed": cfg["seed"], "points": cfg["points"],
        "trajectories": cfg["trajectories"], "units": model.n_units,
        "correct": res.report.correct_count, "erroneous": res.report.erroneous_count,
        "final_loss": repr(final_loss), "status": "ok",
    }
    write_report_json(res, os.path.join(d, "report.json"), **{k: row[k] for k in SUMMARY_HEADER})
    with open(os.path.join(d, "equations.txt"), "w") as fh:
        fh.write(res.text + "\n")
    _write_summary(os.path.join(d, "summary.csv"), [row])
    _write_status(d, "ok", fully_correct=res.report.fully_correct)
    row["_text"] = res.text
    return row


SWEEP_HEADER = SUMMARY_HEADER + ["status"]


def _write_summary(path: str, rows: list[dict], append: bool = False) -> None:
    new = not (append and os.path.exists(path))
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.DictWriter(fh, SWEEP_HEADER, extrasaction="ignore")
        if new:
            w.writeheader()
        w.writerows(rows)


def cmd_discover(cfg: dict) -> int:
    fill_system_defaults(cfg)
    text = echo_config("discover", cfg)
    os.makedirs(os.path.join(cfg["out"], run_name(cfg)), exist_ok=True)
    with open(os.path.join(cfg["out"], run_name(cfg), "config.ini"), "w") as fh:
        fh.write(text)
    row = discover_run(cfg)
    print(row.pop("_text"))
    print(f"correct {row['correct']}, erroneous {row['erroneous']}")
    return 0


def cmd_ept(cfg: dict) -> int:
    system = fill_system_defaults(cfg)
    if not cfg["model"]:
        raise UsageError("--model is required")
    echo_config("ept", cfg)
    model = load_model(cfg["model"])
    ec = evaluation.EptConfig.for_system(
        system, warmup_steps=cfg["warmup"], horizon_steps=cfg["horizon"], seed=cfg["seed"],
        decimals=cfg["decimals"], discard_imag=cfg["discard_imag"],
    )
    try:
        ec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    results = evaluation.compute_ept_trials(system, model, ec, cfg["trials"])
    os.makedirs(cfg["out"], exist_ok=True)
    evaluation.write_ept_csv(results, system.name, cfg["seed"], os.path.join(cfg["out"], "ept.csv"))
    for r in results:
        if cfg["dump_errors"]:
            evaluation.write_error_csv(r, ec.dt, os.path.join(cfg["out"], f"ept_errors_{r.trial}.csv"))
        print(f"trial {r.trial}: theta={r.threshold_theta:.4g} ept_steps={r.ept_steps} "
              f"normalized={r.ept_normalized:.4g} diverged={r.diverged}")
    return 0


def _load_signal(cfg: dict) -> timeseries.TimeSeries:
    if cfg.get("input"):
        return timeseries.read_series_csv(cfg["input"])
    return timeseries.synth_gait(cfg["duration"], cfg["rate"], cfg["seed"])


def _filter_spec(cfg: dict, series) -> timeseries.FilterSpec:
    spec = timeseries.FilterSpec(cfg["order"], cfg["cutoff"], series.sample_rate)
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return spec


def cmd_filter(cfg: dict) -> int:
    if not cfg.get("input"):
        raise UsageError("--input is required")
    echo_config("filter", cfg)
    series = timeseries.read_series_csv(cfg["input"])
    out = timeseries.butterworth_lowpass(series, _filter_spec(cfg, series))
    os.makedirs(cfg["out"], exist_ok=True)
    path = os.path.join(cfg["out"], "filtered.csv")
    timeseries.write_series_csv(out, path)
    print(f"wrote {len(out)} filtered samples to {path}")
    return 0


def gait_run(cfg: dict) -> dict:
    series = _load_signal(cfg)
    filtered = timeseries.butterworth_lowpass(series, _filter_spec(cfg, series))
    n_train = int(round(cfg["train_seconds"] * filtered.sample_rate))
    if not 0 < n_train < len(filtered):
        raise UsageError("training segment must be shorter than the signal")
    emb = timeseries.EmbeddingConfig(n_lags=cfg["lags"])
    history = filtered.slice(0, n_train)
    try:
        ds = timeseries.build_embedding_dataset(history, emb)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    model = init_model(ds.inputs.shape[1], cfg["units"], 3, cfg["seed"],
                       exponent_scale=cfg["exponent_scale"], coefficient_scale=cfg["coefficient_scale"])
    result = train(model, ds, _train_config(cfg))
    fc = timeseries.forecast(result.model, history, len(filtered) - n_train, emb)
    truth = filtered.slice(n_train, n_train + len(fc.predictions))
    window = cfg["window"] or int(round(filtered.sample_rate))

    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    save_model(result.model, os.path.join(out, "model.json"))
    write_history_csv(result.history, os.path.join(out, "history.csv"))
    timeseries.write_series_csv(fc.predictions, os.path.join(out, "forecast.csv"))
    summary = {"final_loss": result.final_loss, "forecast_steps": len(fc.predictions),
               "failed_at": fc.failed_at, "status": "ok" if fc.ok else "partial"}
    if len(fc.predictions):
        rmse, _ = timeseries.rmse_metrics(truth, fc.predictions, window)
        timeseries.write_metrics_csv(truth, fc.predictions, window, os.path.join(out, "metrics.csv"),
                                     t0=n_train / filtered.sample_rate)
        summary["rmse"] = [float(v) for v in rmse]
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return summary


def cmd_gait(cfg: dict) -> int:
    echo_config("gait", cfg)
    summary = gait_run(cfg)
    print(json.dumps(summary, sort_keys=True))
    return 0 if summary["status"] == "ok" else 1


def _sweep_cell(cfg: dict) -> dict:
    try:
        row = discover_run(cfg)
        row.pop("_text", None)
        return row
    except Exception as exc:  # recorded in the summary, the sweep goes on
        return {
            "system": cfg["system"], "seed": cfg["seed"], "points": cfg["points"],
            "trajectories": cfg["trajectories"], "units": cfg["units"], "correct": "",
            "erroneous": "", "final_loss": "", "status": f"failed: {type(exc).__name__}: {exc}",
        }


def sweep_cells(cfg: dict) -> list[dict]:
    cells = []
    for points in cfg["points_grid"]:
        for trajs in cfg["trajectories_grid"]:
            for seed in cfg["seeds"]:
                c = {k: v for k, v in cfg.items() if k not in ("points_grid", "trajectories_grid", "seeds", "jobs")}
                c.update(points=points, trajectories=trajs, seed=seed, model=None)
                cells.append(c)
    return cells


def _read_done(path: str) -> set:
    if not os.path.exists(path):
        return set()
    with open(path, newline="") as fh:
        return {(r["system"], int(r["points"]), int(r["trajectories"]), int(r["seed"]))
                for r in csv.DictReader(fh)}


def cmd_sweep(cfg: dict) -> int:
    fill_system_defaults(cfg)
    if cfg["jobs"] < 1:
        raise UsageError("--jobs must be >= 1")
    echo_config("sweep", cfg)
    os.makedirs(cfg["out"], exist_ok=True)
    summary = os.path.join(cfg["out"], "summary.csv")
    done = _read_done(summary)
    todo = [c for c in sweep_cells(cfg)
            if (c["system"], c["points"], c["trajectories"], c["seed"]) not in done]
    print(f"{len(todo)} cells to run, {len(done)} already done")
    if cfg["jobs"] == 1:
        rows = map(_sweep_cell, todo)
        for row in rows:
            _write_summary(summary, [row], append=True)
    else:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
            for row in pool.map(_sweep_cell, todo):
                _write_summary(summary, [row], append=True)
    return 0


HANDLERS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "discover": cmd_discover,
    "ept": cmd_ept,
    "gait": cmd_gait,
    "filter": cmd_filter,
    "sweep": cmd_sweep,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.command, args)
        return HANDLERS[args.command](cfg)
    except UsageError as exc:
        print(f"pudyn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"pudyn {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
