"""``myodyn`` command line: simulate, train, evaluate, gradcheck, sweep.

Exit codes: 0 success; 1 a threshold or gradient check failed; 2 invalid
usage, configuration or input files; 3 a run aborted (simulation left its
domain, non-finite loss).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .config import ConfigError, ToolConfig, default_config, dump_config, load_config
from .data import TrialFormatError, load_trial, save_trial, synthesize_trial
from .joint import SimulationError
from .network import load_checkpoint, save_checkpoint
from .training import (TrainingError, TrainReport, loss_grad_check, pool_samples, split_indices, take, train)

SWEEP_AXES = {"learning_rate": ("training", "lr", float),
              "activation": ("network", "activation", str),
              "batch_size": ("training", "batch_size", int)}


class CliError(Exception):
    def __init__(self, msg, code=2):
        super().__init__(msg)
        self.code = code


def _seed_default():
    env = os.environ.get("MYODYN_SEED")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise CliError(f"MYODYN_SEED={env!r} is not an integer") from None


def _config(path) -> ToolConfig:
    try:
        return load_config(path) if path else default_config()
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    except ConfigError as exc:
        raise CliError(f"invalid config: {exc}") from None


def _seed(args, cfg) -> int:
    return args.seed if args.seed is not None else cfg.training.seed


def _trial(path, names=None):
    try:
        return load_trial(path, names)
    except FileNotFoundError as exc:
        raise CliError(f"missing data file: {exc.filename}") from None
    except TrialFormatError as exc:
        raise CliError(str(exc)) from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _config(args.config)
    seed = _seed(args, cfg)
    try:
        trial, manifest = synthesize_trial(cfg.profile(args.speed), cfg.joint_model(), cfg.true_params(),
                                           cfg.data.true_A, seed=seed, dt=cfg.data.dt)
    except (SimulationError, ValueError) as exc:
        raise CliError(f"simulation failed: {exc}", 3) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for p in save_trial(trial, out / "trial", manifest):
        print(p)
    return 0


def run_training(cfg: ToolConfig, trials, seed: int, log=None):
    tc = dataclasses.replace(cfg.training, seed=seed)
    return train(trials, cfg.physics(), cfg.trainable_params(), cfg.network, tc, log=log)


def write_training_outputs(out: Path, weights, tp, report: TrainReport, cfg: ToolConfig):
    out.mkdir(parents=True, exist_ok=True)
    vals = tp.values()
    save_checkpoint(out / "checkpoint.txt", weights, extra_arrays={f"param_{k}": v for k, v in vals.items()},
                    meta={"names": report.names, "mode": report.mode, "best_epoch": report.best_epoch})
    report.save(out / "report.json")
    ev.emit_report(out, report=report)
    ev._write(out / "identified.csv", ["muscle", "parameter", "estimate", "initial", "variation_pct"],
              [[r["muscle"], r["parameter"], r["estimate"], r["initial"], r["variation_pct"]]
               for r in report.variation])


def cmd_train(args) -> int:
    cfg = _config(args.config)
    tr = cfg.training
    over = {k: v for k, v in (("w1", args.w1), ("w2", args.w2), ("epochs", args.epochs)) if v is not None}
    cfg.training = dataclasses.replace(tr, **over)
    trial = _trial(args.data, cfg.names)
    seed = _seed(args, cfg)

    def log(rec):
        if args.verbose:
            print(f"epoch {rec['epoch']:5d}  L_total {rec['L_total']:.6g}  val_L_q {rec['val_L_q']:.6g}",
                  file=sys.stderr)

    try:
        weights, tp, report = run_training(cfg, [trial], seed, log)
    except TrainingError as exc:
        raise CliError(f"training aborted: {exc}", 3) from None
    out = Path(args.out)
    write_training_outputs(out, weights, tp, report, cfg)
    print(f"mode {report.mode}  epochs {len(report.epochs)}  best epoch {report.best_epoch}  "
          f"val L_q {report.best_val_L_q:.6g}")
    print(f"wrote {out / 'checkpoint.txt'} and {out / 'report.json'}")
    return 0


def parse_thresholds(text: str | None) -> dict[str, float]:
    """``angle_r2=0.96,force_r2=0.93`` or a file of ``key = value`` lines."""
    if text is None:
        return {}
    if Path(text).is_file():
        text = ",".join(line.split("#")[0] for line in Path(text).read_text().splitlines() if line.strip())
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "=" not in part:
            raise CliError(f"threshold {part!r} is not key=value")
        k, v = (s.strip() for s in part.split("=", 1))
        if k not in ("angle_r2", "force_r2", "angle_rmse", "force_rmse"):
            raise CliError(f"unknown threshold {k!r}")
        try:
            out[k] = float(v)
        except ValueError:
            raise CliError(f"threshold {k} has non-numeric value {v!r}") from None
    return out


def cmd_evaluate(args) -> int:
    try:
        weights, extras, meta = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise CliError(f"missing checkpoint: {args.checkpoint}") from None
    except (ValueError, KeyError) as exc:
        raise CliError(f"unreadable checkpoint: {exc}") from None
    thresholds = parse_thresholds(args.thresholds)
    trial = _trial(args.data, meta.get("names"))
    q_hat, F_hat = ev.predict(weights, trial)
    table = ev.ComparisonTable(ev.channels_of(trial))
    table.add(args.method, ev.channel_metrics(trial, q_hat, F_hat))
    out = Path(args.out)
    ev.emit_report(out, table=table, trial=trial, predictions=(q_hat, F_hat))
    summary = "R2\n" + table.format("r2") + "\n\nRMSE\n" + table.format("rmse")
    (out / "summary.txt").write_text(summary + "\n")
    print(summary)
    if thresholds:
        ok, msgs = ev.check_thresholds(table, thresholds, args.method)
        print("\n".join(msgs))
        return 0 if ok else 1
    return 0


def gradcheck_setup(cfg: ToolConfig, seed: int, n_samples: int = 3):
    """A short clean trial, ``n_samples`` spread-out samples, a fresh network."""
    from .network import init
    from .training import default_scaling

    prof = dataclasses.replace(cfg.profile(), duration=1.0, settle=0.0, snr_db=float("inf"))
    trial, _ = synthesize_trial(prof, cfg.joint_model(), cfg.true_params(), cfg.data.true_A, seed=seed)
    samples = pool_samples([trial])
    idx = np.linspace(len(trial) // 4, len(trial) - len(trial) // 4, n_samples).astype(int)
    tp = cfg.trainable_params()
    weights = init(cfg.network, seed=seed, scaling=default_scaling([trial], tp.midpoint["F0m"]))
    return weights, tp, cfg.physics(), take(samples, idx)


def cmd_gradcheck(args) -> int:
    cfg = _config(args.config)
    seed = _seed(args, cfg)
    weights, tp, physics, samples = gradcheck_setup(cfg, seed)
    w1 = cfg.training.w1 if cfg.training.w1 != 0 else 1.0
    w2 = cfg.training.w2 if cfg.training.w2 != 0 else 1.0
    reports = loss_grad_check(weights, tp, physics, samples, w1, w2, seed=seed, tol=args.tol)
    ok = True
    for term, rep in reports.items():
        ok &= rep.passed
        print(f"{'PASS' if rep.passed else 'FAIL'} {term:8s} max rel error {rep.max_rel_error:.3e} (tol {args.tol:g})")
        for f in rep.failures[:5]:
            print(f"    {f}")
    return 0 if ok else 1


def _sweep_job(payload):
    cfg_text, axis, value, seed, data, out = payload
    from .config import parse_config

    cfg = parse_config(cfg_text)
    section, key, cast = SWEEP_AXES[axis]
    setattr(cfg, section, dataclasses.replace(getattr(cfg, section), **{key: cast(value)}))
    cfg.validate()
    if data:
        trial = load_trial(data, cfg.names)
    else:
        trial, _ = synthesize_trial(cfg.profile(), cfg.joint_model(), cfg.true_params(), cfg.data.true_A,
                                    seed=seed, dt=cfg.data.dt)
    weights, tp, report = run_training(cfg, [trial], seed)
    write_training_outputs(Path(out), weights, tp, report, cfg)
    samples = pool_samples([trial])
    _, va = split_indices(samples, cfg.training.val_split, cfg.training.val_fraction)
    held = trial.subset(va if len(va) else slice(None))
    q_hat, F_hat = ev.predict(weights, held)
    return [(m.channel, m.rmse, m.r2) for m in ev.channel_metrics(held, q_hat, F_hat)]


def run_sweep(cfg: ToolConfig, axis: str, values, seed: int, out: Path, data=None, jobs: int | None = None):
    """Independent training runs per value; returns ``(channels, rows)``, rows
    being ``(value, {channel: (rmse, r2)} or None, status)``."""
    section, key, cast = SWEEP_AXES[axis]
    for v in values:
        try:
            trial_cfg = dataclasses.replace(getattr(cfg, section), **{key: cast(v)})
        except ValueError as exc:
            raise CliError(f"invalid {axis} value {v!r}: {exc}") from None
        if axis == "batch_size" and trial_cfg.batch_size < 1:
            raise CliError("batch_size values must be >= 1")
        if axis == "learning_rate" and trial_cfg.lr <= 0:
            raise CliError("learning_rate values must be positive")
    text = dump_config(cfg)
    payloads = [(text, axis, v, seed, data, str(out / "jobs" / f"{axis}={v}")) for v in values]
    jobs = max(1, min(jobs or len(values), len(values)))
    results = []
    if jobs == 1:
        futures = None
        for p in payloads:
            try:
                results.append((_sweep_job(p), "ok"))
            except Exception as exc:  # noqa: BLE001 - failures are recorded per job
                results.append((None, f"failed: {exc}"))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_sweep_job, p) for p in payloads]
            for f in futures:
                try:
                    results.append((f.result(), "ok"))
                except Exception as exc:  # noqa: BLE001
                    results.append((None, f"failed: {exc}"))
    channels = None
    rows = []
    for v, (res, status) in zip(values, results):
        if res is not None:
            channels = channels or [c for c, _, _ in res]
            rows.append((v, {c: (rm, r2) for c, rm, r2 in res}, status))
        else:
            rows.append((v, None, status))
    return channels or [], rows


def cmd_sweep(args) -> int:
    cfg = _config(args.config)
    if args.epochs is not None:
        cfg.training = dataclasses.replace(cfg.training, epochs=args.epochs)
    if args.axis not in SWEEP_AXES:
        raise CliError(f"axis must be one of {sorted(SWEEP_AXES)}")
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise CliError("--values is empty")
    seed = _seed(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    channels, rows = run_sweep(cfg, args.axis, values, seed, out, args.data, args.jobs)
    table_rows = []
    for v, metrics, status in rows:
        cells = [("" if metrics is None or metrics[c][1] is None else repr(metrics[c][1])) for c in channels]
        table_rows.append([v] + cells + [status])
    ev._write(out / "sweep_r2.csv", [args.axis] + channels + ["status"], table_rows)
    print(f"{args.axis:>14}" + "".join(f"{c:>10}" for c in channels) + "  status")
    for r in table_rows:
        print(f"{r[0]:>14}" + "".join(f"{(float(x) if x else float('nan')):>10.4f}" for x in r[1:-1]) + f"  {r[-1]}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="myodyn", description=__doc__.splitlines()[0])
    p.add_argument("--dump-config", action="store_true",
                   help="print the effective configuration (default or --config) and exit")
    p.add_argument("--config", help="configuration file (used with --dump-config)")
    sub = p.add_subparsers(dest="command")
    seed_default = _seed_default()

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="configuration file; defaults to the built-in synthetic subject")
        sp.add_argument("--seed", type=int, default=seed_default,
                        help="random seed (default: $MYODYN_SEED, else the config's training seed)")

    s = sub.add_parser("simulate", help="synthesize a trial with its force sidecar and manifest")
    common(s)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--speed", type=float, default=None, help="cycle frequency in Hz (default: config)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="train the surrogate and identify muscle parameters")
    common(s)
    s.add_argument("--data", required=True, help="trial stem or directory holding trial.csv")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--w1", type=float, default=None, help="dynamics residual weight")
    s.add_argument("--w2", type=float, default=None, help="force residual weight")
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("-v", "--verbose", action="store_true", help="log every epoch to stderr")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="score a checkpoint on a trial")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--thresholds", default=None,
                   help="e.g. angle_r2=0.96,force_r2=0.93 (or a file); exit 1 if any fails")
    s.add_argument("--method", default="PINN", help="row label in the comparison table")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("gradcheck", help="finite-difference check of the full loss gradient")
    common(s)
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("sweep", help="hyperparameter sweep of independent training runs")
    common(s)
    s.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--out", required=True)
    s.add_argument("--data", default=None, help="trial to train on (default: synthesize from config)")
    s.add_argument("--jobs", type=int, default=None, help="parallel jobs (default: number of values)")
    s.add_argument("--epochs", type=int, default=None)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        if args.dump_config:
            sys.stdout.write(dump_config(_config(args.config)))
            return 0
        if not args.command:
            parser.print_help()
            return 2
        return args.func(args)
    except CliError as exc:
        print(f"myodyn: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
