"""Command-line entry point: ``floodgtn {generate,train,evaluate,predict,plot-data}``.

Failures print one JSON object on stderr, ``{"error": ..., "message": ...}``,
and exit with 2 for usage or configuration problems and 1 for runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from datetime import timedelta
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    DataError,
    WindowSet,
    fill_gaps,
    fit_scaler,
    format_timestamp,
    manifest_path_for,
    read_channel_manifest,
    read_table,
    write_frame,
)
from .experiment import ConfigError, ExperimentConfig, load_dataset, load_experiment
from .graph import GraphError, write_topology
from .hydrology import ScenarioError, generate, load_scenario
from .models import build_model, extract_attention, load_model
from .models.base import Forecaster
from .nn.checkpoint import CheckpointError
from .training import EvalReport, ReportRow, evaluate, time_prediction, train

log = logging.getLogger("floodgtn")

EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_manifest(out_dir: Path, command: str, config: dict, seed: int, artifacts, volatile=()) -> None:
    """Record what produced the artifacts; no timestamps, so reruns are byte-identical."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    manifest = {
        "command": command,
        "version": __version__,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": seed,
        "config": config,
        "artifacts": sorted(str(a) for a in artifacts),
        "volatile_artifacts": sorted(str(a) for a in volatile),
    }
    path = out_dir / f"manifest_{command.replace('-', '_')}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _experiment_manifest(exp: ExperimentConfig, command: str, artifacts, volatile=()) -> None:
    _write_manifest(Path(exp.output_dir), command, exp.to_dict(), exp.seed, artifacts, volatile)


def _run_name(model: str, arm: str) -> str:
    return f"{model}__{arm}"


def _checkpoint_path(exp: ExperimentConfig, model: str, arm: str) -> Path:
    return Path(exp.output_dir) / "checkpoints" / f"{_run_name(model, arm)}.fgtn"


# -- generate -------------------------------------------------------------------

def cmd_generate(args) -> None:
    scen = load_scenario(args.scenario, duration=args.hours, seed=args.seed)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    frame = generate(scen)
    write_frame(frame, out / "data.csv")
    write_topology(scen.graph, out / "topology.yaml")
    config = {"scenario": args.scenario, "hours": scen.duration, "seed": scen.seed}
    _write_manifest(out, "generate", config, scen.seed, ["data.csv", "data.channels.csv", "topology.yaml"])
    print(f"wrote {frame.n_hours} hours x {len(frame.channels)} channels to {out / 'data.csv'}")


# -- train ------------------------------------------------------------------------

def cmd_train(args) -> None:
    exp = load_experiment(args.config, args.output_dir)
    ds = load_dataset(exp)
    out = Path(exp.output_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "history").mkdir(exist_ok=True)
    artifacts, timings = [], []
    for name, arm in exp.runs():
        model = build_model(exp.model_config(name, arm), ds.train.layout)
        if name == "persistence":
            model.scaler = fit_scaler(ds.train)
            train_s = 0.0
        else:
            log.info("training %s (%s F.P.C.)", name, arm)
            result = train(model, ds.train, exp.train_config(name))
            train_s = result.train_s
            hist = out / "history" / f"{_run_name(name, arm)}.csv"
            _write_csv(hist, ("epoch", "train_loss", "val_mae_ft"),
                       [(r.epoch, repr(r.train_loss), "" if r.val_mae is None else repr(r.val_mae))
                        for r in result.history])
            artifacts.append(hist.relative_to(out))
        ckpt = _checkpoint_path(exp, name, arm)
        model.save(ckpt)
        artifacts.append(ckpt.relative_to(out))
        timings.append((name, arm, f"{train_s:.6f}"))
        print(f"{name:<13} {arm:<8} trained in {train_s:8.1f} s -> {ckpt}")
    _write_csv(out / "train_timing.csv", ("model", "arm", "train_s"), timings)
    _experiment_manifest(exp, "train", artifacts, ["train_timing.csv"])


# -- evaluate -----------------------------------------------------------------------

def _load_trained(exp: ExperimentConfig, name: str, arm: str) -> Forecaster:
    path = _checkpoint_path(exp, name, arm)
    if not path.is_file():
        raise CheckpointError(f"missing checkpoint {path}; run 'floodgtn train' first")
    return load_model(path, expected=exp.model_config(name, arm))


def _train_seconds(exp: ExperimentConfig) -> dict[tuple[str, str], float]:
    path = Path(exp.output_dir) / "train_timing.csv"
    if not path.is_file():
        return {}
    with open(path, newline="") as fh:
        return {(r["model"], r["arm"]): float(r["train_s"]) for r in csv.DictReader(fh)}


def cmd_evaluate(args) -> None:
    exp = load_experiment(args.config, args.output_dir)
    ds = load_dataset(exp)
    out = Path(exp.output_dir)
    train_s = _train_seconds(exp)
    report = EvalReport()
    for name, arm in exp.runs():
        model = _load_trained(exp, name, arm)
        metrics = evaluate(model, ds.test)
        predict_s = time_prediction(model, ds.test)
        report.add(ReportRow(name, arm, metrics.mae, metrics.rmse, tuple(metrics.mae_by_step.tolist()),
                             train_s.get((name, arm), 0.0), predict_s))
        if name == "persistence":
            for other in exp.arms[1:]:
                report.add(ReportRow(name, other, metrics.mae, metrics.rmse,
                                     tuple(metrics.mae_by_step.tolist()), 0.0, predict_s))
    files = {
        "report.txt": report.table(),
        "report.csv": report.csv_text(),
        "report_steps.csv": report.steps_csv_text(),
    }
    volatile = {
        "timing.txt": report.timing_table(),
        "timing.csv": report.timing_csv_text(),
        "report_timed.csv": report.timed_csv_text(),
    }
    for fname, text in {**files, **volatile}.items():
        (out / fname).write_text(text)
    _experiment_manifest(exp, "evaluate", files, volatile)
    print(report.table(), end="")


# -- predict ------------------------------------------------------------------------

def _read_window(path: Path, model: Forecaster) -> WindowSet:
    """A CSV of w hours (or w + k hours, whose later rows supply future covariates)."""
    layout = model.layout
    manifest = manifest_path_for(path)
    channels = read_channel_manifest(manifest) if manifest.is_file() else {c.name: c for c in layout.channels}
    start, specs, values = read_table(path, channels)
    if tuple(specs) != layout.channels:
        raise DataError(f"{path}: columns must be the model's channels in order: "
                        f"{', '.join(c.name for c in layout.channels)}")
    w, k = model.config.w, model.config.k
    if len(values) not in (w, w + k):
        raise DataError(f"{path}: expected {w} or {w + k} hourly rows, got {len(values)}")
    past, _ = fill_gaps(values[:w])
    cov_cols = list(layout.covariate_columns)
    if len(values) == w + k:
        future, _ = fill_gaps(values[w:, cov_cols])
    else:
        future = np.repeat(past[-1:, cov_cols], k, axis=0)
    y_dummy = np.zeros((1, k, len(layout.target_columns)))
    return WindowSet(past[None], future[None], y_dummy, np.array([w - 1]), start, layout)


def cmd_predict(args) -> None:
    model = load_model(args.checkpoint)
    path = Path(args.input)
    if not path.is_file():
        raise DataError(f"input window not found: {path}")
    windows = _read_window(path, model)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    y = model.predict(windows)[0]
    anchor = windows.anchor_time(0)
    rows = [(format_timestamp(anchor + timedelta(hours=j + 1)), *map(repr, map(float, y[j])))
            for j in range(model.config.k)]
    _write_csv(out / "forecast.csv", ("timestamp", *model.layout.target_names), rows)
    artifacts = ["forecast.csv"]
    if model.has_attention:
        table = extract_attention(model, windows)
        _write_csv(out / "attention.csv", ("target", "step", "channel", "weight"),
                   [(t, s, c, repr(float(v))) for t, s, c, v in table.rows()])
        artifacts.append("attention.csv")
    config = {"checkpoint": str(Path(args.checkpoint).resolve()), "input": str(path.resolve()),
              "architecture": model.config.architecture}
    _write_manifest(out, "predict", config, model.config.seed, artifacts)
    print(f"wrote {out / 'forecast.csv'}")


# -- plot-data ----------------------------------------------------------------------

def cmd_plot_data(args) -> None:
    """Observed and forecast level traces over the test period in long format."""
    exp = load_experiment(args.config, args.output_dir)
    ds = load_dataset(exp)
    arm = args.arm or exp.arms[0]
    lead = args.lead or exp.k
    if not 1 <= lead <= exp.k:
        raise ConfigError(f"--lead must lie in [1, {exp.k}], got {lead}")
    test = ds.test
    layout = test.layout
    stations = list(layout.graph.targets)
    # the forecast issued at anchor t for hour t + lead
    hours = test.anchors + lead
    obs = test.y_true[:, lead - 1, :]
    series = [("OBS", obs)]
    for name in exp.models:
        model = _load_trained(exp, name, arm if name != "persistence" else exp.arms[0])
        series.append((name, model.predict(test)[:, lead - 1, :]))
    rows = []
    for i, h in enumerate(hours):
        ts = format_timestamp(ds.frame.timestamp(int(h)))
        for m, station in enumerate(stations):
            for label, values in series:
                rows.append((ts, station, label, repr(float(values[i, m]))))
    out = Path(exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    fname = f"traces_{arm}_lead{lead}.csv"
    _write_csv(out / fname, ("timestamp", "station", "series", "value_ft"), rows)
    config = {**exp.to_dict(), "plot": {"arm": arm, "lead": lead}}
    _write_manifest(out, "plot-data", config, exp.seed, [fname])
    print(f"wrote {len(rows)} rows to {out / fname}")


# -- entry point --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="floodgtn", description="Flood water-level forecasting with graph transformer networks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="simulate a synthetic scenario to CSV")
    p.add_argument("--scenario", default="default", help="bundled scenario name or scenario YAML path")
    p.add_argument("--hours", type=int, help="override the scenario duration")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--output-dir", default="floodgtn-data")
    p.set_defaults(func=cmd_generate)

    for name, func, text in (("train", cmd_train, "train every configured model and arm"),
                             ("evaluate", cmd_evaluate, "score trained checkpoints on the test split")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="experiment YAML, or a manifest to replay")
        p.add_argument("--output-dir", help="override the config's output_dir")
        p.set_defaults(func=func)

    p = sub.add_parser("predict", help="forecast k hours from one window CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="CSV with w hourly rows (or w + k with future covariates)")
    p.add_argument("--output-dir", default="floodgtn-forecast")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("plot-data", help="export observed vs forecast traces for plotting")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", help="override the config's output_dir")
    p.add_argument("--arm", choices=("with", "without"))
    p.add_argument("--lead", type=int, help="forecast lead in hours (default k)")
    p.set_defaults(func=cmd_plot_data)
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": " ".join(str(message).split())}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_CONFIG)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ConfigError, ScenarioError, GraphError) as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (DataError, CheckpointError, OSError, RuntimeError, ValueError) as exc:
        return _fail(type(exc).__name__, exc, EXIT_RUNTIME)
    return 0


if __name__ == "__main__":
    sys.exit(main())
