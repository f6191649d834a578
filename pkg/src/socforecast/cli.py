"""Command-line runs: ``generate``, ``train``, ``evaluate``, ``forecast`` and ``gradcheck``.

Every setting has a default and may come from a flat ``key = value`` file
(``--config``) or a flag (``--key-name``); flags win. Each command writes its
fully resolved settings to ``<out>/config.txt`` in the same format, so a run
can be repeated with ``--config <out>/config.txt``.

Exit codes: 0 success, 1 validation or training failure, 2 missing file or
other I/O failure, 3 invalid argument.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .coulomb import coulomb_soc, modes_from_pairs
from .errors import ProfileNotFoundError, SocForecastError, UndefinedMetricError
from .metrics import TARGET_NAMES, evaluate, table_report
from .pipeline import (
    MODEL_KINDS,
    TrainConfig,
    build_windows,
    fit,
    forecast_autoregressive,
    predict_batch,
    raw_window,
    throughput_deltas,
)
from .telemetry import BatterySpec, chronological_split, generate_synthetic, load_csv, save_csv

EXIT_OK, EXIT_INVALID_DATA, EXIT_IO, EXIT_BAD_ARGUMENT = 0, 1, 2, 3
GRADCHECK_LIMIT = 1e-4


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Settings: parsing, merging and echoing
# ---------------------------------------------------------------------------


def _optional(conv):
    def parse(text):
        if text is None or str(text).strip().lower() in ("", "none"):
            return None
        return conv(text)

    parse.__name__ = f"optional_{conv.__name__}"
    return parse


def _int_list(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"{text!r} is not one of {options}")
        return text

    parse.__name__ = "choice"
    return parse


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_BATTERY = {
    "capacity_ah": (float, 360.0),
    "cells_series": (int, 16),
}

_TRAIN_TYPES = {
    "lr": float,
    "batch": int,
    "epochs": int,
    "patience": int,
    "window_len": int,
    "hidden": int,
    "head": _optional(_int_list),
    "dropout": _optional(float),
    "latent": int,
    "ae_epochs": int,
    "ae_lr": float,
    "ae_batch": int,
    "clip_norm": float,
    "efficiency": float,
    "svr_C": float,
    "svr_epsilon": float,
    "svr_gamma": _optional(float),
    "seed": int,
    "max_train_windows": _optional(int),
    "split_ratio": float,
}

SETTINGS: dict[str, dict[str, tuple]] = {
    "generate": {
        "steps": (int, 20000),
        "profile": (str, "mixed"),
        "dt": (float, 10.0),
        **_BATTERY,
        "initial_soc": (float, 50.0),
        "voltage_noise": (float, 1e-3),
        "seed": (int, 0),
        "out": (str, "out"),
    },
    "train": {
        "data": (str, "out/telemetry.csv"),
        **_BATTERY,
        "model": (_choice(*MODEL_KINDS), "ae_bilstm"),
        **{f.name: (_TRAIN_TYPES[f.name], f.default) for f in fields(TrainConfig) if f.name != "kind"},
        "out": (str, "out"),
    },
    "evaluate": {
        "checkpoint": (str, "out/checkpoint.json"),
        "data": (str, "out/telemetry.csv"),
        "split": (_choice("val", "train", "all"), "val"),
        "split_ratio": (_optional(float), None),
        "seed": (int, 0),
        "out": (str, "out"),
    },
    "forecast": {
        "checkpoint": (str, "out/checkpoint.json"),
        "data": (str, "out/telemetry.csv"),
        "origin": (_optional(int), None),
        "horizon": (int, 200),
        "n_origins": (int, 1),
        "origin_stride": (_optional(int), None),
        "seed": (int, 0),
        "out": (str, "out"),
    },
    "gradcheck": {
        "probe_eps": (float, 1e-5),
        "seed": (int, 0),
        "out": (_optional(str), None),
    },
}


def read_config_file(path) -> dict[str, str]:
    """Parse a flat ``key = value`` document; ``#`` starts a comment line."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in out:
            raise UsageError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def resolve_settings(command: str, file_values: dict[str, str], flag_values: dict[str, str]) -> dict:
    """Defaults, then the config file, then flags; unknown keys are rejected."""
    spec = SETTINGS[command]
    unknown = sorted(set(file_values) - set(spec))
    if unknown:
        raise UsageError(f"unknown config key(s) for {command}: {unknown}")
    resolved = {}
    for key, (conv, default) in spec.items():
        raw = flag_values.get(key, file_values.get(key))
        if raw is None:
            resolved[key] = default
            continue
        try:
            resolved[key] = conv(raw)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid value for {key}: {raw!r} ({exc})") from None
    return resolved


def write_config_echo(command: str, settings: dict, out_dir: Path) -> Path:
    lines = [f"# socforecast {command}"]
    lines += [f"{k} = {_format(v)}" for k, v in settings.items()]
    path = out_dir / "config.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _out_dir(settings: dict) -> Path:
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _write_json(path: Path, doc: dict) -> None:
    clean = {k: _json_value(v) for k, v in doc.items()}
    path.write_text(json.dumps(clean, indent=2) + "\n", encoding="utf-8")


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_generate(s: dict) -> int:
    if s["steps"] < 2:
        raise UsageError("steps must be at least 2 (a series needs two records)")
    spec = BatterySpec(s["capacity_ah"], s["cells_series"])
    series = generate_synthetic(
        spec, s["profile"], s["steps"], s["dt"], s["seed"], s["initial_soc"], s["voltage_noise"]
    )
    out = _out_dir(s)
    path = out / "telemetry.csv"
    save_csv(series, path)
    write_config_echo("generate", s, out)
    print(f"wrote {len(series)} records to {path}; final SoC {series.soc[-1]:.2f}%")
    return EXIT_OK


def _train_config(s: dict) -> TrainConfig:
    d = {k: s[k] for k in _TRAIN_TYPES}
    return TrainConfig(kind=s["model"], **d)


def _metrics_doc(preds, targets, kind: str) -> dict:
    if kind != "multi_output":
        return table_report(preds, targets)
    doc = {"RMSE": float(np.sqrt(np.mean((preds - targets) ** 2)))}
    for c in range(targets.shape[1]):
        rep = _safe_report(preds[:, c], targets[:, c])
        doc[f"MAE(cell_v_{c + 1:02d})"] = rep.mae
        doc[f"R2(cell_v_{c + 1:02d})"] = rep.r2
    return doc


def _safe_report(p, t):
    try:
        return evaluate(p, t)
    except UndefinedMetricError as exc:
        return exc.report


def cmd_train(s: dict) -> int:
    cfg = _train_config(s)
    series = load_csv(s["data"], BatterySpec(s["capacity_ah"], s["cells_series"]))
    model, log, data = fit(series, cfg)
    out = _out_dir(s)
    save_checkpoint(model, out / "checkpoint.json")
    _write_rows(
        out / "training_log.csv",
        ["epoch", "train_loss", "val_loss"],
        [(k, tr, va) for k, (tr, va) in enumerate(zip(log.train_loss, log.val_loss))],
    )
    if log.ae_loss:
        _write_rows(out / "autoencoder_log.csv", ["epoch", "reconstruction_loss"], list(enumerate(log.ae_loss)))
    metrics = _metrics_doc(predict_batch(model, data.val), data.val.targets, cfg.kind)
    _write_json(out / "metrics.json", metrics)
    echo = dict(s)
    resolved = cfg.to_dict()
    echo["head"], echo["dropout"] = resolved["head"], resolved["dropout"]
    write_config_echo("train", echo, out)
    best = f", best epoch {log.best_epoch}" if log.best_epoch >= 0 else ""
    print(f"trained {cfg.kind} on {len(data.train)} windows{best}; checkpoint {out / 'checkpoint.json'}")
    for k, v in metrics.items():
        print(f"  {k}: {v:.6g}")
    return EXIT_OK


def _split_for(model, series, split: str, ratio: float):
    if split == "all":
        return series
    train, val = chronological_split(series, ratio)
    return train if split == "train" else val


def _target_names(model) -> list[str]:
    if model.kind == "multi_output":
        return [f"cell_v_{c + 1:02d}" for c in range(model.cells_series)]
    return list(TARGET_NAMES)


def cmd_evaluate(s: dict) -> int:
    model = load_checkpoint(s["checkpoint"])
    series = load_csv(s["data"], BatterySpec(model.capacity_ah, model.cells_series))
    ratio = s["split_ratio"] if s["split_ratio"] is not None else model.config.split_ratio
    part = _split_for(model, series, s["split"], ratio)
    target = "cells" if model.kind == "multi_output" else "throughput"
    windows = build_windows(part, model.scaler, model.window_len, target)
    preds = predict_batch(model, windows)
    metrics = _metrics_doc(preds, windows.targets, model.kind)
    out = _out_dir(s)
    _write_json(out / "metrics.json", metrics)
    for k, name in enumerate(_target_names(model)):
        _write_rows(out / f"predictions_{name}.csv", ["actual", "predicted"], zip(windows.targets[:, k], preds[:, k]))
    write_config_echo("evaluate", {**s, "split_ratio": ratio}, out)
    print(f"evaluated {len(windows)} windows ({s['split']} split)")
    for k, v in metrics.items():
        print(f"  {k}: {v:.6g}")
    return EXIT_OK


def cmd_forecast(s: dict) -> int:
    model = load_checkpoint(s["checkpoint"])
    if s["horizon"] < 1:
        raise UsageError(f"horizon must be at least 1, got {s['horizon']}")
    if s["n_origins"] < 1:
        raise UsageError("n_origins must be at least 1")
    series = load_csv(s["data"], BatterySpec(model.capacity_ah, model.cells_series))
    L, H = model.window_len, s["horizon"]
    origin = s["origin"]
    if origin is None:
        # First step whose whole seed window lies in the validation split.
        origin = math.floor(model.config.split_ratio * len(series)) + L
    stride = s["origin_stride"] or H
    origins = [origin + k * stride for k in range(s["n_origins"])]
    if origins[0] < L or origins[-1] > len(series):
        raise UsageError(f"origins {origins[0]}..{origins[-1]} need {L} seed steps inside a {len(series)}-step series")
    seeds = np.stack([raw_window(series, model.feature_names, o, L) for o in origins])
    preds = forecast_autoregressive(model, seeds, H)  # (N, H, 2)

    deltas = throughput_deltas(series)
    have_actuals = origins[-1] + H <= len(series)
    out = _out_dir(s)
    header = ["origin", "step", "pred_dah_charged", "pred_dah_discharged"]
    if have_actuals:
        header += ["actual_dah_charged", "actual_dah_discharged"]
        actual = np.stack([deltas[o - 1 : o - 1 + H] for o in origins])
    rows, soc_rows = [], []
    for n, o in enumerate(origins):
        trace = coulomb_soc(
            float(series.soc[o - 1]),
            preds[n],
            model.capacity_ah,
            modes_from_pairs(preds[n], model.dt),
            model.config.efficiency,
        )
        for h in range(H):
            row = [o, o + h, preds[n, h, 0], preds[n, h, 1]]
            if have_actuals:
                row += [actual[n, h, 0], actual[n, h, 1]]
            rows.append(row)
            soc_rows.append([o, o + h, trace.raw_soc[h], int(trace.derived_soc[h]), int(trace.modes[h])])
    _write_rows(out / "forecast.csv", header, rows)
    _write_rows(out / "soc_trace.csv", ["origin", "step", "raw_soc", "soc", "mode"], soc_rows)
    if have_actuals:
        err = preds - actual
        grid = []
        for n, o in enumerate(origins):
            for k, name in enumerate(TARGET_NAMES):
                grid.append([o, name, *err[n, :, k]])
        _write_rows(out / "error_grid.csv", ["origin", "target", *[f"h{h + 1}" for h in range(H)]], grid)
        metrics = table_report(preds.reshape(-1, 2), actual.reshape(-1, 2))
        _write_json(out / "metrics.json", metrics)
    write_config_echo("forecast", {**s, "origin": origin, "origin_stride": stride}, out)
    print(f"forecast {H} steps from {len(origins)} origin(s) starting at step {origins[0]}")
    if have_actuals:
        for k, v in metrics.items():
            print(f"  {k}: {v:.6g}")
    return EXIT_OK


def cmd_gradcheck(s: dict) -> int:
    from .gradcheck import run_suite

    results = run_suite(s["seed"], s["probe_eps"])
    width = max(map(len, results))
    for name, err in results.items():
        flag = "ok" if err < GRADCHECK_LIMIT else "FAIL"
        print(f"{name:<{width}}  {err:.3e}  {flag}")
    worst = max(results.values())
    print(f"max relative error {worst:.3e} (limit {GRADCHECK_LIMIT:g})")
    if s["out"] is not None:
        out = _out_dir(s)
        _write_rows(out / "gradcheck.csv", ["component", "max_rel_error"], results.items())
        write_config_echo("gradcheck", s, out)
    return EXIT_OK if worst < GRADCHECK_LIMIT else EXIT_INVALID_DATA


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "forecast": cmd_forecast,
    "gradcheck": cmd_gradcheck,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="socforecast", description="Battery state-of-charge forecasting runs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, spec in SETTINGS.items():
        p = sub.add_parser(name, help=(COMMANDS[name].__doc__ or name).strip().splitlines()[0])
        p.add_argument("--config", metavar="PATH", help="key = value settings file")
        for key, (_, default) in spec.items():
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, metavar=key.upper(),
                           help=f"default: {_format(default)}")
    return parser


cmd_generate.__doc__ = "Write a synthetic telemetry CSV."
cmd_train.__doc__ = "Train a model and write a checkpoint, loss log and metrics."
cmd_evaluate.__doc__ = "Score a checkpoint on telemetry and write prediction CSVs."
cmd_forecast.__doc__ = "Roll a checkpoint forward and derive the SoC trace."
cmd_gradcheck.__doc__ = "Finite-difference check of every backward pass."


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.basicConfig(level=logging.INFO, format="%(message)s")
        flags = {k: v for k, v in vars(args).items() if k in SETTINGS[args.command] and v is not None}
        file_values = read_config_file(args.config) if args.config else {}
        settings = resolve_settings(args.command, file_values, flags)
        return COMMANDS[args.command](settings)
    except ProfileNotFoundError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_IO
    except SocForecastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_ARGUMENT


if __name__ == "__main__":
    sys.exit(main())
