"""CSV/JSON/SVG output for experiment results."""

from __future__ import annotations

import csv
import json
from importlib import resources
from pathlib import Path

import numpy as np

from . import plotting


def metrics_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("schemas/metrics.schema.json").read_text("utf-8"))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_samples_csv(path, samples, log_weights, norm_weights):
    """Columns ``x_1..x_d, log_weight, norm_weight``; floats are written round-trip exact."""
    x = np.asarray(samples, dtype=float)
    d = x.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow([f"x_{j + 1}" for j in range(d)] + ["log_weight", "norm_weight"])
        for row, lw, nw in zip(x, log_weights, norm_weights):
            w.writerow([_fmt(v) for v in row] + [_fmt(lw), _fmt(nw)])


def read_samples_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    data = np.array(rows[1:], dtype=float)
    return data[:, :-2], data[:, -2], data[:, -1]


def write_table_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n", encoding="utf-8")


def write_result(result, out_dir, config_echo: str):
    """Write every artifact of an ``ExperimentResult``; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, (x, lw, nw) in result.samples.items():
        fname = "samples.csv" if name in ("tftf",) else f"samples-{name}.csv"
        paths.append(out / fname)
        write_samples_csv(paths[-1], x, lw, nw)
    for name, (header, rows) in result.tables.items():
        paths.append(out / f"{name}.csv")
        write_table_csv(paths[-1], header, rows)
    paths.append(out / "metrics.json")
    write_json(paths[-1], result.metrics_document())
    paths.append(out / "config-echo.json")
    paths[-1].write_text(config_echo, encoding="utf-8")
    paths.extend(_figures(result, out))
    return paths


def _figures(result, out: Path):
    paths = []
    if result.command == "toy":
        order = ["truth", "tftf", "direct_is", "guided_ode"]
        panels = [(name, result.samples[name][0], None if name in ("truth", "guided_ode") else result.samples[name][2])
                  for name in order if name in result.samples]
        if result.samples["tftf"][0].shape[1] >= 2:
            paths.append(out / "scatter.svg")
            plotting.scatter(panels, paths[-1])
    elif result.command == "nested-sweep":
        sweep = result.metrics["sweep"]
        paths.append(out / "nested_sweep.svg")
        plotting.line([s["M"] for s in sweep], {"W2": ([s["w2_mean"] for s in sweep], [s["w2_std"] for s in sweep])},
                      paths[-1], "nodes M", "W2 to posterior draws", logx=True)
    elif result.command.startswith("ablate-"):
        axis = result.command.split("-", 1)[1]
        sweep = result.metrics["sweep"]
        paths.append(out / f"ablate_{axis}.svg")
        if axis == "K":
            plotting.line([s["value"] for s in sweep], {"RMSE": [s["rmse"] for s in sweep]}, paths[-1],
                          "particles K", "RMSE of posterior mean", logx=True, logy=True)
        else:
            labels = list(range(len(sweep)))
            plotting.line(labels, {"W2": [s["w2_mean"] for s in sweep],
                                   "mass error": [s["mass_error"] for s in sweep]},
                          paths[-1], f"{axis} setting index", "metric")
    elif result.command == "marginal-check":
        alphas = result.metrics["alphas"]
        paths.append(out / "marginal_check.svg")
        plotting.line([a["alpha_scale"] for a in alphas], {"max |z|": [a["max_abs_z"] for a in alphas]},
                      paths[-1], "alpha scale c (alpha = c / t)", "max |z|")
    return paths
