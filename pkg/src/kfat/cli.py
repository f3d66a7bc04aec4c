"""Command-line entry points: gen-data, tune, evaluate, compare, inspect-surrogate.

Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 numerical
failure. Every JSON output carries ``schema_version`` and is written with
sorted keys, so identical inputs and seeds give byte-identical files.
Wall-clock timings are kept out of the main outputs and go to a
``*.timing.json`` sidecar instead.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import click
import jsonschema
import numpy as np

from . import __version__, scenario
from .errors import DataError, KfatError, NumericalError, TuningError
from .evaluation import CostFunction, CostWeights, FilterContext, KpiReport, kpi_set
from .ga import GaConfig, ga_minimize
from .result import SCHEMA_VERSION, TuningResult, check_schema
from .surrogate import SurrogateModel
from .tsbo import BoxSpace, TsboConfig, normalize, tune as tsbo_tune

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
METHODS = ("tsbo-tsp", "tsbo-gp", "ga")

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "seed", "dataset", "train", "test", "fingerprint"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer"},
        "dataset": {"type": "object"},
        "fingerprint": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "train": {"$ref": "#/definitions/split"},
        "test": {"$ref": "#/definitions/split"},
    },
    "definitions": {
        "split": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["file", "kind", "seed", "samples", "config"],
                "properties": {
                    "file": {"type": "string"},
                    "kind": {"enum": list(scenario.KINDS)},
                    "seed": {"type": "integer"},
                    "samples": {"type": "integer", "minimum": scenario.MIN_SAMPLES},
                    "config": {"type": "object"},
                },
            },
        }
    },
}

TUNE_CONFIG_KEYS = {"space", "tsbo", "ga", "weights", "observation_noise"}

log = logging.getLogger("kfat")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _read_json(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(path: str | Path, text: str) -> None:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _sidecar(out: str | Path, suffix: str) -> Path:
    out = Path(out)
    return out.with_name(out.stem + suffix)


def fingerprint(data_dir: str | Path) -> str:
    """SHA-256 over the names and bytes of every manoeuvre CSV."""
    h = hashlib.sha256()
    root = Path(data_dir)
    for split in ("train", "test"):
        for f in sorted((root / split).glob("*.csv")):
            h.update(f"{split}/{f.name}\n".encode())
            h.update(f.read_bytes())
    return h.hexdigest()


def read_manifest(data_dir: str | Path) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.is_file():
        raise DataError(f"{data_dir}: no manifest.json (run gen-data first)")
    manifest = _read_json(path)
    try:
        jsonschema.validate(manifest, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise DataError(f"{path}: {exc.message}") from None
    return manifest


def load_split(data_dir: str | Path, split: str) -> list:
    path = Path(data_dir) / split
    if not path.is_dir():
        raise DataError(f"{data_dir}: missing {split}/ directory")
    return scenario.load_dir(path)


def _filter_context(manifest: dict, cfg: dict) -> FilterContext:
    ds = scenario.DatasetConfig.from_dict(manifest["dataset"])
    r = cfg.get("observation_noise", ds.observation_noise)
    return FilterContext(params=ds.vehicle, r=tuple(float(v) for v in r))


def _tune_config(path: str | None) -> dict:
    if path is None:
        return {}
    cfg = _read_json(path)
    unknown = set(cfg) - TUNE_CONFIG_KEYS
    if unknown:
        raise DataError(f"{path}: unknown key(s) {', '.join(sorted(unknown))}")
    return cfg


def _q_from_params(path: str) -> tuple[float, ...]:
    d = _read_json(path)
    if "best_q" in d:
        check_schema(d)
        return tuple(float(v) for v in d["best_q"])
    if "q" in d:
        return tuple(float(v) for v in d["q"])
    raise DataError(f"{path}: expected a tuning result or an object with a 'q' list")


def _kpi_rows(report: KpiReport) -> list[list]:
    rows = []
    for r in report.per_manoeuvre:
        rows.append([r.name, *(repr(v) if v is not None else "" for v in (r.rmse, r.mae, r.rmse_non, r.mae_non))])
    return rows


def _rel(base, value):
    if base is None or value is None or base == 0:
        return None
    return 100.0 * (base - value) / base


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


@click.group()
@click.version_option(__version__, prog_name="kfat")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose: bool) -> None:
    """Process-noise tuning of a sideslip UKF on synthetic manoeuvres."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(name)s: %(message)s")


@cli.command("gen-data")
@click.option("--out", "out", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--config", "config", default=None, help="JSON data-set configuration.")
@click.option("--force", is_flag=True, help="Allow writing into a non-empty directory.")
def gen_data(out: str, seed: int, config: str | None, force: bool) -> None:
    """Generate the 8-manoeuvre training and 23-manoeuvre test sets."""
    root = Path(out)
    if root.exists() and any(root.iterdir()) and not force:
        raise DataError(f"{out} is not empty (use --force to overwrite)")
    ds = scenario.DatasetConfig.from_dict(_read_json(config)) if config else scenario.DatasetConfig()
    manifest = {"schema_version": SCHEMA_VERSION, "seed": seed, "dataset": ds.to_dict()}
    for split, cfgs in (("train", scenario.training_configs(seed, ds)), ("test", scenario.test_configs(seed, ds))):
        d = root / split
        d.mkdir(parents=True, exist_ok=True)
        for stale in d.glob("*.csv"):
            stale.unlink()
        entries = []
        for c in cfgs:
            man = scenario.generate(c, ds.vehicle)
            name = f"{c.name}.csv"
            scenario.save(man, d / name)
            entries.append({"file": name, "kind": c.kind, "seed": c.seed, "samples": len(man), "config": c.to_dict()})
        manifest[split] = entries
    manifest["fingerprint"] = fingerprint(root)
    jsonschema.validate(manifest, MANIFEST_SCHEMA)
    _write(root / "manifest.json", _dump(manifest))
    click.echo(f"wrote {len(manifest['train'])} training and {len(manifest['test'])} test manoeuvres to {out}")


@cli.command()
@click.option("--method", required=True, type=click.Choice(METHODS))
@click.option("--data", "data", required=True, help="Data directory from gen-data.")
@click.option("--out", "out", required=True, help="Result JSON path.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--config", "config", default=None, help="JSON with space/tsbo/ga/weights/observation_noise.")
def tune(method: str, data: str, out: str, seed: int, config: str | None) -> None:
    """Tune the process-noise diagonal on the training set."""
    cfg = _tune_config(config)
    manifest = read_manifest(data)
    train = load_split(data, "train")
    space = BoxSpace.from_dict(cfg["space"]) if "space" in cfg else BoxSpace.default()
    weights = CostWeights(**cfg.get("weights", {}))
    objective = CostFunction(train, weights, _filter_context(manifest, cfg))
    if method == "ga":
        ga_cfg = GaConfig.from_dict({**cfg.get("ga", {}), "seed": seed})
        result = ga_minimize(objective, space, ga_cfg)
    else:
        result = tsbo_tune(objective, space, TsboConfig.from_dict(cfg.get("tsbo", {})), method.split("-")[1], seed)
    result.dataset = manifest["fingerprint"]
    result.extra["weights"] = list(weights.as_tuple())
    result.save(out)
    result.write_trace_csv(_sidecar(out, ".trace.csv"))
    _write(_sidecar(out, ".timing.json"), _dump({"schema_version": SCHEMA_VERSION, "wall_time": result.wall_time}))
    click.echo(f"{method}: best J {result.best_j:.6g} after {result.evaluations} evaluations")
    click.echo("best q: " + ", ".join(f"{v:.6g}" for v in result.best_q))


@cli.command()
@click.option("--params", "params", required=True, help="Tuning result JSON or {'q': [...]}.")
@click.option("--data", "data", required=True, help="Data directory from gen-data.")
@click.option("--out", "out", required=True, help="KPI report JSON path.")
@click.option("--split", default="test", show_default=True, type=click.Choice(["train", "test"]))
def evaluate(params: str, data: str, out: str, split: str) -> None:
    """Sideslip KPIs of a tuned filter on one data split."""
    q = _q_from_params(params)
    manifest = read_manifest(data)
    report = kpi_set(q, load_split(data, split), _filter_context(manifest, {}), name=split)
    payload = {"schema_version": SCHEMA_VERSION, "q": list(q), "dataset": manifest["fingerprint"], **report.to_dict()}
    _write(out, _dump(payload))
    with open(_sidecar(out, ".csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["manoeuvre", "rmse_deg", "mae_deg", "rmse_non_deg", "mae_non_deg"])
        w.writerows(_kpi_rows(report))
    for label, v in (("RMSE", report.rmse), ("MAE", report.mae), ("RMSE_NON", report.rmse_non), ("MAE_NON", report.mae_non)):
        click.echo(f"{label:9s} {'n/a' if v is None else f'{v:.4f} deg'}")


@cli.command()
@click.option("--results", "results", required=True, multiple=True, help="Tuning result JSON (repeat; first is the baseline).")
@click.option("--out", "out", required=True, help="Report JSON path.")
@click.option("--data", "data", default=None, help="Data directory; adds test-set KPIs per result.")
def compare(results: tuple[str, ...], out: str, data: str | None) -> None:
    """Side-by-side comparison of tuning results against the first one."""
    loaded = [TuningResult.from_dict(_read_json(p)) for p in results]
    prints = {r.dataset for r in loaded}
    if len(prints) > 1:
        raise DataError("results were produced on different data sets")
    manifest = None
    if data is not None:
        manifest = read_manifest(data)
        if manifest["fingerprint"] not in prints:
            raise DataError(f"{data} is not the data set the results were tuned on")
        test = load_split(data, "test")
    rows, walls = [], []
    for path, r in zip(results, loaded):
        timing = _sidecar(path, ".timing.json")
        walls.append(_read_json(timing).get("wall_time") if timing.is_file() else None)
        row = {"source": Path(path).name, "method": r.method, "seed": r.seed, "best_j": r.best_j,
               "evaluations": r.evaluations, "best_q": list(r.best_q)}
        if manifest is not None:
            rep = kpi_set(r.best_q, test, _filter_context(manifest, {}), name="test")
            row["kpi"] = {"rmse": rep.rmse, "mae": rep.mae, "rmse_non": rep.rmse_non, "mae_non": rep.mae_non}
        rows.append(row)
    base = rows[0]
    for row in rows:
        delta = {"best_j": _rel(base["best_j"], row["best_j"]),
                 "evaluations": _rel(base["evaluations"], row["evaluations"])}
        if "kpi" in row:
            delta.update({k: _rel(base["kpi"][k], v) for k, v in row["kpi"].items()})
        row["improvement_pct"] = delta
    report = {"schema_version": SCHEMA_VERSION, "dataset": next(iter(prints)), "baseline": base["source"], "results": rows}
    _write(out, _dump(report))
    # wall times vary between reruns, so they live in a sidecar
    timing = [{"source": row["source"], "wall_time": w, "improvement_pct": _rel(walls[0], w)}
              for row, w in zip(rows, walls)]
    _write(_sidecar(out, ".timing.json"), _dump({"schema_version": SCHEMA_VERSION, "results": timing}))
    click.echo(f"{'source':24s} {'method':9s} {'best J':>10s} {'evals':>6s} {'dJ %':>8s} {'time s':>8s}")
    for row, w in zip(rows, walls):
        dj = row["improvement_pct"]["best_j"]
        click.echo(f"{row['source'][:24]:24s} {row['method']:9s} {row['best_j']:10.5g} {row['evaluations']:6d} "
                   f"{'' if dj is None else f'{dj:8.2f}'} {'' if w is None else f'{w:8.1f}'}")


@cli.command("inspect-surrogate")
@click.option("--result", "result", required=True, help="TSBO result JSON.")
@click.option("--at", "at", default=None, help="Comma-separated physical q to predict at (default best q).")
def inspect_surrogate(result: str, at: str | None) -> None:
    """Show the final surrogate's hyperparameters and a prediction."""
    r = TuningResult.from_dict(_read_json(result))
    dump = r.extra.get("surrogate")
    if dump is None:
        raise DataError(f"{result}: no surrogate stored (GA results have none)")
    model = SurrogateModel.from_dict(dump)
    space = BoxSpace.from_dict(r.space)
    q = np.array([float(v) for v in at.split(",")]) if at else np.asarray(r.best_q)
    mean, var = model.predict(normalize(q, space)[None, :])
    click.echo(f"kind          {model.kind}")
    click.echo(f"nu            {model.nu}")
    click.echo(f"signal std    {model.hyper.signal_std:.6g}")
    click.echo("length scales " + ", ".join(f"{v:.6g}" for v in model.hyper.length_scales))
    click.echo(f"observations  {len(model.observations)}")
    click.echo("at q          " + ", ".join(f"{v:.6g}" for v in q))
    click.echo(f"mean {mean[0]:.6g}  std {np.sqrt(var[0]):.6g}")


def main(argv: list[str] | None = None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="kfat", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_DATA
    except (NumericalError, TuningError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERICAL
    except KfatError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_DATA
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
