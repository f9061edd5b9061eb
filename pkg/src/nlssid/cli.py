"""Experiment orchestration: config-driven pipeline and Monte-Carlo sweeps.

The pipeline stages are: obtain data (generate or ingest) -> normalize ->
estimate and state-normalize a linear approximation (shared by all runs)
-> initialize per scheme and run seed -> train -> evaluate on the test
records -> aggregate.  Every stage is also reachable through a CLI
subcommand for debugging.

Exit codes: 0 success, 1 config error, 2 data error, 3 all runs diverged.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bench
from .bench import dataset_hash
from .initializers import (DEFAULT_Z_MAX, SCHEMES, InitScheme,
                           build_initial_model, select_gamma, structure_of)
from .lti import LtiEstimateOptions, estimate_lti, lti_hash, lti_to_dict, normalize_states
from .optim import LmOptions, lm_train, report_to_dict, write_history_csv
from .signals import (Dataset, MultisineSpec, SweepSpec, denormalize_output,
                      normalize_dataset, rmse)
from .ssnn import Activation, Dims, SimulationDiverged, model_to_dict, simulate

__all__ = [
    "ConfigError",
    "DataError",
    "ExperimentConfig",
    "TestRecord",
    "RunResult",
    "MonteCarloReport",
    "CONFIG_SCHEMA",
    "load_config",
    "build_datasets",
    "run_pipeline",
    "aggregate_runs",
    "summarize",
    "main",
]


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["schema_version", "data", "model"],
    "properties": {
        "schema_version": {"const": 1},
        "data": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["boucwen", "wiener-hammerstein", "files"]},
                "n_samples": {"type": "integer", "minimum": 2},
                "sample_rate": {"type": "number", "exclusiveMinimum": 0},
                "f_min": {"type": "number", "exclusiveMinimum": 0},
                "f_max": {"type": "number", "exclusiveMinimum": 0},
                "amplitude_rms": {"type": "number", "exclusiveMinimum": 0},
                "train_seed": {"type": "integer"},
                "test_seed": {"type": "integer"},
                "periods": {"type": "integer", "minimum": 2},
                "noise_std": {"type": "number", "minimum": 0},
                "test_skip": {"type": "integer", "minimum": 0},
                "sweep": {
                    "type": "object",
                    "properties": {
                        "f_start": {"type": "number"},
                        "f_end": {"type": "number"},
                        "rate_hz_per_min": {"type": "number"},
                        "amplitude_rms": {"type": "number"},
                        "skip": {"type": "integer", "minimum": 0},
                    },
                },
                "params": {"type": "object"},
                "train": {"type": "string"},
                "tests": {"type": "array", "items": {"type": "object"}},
            },
        },
        "model": {
            "type": "object",
            "required": ["n_x", "n_n"],
            "properties": {
                "structure": {"enum": ["auto", "ssnn", "gr-ssnn"]},
                "n_x": {"type": "integer", "minimum": 1},
                "n_n": {"type": "integer", "minimum": 1},
                "activation": {"enum": ["tanh", "gaussian-rbf", "relu"]},
            },
        },
        "init": {
            "type": "object",
            "properties": {
                "schemes": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"enum": list(SCHEMES)},
                },
                "z_max": {"type": "number", "exclusiveMinimum": 0},
                "gamma": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
        "lti": {
            "type": "object",
            "properties": {"order": {"type": "integer", "minimum": 1}},
        },
        "train": {
            "type": "object",
            "properties": {
                "max_epochs": {"type": "integer", "minimum": 1},
                "lambda_init": {"type": "number", "exclusiveMinimum": 0},
                "lambda_up": {"type": "number", "exclusiveMinimum": 1},
                "lambda_down": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "svd_rel_tol": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "cost_tol": {"type": "number", "minimum": 0},
                "cost_window": {"type": "integer", "minimum": 1},
                "max_lambda": {"type": "number", "exclusiveMinimum": 0},
                "max_retries": {"type": "integer", "minimum": 1},
                "max_jacobian_mb": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "monte_carlo": {
            "type": "object",
            "properties": {
                "runs": {"type": "integer", "minimum": 1},
                "base_seed": {"type": "integer"},
                "workers": {"type": "integer", "minimum": 1},
            },
        },
        "evaluation": {
            "type": "object",
            "properties": {
                "multisine_periods": {"type": "integer", "minimum": 2},
                "normalize_output": {"type": "boolean"},
            },
        },
        "output": {
            "type": "object",
            "properties": {"dir": {"type": ["string", "null"]}},
        },
    },
}


@dataclass
class TestRecord:
    name: str
    dataset: Dataset
    mode: str  # "periodic" | "transient"
    skip: int = 0


@dataclass
class ExperimentConfig:
    data: dict
    structure: str
    n_x: int
    n_n: int
    activation: str
    schemes: list
    z_max: float
    gamma: float | None
    lti_order: int
    lm: LmOptions
    runs: int
    base_seed: int
    workers: int
    multisine_periods: int
    normalize_output: bool
    out_dir: str | None
    raw: dict = field(default_factory=dict, repr=False)


def validate_config(cfg: dict) -> None:
    import jsonschema

    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from None


def parse_config(cfg: dict) -> ExperimentConfig:
    validate_config(cfg)
    model = cfg["model"]
    init = cfg.get("init", {})
    schemes = init.get("schemes", ["lti-gr"])
    structure = model.get("structure", "auto")
    if structure != "auto":
        for kind in schemes:
            if structure_of(kind) != structure:
                raise ConfigError(
                    f"scheme {kind!r} builds a {structure_of(kind)} model but "
                    f"the config pins structure {structure!r}"
                )
    mc = cfg.get("monte_carlo", {})
    ev = cfg.get("evaluation", {})
    try:
        lm = LmOptions(**cfg.get("train", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train options: {exc}") from None
    return ExperimentConfig(
        data=cfg["data"],
        structure=structure,
        n_x=model["n_x"],
        n_n=model["n_n"],
        activation=model.get("activation", "tanh"),
        schemes=list(schemes),
        z_max=init.get("z_max", DEFAULT_Z_MAX),
        gamma=init.get("gamma"),
        lti_order=cfg.get("lti", {}).get("order", model["n_x"]),
        lm=lm,
        runs=mc.get("runs", 10),
        base_seed=mc.get("base_seed", 0),
        workers=mc.get("workers", 1),
        multisine_periods=ev.get("multisine_periods", 2),
        normalize_output=ev.get("normalize_output", True),
        out_dir=cfg.get("output", {}).get("dir"),
        raw=cfg,
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return parse_config(cfg)


def _boucwen_params(overrides: dict) -> bench.BoucWenParams:
    base = dataclasses.asdict(bench.DESK_BOUCWEN)
    unknown = set(overrides) - set(base)
    if unknown:
        raise ConfigError(f"unknown Bouc-Wen parameters: {sorted(unknown)}")
    base.update(overrides)
    return bench.BoucWenParams(**base)


def build_datasets(data_cfg: dict):
    """Return (train_raw, [TestRecord...]) for a config data section."""
    kind = data_cfg["kind"]
    if kind == "boucwen":
        fs = data_cfg.get("sample_rate", 750.0)
        params = _boucwen_params({**data_cfg.get("params", {}),
                                  "sample_rate": fs})
        ms = MultisineSpec(
            n_samples=data_cfg.get("n_samples", 2048),
            sample_rate=fs,
            f_min=data_cfg.get("f_min", 5.0),
            f_max=data_cfg.get("f_max", 150.0),
            target_rms=data_cfg.get("amplitude_rms", 50.0),
            seed=0,
        )
        sw_cfg = data_cfg.get("sweep", {})
        sweep = SweepSpec(
            f_start=sw_cfg.get("f_start", 20.0),
            f_end=sw_cfg.get("f_end", 50.0),
            sweep_rate=sw_cfg.get("rate_hz_per_min", 600.0),
            amplitude=sw_cfg.get("amplitude_rms", 40.0),
            sample_rate=fs,
        )
        try:
            train, test_ms, test_sweep = bench.make_boucwen_datasets(
                params, ms, sweep,
                seeds=(data_cfg.get("train_seed", 1), data_cfg.get("test_seed", 2)),
                periods=data_cfg.get("periods", 4),
            )
        except (RuntimeError, ValueError) as exc:
            raise DataError(str(exc)) from None
        tests = [
            TestRecord("multisine", test_ms, "periodic"),
            TestRecord("sweep", test_sweep, "transient",
                       skip=sw_cfg.get("skip", 250)),
        ]
        return train, tests

    if kind == "wiener-hammerstein":
        fs = data_cfg.get("sample_rate", 2000.0)
        params = bench.desk_wh_params(data_cfg.get("noise_std", 1e-3))
        try:
            train, test = bench.make_wh_datasets(
                params,
                n_samples=data_cfg.get("n_samples", 2048),
                sample_rate=fs,
                seeds=(data_cfg.get("train_seed", 1), data_cfg.get("test_seed", 2)),
            )
        except (RuntimeError, ValueError) as exc:
            raise DataError(str(exc)) from None
        return train, [TestRecord("test", test, "transient",
                                  skip=data_cfg.get("test_skip", 200))]

    if kind == "files":
        fs = data_cfg.get("sample_rate")
        try:
            train = bench.load_dataset(data_cfg["train"], sample_rate=fs)
            tests = []
            for t in data_cfg.get("tests", []):
                ds = bench.load_dataset(t["path"], sample_rate=fs)
                tests.append(TestRecord(t.get("name", Path(t["path"]).stem), ds,
                                        t.get("mode", "transient"),
                                        skip=t.get("skip", 0)))
        except KeyError as exc:
            raise ConfigError(f"files data section misses {exc}") from None
        except (OSError, ValueError) as exc:
            raise DataError(str(exc)) from None
        return train, tests

    raise ConfigError(f"unknown data kind {kind!r}")


@dataclass
class RunResult:
    scheme: str
    run: int
    seed: int
    diverged: bool = False
    error: str | None = None
    train_rmse: float | None = None
    test_rmse: dict = field(default_factory=dict)
    epochs_run: int = 0
    stop_reason: str = ""
    train_rmse_history: list = field(default_factory=list)
    lti_hash: str = ""


@dataclass
class MonteCarloReport:
    runs: list
    aggregates: list
    lti_hash: str
    dataset_hash: str
    schemes: list
    test_records: list
    n_diverged: int


def _evaluate_model(model, record: TestRecord, norm, multisine_periods):
    u_n = (record.dataset.u - norm.u_offset) / norm.u_scale
    n = record.dataset.n_samples
    if record.mode == "periodic":
        y_hat_n, _ = simulate(model, np.tile(u_n, (multisine_periods, 1)))
        y_hat_n = y_hat_n[-n:]
        skip = 0
    else:
        y_hat_n, _ = simulate(model, u_n)
        skip = record.skip
    y_hat = denormalize_output(y_hat_n, norm)
    return rmse(record.dataset.y, y_hat, skip)


def _run_one(task):
    """Execute a single Monte-Carlo run; never raises."""
    (scheme_kind, run_idx, seed, train, tests, lti_model, gamma, dims,
     activation, lm_opts, multisine_periods, shared_lti_hash) = task
    result = RunResult(scheme=scheme_kind, run=run_idx, seed=seed,
                       lti_hash=shared_lti_hash)
    try:
        scheme = InitScheme(scheme_kind, seed=seed)
        model0 = build_initial_model(scheme, dims, Activation(activation),
                                     lti=lti_model, gamma=gamma)
        report = lm_train(model0, train, lm_opts)
        result.train_rmse = float(np.sqrt(report.cost_history[-1]))
        result.epochs_run = report.epochs_run
        result.stop_reason = report.stop_reason
        result.train_rmse_history = [float(np.sqrt(c)) for c in report.epoch_costs]
        for record in tests:
            result.test_rmse[record.name] = _evaluate_model(
                report.final_model, record, train.normalization,
                multisine_periods)
        result._report = report  # not serialized; used by in-process callers
    except (SimulationDiverged, ValueError, RuntimeError,
            np.linalg.LinAlgError) as exc:
        result.diverged = True
        result.error = f"{type(exc).__name__}: {exc}"
    return result


def run_pipeline(config: ExperimentConfig) -> MonteCarloReport:
    """Run the full experiment described by the config."""
    train_raw, tests = build_datasets(config.data)
    train = normalize_dataset(train_raw, normalize_output=config.normalize_output)
    ds_hash = dataset_hash(train_raw)

    fit = estimate_lti(train, config.lti_order,
                       LtiEstimateOptions(lm=LmOptions(max_epochs=100)))
    lti_norm, _ = normalize_states(fit.model, train.u)
    shared_hash = lti_hash(lti_norm)
    gamma = config.gamma if config.gamma is not None \
        else select_gamma(lti_norm, train.u, config.z_max)

    dims = Dims(config.n_x, train.n_u, train.n_y, config.n_n)
    tasks = [
        (kind, run, config.base_seed + run, train, tests, lti_norm, gamma,
         dims, config.activation, config.lm, config.multisine_periods,
         shared_hash)
        for kind in config.schemes
        for run in range(config.runs)
    ]
    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]

    order = {kind: i for i, kind in enumerate(config.schemes)}
    results.sort(key=lambda r: (order[r.scheme], r.run))
    record_names = [t.name for t in tests]
    aggregates = aggregate_runs(run_rows(results, record_names))
    report = MonteCarloReport(
        runs=results,
        aggregates=aggregates,
        lti_hash=shared_hash,
        dataset_hash=ds_hash,
        schemes=list(config.schemes),
        test_records=record_names,
        n_diverged=sum(r.diverged for r in results),
    )
    if config.out_dir:
        write_report_artifacts(report, config, fit, train_raw, tests)
    return report


def run_rows(results, record_names):
    """Long-format rows: one per (run, test record)."""
    rows = []
    for r in results:
        for name in record_names:
            rows.append({
                "scheme": r.scheme,
                "test_record": name,
                "run": r.run,
                "seed": r.seed,
                "rmse": r.test_rmse.get(name, float("nan")),
                "diverged": int(r.diverged),
            })
    return rows


def aggregate_runs(rows):
    """Median and 10/90th percentiles per (scheme, test_record).

    Diverged runs are excluded from the percentiles and reported as a
    separate count.
    """
    groups = {}
    for row in rows:
        groups.setdefault((row["scheme"], row["test_record"]), []).append(row)
    out = []
    for (scheme, record), members in groups.items():
        vals = [m["rmse"] for m in members
                if not m["diverged"] and np.isfinite(m["rmse"])]
        n_div = sum(m["diverged"] for m in members)
        if vals:
            p10, med, p90 = np.percentile(vals, [10.0, 50.0, 90.0])
        else:
            p10 = med = p90 = float("nan")
        out.append({
            "scheme": scheme,
            "test_record": record,
            "n": len(members),
            "n_diverged": n_div,
            "median": float(med),
            "p10": float(p10),
            "p90": float(p90),
        })
    return out


def summarize(rows, group_by=("scheme", "test_record")):
    """Aggregate long-format rows; returns (long_rows, aggregate_rows)."""
    if not rows:
        raise ValueError("no rows to summarize")
    if tuple(group_by) != ("scheme", "test_record"):
        # regroup by renaming the grouping keys onto the standard ones
        remapped = []
        for row in rows:
            r = dict(row)
            r["scheme"] = " / ".join(str(row[k]) for k in group_by)
            r["test_record"] = ""
            remapped.append(r)
        return rows, aggregate_runs(remapped)
    return rows, aggregate_runs(rows)


_LONG_FIELDS = ["scheme", "test_record", "run", "seed", "rmse", "diverged"]
_AGG_FIELDS = ["scheme", "test_record", "n", "n_diverged", "median", "p10", "p90"]


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_runs_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_LONG_FIELDS)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in _LONG_FIELDS])


def read_runs_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append({
                "scheme": row["scheme"],
                "test_record": row["test_record"],
                "run": int(row["run"]),
                "seed": int(row["seed"]),
                "rmse": float(row["rmse"]),
                "diverged": int(row["diverged"]),
            })
    return rows


def write_aggregates_csv(aggregates, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_AGG_FIELDS)
        for row in aggregates:
            w.writerow([_fmt(row[k]) for k in _AGG_FIELDS])


def report_to_json_dict(report: MonteCarloReport) -> dict:
    return {
        "lti_hash": report.lti_hash,
        "dataset_hash": report.dataset_hash,
        "schemes": report.schemes,
        "test_records": report.test_records,
        "n_diverged": report.n_diverged,
        "aggregates": report.aggregates,
        "runs": [
            {
                "scheme": r.scheme, "run": r.run, "seed": r.seed,
                "diverged": r.diverged, "error": r.error,
                "train_rmse": r.train_rmse, "test_rmse": r.test_rmse,
                "epochs_run": r.epochs_run, "stop_reason": r.stop_reason,
                "train_rmse_history": r.train_rmse_history,
                "lti_hash": r.lti_hash,
            }
            for r in report.runs
        ],
    }


def write_report_artifacts(report, config, fit, train_raw, tests):
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_rows(report.runs, report.test_records)
    write_runs_csv(rows, out / "runs.csv")
    write_aggregates_csv(report.aggregates, out / "aggregates.csv")
    with open(out / "report.json", "w") as fh:
        json.dump(report_to_json_dict(report), fh, indent=2)
    with open(out / "lti_model.json", "w") as fh:
        json.dump(lti_to_dict(fit.model, dataset_hash=report.dataset_hash,
                              order=fit.model.n_x,
                              rmse_subspace=fit.rmse_subspace,
                              rmse_refined=fit.rmse_refined), fh, indent=2)
    with open(out / "config.json", "w") as fh:
        json.dump(config.raw, fh, indent=2)
    for r in report.runs:
        rep = getattr(r, "_report", None)
        if rep is not None:
            write_history_csv(rep, out / f"history_{r.scheme}_{r.run}.csv")


def _cmd_generate_data(config, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, tests = build_datasets(config.data)
    bench.save_dataset(train, out / "train.csv")
    manifest = {
        "dataset_hash": dataset_hash(train),
        "sample_rate": train.sample_rate,
        "data": config.data,
        "records": {"train": "train.csv"},
    }
    for rec in tests:
        fname = f"test_{rec.name}.csv"
        bench.save_dataset(rec.dataset, out / fname)
        manifest["records"][rec.name] = fname
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    print(f"wrote {1 + len(tests)} records to {out}")
    return 0


def _cmd_estimate_lti(config, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_raw, _ = build_datasets(config.data)
    train = normalize_dataset(train_raw, normalize_output=config.normalize_output)
    fit = estimate_lti(train, config.lti_order)
    lti_norm, _ = normalize_states(fit.model, train.u)
    path = out / "lti_model.json"
    with open(path, "w") as fh:
        json.dump(lti_to_dict(lti_norm, dataset_hash=dataset_hash(train_raw),
                              order=config.lti_order,
                              rmse_subspace=fit.rmse_subspace,
                              rmse_refined=fit.rmse_refined,
                              stable=fit.stable,
                              state_normalized=True), fh, indent=2)
    print(f"subspace rmse {fit.rmse_subspace:.6g}, "
          f"refined rmse {fit.rmse_refined:.6g} -> {path}")
    return 0


def _single_run(config, scheme_kind, seed):
    train_raw, tests = build_datasets(config.data)
    train = normalize_dataset(train_raw, normalize_output=config.normalize_output)
    fit = estimate_lti(train, config.lti_order)
    lti_norm, _ = normalize_states(fit.model, train.u)
    gamma = config.gamma if config.gamma is not None \
        else select_gamma(lti_norm, train.u, config.z_max)
    dims = Dims(config.n_x, train.n_u, train.n_y, config.n_n)
    task = (scheme_kind, 0, seed, train, tests, lti_norm, gamma, dims,
            config.activation, config.lm, config.multisine_periods,
            lti_hash(lti_norm))
    return _run_one(task), train


def _cmd_train(config, out_dir, scheme_kind, seed):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result, train = _single_run(config, scheme_kind, seed)
    if result.diverged:
        print(f"run diverged: {result.error}", file=sys.stderr)
        return 3
    rep = result._report
    norm = train.normalization
    meta = {
        "scheme": scheme_kind,
        "seed": seed,
        "x0": [float(v) for v in rep.final_x0],
        "normalization": {
            "u_offset": norm.u_offset.tolist(),
            "u_scale": norm.u_scale.tolist(),
            "y_offset": norm.y_offset.tolist(),
            "y_scale": norm.y_scale.tolist(),
        },
        "test_rmse": result.test_rmse,
    }
    with open(out / "model.json", "w") as fh:
        json.dump(model_to_dict(rep.final_model, **meta), fh)
    write_history_csv(rep, out / "history.csv")
    with open(out / "train_report.json", "w") as fh:
        json.dump(report_to_dict(rep), fh)
    print(f"train rmse {result.train_rmse:.6g} "
          f"({result.epochs_run} epochs, stop: {result.stop_reason})")
    for name, val in result.test_rmse.items():
        print(f"test rmse [{name}]: {val:.6g}")
    return 0


def _cmd_evaluate(config, model_path, out_dir):
    from .signals import Normalization
    from .ssnn import model_from_dict

    with open(model_path) as fh:
        payload = json.load(fh)
    model = model_from_dict(payload)
    meta = payload.get("meta", {})
    if "normalization" not in meta:
        raise ConfigError("model file carries no normalization metadata")
    nd = meta["normalization"]
    norm = Normalization(np.array(nd["u_offset"]), np.array(nd["u_scale"]),
                         np.array(nd["y_offset"]), np.array(nd["y_scale"]))
    _, tests = build_datasets(config.data)
    scores = {}
    for rec in tests:
        try:
            scores[rec.name] = _evaluate_model(model, rec, norm,
                                               config.multisine_periods)
        except SimulationDiverged as exc:
            scores[rec.name] = None
            print(f"test [{rec.name}] diverged: {exc}", file=sys.stderr)
    for name, val in scores.items():
        print(f"test rmse [{name}]: "
              f"{'diverged' if val is None else format(val, '.6g')}")
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "evaluation.json", "w") as fh:
            json.dump(scores, fh, indent=2)
    return 0


def _cmd_sweep(config):
    report = run_pipeline(config)
    for agg in report.aggregates:
        print(f"{agg['scheme']:>14s} | {agg['test_record']:>10s} | "
              f"median {agg['median']:.6g} | p10 {agg['p10']:.6g} | "
              f"p90 {agg['p90']:.6g} | diverged {agg['n_diverged']}/{agg['n']}")
    if report.runs and report.n_diverged == len(report.runs):
        print("all runs diverged", file=sys.stderr)
        return 3
    return 0


def _cmd_summarize(paths, out_dir):
    rows = []
    for p in paths:
        rows.extend(read_runs_csv(p))
    long_rows, aggregates = summarize(rows)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_runs_csv(long_rows, out / "runs_all.csv")
    write_aggregates_csv(aggregates, out / "aggregates.csv")
    for agg in aggregates:
        print(f"{agg['scheme']:>14s} | {agg['test_record']:>10s} | "
              f"median {agg['median']:.6g}")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="nlssid",
        description="State-space neural network identification experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="experiment JSON config")
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("generate-data", help="generate benchmark records as CSV")
    add_common(p)
    p = sub.add_parser("estimate-lti", help="estimate the linear approximation")
    add_common(p)
    p = sub.add_parser("train", help="run a single training")
    add_common(p)
    p.add_argument("--scheme", default=None, choices=SCHEMES)
    p.add_argument("--seed", type=int, default=None)
    p = sub.add_parser("evaluate", help="evaluate a stored model on the test records")
    add_common(p)
    p.add_argument("--model", required=True, help="model JSON produced by train")
    p = sub.add_parser("sweep", help="run the Monte-Carlo sweep")
    add_common(p)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="base seed override")
    p.add_argument("--workers", type=int, default=None)
    p = sub.add_parser("summarize", help="merge run CSVs and recompute aggregates")
    p.add_argument("runs_csv", nargs="+", help="runs.csv files to merge")
    p.add_argument("--out", default=".", help="output directory")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "summarize":
            return _cmd_summarize(args.runs_csv, args.out)
        config = load_config(args.config)
        if args.out is not None:
            config.out_dir = args.out
        if args.command == "generate-data":
            return _cmd_generate_data(config, args.out or "data_out")
        if args.command == "estimate-lti":
            return _cmd_estimate_lti(config, args.out or "lti_out")
        if args.command == "train":
            scheme = args.scheme or config.schemes[0]
            seed = args.seed if args.seed is not None else config.base_seed
            return _cmd_train(config, args.out or "train_out", scheme, seed)
        if args.command == "evaluate":
            return _cmd_evaluate(config, args.model, args.out)
        if args.command == "sweep":
            if args.runs is not None:
                config.runs = args.runs
            if args.seed is not None:
                config.base_seed = args.seed
            if args.workers is not None:
                config.workers = args.workers
            return _cmd_sweep(config)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
