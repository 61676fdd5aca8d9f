"""Experiment configuration, seeded execution, and tabular result files.

A run directory holds:

* ``results.csv``: ``setting,seed,method,efficiency,revenue,runtime_ms``,
  one row per (setting, instance seed, method);
* ``mape.csv``: ``setting,seed,method,round,mape``;
* ``trace.jsonl``: one JSON object per run with the per-round MLCA trace;
* ``timings.csv``: wall-clock time per run.

The first three are byte-identical across reruns of the same config.  Wall
time varies from run to run, so ``runtime_ms`` stays empty unless the caller
asks for it and the timings live in their own file.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np

from . import metrics
from .errors import ConfigError
from .mlca import MlcaConfig, run_mlca
from .training import METHODS, TrainConfig, method_config
from .valuemodel import InstanceConfig, generate_instance
from .wdp import MAX_EXACT_ITEMS, optimal_true_welfare, true_welfare

log = logging.getLogger(__name__)

RESULTS_HEADER = ("setting", "seed", "method", "efficiency", "revenue", "runtime_ms")
MAPE_HEADER = ("setting", "seed", "method", "round", "mape")
SUMMARY_HEADER = ("setting", "method", "n", "mean_efficiency", "std_efficiency", "p_vs_baseline", "best")

_METHOD_ORDER = {m: k for k, m in enumerate(METHODS)}


@dataclass(frozen=True)
class Setting:
    id: str
    instance: InstanceConfig

    @property
    def m(self) -> int:
        return self.instance.regions * self.instance.blocks_per_region


@dataclass(frozen=True)
class ExperimentConfig:
    settings: tuple[Setting, ...]
    mlca: MlcaConfig = MlcaConfig()
    model: TrainConfig = TrainConfig()
    shared_layers: tuple[int, ...] | None = None
    n_test: int = 128
    eval_seed: int = 0
    methods: tuple[str, ...] = METHODS
    instances: int = 10
    base_seed: int = 0
    output_dir: str | None = None

    def seeds(self) -> list[int]:
        return [self.base_seed + k for k in range(self.instances)]

    def train_config(self, method: str) -> TrainConfig:
        """Per-method training config built from the shared model section."""
        if method == "baseline":
            return method_config("baseline", self.model)
        overrides = {}
        if self.shared_layers is not None:
            overrides = {"sharing": "explicit", "shared": self.shared_layers}
        cfg = method_config(method, self.model, **overrides)
        # the model section's inject_id switch applies to the multi-task methods
        return replace(cfg, inject_id=self.model.inject_id)


@dataclass(frozen=True)
class ResultRecord:
    setting: str
    seed: int
    method: str
    efficiency: float
    revenue: float
    runtime_ms: float
    mape: tuple[float, ...] = ()
    trace: dict = field(default_factory=dict, compare=False)

    @property
    def key(self):
        return (self.setting, self.seed, _METHOD_ORDER.get(self.method, len(METHODS)), self.method)


def _schema() -> dict:
    text = resources.files("mtmlca").joinpath("config.schema.json").read_text()
    return json.loads(text)


def _strict_pairs(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ConfigError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _reject_constant(name):
    raise ConfigError(f"non-finite number {name} is not valid JSON")


def _where(path) -> str:
    parts = [str(p) for p in path]
    return ".".join(parts) if parts else "<root>"


def parse_config(path) -> ExperimentConfig:
    """Load and validate an experiment config file.

    Every problem is reported as a :class:`ConfigError` whose message names
    the offending field.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(
            path.read_text(), object_pairs_hook=_strict_pairs, parse_constant=_reject_constant
        )
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON in {path}: {e}") from None
    return config_from_dict(doc)


def config_from_dict(doc: dict) -> ExperimentConfig:
    validator = jsonschema.Draft202012Validator(_schema())
    err = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if err is not None:
        raise ConfigError(f"{_where(err.absolute_path)}: {err.message}")

    settings = []
    seen = set()
    for k, s in enumerate(doc["settings"]):
        if s["id"] in seen:
            raise ConfigError(f"settings.{k}.id: duplicate setting id {s['id']!r}")
        seen.add(s["id"])
        fields = dict(s["instance"])
        for name in ("gamma_local", "gamma_regional", "gamma_national"):
            if name in fields:
                fields[name] = tuple(float(v) for v in fields[name])
        try:
            settings.append(Setting(s["id"], InstanceConfig(**fields)))
        except ConfigError as e:
            raise ConfigError(f"settings.{k}.instance: {e}") from None

    try:
        mlca = MlcaConfig(**doc.get("mlca", {}))
    except ConfigError as e:
        raise ConfigError(f"mlca: {e}") from None

    model = dict(doc.get("model", {}))
    shared = model.pop("shared_layers", None)
    model.setdefault("inject_id", True)
    try:
        train = TrainConfig(**model)
    except ConfigError as e:
        raise ConfigError(f"model: {e}") from None

    ev = doc.get("eval", {})
    cfg = ExperimentConfig(
        settings=tuple(settings),
        mlca=mlca,
        model=train,
        shared_layers=None if shared is None else tuple(shared),
        n_test=ev.get("n_test", 128),
        eval_seed=ev.get("seed", 0),
        methods=tuple(doc.get("methods", METHODS)),
        instances=doc.get("instances", 10),
        base_seed=doc.get("base_seed", 0),
        output_dir=doc.get("output_dir"),
    )
    for method in cfg.methods:
        try:
            cfg.train_config(method)
        except ConfigError as e:
            raise ConfigError(f"model ({method}): {e}") from None
    for k, s in enumerate(cfg.settings):
        if mlca.q_round > s.instance.n_bidders:
            raise ConfigError(
                f"mlca.q_round: {mlca.q_round} exceeds the {s.instance.n_bidders} bidders "
                f"of setting {s.id!r}"
            )
        if s.m > MAX_EXACT_ITEMS:
            warnings.warn(
                f"setting {s.id!r} has m={s.m} items; the exact solvers stop at "
                f"{MAX_EXACT_ITEMS} items, so running it will fail with a capacity error",
                RuntimeWarning,
                stacklevel=2,
            )
    return cfg


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def run_single(setting: Setting, seed: int, method: str, config: ExperimentConfig,
               opt_welfare: float, test_set: metrics.TestSet | None) -> ResultRecord:
    """One MLCA auction for one (setting, seed, method)."""
    instance = generate_instance(setting.instance, seed)
    start = time.perf_counter()
    outcome = run_mlca(instance, config.mlca, config.train_config(method), test_set)
    elapsed = 1000.0 * (time.perf_counter() - start)
    welfare = true_welfare(instance, outcome.allocation)
    trace = {
        "setting": setting.id,
        "seed": seed,
        "method": method,
        "allocation": list(outcome.allocation.columns),
        "payments": list(outcome.payments),
        "reported_welfare": outcome.reported_welfare,
        "true_welfare": welfare,
        "optimal_welfare": opt_welfare,
        "rounds": outcome.trace,
    }
    return ResultRecord(
        setting=setting.id,
        seed=seed,
        method=method,
        efficiency=metrics.efficiency(welfare, opt_welfare),
        revenue=float(sum(outcome.payments)),
        runtime_ms=elapsed,
        mape=tuple(outcome.mape),
        trace=_jsonable(trace),
    )


def _run_task(args):
    setting, seed, method, config, opt, test_set = args
    try:
        return run_single(setting, seed, method, config, opt, test_set)
    except Exception as e:
        raise RuntimeError(
            f"run failed for setting={setting.id!r} seed={seed} method={method!r}: "
            f"{type(e).__name__}: {e}"
        ) from e


def _prepare(config: ExperimentConfig):
    """Optimal welfare per instance and the shared test set per setting."""
    tasks = []
    for s in config.settings:
        instances = [generate_instance(s.instance, seed) for seed in config.seeds()]
        opts = {inst.seed: optimal_true_welfare(inst)[1] for inst in instances}
        test_set = metrics.build_test_set(instances, config.n_test, config.eval_seed)
        for seed in config.seeds():
            for method in config.methods:
                tasks.append((s, seed, method, config, opts[seed], test_set))
    return tasks


def run_records(config: ExperimentConfig, jobs: int = 1) -> list[ResultRecord]:
    tasks = _prepare(config)
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_task, tasks))
    else:
        records = []
        for t in tasks:
            records.append(_run_task(t))
            log.info("finished %s seed=%d %s", t[0].id, t[1], t[2])
    return sorted(records, key=lambda r: r.key)


def _num(x: float) -> str:
    return repr(float(x))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_records(records: Sequence[ResultRecord], out_dir, record_runtime: bool = False) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = sorted(records, key=lambda r: r.key)
    results = [
        (r.setting, r.seed, r.method, _num(r.efficiency), _num(r.revenue),
         f"{r.runtime_ms:.3f}" if record_runtime else "")
        for r in records
    ]
    mape_rows = [
        (r.setting, r.seed, r.method, k, _num(v))
        for r in records
        for k, v in enumerate(r.mape, start=1)
    ]
    paths = {
        "results": out / "results.csv",
        "mape": out / "mape.csv",
        "trace": out / "trace.jsonl",
        "timings": out / "timings.csv",
    }
    paths["results"].write_text(_csv_text(RESULTS_HEADER, results))
    paths["mape"].write_text(_csv_text(MAPE_HEADER, mape_rows))
    paths["trace"].write_text(
        "".join(json.dumps(r.trace, sort_keys=True) + "\n" for r in records)
    )
    paths["timings"].write_text(_csv_text(
        ("setting", "seed", "method", "runtime_ms"),
        [(r.setting, r.seed, r.method, f"{r.runtime_ms:.3f}") for r in records],
    ))
    return paths


def run_experiment(config: ExperimentConfig, out_dir=None, jobs: int = 1,
                   record_runtime: bool = False) -> dict:
    """Run every (setting, seed, method) and write the result files.

    Returns the written paths keyed by ``results``, ``mape``, ``trace`` and
    ``timings``.
    """
    out_dir = out_dir if out_dir is not None else config.output_dir
    if out_dir is None:
        raise ConfigError("output_dir: no output directory given")
    records = run_records(config, jobs)
    return write_records(records, out_dir, record_runtime)


# ---------------------------------------------------------------------------
# summary table


@dataclass(frozen=True)
class SummaryRow:
    setting: str
    method: str
    n: int
    mean: float
    std: float
    p_value: float | None
    best: bool


def read_results(path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "results.csv"
    if not path.is_file():
        raise FileNotFoundError(f"results file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULTS_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            {"setting": r["setting"], "seed": int(r["seed"]), "method": r["method"],
             "efficiency": float(r["efficiency"]), "revenue": float(r["revenue"])}
            for r in reader
        ]


def read_mape(path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "mape.csv"
    if not path.is_file():
        return []
    with path.open(newline="") as fh:
        return [
            {"setting": r["setting"], "seed": int(r["seed"]), "method": r["method"],
             "round": int(r["round"]), "mape": float(r["mape"])}
            for r in csv.DictReader(fh)
        ]


def summarize_rows(rows: Sequence[dict]) -> list[SummaryRow]:
    """Mean and standard deviation per method, with signed-rank p-values of
    each multi-task method against the baseline on matched seeds."""
    by_setting: dict[str, dict[str, dict[int, float]]] = {}
    for r in rows:
        by_setting.setdefault(r["setting"], {}).setdefault(r["method"], {})[r["seed"]] = r["efficiency"]

    out = []
    for setting in sorted(by_setting):
        methods = by_setting[setting]
        if any(m != "baseline" for m in methods) and "baseline" not in methods:
            raise ValueError(f"setting {setting!r}: no baseline rows to compare against")
        order = sorted(methods, key=lambda m: (_METHOD_ORDER.get(m, len(METHODS)), m))
        stats = {}
        for method in order:
            eff = np.array([methods[method][s] for s in sorted(methods[method])])
            p = None
            if method != "baseline":
                base = methods["baseline"]
                common = sorted(set(base) & set(methods[method]))
                if not common:
                    raise ValueError(f"setting {setting!r}: {method} shares no seeds with baseline")
                _, p = metrics.wilcoxon_one_tailed([(methods[method][s], base[s]) for s in common])
            stats[method] = (eff.size, float(eff.mean()), float(eff.std()), p)
        top = max(v[1] for v in stats.values())
        for method in order:
            n, mean, std, p = stats[method]
            out.append(SummaryRow(setting, method, n, mean, std, p, mean >= top - 1e-12))
    return out


def format_summary(summary: Sequence[SummaryRow]) -> tuple[str, str]:
    """CSV text and an aligned plain-text table."""
    csv_rows = [
        (s.setting, s.method, s.n, _num(s.mean), _num(s.std),
         "" if s.p_value is None else _num(s.p_value), "*" if s.best else "")
        for s in summary
    ]
    table = [("setting", "method", "n", "efficiency", "p (vs baseline)", "best")]
    for s in summary:
        table.append((
            s.setting, s.method, str(s.n), f"{s.mean:.4f} ± {s.std:.4f}",
            "-" if s.p_value is None else f"{s.p_value:.4f}", "*" if s.best else "",
        ))
    widths = [max(len(row[c]) for row in table) for c in range(len(table[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table]
    return _csv_text(SUMMARY_HEADER, csv_rows), "\n".join(lines) + "\n"


def summarize(results_dir, out_path=None, figures: bool = True) -> list[SummaryRow]:
    """Summary table for a run directory.

    With ``out_path`` the aligned table is written there, the CSV next to it
    with a ``.csv`` suffix, and (unless ``figures`` is false) PNG figures
    alongside.
    """
    rows = read_results(results_dir)
    if not rows:
        raise ValueError(f"{results_dir}: results.csv has no rows")
    summary = summarize_rows(rows)
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        csv_text, table = format_summary(summary)
        out_path.write_text(table)
        out_path.with_suffix(".csv").write_text(csv_text)
        if figures:
            from . import plotting

            plotting.render_report(summary, read_mape(results_dir), out_path)
    return summary


def config_to_dict(config: ExperimentConfig) -> dict:
    """Plain-dict form of a parsed config (handy for logging a resolved run)."""
    d = {
        "settings": [{"id": s.id, "instance": asdict(s.instance)} for s in config.settings],
        "mlca": {k: v for k, v in asdict(config.mlca).items() if k != "seed"},
        "model": {
            k: v for k, v in asdict(config.model).items() if k not in ("sharing", "shared")
        },
        "eval": {"n_test": config.n_test, "seed": config.eval_seed},
        "methods": list(config.methods),
        "instances": config.instances,
        "base_seed": config.base_seed,
    }
    if config.shared_layers is not None:
        d["model"]["shared_layers"] = list(config.shared_layers)
    if config.output_dir is not None:
        d["output_dir"] = config.output_dir
    return _jsonable(d)
