"""Reproduction harness: simulate, fit, evaluate and aggregate over seeded trials.

Every (trial, sweep point, method) cell gets seeds derived from the base seed
with :class:`numpy.random.SeedSequence`, so a run is reproducible regardless
of the worker count. Wall times go to the manifest only; the CSV outputs are
byte-stable for a fixed seed.
"""
from __future__ import annotations

import configparser
import csv
import datetime as _dt
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .graph import AcyclicityForm, GraphModel, save_adjacency
from .learner import (
    METHODS,
    RANDOM_EDGES_PER_NODE,
    CasperConfig,
    LagrangianSchedule,
    TrainingError,
    TrainResult,
    casper_fit,
    invariant_violations,
    notears_fit,
    notears_mlp_fit,
    random_baseline,
)
from .metrics import METRIC_NAMES, MetricsReport, aggregate_trials, evaluate, format_cell
from .sem import (
    Dataset,
    NonlinearSemSpec,
    load_dataset,
    sample_linear_weights,
    save_dataset,
    simulate_linear,
    simulate_nonlinear_gp,
)

log = logging.getLogger(__name__)

MECHANISMS = ("linear", "gp")

# per-method lambda1 when the user does not set one
DEFAULT_LAMBDA1 = {"casper": 0.01, "notears": 0.1, "notears-mlp": 0.01}
# casper with the MLP model, tuned on held-out seeds over the grid {0.002, 0.005, 0.01}
CASPER_MLP_LAMBDA1 = 0.002

# keys of the seed sequence, after (base, trial)
_GRAPH, _WEIGHTS, _DATA, _METHOD = range(4)

AGGREGATE_METRICS = ("tpr", "fdr", "shd", "sid", "n_predicted_edges", "n_correct_edges")


def ingest_csv(path, standardize: bool = True) -> Dataset:
    """Load a header + numeric-rows CSV, standardising columns unless told not to."""
    return load_dataset(path, standardize=standardize)


def derive_seed(base: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(base), *map(int, keys)]).generate_state(1, np.uint32)[0])


@dataclass
class ExperimentSpec:
    graph: str = "ER"
    degree: float = 2
    d: int = 10
    n: int = 2000
    mechanism: str = "linear"
    noise_means: list[float] = field(default_factory=lambda: [0.0])
    degrees: list[float] | None = None
    methods: list[str] = field(default_factory=lambda: ["casper", "notears"])
    trials: int = 10
    seed: int = 0
    overrides: dict = field(default_factory=dict)
    out: str = "results"

    def __post_init__(self):
        self.graph = self.graph.upper()
        GraphModel(self.graph, self.degree)
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"mechanism must be one of {MECHANISMS}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.d < 2 or self.n < 1:
            raise ValueError("need d >= 2 and n >= 1")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown or not self.methods:
            raise ValueError(f"unknown method(s) {unknown}; choose from {METHODS}")
        if not self.noise_means:
            raise ValueError("need at least one noise mean")
        bad = set(self.overrides) - {f.name for f in fields(CasperConfig)}
        if bad:
            raise ValueError(f"unknown config keys {sorted(bad)}")

    def semantic_dict(self) -> dict:
        """Everything that affects results; the output directory is excluded."""
        out = asdict(self)
        out.pop("out")
        return out

    def config_hash(self) -> str:
        blob = json.dumps(_plain(self.semantic_dict()), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def sweep(self) -> list[tuple[float, float]]:
        """(degree, noise_mean) points in run order."""
        degrees = self.degrees if self.degrees else [self.degree]
        return [(k, mu) for k in degrees for mu in self.noise_means]

    def setting_label(self, degree, noise_mean) -> str:
        return f"{self.graph}{_num(degree)}-d{self.d}-{self.mechanism}-mu{_num(noise_mean)}"


def _num(v) -> str:
    return f"{int(v)}" if float(v).is_integer() else f"{v:g}"


# ---------------------------------------------------------------- configuration


def _parse_value(raw: str):
    text = raw.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _parse_list(raw) -> list:
    if isinstance(raw, (list, tuple)):
        return list(raw)
    return [_parse_value(v) for v in str(raw).split(",") if v.strip()]


EXPERIMENT_KEYS = {
    "graph": "graph",
    "degree": "degree",
    "nodes": "d",
    "samples": "n",
    "mechanism": "mechanism",
    "noise_mean": "noise_means",
    "degree_sweep": "degrees",
    "method": "methods",
    "methods": "methods",
    "trials": "trials",
    "seed": "seed",
    "out": "out",
}


def read_config(path) -> tuple[dict, dict]:
    """Read an INI file into ``(experiment_fields, casper_overrides)``.

    ``[experiment]`` takes the same names as the command-line flags
    (``graph``, ``degree``, ``nodes``, ``samples``, ``mechanism``,
    ``noise_mean``, ``degree_sweep``, ``methods``, ``trials``, ``seed``,
    ``jobs``, ``out``). ``[casper]`` takes :class:`CasperConfig` field names,
    plus ``acyclicity`` (``expm`` or ``poly``) and ``poly_alpha``;
    ``[lagrangian]`` takes :class:`LagrangianSchedule` field names.
    """
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(path)
    known = set(parser.sections()) - {"experiment", "casper", "lagrangian"}
    if known:
        raise ValueError(f"{path}: unknown section(s) {sorted(known)}")
    exp: dict = {}
    if parser.has_section("experiment"):
        for key, raw in parser.items("experiment"):
            if key == "jobs":
                exp["jobs"] = int(raw)
                continue
            if key not in EXPERIMENT_KEYS:
                raise ValueError(f"{path}: unknown experiment key {key!r}")
            name = EXPERIMENT_KEYS[key]
            exp[name] = _parse_list(raw) if name in ("noise_means", "degrees", "methods") else _parse_value(raw)
    over: dict = {}
    if parser.has_section("casper"):
        kind, alpha = None, None
        for key, raw in parser.items("casper"):
            if key == "acyclicity":
                kind = raw.strip()
            elif key == "poly_alpha":
                alpha = float(raw)
            else:
                over[key] = _parse_value(raw)
        if kind or alpha is not None:
            over["acyclicity_form"] = {"kind": kind or "poly", "alpha": alpha}
    if parser.has_section("lagrangian"):
        over["lagrangian"] = {k: float(v) for k, v in parser.items("lagrangian")}
    valid = {f.name for f in fields(CasperConfig)}
    bad = set(over) - valid
    if bad:
        raise ValueError(f"{path}: unknown casper key(s) {sorted(bad)}")
    return exp, over


def method_config(method: str, mechanism: str, overrides: dict, seed: int) -> CasperConfig:
    """The learner config for one method; ``overrides`` apply to every method."""
    mode = "mlp" if method == "notears-mlp" or (method == "casper" and mechanism == "gp") else "linear"
    lambda1 = CASPER_MLP_LAMBDA1 if method == "casper" and mode == "mlp" else DEFAULT_LAMBDA1.get(method, 0.01)
    kwargs = {"mode": mode, "lambda1": lambda1}
    kwargs.update(overrides)
    kwargs["mode"] = mode
    kwargs["seed"] = seed
    form = kwargs.get("acyclicity_form")
    if isinstance(form, dict):
        kwargs["acyclicity_form"] = AcyclicityForm(**form)
    lag = kwargs.get("lagrangian")
    if isinstance(lag, dict):
        kwargs["lagrangian"] = LagrangianSchedule(**lag)
    return CasperConfig(**kwargs)


# ---------------------------------------------------------------- single steps


def simulate_trial(spec: ExperimentSpec, trial: int, degree: float, noise_mean: float):
    """Ground truth and data for one trial at one sweep point.

    The graph, weights and data seeds depend on the trial and the density
    only, so a noise sweep reuses the same graph and the same noise draws.
    """
    k = spec.degrees.index(degree) if spec.degrees else 0
    dag = GraphModel(spec.graph, degree).sample(spec.d, derive_seed(spec.seed, trial, _GRAPH, k))
    data_seed = derive_seed(spec.seed, trial, _DATA, k)
    if spec.mechanism == "linear":
        sem = sample_linear_weights(dag, derive_seed(spec.seed, trial, _WEIGHTS, k), noise_mean, 1.0)
        data = simulate_linear(sem, spec.n, data_seed)
    else:
        data = simulate_nonlinear_gp(NonlinearSemSpec(dag, 1.0, noise_mean, 1.0), spec.n, data_seed)
    return dag, data


def fit_method(method: str, data, config: CasperConfig, expected_edges: float | None = None) -> TrainResult:
    X = data.values if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    if method == "casper":
        return casper_fit(X, config)
    if method == "notears":
        return notears_fit(X, config)
    if method == "notears-mlp":
        return notears_mlp_fit(X, config)
    if method == "random":
        d = X.shape[1]
        edges = RANDOM_EDGES_PER_NODE * d if expected_edges is None else expected_edges
        start = time.perf_counter()
        B = random_baseline(d, edges, config.seed)
        return TrainResult(B.astype(float), B, [], time.perf_counter() - start, True, "random", config.to_dict())
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def write_result(out_dir, result: TrainResult) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "result.json", result.to_json_dict())
    save_adjacency(out / "weighted.csv", result.weighted, binary=False)
    save_adjacency(out / "pruned.csv", result.pruned, binary=True)


def _plain(obj):
    """JSON-ready copy: numpy values become Python ones, non-finite floats become strings."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def _stamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_plain(obj), indent=2, allow_nan=False) + "\n")


def cmd_simulate(spec: ExperimentSpec) -> Path:
    """Write dataset and truth CSVs for every trial and sweep point, plus a manifest."""
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _stamp()
    seeds = []
    for degree, mu in spec.sweep():
        label = spec.setting_label(degree, mu)
        sub = out / label
        sub.mkdir(exist_ok=True)
        for t in range(spec.trials):
            dag, data = simulate_trial(spec, t, degree, mu)
            save_dataset(sub / f"trial{t:03d}_data.csv", data)
            save_adjacency(sub / f"trial{t:03d}_truth.csv", dag.adjacency, binary=True)
            seeds.append({"setting": label, "trial": t, "requested_edges": dag.requested_edges, "n_edges": dag.n_edges})
    _write_json(out / "manifest.json", _manifest(spec, started, seeds, []))
    return out


def _manifest(spec, started, seeds, wall_times) -> dict:
    return {
        "tool": "casper",
        "version": __version__,
        "config_hash": spec.config_hash(),
        "spec": spec.semantic_dict(),
        "seeds": seeds,
        "started": started,
        "finished": _stamp(),
        "wall_times": wall_times,
        "notes": {
            "random_baseline": f"uniform node order, independent edges, {RANDOM_EDGES_PER_NODE:g} expected edge(s) per node",
            "real_data_standardization": "column standardisation on by default for ingested CSV files",
        },
    }


# ---------------------------------------------------------------- benchmark


def _run_job(job: dict) -> dict:
    spec = ExperimentSpec(**job["spec"])
    dag, data = simulate_trial(spec, job["trial"], job["degree"], job["noise_mean"])
    config = method_config(job["method"], spec.mechanism, spec.overrides, job["seed"])
    row = {k: job[k] for k in ("setting", "degree", "noise_mean", "method", "trial", "seed")}
    start = time.perf_counter()
    try:
        result = fit_method(job["method"], data, config)
    except (TrainingError, ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
        row.update({"status": f"failed: {type(exc).__name__}: {exc}", "wall_time": time.perf_counter() - start})
        return row
    report = evaluate(dag.adjacency, result.pruned)
    row.update(report.to_dict())
    row["converged"] = result.converged
    row["invariants"] = "; ".join(invariant_violations(result)) or "ok"
    row["status"] = "ok"
    row["wall_time"] = time.perf_counter() - start
    return row


def bench_jobs(spec: ExperimentSpec) -> list[dict]:
    jobs = []
    for s, (degree, mu) in enumerate(spec.sweep()):
        label = spec.setting_label(degree, mu)
        for m, method in enumerate(spec.methods):
            for t in range(spec.trials):
                jobs.append(
                    {
                        "spec": asdict(spec),
                        "setting": label,
                        "degree": degree,
                        "noise_mean": mu,
                        "method": method,
                        "trial": t,
                        "seed": derive_seed(spec.seed, t, _METHOD, m, s),
                    }
                )
    return jobs


LONG_COLUMNS = ("setting", "degree", "noise_mean", "method", "trial", "seed", *METRIC_NAMES, "converged", "invariants", "status")


def cmd_bench(spec: ExperimentSpec, jobs: int = 1) -> dict:
    """Run every (sweep point, method, trial) cell and write tables plus a manifest.

    Returns ``{(method, setting): TrialAggregate | None}``; ``None`` marks a
    cell in which every trial failed.
    """
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _stamp()
    work = bench_jobs(spec)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_job, work))
    else:
        rows = [_run_job(j) for j in work]

    # a single collector writes every file, in job order
    with open(out / "long.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LONG_COLUMNS)
        for r in rows:
            writer.writerow([_cell(r.get(c)) for c in LONG_COLUMNS])

    aggregates: dict = {}
    settings = list(dict.fromkeys(r["setting"] for r in rows))
    for setting in settings:
        for method in spec.methods:
            cell = [r for r in rows if r["setting"] == setting and r["method"] == method]
            ok = [r for r in cell if r["status"] == "ok"]
            if not ok:
                aggregates[(method, setting)] = None
                continue
            reports = [MetricsReport(**{k: r[k] for k in METRIC_NAMES}) for r in ok]
            aggregates[(method, setting)] = aggregate_trials(reports)
            if len(ok) < len(cell):
                log.warning("%s / %s: %d of %d trials failed", method, setting, len(cell) - len(ok), len(cell))

    with open(out / "aggregate.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("method", "setting", "metric", "mean", "std"))
        for setting in settings:
            for method in spec.methods:
                agg = aggregates[(method, setting)]
                for metric in AGGREGATE_METRICS:
                    if agg is None:
                        writer.writerow((method, setting, metric, "failed", "failed"))
                    else:
                        writer.writerow((method, setting, metric, _cell(agg.mean[metric]), _cell(agg.std[metric])))

    (out / "aggregate.txt").write_text(render_table(spec.methods, settings, aggregates))
    wall = [{k: r[k] for k in ("setting", "method", "trial", "wall_time", "status")} for r in rows]
    seeds = [{k: j[k] for k in ("setting", "method", "trial", "seed")} for j in work]
    _write_json(out / "manifest.json", _manifest(spec, started, seeds, wall))
    return aggregates


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_table(methods, settings, aggregates) -> str:
    """Aligned text table of mean±std cells, one block per setting."""
    cols = ("tpr", "fdr", "shd", "sid")
    lines = []
    for setting in settings:
        header = ["method", *[c.upper() for c in cols], "trials"]
        body = []
        for method in methods:
            agg = aggregates[(method, setting)]
            if agg is None:
                body.append([method, *["failed"] * len(cols), "0"])
            else:
                body.append([method, *[format_cell(agg.mean[c], agg.std[c]) for c in cols], str(agg.count)])
        widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
        lines.append(setting)
        for r in [header, *body]:
            lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip())
        lines.append("")
    return "\n".join(lines)
