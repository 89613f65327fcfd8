"""Multi-run experiment harness: seeded runs, result CSVs and summaries."""

from __future__ import annotations

import configparser
import csv
import hashlib
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from egp import baselines, engine
from egp.dataset import DataError, Dataset, load_csv, two_gaussians
from egp.stats import DEFAULT_ALPHA, pairwise_significance_counts

log = logging.getLogger(__name__)

METHODS = ("GP", "M3GP", *engine.VARIANTS)
SYNTHETIC_PREFIX = "synthetic:"

# extreme BRAZIL accuracies kept out of boxplot data on request (percent)
BRAZIL_DISPLAY_OUTLIERS = (
    ("BRAZIL", "GP", "train", 90.97),
    ("BRAZIL", "GP", "train", 67.92),
    ("BRAZIL", "GP", "test", 90.70),
    ("BRAZIL", "GP", "test", 68.95),
    ("BRAZIL", "eGP-N5", "test", 77.29),
)


@dataclass
class DatasetSpec:
    name: str
    path: str
    label_column: str = "-1"
    header: bool = True

    def load(self) -> Dataset:
        if self.path.startswith(SYNTHETIC_PREFIX):
            return load_synthetic(self.path[len(SYNTHETIC_PREFIX):])
        return load_csv(self.path, self.label_column, self.header)


def load_synthetic(spec: str) -> Dataset:
    """``two-gaussians[,n_obs[,n_feat[,seed]]]``, e.g. ``two-gaussians,700,10,0``."""
    name, *args = [s.strip() for s in spec.split(",")]
    if name != "two-gaussians":
        raise DataError(f"unknown synthetic dataset {name!r}")
    n_obs, n_feat, seed = (int(a) for a in (args + ["700", "10", "0"][len(args):]))
    return two_gaussians(n_obs, n_feat, seed=seed)


@dataclass
class ExperimentConfig:
    datasets: list[DatasetSpec]
    methods: list[str]
    runs: int = 30
    base_seed: int = 0
    out_dir: str | None = None
    jobs: int = 1
    generations: int | None = None
    population: int | None = None  # GP/M3GP population, eGP subpopulation size
    overrides: dict[str, dict[str, int]] = field(default_factory=dict)

    def __post_init__(self):
        if self.runs < 1:
            raise engine.ConfigError("runs must be >= 1")
        if not self.methods:
            raise engine.ConfigError("no methods selected")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise engine.ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if not self.datasets:
            raise engine.ConfigError("no datasets configured")

    def params_for(self, method: str) -> dict[str, int]:
        p = {}
        if self.generations is not None:
            p["generations"] = self.generations
        if self.population is not None:
            p["population"] = self.population
        p.update(self.overrides.get(method, {}))
        return p


def _as_bool(s: str) -> bool:
    return s.strip().lower() in ("1", "yes", "true", "on")


def read_config(path) -> ExperimentConfig:
    """Parse an INI-style experiment file.

    Sections: ``[experiment]`` (methods, runs, base_seed, out, jobs,
    generations, population), one ``[dataset NAME]`` per dataset (path,
    label, header) and optional ``[method NAME]`` overrides (generations,
    population).
    """
    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8"):
        raise engine.ConfigError(f"cannot read config {path}")
    ex = cp["experiment"] if cp.has_section("experiment") else {}
    datasets, overrides = [], {}
    for sec in cp.sections():
        if sec.startswith("dataset "):
            s = cp[sec]
            datasets.append(DatasetSpec(sec[len("dataset "):].strip(), s.get("path", ""),
                                        s.get("label", "-1"), _as_bool(s.get("header", "yes"))))
        elif sec.startswith("method "):
            overrides[sec[len("method "):].strip()] = {k: int(v) for k, v in cp[sec].items()}
    methods = [m.strip() for m in ex.get("methods", ",".join(METHODS)).split(",") if m.strip()]
    opt = lambda k: int(ex[k]) if k in ex else None  # noqa: E731
    return ExperimentConfig(
        datasets=datasets,
        methods=methods,
        runs=int(ex.get("runs", 30)),
        base_seed=int(ex.get("base_seed", 0)),
        out_dir=ex.get("out"),
        jobs=int(ex.get("jobs", 1)),
        generations=opt("generations"),
        population=opt("population"),
        overrides=overrides,
    )


def derive_seed(base_seed: int, method: str, dataset: str, run: int) -> int:
    """Stable 64-bit seed; independent of which other methods are in the run."""
    key = f"{base_seed}\x1f{method}\x1f{dataset}\x1f{run}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


@dataclass
class RunResult:
    method: str
    dataset: str
    run: int
    seed: int
    train_accuracy: float
    test_accuracy: float
    total_nodes: int
    n_units: int  # trees in the forest, M3GP dimensions, 1 for GP
    wall_time: float = 0.0


RESULT_FIELDS = tuple(f.name for f in fields(RunResult) if f.name != "wall_time")
LONG_FIELDS = ("method", "dataset", "run", "seed", "phase", "accuracy", "nodes", "units")


def fit_method(method: str, ds: Dataset, seed: int, params: dict[str, int]):
    """Train one method; returns (model, predict function, total nodes, unit count)."""
    gens = params.get("generations")
    pop = params.get("population")
    if method == "GP":
        cfg = baselines.GPConfig(seed=seed)
        cfg.generations = gens if gens is not None else cfg.generations
        cfg.population = pop if pop is not None else cfg.population
        m = baselines.gp_train(ds, cfg)
        return m, lambda X: baselines.gp_predict(m, X), m.total_nodes, 1
    if method == "M3GP":
        cfg = baselines.M3GPConfig(seed=seed)
        cfg.generations = gens if gens is not None else cfg.generations
        cfg.population = pop if pop is not None else cfg.population
        m = baselines.m3gp_train(ds, cfg)
        return m, lambda X: baselines.m3gp_predict(m, X), m.total_nodes, len(m.dimensions)
    cfg = engine.EngineConfig(variant=method, seed=seed, subpop_size=pop)
    if gens is not None:
        cfg.generations = gens
    m = engine.train(ds, cfg)
    return m, lambda X: engine.predict(m, X), m.total_nodes, len(m.members)


def run_one(method: str, dataset: str, ds: Dataset, run: int, seed: int,
            params: dict[str, int]) -> RunResult:
    t0 = time.perf_counter()
    model, predict, nodes, units = fit_method(method, ds, seed, params)
    sp = model.split
    acc = {}
    for phase, rows in (("train", sp.train_indices), ("test", sp.test_indices)):
        acc[phase] = float(np.mean(predict(ds.features[rows]) == ds.labels[rows]))
    return RunResult(method, dataset, run, seed, acc["train"], acc["test"], int(nodes), int(units),
                     time.perf_counter() - t0)


def _task(args):
    return run_one(*args)


@dataclass
class ResultStore:
    results: list[RunResult]
    errors: list[dict] = field(default_factory=list)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_results(self.results, out / "results.csv")
        with open(out / "timings.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("method", "dataset", "run", "wall_time"))
            for r in self.results:
                w.writerow((r.method, r.dataset, r.run, f"{r.wall_time:.3f}"))
        with open(out / "errors.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=("dataset", "error"), lineterminator="\n")
            w.writeheader()
            w.writerows(self.errors)


def run_experiment(cfg: ExperimentConfig) -> ResultStore:
    """Every (dataset, method, run) with its own derived seed.

    Rows are ordered by configuration order, never by completion order, so
    the results file does not depend on ``jobs``.
    """
    tasks, errors = [], []
    for spec in cfg.datasets:
        try:
            ds = spec.load()
        except (DataError, OSError) as exc:
            log.error("dataset %s: %s", spec.name, exc)
            errors.append({"dataset": spec.name, "error": str(exc)})
            continue
        for method in cfg.methods:
            params = cfg.params_for(method)
            for run in range(cfg.runs):
                seed = derive_seed(cfg.base_seed, method, spec.name, run)
                tasks.append((method, spec.name, ds, run, seed, params))
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = []
        for t in tasks:
            results.append(_task(t))
            r = results[-1]
            log.info("%s %s run %d: train %.4f test %.4f (%.1fs)", r.method, r.dataset, r.run,
                     r.train_accuracy, r.test_accuracy, r.wall_time)
    store = ResultStore(results, errors)
    if cfg.out_dir:
        store.write(cfg.out_dir)
    return store


def write_results(results: Iterable[RunResult], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_FIELDS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in results:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in asdict(r).items()})


def read_results(path) -> list[RunResult]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            RunResult(row["method"], row["dataset"], int(row["run"]), int(row["seed"]),
                      float(row["train_accuracy"]), float(row["test_accuracy"]),
                      int(row["total_nodes"]), int(row["n_units"]))
            for row in csv.DictReader(fh)
        ]


# -- summaries -------------------------------------------------------------

def _ordered(items: Iterable[str]) -> list[str]:
    return list(dict.fromkeys(items))


def long_format(results: Sequence[RunResult],
                exclude: Sequence[tuple[str, str, str, float]] = ()) -> list[dict]:
    """Two rows per run (train, test) for boxplots.

    ``exclude`` holds (dataset, method, phase, accuracy in percent) entries;
    a row is dropped when its accuracy rounds to that percentage at two
    decimals.
    """
    drop = {(d, m, p, round(v, 2)) for d, m, p, v in exclude}
    rows = []
    for r in results:
        for phase, acc in (("train", r.train_accuracy), ("test", r.test_accuracy)):
            if (r.dataset, r.method, phase, round(100 * acc, 2)) in drop:
                continue
            rows.append({"method": r.method, "dataset": r.dataset, "run": r.run, "seed": r.seed,
                         "phase": phase, "accuracy": acc, "nodes": r.total_nodes, "units": r.n_units})
    return rows


def _quartiles(x) -> tuple[float, float, float]:
    q1, med, q3 = np.percentile(np.asarray(x, dtype=np.float64), [25, 50, 75])
    return float(med), float(q1), float(q3)


@dataclass
class Report:
    summary: list[dict]
    counts: dict[str, dict[str, list[int]]]  # phase -> method -> per-dataset counts
    datasets: list[str]
    methods: list[str]
    long: list[dict]

    def count_table(self) -> list[dict]:
        """One row per method, ranked by test total then training total."""
        rows = []
        for m in self.methods:
            tr, te = self.counts["train"][m], self.counts["test"][m]
            rows.append({"method": m, "train": sum(tr), "test": sum(te),
                         "train_detail": "+".join(map(str, tr)), "test_detail": "+".join(map(str, te))})
        rows.sort(key=lambda r: (-r["test"], -(r["test"] + r["train"])))
        return rows

    def text(self) -> str:
        lines = [f"{'method':<10} {'dataset':<12} {'train med [q1,q3]':<26} "
                 f"{'test med [q1,q3]':<26} {'nodes':>8} {'units':>6}"]
        for s in self.summary:
            lines.append(
                f"{s['method']:<10} {s['dataset']:<12} "
                f"{s['train_median']:.4f} [{s['train_q1']:.4f},{s['train_q3']:.4f}]   "
                f"{s['test_median']:.4f} [{s['test_q1']:.4f},{s['test_q3']:.4f}]   "
                f"{s['nodes_median']:>8.1f} {s['units_median']:>6.1f}")
        lines.append("")
        lines.append(f"significantly better results (datasets: {', '.join(self.datasets)})")
        lines.append(f"{'method':<10} {'training':<30} {'test':<30}")
        for r in self.count_table():
            lines.append(f"{r['method']:<10} {r['train_detail'] + ' = ' + str(r['train']):<30} "
                         f"{r['test_detail'] + ' = ' + str(r['test']):<30}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(self.summary[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(self.summary)
        with open(out / "counts.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=("method", "train", "test", "train_detail", "test_detail"),
                               lineterminator="\n")
            w.writeheader()
            w.writerows(self.count_table())
        with open(out / "boxplot.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=LONG_FIELDS, lineterminator="\n")
            w.writeheader()
            w.writerows(self.long)
        (out / "report.txt").write_text(self.text(), encoding="utf-8")


def summarize(results: Sequence[RunResult], alpha: float = DEFAULT_ALPHA,
              exclude: Sequence[tuple[str, str, str, float]] = ()) -> Report:
    if not results:
        raise ValueError("no results to summarize")
    datasets = _ordered(r.dataset for r in results)
    methods = _ordered(r.method for r in results)
    summary = []
    for d in datasets:
        for m in methods:
            rs = [r for r in results if r.dataset == d and r.method == m]
            if not rs:
                continue
            row = {"method": m, "dataset": d, "runs": len(rs)}
            for name, vals in (("train", [r.train_accuracy for r in rs]),
                               ("test", [r.test_accuracy for r in rs]),
                               ("nodes", [r.total_nodes for r in rs]),
                               ("units", [r.n_units for r in rs])):
                med, q1, q3 = _quartiles(vals)
                row.update({f"{name}_median": med, f"{name}_q1": q1, f"{name}_q3": q3})
            summary.append(row)
    counts = {}
    for phase, attr in (("train", "train_accuracy"), ("test", "test_accuracy")):
        samples = {d: {m: [getattr(r, attr) for r in results if r.dataset == d and r.method == m]
                       for m in methods} for d in datasets}
        if len(methods) >= 2:
            counts[phase] = pairwise_significance_counts(samples, alpha)
        else:
            counts[phase] = {m: [0] * len(datasets) for m in methods}
    return Report(summary, counts, datasets, methods, long_format(results, exclude))
