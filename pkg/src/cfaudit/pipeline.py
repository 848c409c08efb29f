"""End-to-end audit: datasets -> models -> explanations -> metrics -> report files.

Work is split into (dataset, method, explanandum) cells.  Each cell seeds its
own generator from a hash of (global seed, dataset, method, instance id), so
the number of worker processes never changes a result.  Everything except
``manifest.json`` is written in canonical order and is byte-stable.
"""
from __future__ import annotations

import csv
import hashlib
import json
import multiprocessing
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import sklearn

from . import __version__
from .analysis import aggregate, boxplot_stats, classical_mds, column_summary, default_subsets, mds_input
from .attrib import anchor_rule, shapley_estimate
from .cfgen import GROUPS, GeneratorConfig, SearchSpace, cell_seed, generate, method_group
from .data import Dataset, SplitSpec, load_dataset, read_schema, sample_explananda, split_train_test
from .exceptions import BridgeError, ConfigError, DataError, MetricError, ModelError
from .explanations import Explanation, ExplanationSet, diff_to_explanation, topk_to_explanation
from .metrics import (KINDS, DisagreementMatrix, coverage_by_method, group_disagreement, pairwise_matrix,
                      probe_index, sparsity_by_method)
from .model import ForestConfig, PredictionModel, auc, bridge_model, train_forest

BASELINES = ("Anchors", "SHAP")
MATRIX_FILES = {"feature_disagreement": "feature_disagreement", "l0": "scaled_l0",
                "jaccard_sim": "jaccard_similarity", "jaccard_dissim": "jaccard_dissimilarity"}


# --------------------------------------------------------------------------
# configuration


@dataclass
class DatasetEntry:
    schema: str
    csv: str | None = None
    explanations: str | None = None


@dataclass
class Flags:
    missing_as_empty: bool = False
    shap_k: int = 7
    shap_signed: bool = False
    mds_input: str = "jaccard"
    mds_pooling: str = "global"
    stratified_split: bool = False


@dataclass
class AuditConfig:
    datasets: list[DatasetEntry]
    methods: list[str]
    model: dict = field(default_factory=lambda: {"forest": {}})
    sample: int = 200
    seed: int = 0
    output: str | None = None
    flags: Flags = field(default_factory=Flags)
    split: dict = field(default_factory=dict)
    generator: dict = field(default_factory=dict)
    shap: dict = field(default_factory=dict)
    anchors: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.datasets:
            raise ConfigError("config needs at least one dataset")
        if len(self.methods) != len(set(self.methods)):
            raise ConfigError("methods are listed twice")
        if len(self.methods) < 2:
            raise ConfigError("pairwise metrics need at least 2 methods")
        if self.sample < 1:
            raise ConfigError("sample must be >= 1")
        if self.flags.shap_k < 1:
            raise ConfigError("shap_k must be >= 1")
        if self.flags.mds_input not in ("jaccard", "l0"):
            raise ConfigError(f"mds_input must be 'jaccard' or 'l0', got {self.flags.mds_input!r}")
        if self.flags.mds_pooling not in ("global", "per-dataset"):
            raise ConfigError(f"mds_pooling must be 'global' or 'per-dataset', got {self.flags.mds_pooling!r}")
        kinds = set(self.model) - {"threshold"}
        if len(kinds) != 1 or kinds.pop() not in ("forest", "bridge"):
            raise ConfigError("model must hold exactly one of 'forest' or 'bridge'")
        if "bridge" in self.model:
            b = self.model["bridge"]
            if not (isinstance(b, (str, list)) or (isinstance(b, dict) and "command" in b)):
                raise ConfigError("model.bridge must be a command or {command, timeout}")
        thr = self.model.get("threshold", 0.5)
        if not 0 < thr < 1:
            raise ConfigError("model.threshold must lie in (0, 1)")
        try:
            self.forest_config()
            self.split_spec()
            self.generator_config()
        except (TypeError, ValueError, ModelError) as e:
            raise ConfigError(str(e)) from None
        _check_keys(self.shap, ("samples", "background"), "shap")
        _check_keys(self.anchors, ("precision_target", "n_samples", "beam_width"), "anchors")
        for d in self.datasets:
            if d.csv is None and d.explanations is None:
                raise ConfigError(f"dataset {d.schema!r} needs a csv, an explanations file, or both")

    # typed views ---------------------------------------------------------

    def forest_config(self) -> ForestConfig:
        params = dict(self.model.get("forest") or {})
        params.setdefault("seed", self.seed)
        return ForestConfig(**params)

    def split_spec(self) -> SplitSpec:
        _check_keys(self.split, ("test_fraction", "test_min"), "split")
        return SplitSpec(explanandum_sample=self.sample, seed=self.seed,
                         stratified=self.flags.stratified_split, **self.split)

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(seed=self.seed, **self.generator)

    @property
    def threshold(self) -> float:
        return float(self.model.get("threshold", 0.5))

    # io ------------------------------------------------------------------

    @classmethod
    def from_dict(cls, payload: dict, base_dir=None) -> "AuditConfig":
        if not isinstance(payload, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = set(payload) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        for key in ("datasets", "methods"):
            if key not in payload:
                raise ConfigError(f"config lacks {key!r}")
        base = Path(base_dir) if base_dir else None

        def resolve(p):
            if p is None:
                return None
            p = Path(p)
            return str(p if p.is_absolute() or base is None else base / p)

        try:
            datasets = [DatasetEntry(**{k: resolve(v) for k, v in d.items()}) for d in payload["datasets"]]
            flags = Flags(**payload.get("flags", {}))
        except TypeError as e:
            raise ConfigError(str(e)) from None
        rest = {k: v for k, v in payload.items() if k not in ("datasets", "flags")}
        if rest.get("output") is not None:
            rest["output"] = resolve(rest["output"])
        rest["methods"] = [str(m) for m in rest["methods"]]
        return cls(datasets=datasets, flags=flags, **rest)

    @classmethod
    def load(cls, path) -> "AuditConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                payload = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(payload, Path(path).parent)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["datasets"] = [{k: v for k, v in e.items() if v is not None} for e in d["datasets"]]
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _check_keys(d: dict, allowed, where):
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"unknown {where} keys: {sorted(extra)}")


# --------------------------------------------------------------------------
# cell execution


@dataclass
class CellResult:
    method: str
    origin_id: str
    found: bool
    features: tuple
    evaluations: int = 0
    invalid: bool = False
    counterfactual: tuple | None = None


@dataclass
class _Context:
    dataset: str
    model: PredictionModel
    train: Dataset
    explananda: Dataset
    space: SearchSpace
    generator: GeneratorConfig
    seed: int
    shap_samples: int
    shap_background: int
    shap_k: int
    shap_signed: bool
    anchors: dict


_WORKER: _Context | None = None


def _init_worker(ctx):
    global _WORKER
    _WORKER = ctx


def _run_cell(ctx: _Context, method: str, row: int) -> CellResult:
    orig = ctx.explananda.X[row]
    oid = ctx.explananda.ids[row]
    seed = cell_seed(ctx.seed, ctx.dataset, method, oid)
    if method == "SHAP":
        rng = np.random.default_rng(seed)
        n_bg = min(ctx.shap_background, len(ctx.train))
        bg = ctx.train.X[np.sort(rng.choice(len(ctx.train), size=n_bg, replace=False))]
        a = shapley_estimate(ctx.model, orig, bg, samples=ctx.shap_samples, seed=seed)
        e = topk_to_explanation(a, min(ctx.shap_k, len(orig)), "SHAP", oid, ctx.shap_signed)
        return CellResult(method, oid, True, tuple(sorted(e.features)))
    if method == "Anchors":
        r = anchor_rule(ctx.model, orig, ctx.train, seed=seed, **ctx.anchors)
        return CellResult(method, oid, True, tuple(sorted(set(r.features))))
    try:
        cf = generate(method, ctx.model, orig, ctx.train, ctx.generator, oid, ctx.space)
    except BridgeError:
        raise
    except ModelError:
        # a search produced a non-flipping result: count it, never report it
        return CellResult(method, oid, False, (), 0, invalid=True)
    e = diff_to_explanation(orig, cf)
    return CellResult(method, oid, cf.found, tuple(sorted(e.features)), cf.evaluations,
                      counterfactual=None if cf.instance is None else tuple(float(v) for v in cf.instance))


def _run_worker_cell(cell):
    return _run_cell(_WORKER, *cell)


def _run_cells(ctx: _Context, cells, jobs: int) -> list[CellResult]:
    if jobs <= 1 or len(cells) < 2:
        return [_run_cell(ctx, m, r) for m, r in cells]
    chunk = max(1, len(cells) // (jobs * 4))
    # spawn, not fork: a forked worker would share the parent's bridge pipes
    with ProcessPoolExecutor(max_workers=jobs, mp_context=multiprocessing.get_context("spawn"),
                             initializer=_init_worker, initargs=(ctx,)) as pool:
        return list(pool.map(_run_worker_cell, cells, chunksize=chunk))


# --------------------------------------------------------------------------
# report


@dataclass
class DatasetRun:
    name: str
    explanations: ExplanationSet
    metrics: dict
    cells: list[CellResult] = field(default_factory=list)
    explananda: Dataset | None = None
    model: PredictionModel | None = None
    train: Dataset | None = None


@dataclass
class AuditReport:
    config: AuditConfig
    datasets: list[DatasetRun]
    payload: dict

    def explanation_sets(self) -> list[ExplanationSet]:
        return [d.explanations for d in self.datasets]


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        return None if not np.isfinite(x) else float(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def dataset_metrics(eset: ExplanationSet, methods: Sequence[str], missing_as_empty=False,
                    cells: Sequence[CellResult] = ()) -> dict:
    """All per-dataset tables for the configured methods that are present."""
    present = [m for m in methods if m in set(eset.methods)]
    groups = {m: eset.groups.get(m, method_group(m)) for m in present}
    subsets = default_subsets(groups, present)
    table = aggregate([eset], subsets, missing_as_empty)
    out = {
        "dataset": eset.dataset,
        "classifier": eset.classifier,
        "features": eset.feature_names,
        "methods": present,
        "groups": groups,
        "explananda": len(eset.instances),
        "subsets": subsets,
        "exclusion": {s: table.exclusion[0, k] for k, s in enumerate(table.subsets)},
        "span": {s: table.span[0, k] for k, s in enumerate(table.subsets)},
        "sparsity": sparsity_by_method(eset, present, missing_as_empty),
        "coverage": coverage_by_method(eset, present),
        "matrices": {},
        "probe_index": probe_index(eset, present, missing_as_empty),
    }
    for kind in KINDS:
        M = pairwise_matrix(eset, kind, present, missing_as_empty)
        out["matrices"][kind] = M.values
    try:
        gd = group_disagreement(eset if not missing_as_empty else
                                pairwise_matrix(eset, "feature_disagreement", present, True),
                                groups) if present else {}
        out["group_disagreement"] = {m: {"group": g.group, "intra": g.intra, "inter": g.inter}
                                     for m, g in gd.items()}
    except MetricError as e:
        out["group_disagreement"] = {"error": str(e)}
    if cells:
        stats = {}
        for m in (m for m in present if m in GROUPS):
            mine = [c for c in cells if c.method == m]
            stats[m] = {"cells": len(mine), "found": sum(c.found for c in mine),
                        "invalid": sum(c.invalid for c in mine),
                        "mean_evaluations": float(np.mean([c.evaluations for c in mine])) if mine else 0.0}
        out["generation"] = stats
    return out


def summarize(runs: Sequence[DatasetRun], methods: Sequence[str], flags: Flags) -> dict:
    """Cross-dataset tables: averages, box plots, group means and the MDS embedding."""
    esets = [r.explanations for r in runs]
    names = ["Prox", "Plaus", "All CF", "All"]
    seen = [n for n in names if any(n in r.metrics["subsets"] for r in runs)]
    summary = {"subsets": seen, "exclusion": {}, "span": {}, "boxplot": {}}
    for metric in ("exclusion", "span"):
        for s in seen:
            col = [r.metrics[metric].get(s, np.nan) for r in runs]
            mean, std = column_summary(col)
            summary[metric][s] = {"average": mean, "std": std}
            vals = [v for v in col if v is not None and np.isfinite(v)]
            if vals:
                summary["boxplot"].setdefault(metric, {})[s] = boxplot_stats(vals).to_dict()
    group_means = {}
    for m in methods:
        rows = [r.metrics["group_disagreement"].get(m) for r in runs
                if isinstance(r.metrics.get("group_disagreement"), dict)]
        rows = [g for g in rows if isinstance(g, dict)]
        if rows:
            group_means[m] = {"group": rows[0]["group"],
                              "intra": column_summary([g["intra"] for g in rows])[0],
                              "inter": column_summary([g["inter"] for g in rows])[0],
                              "datasets": len(rows)}
    summary["group_disagreement"] = group_means
    present = [m for m in methods if any(m in e.methods for e in esets)]
    if len(present) >= 2:
        D = mds_input(esets, flags.mds_input, flags.mds_pooling, present, flags.missing_as_empty)
        emb = classical_mds(D, 2)
        summary["mds"] = {"input": flags.mds_input, "pooling": flags.mds_pooling, **emb.to_dict(),
                          "dissimilarity": D.values}
    return summary


def _load_imported(entry: DatasetEntry, feature_names, methods) -> ExplanationSet | None:
    if entry.explanations is None:
        return None
    try:
        eset = ExplanationSet.read(entry.explanations, feature_names)
    except OSError as e:
        raise DataError(f"cannot read explanations {entry.explanations}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise DataError(f"{entry.explanations}: invalid JSON ({e})") from None
    wanted = set(methods)
    return ExplanationSet(eset.dataset, eset.classifier, feature_names,
                          [r for r in eset.records if r.method in wanted])


def _make_model(cfg: AuditConfig, train: Dataset) -> tuple[PredictionModel, str]:
    if "bridge" in cfg.model:
        b = cfg.model["bridge"]
        command = b["command"] if isinstance(b, dict) else b
        timeout = b.get("timeout", 60.0) if isinstance(b, dict) else 60.0
        m = bridge_model(command, train, timeout=timeout, threshold=cfg.threshold)
        return m, "bridge"
    return train_forest(train, cfg.forest_config(), cfg.threshold), "RF"


def _run_dataset(cfg: AuditConfig, entry: DatasetEntry, jobs: int, log) -> DatasetRun:
    spec = read_schema(entry.schema)
    feature_names = [f["name"] for f in spec["features"]]
    imported = _load_imported(entry, feature_names, cfg.methods)
    if entry.csv is None:
        name = spec.get("name") or (imported.dataset if imported and imported.dataset else Path(entry.schema).stem)
        eset = ExplanationSet(name, imported.classifier, feature_names, imported.records)
        log(f"{name}: {len(eset)} imported explanations")
        return DatasetRun(name, eset, dataset_metrics(eset, cfg.methods, cfg.flags.missing_as_empty))

    data = load_dataset(entry.csv, entry.schema)
    split = cfg.split_spec()
    train, test = split_train_test(data, split)
    model, classifier = _make_model(cfg, train)
    try:
        score_auc = auc(model, test)
    except ModelError:
        score_auc = float("nan")
    explananda = test.subset(sample_explananda(test, split))
    already = set(imported.methods) if imported else set()
    todo = [m for m in cfg.methods if m not in already and (m in GROUPS or m in BASELINES)]
    ctx = _Context(data.name, model, train, explananda, SearchSpace(model, train), cfg.generator_config(),
                   cfg.seed, int(cfg.shap.get("samples", 1000)), int(cfg.shap.get("background", 100)),
                   cfg.flags.shap_k, cfg.flags.shap_signed, dict(cfg.anchors))
    cells = [(m, r) for m in todo for r in range(len(explananda))]
    log(f"{data.name}: {len(train)} train / {len(test)} test, AUC {score_auc:.3f}, {len(cells)} cells")
    t0 = time.perf_counter()
    results = _run_cells(ctx, cells, jobs)
    log(f"{data.name}: cells done in {time.perf_counter() - t0:.1f}s")

    eset = ExplanationSet(data.name, imported.classifier if imported else classifier, data.feature_names)
    by_key = {(c.method, c.origin_id): c for c in results}
    for m in cfg.methods:
        if m in already:
            for r in imported.records:
                if r.method == m:
                    eset.add(r)
            continue
        for oid in explananda.ids:
            c = by_key.get((m, oid))
            if c is not None:
                eset.add(Explanation(m, oid, frozenset(c.features), c.found, method_group(m)))
    metrics = dataset_metrics(eset, cfg.methods, cfg.flags.missing_as_empty, results)
    metrics.update(n_train=len(train), n_test=len(test), auc=score_auc)
    return DatasetRun(data.name, eset, metrics, results, explananda, model, train)


def run_audit(cfg: AuditConfig, output=None, jobs: int = 1, log=None) -> AuditReport:
    """Run every configured cell, compute all tables and (optionally) write them to ``output``."""
    log = log or (lambda msg: None)
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    started = time.time()
    runs = []
    for entry in cfg.datasets:
        for path in (entry.schema, entry.csv, entry.explanations):
            if path is not None and not os.path.isfile(path):
                raise DataError(f"cannot read {path}")
        runs.append(_run_dataset(cfg, entry, jobs, log))
    names = [r.name for r in runs]
    if len(set(names)) != len(names):
        raise ConfigError(f"dataset names must be unique, got {names}")
    payload = _jsonable({
        "seed": cfg.seed,
        "methods": cfg.methods,
        "datasets": {r.name: r.metrics for r in runs},
        "dataset_order": names,
        "summary": summarize(runs, cfg.methods, cfg.flags),
    })
    report = AuditReport(cfg, runs, payload)
    out = output or cfg.output
    if out is not None:
        write_report(report, out, jobs=jobs, started=started)
    return report


# --------------------------------------------------------------------------
# writing


def _fmt(v) -> str:
    return "" if v is None or not np.isfinite(v) else f"{100 * v:.1f}"


def _markdown_table(title, columns, rows) -> str:
    lines = [f"### {title}", "", "| " + " | ".join(columns) + " |",
             "|---|" + "---:|" * (len(columns) - 1)]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n\n"


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _write_matrix(path, methods, values, digits=6):
    DisagreementMatrix(list(methods), np.asarray(values, dtype=float).reshape(len(methods), len(methods)),
                       "l0").to_csv(path, digits)


def write_tables(payload: dict, out: Path) -> None:
    """Markdown and CSV tables in the layout of the published result tables."""
    names = payload["dataset_order"]
    summary = payload["summary"]
    subsets = summary["subsets"]
    md = []
    for metric, title in (("exclusion", "Relative feature exclusion (%)"),
                          ("span", "Relative feature span (%)")):
        rows = [[n] + [_fmt(payload["datasets"][n][metric].get(s)) for s in subsets] for n in names]
        rows.append(["Average"] + [_fmt(summary[metric][s]["average"]) for s in subsets])
        rows.append(["Standard Deviation"] + [_fmt(summary[metric][s]["std"]) for s in subsets])
        md.append(_markdown_table(title, ["Dataset"] + subsets, rows))
        with open(out / f"{metric}.csv", "w", encoding="utf-8") as fh:
            fh.write(",".join(["dataset"] + subsets) + "\n")
            for r in rows:
                fh.write(",".join(r) + "\n")
    gd = summary["group_disagreement"]
    if gd:
        rows = [[m, g["group"], _fmt(g["intra"]), _fmt(g["inter"])] for m, g in gd.items()]
        md.append(_markdown_table("Feature disagreement within and across groups (%)",
                                  ["Method", "Group", "Intra", "Inter"], rows))
    methods = payload["methods"]
    cov_rows = [[n] + [_fmt(payload["datasets"][n]["coverage"].get(m)) for m in methods] for n in names]
    md.append(_markdown_table("Coverage (%)", ["Dataset"] + methods, cov_rows))
    sp_rows = [[n] + [_fmt(payload["datasets"][n]["sparsity"].get(m)) for m in methods] for n in names]
    md.append(_markdown_table("Sparsity (%)", ["Dataset"] + methods, sp_rows))
    with open(out / "tables.md", "w", encoding="utf-8") as fh:
        fh.write("".join(md))


def write_report(report: AuditReport, output, jobs: int = 1, started: float | None = None) -> Path:
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    payload = report.payload
    _write_json(out / "report.json", payload)
    write_tables(payload, out)
    summary = payload["summary"]
    _write_json(out / "boxplot.json", summary.get("boxplot", {}))
    if "mds" in summary:
        with open(out / "mds.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "x", "y"])
            for m, (x, y) in zip(summary["mds"]["methods"], summary["mds"]["coordinates"]):
                w.writerow([m, f"{x:.9f}", f"{y:.9f}"])
    for run in report.datasets:
        d = out / run.name
        d.mkdir(exist_ok=True)
        run.explanations.write(d / "explanations.json")
        dm = payload["datasets"][run.name]
        for kind, fname in MATRIX_FILES.items():
            _write_matrix(d / f"{fname}.csv", dm["methods"],
                          [np.nan if v is None else v for row in dm["matrices"][kind] for v in row])
    manifest = {
        "config_sha256": report.config.digest(),
        "seed": report.config.seed,
        "jobs": jobs,
        "versions": {"cfaudit": __version__, "numpy": np.__version__, "scikit-learn": sklearn.__version__,
                     "python": platform.python_version()},
        "started": started,
        "finished": time.time(),
    }
    _write_json(out / "manifest.json", manifest)
    return out


def metrics_from_file(explanations, schema, methods: Sequence[str] | None = None,
                      flags: Flags = Flags()) -> AuditReport:
    """Report for an imported interchange file alone (no data, no model)."""
    spec = read_schema(schema)
    names = [f["name"] for f in spec["features"]]
    try:
        eset = ExplanationSet.read(explanations, names)
    except OSError as e:
        raise DataError(f"cannot read explanations {explanations}: {e.strerror}") from None
    methods = list(methods or eset.methods)
    cfg = AuditConfig([DatasetEntry(str(schema), None, str(explanations))], methods, flags=flags)
    if not eset.dataset:
        eset.dataset = spec.get("name") or Path(explanations).stem
    run = DatasetRun(eset.dataset, eset, dataset_metrics(eset, methods, flags.missing_as_empty))
    payload = _jsonable({"seed": cfg.seed, "methods": methods, "datasets": {run.name: run.metrics},
                         "dataset_order": [run.name], "summary": summarize([run], methods, flags)})
    return AuditReport(cfg, [run], payload)
