"""Set-based disagreement metrics between explanations of one instance.

Explanations with ``found=False`` are dropped before evaluation unless
``missing_as_empty`` is set, in which case they count as empty sets.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .cfgen import OTHER
from .exceptions import MetricError
from .explanations import Explanation, ExplanationSet

KINDS = ("feature_disagreement", "l0", "jaccard_sim", "jaccard_dissim")


@dataclass(frozen=True)
class FeatureSpace:
    size: int
    names: tuple = ()

    def __post_init__(self):
        if self.size < 1:
            raise MetricError("a feature space needs at least one feature")

    def __len__(self):
        return self.size

    @classmethod
    def of(cls, names: Sequence[str]) -> "FeatureSpace":
        return cls(len(names), tuple(names))


def _size(f) -> int:
    n = f.size if isinstance(f, FeatureSpace) else int(f)
    if n < 1:
        raise MetricError("a feature space needs at least one feature")
    return n


def _sets(es: Iterable[Explanation], missing_as_empty=False) -> list[frozenset]:
    out = [e.features for e in es if e.found or missing_as_empty]
    if not out:
        raise MetricError("no explanations left after dropping missing ones")
    return out


def relative_feature_exclusion(es: Iterable[Explanation], f, missing_as_empty=False) -> float:
    """Share of features absent from at least one explanation."""
    n = _size(f)
    common = frozenset.intersection(*_sets(es, missing_as_empty))
    # |U (F \ E_i)| = |F \ n E_i|
    return (n - len(common)) / n


def relative_feature_span(es: Iterable[Explanation], f, missing_as_empty=False) -> float:
    """Share of features present in at least one explanation."""
    return len(frozenset.union(*_sets(es, missing_as_empty))) / _size(f)


def _features(e) -> frozenset:
    return e.features if isinstance(e, Explanation) else frozenset(e)


def scaled_l0(a, b, f) -> float:
    """|E_a & E_b| / |F| -- an overlap, despite the historical name."""
    return len(_features(a) & _features(b)) / _size(f)


def feature_disagreement(a, b) -> float:
    """|E_a \\ E_b| / |E_a|; asymmetric, undefined for empty E_a."""
    A, B = _features(a), _features(b)
    if not A:
        raise MetricError("feature disagreement is undefined for an empty first explanation")
    return len(A - B) / len(A)


def jaccard(a, b) -> tuple[float, float]:
    """(similarity, dissimilarity); undefined when both sets are empty."""
    A, B = _features(a), _features(b)
    union = A | B
    if not union:
        raise MetricError("Jaccard index is undefined for two empty explanations")
    sim = len(A & B) / len(union)
    return sim, 1.0 - sim


def sparsity(a, f) -> float:
    return len(_features(a)) / _size(f)


@dataclass(frozen=True)
class ProbeResult:
    possible: bool
    witnesses: tuple[str, ...]


def probe(es: Sequence[Explanation], feature: int, mode: str, n_features: int | None = None,
          missing_as_empty=False) -> ProbeResult:
    """Can a method be picked whose explanation omits (exclude) or names (include) ``feature``?"""
    if mode not in ("exclude", "include"):
        raise MetricError(f"mode must be 'exclude' or 'include', got {mode!r}")
    if feature < 0 or (n_features is not None and feature >= n_features):
        raise MetricError(f"feature index {feature} out of range")
    kept = [e for e in es if e.found or missing_as_empty]
    if not kept:
        raise MetricError("no explanations left after dropping missing ones")
    want = mode == "include"
    witnesses = tuple(e.method for e in kept if (feature in e.features) == want)
    return ProbeResult(bool(witnesses), witnesses)


# --------------------------------------------------------------------------
# matrices over an explanation set


@dataclass
class DisagreementMatrix:
    methods: list[str]
    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MetricError(f"unknown matrix kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=float)

    def cell(self, a: str, b: str) -> float:
        return float(self.values[self.methods.index(a), self.methods.index(b)])

    def to_csv(self, path, digits: int = 6) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["method"] + self.methods)
            for m, row in zip(self.methods, self.values):
                w.writerow([m] + ["" if np.isnan(v) else f"{v:.{digits}f}" for v in row])

    @classmethod
    def from_csv(cls, path, kind: str = "jaccard_dissim") -> "DisagreementMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
        if not rows:
            raise MetricError(f"{path}: empty matrix file")
        methods = rows[0][1:]
        if [r[0] for r in rows[1:]] != methods:
            raise MetricError(f"{path}: row labels must repeat the header's method names")
        values = [[float(v) if v != "" else np.nan for v in r[1:]] for r in rows[1:]]
        return cls(methods, np.array(values, dtype=float).reshape(len(methods), len(methods)), kind)


def _cell(kind, a: frozenset, b: frozenset, n: int) -> float:
    if kind == "feature_disagreement":
        return len(a - b) / len(a) if a else np.nan
    if kind == "l0":
        return len(a & b) / n
    union = a | b
    if not union:
        return np.nan
    sim = len(a & b) / len(union)
    return sim if kind == "jaccard_sim" else 1.0 - sim


def pairwise_cells(eset: ExplanationSet, kind: str, methods: Sequence[str] | None = None,
                   missing_as_empty=False) -> np.ndarray:
    """(instances, methods, methods) array of per-instance cells; NaN where undefined."""
    if kind not in KINDS:
        raise MetricError(f"unknown matrix kind {kind!r}")
    methods = list(methods or eset.methods)
    n = eset.n_features
    table = eset.by_instance()
    out = np.full((len(table), len(methods), len(methods)), np.nan)
    for t, recs in enumerate(table.values()):
        sets = [recs[m].features if m in recs and (recs[m].found or missing_as_empty) else None
                for m in methods]
        for i, a in enumerate(sets):
            if a is None:
                continue
            for j, b in enumerate(sets):
                if b is not None:
                    out[t, i, j] = _cell(kind, a, b, n)
    return out


def _nanmean(a, axis=None):
    a = np.asarray(a, dtype=float)
    count = np.sum(~np.isnan(a), axis=axis)
    total = np.nansum(a, axis=axis)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)


def pairwise_matrix(eset: ExplanationSet, kind: str, methods: Sequence[str] | None = None,
                    missing_as_empty=False) -> DisagreementMatrix:
    """Per-instance cells averaged over explananda, undefined cells skipped."""
    methods = list(methods or eset.methods)
    cells = pairwise_cells(eset, kind, methods, missing_as_empty)
    values = _nanmean(cells, axis=0) if len(cells) else np.full((len(methods),) * 2, np.nan)
    return DisagreementMatrix(methods, values, kind)


def sparsity_by_method(eset: ExplanationSet, methods: Sequence[str] | None = None,
                       missing_as_empty=False) -> dict[str, float]:
    out = {}
    for m in methods or eset.methods:
        vals = [len(r.features) / eset.n_features for r in eset.records
                if r.method == m and (r.found or missing_as_empty)]
        out[m] = float(np.mean(vals)) if vals else float("nan")
    return out


def coverage_by_method(eset: ExplanationSet, methods: Sequence[str] | None = None) -> dict[str, float]:
    out = {}
    for m in methods or eset.methods:
        recs = [r for r in eset.records if r.method == m]
        out[m] = sum(r.found for r in recs) / len(recs) if recs else float("nan")
    return out


@dataclass(frozen=True)
class GroupDisagreement:
    group: str
    intra: float
    inter: float


def group_disagreement(eset: ExplanationSet | DisagreementMatrix, groups: dict[str, str],
                       missing_as_empty=False) -> dict[str, GroupDisagreement]:
    """Mean feature disagreement of each method with its own group vs. the other groups.

    Methods in the ``Other`` group take no part.  Means are taken over the
    explanandum-averaged disagreement matrix, skipping undefined cells.
    """
    methods = [m for m in (eset.methods) if groups.get(m, OTHER) != OTHER]
    members: dict[str, list[str]] = {}
    for m in methods:
        members.setdefault(groups[m], []).append(m)
    for g, ms in members.items():
        if len(ms) < 2:
            raise MetricError(f"group {g!r} needs at least 2 methods, has {ms}")
    if isinstance(eset, DisagreementMatrix):
        if eset.kind != "feature_disagreement":
            raise MetricError("group disagreement needs a feature_disagreement matrix")
        M = DisagreementMatrix(methods, eset.values[np.ix_([eset.methods.index(m) for m in methods],
                                                           [eset.methods.index(m) for m in methods])],
                               eset.kind)
    else:
        M = pairwise_matrix(eset, "feature_disagreement", methods, missing_as_empty)
    out = {}
    for i, m in enumerate(methods):
        same = [j for j, n in enumerate(methods) if n != m and groups[n] == groups[m]]
        other = [j for j, n in enumerate(methods) if groups[n] != groups[m]]
        intra = _nanmean(M.values[i, same]) if same else np.nan
        inter = _nanmean(M.values[i, other]) if other else np.nan
        out[m] = GroupDisagreement(groups[m], float(intra), float(inter))
    return out


def probe_index(eset: ExplanationSet, methods: Sequence[str] | None = None,
                missing_as_empty=False) -> dict[str, dict[str, float]]:
    """Per feature: share of explananda where it can be excluded / included."""
    methods = set(methods or eset.methods)
    excl = np.zeros(eset.n_features)
    incl = np.zeros(eset.n_features)
    count = 0
    for recs in eset.by_instance().values():
        es = [r for m, r in recs.items() if m in methods and (r.found or missing_as_empty)]
        if not es:
            continue
        count += 1
        for j in range(eset.n_features):
            excl[j] += any(j not in e.features for e in es)
            incl[j] += any(j in e.features for e in es)
    if count:
        excl /= count
        incl /= count
    return {name: {"excludable": float(excl[j]), "includable": float(incl[j])}
            for j, name in enumerate(eset.feature_names)}
