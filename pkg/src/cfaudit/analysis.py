"""Dataset-level aggregation, box-plot summaries and classical MDS embeddings."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import MetricError
from .explanations import ExplanationSet
from .metrics import (DisagreementMatrix, _nanmean, pairwise_cells, relative_feature_exclusion,
                      relative_feature_span)


@dataclass(frozen=True)
class BoxplotStats:
    average: float
    median: float
    lower_quartile: float
    upper_quartile: float
    lower_whisker: float
    upper_whisker: float

    def to_dict(self) -> dict:
        return asdict(self)


def boxplot_stats(values: Sequence[float]) -> BoxplotStats:
    """Mean, median, linearly interpolated quartiles, whiskers at min/max."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise MetricError("boxplot of an empty list")
    q1, med, q3 = np.percentile(v, [25, 50, 75], method="linear")
    return BoxplotStats(float(v.mean()), float(med), float(q1), float(q3), float(v.min()), float(v.max()))


def column_summary(values: Sequence[float], ddof: int = 1) -> tuple[float, float]:
    """(mean, standard deviation) of a per-dataset column, NaNs skipped.

    ``ddof=1`` (default) gives the sample deviation, ``ddof=0`` the
    population one; a single value has deviation 0.
    """
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=ddof)) if v.size > ddof else 0.0


def default_subsets(groups: Mapping[str, str], methods: Sequence[str]) -> dict[str, list[str]]:
    """The Prox / Plaus / All CF / All columns for the methods present."""
    prox = [m for m in methods if groups.get(m) == "Prox"]
    plaus = [m for m in methods if groups.get(m) == "Plaus"]
    out = {}
    if prox:
        out["Prox"] = prox
    if plaus:
        out["Plaus"] = plaus
    if prox or plaus:
        out["All CF"] = [m for m in methods if groups.get(m) in ("Prox", "Plaus")]
    out["All"] = list(methods)
    return out


def instance_metrics(eset: ExplanationSet, subset: Sequence[str], missing_as_empty=False):
    """Per-explanandum (exclusion, span) arrays for one method subset; instances with no usable explanation are skipped."""
    wanted = set(subset)
    excl, span = [], []
    for recs in eset.by_instance().values():
        es = [r for m, r in recs.items() if m in wanted and (r.found or missing_as_empty)]
        if not es:
            continue
        excl.append(relative_feature_exclusion(es, eset.n_features, missing_as_empty))
        span.append(relative_feature_span(es, eset.n_features, missing_as_empty))
    return np.array(excl), np.array(span)


@dataclass
class AggregateTable:
    subsets: list[str]
    datasets: list[str]
    exclusion: np.ndarray   # (datasets, subsets)
    span: np.ndarray
    ddof: int = 1

    @classmethod
    def from_columns(cls, datasets: Sequence[str], span: Mapping[str, Sequence[float]] | None = None,
                     exclusion: Mapping[str, Sequence[float]] | None = None, ddof: int = 1) -> "AggregateTable":
        """Table from already computed per-dataset columns (e.g. published results)."""
        subsets = list(span or exclusion or {})
        shape = (len(datasets), len(subsets))

        def stack(cols):
            if cols is None:
                return np.full(shape, np.nan)
            out = np.column_stack([np.asarray(cols[s], dtype=float) for s in subsets])
            if out.shape != shape:
                raise MetricError(f"columns must hold one value per dataset ({len(datasets)})")
            return out

        return cls(subsets, list(datasets), stack(exclusion), stack(span), ddof)

    def summary(self, metric: str) -> dict[str, dict[str, float]]:
        table = getattr(self, metric)
        out = {}
        for k, s in enumerate(self.subsets):
            mean, std = column_summary(table[:, k], self.ddof)
            out[s] = {"average": mean, "std": std}
        return out

    def to_dict(self) -> dict:
        rows = {}
        for i, d in enumerate(self.datasets):
            rows[d] = {s: {"exclusion": _clean(self.exclusion[i, k]), "span": _clean(self.span[i, k])}
                       for k, s in enumerate(self.subsets)}
        return {
            "subsets": self.subsets,
            "datasets": rows,
            "average": {m: {s: _clean(v["average"]) for s, v in self.summary(m).items()}
                        for m in ("exclusion", "span")},
            "std": {m: {s: _clean(v["std"]) for s, v in self.summary(m).items()}
                    for m in ("exclusion", "span")},
        }

    def to_markdown(self, metric: str) -> str:
        table = getattr(self, metric)
        lines = ["| Dataset | " + " | ".join(self.subsets) + " |",
                 "|---|" + "---:|" * len(self.subsets)]
        fmt = lambda v: "" if np.isnan(v) else f"{100 * v:.1f}"
        for i, d in enumerate(self.datasets):
            lines.append(f"| {d} | " + " | ".join(fmt(v) for v in table[i]) + " |")
        summ = self.summary(metric)
        lines.append("| Average | " + " | ".join(fmt(summ[s]["average"]) for s in self.subsets) + " |")
        lines.append("| Standard Deviation | " + " | ".join(fmt(summ[s]["std"]) for s in self.subsets) + " |")
        return "\n".join(lines) + "\n"


def _clean(v):
    return None if v is None or np.isnan(v) else float(v)


def aggregate(esets: ExplanationSet | Sequence[ExplanationSet], method_subsets: Mapping[str, Sequence[str]],
              missing_as_empty=False) -> AggregateTable:
    """Average exclusion and span over explananda, per dataset and named method subset."""
    if isinstance(esets, ExplanationSet):
        esets = [esets]
    names = list(method_subsets)
    for s, ms in method_subsets.items():
        if not ms:
            raise MetricError(f"method subset {s!r} is empty")
    excl = np.full((len(esets), len(names)), np.nan)
    span = np.full_like(excl, np.nan)
    for i, es in enumerate(esets):
        available = set(es.methods)
        for k, s in enumerate(names):
            missing = [m for m in method_subsets[s] if m not in available]
            if len(missing) == len(method_subsets[s]):
                continue
            e, sp = instance_metrics(es, method_subsets[s], missing_as_empty)
            if len(e):
                excl[i, k] = e.mean()
                span[i, k] = sp.mean()
    return AggregateTable(names, [e.dataset for e in esets], excl, span)


# --------------------------------------------------------------------------
# classical MDS


def jacobi_eigh(A, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors as columns), eigenvalues descending.
    """
    A = np.array(A, dtype=float)
    n = len(A)
    V = np.eye(n)
    scale = max(1.0, np.linalg.norm(A))
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-20 * scale:
                    # negligible: drop it rather than rotate by a vanishing angle
                    A[p, q] = A[q, p] = 0.0
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta == 0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap, aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    evals = np.diag(A).copy()
    order = np.argsort(-evals, kind="stable")
    return evals[order], V[:, order]


@dataclass
class MdsEmbedding:
    methods: list[str]
    coordinates: np.ndarray
    stress: float
    eigenvalues: np.ndarray

    def to_csv(self, path, digits: int = 9) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            dims = self.coordinates.shape[1]
            w.writerow(["method"] + (["x", "y"] if dims == 2 else [f"dim{k}" for k in range(dims)]))
            for m, row in zip(self.methods, self.coordinates):
                w.writerow([m] + [f"{v:.{digits}f}" for v in row])

    def to_dict(self) -> dict:
        return {"methods": self.methods,
                "coordinates": [[float(v) for v in row] for row in self.coordinates],
                "stress": float(self.stress)}


class ClassicalMDS(BaseEstimator):
    """Torgerson scaling of a dissimilarity matrix.

    Attributes after ``fit``: ``embedding_`` (n, n_components),
    ``eigenvalues_`` (all, descending), ``stress_`` (Kruskal stress-1 of the
    reconstructed distances; nonzero when the input is not Euclidean in
    ``n_components`` dimensions).
    """

    def __init__(self, n_components=2, tol=1e-12):
        self.n_components = n_components
        self.tol = tol

    def fit(self, D, y=None):
        D = np.asarray(D, dtype=float)
        if D.ndim != 2 or D.shape[0] != D.shape[1]:
            raise MetricError("dissimilarity matrix must be square")
        if not np.all(np.isfinite(D)):
            raise MetricError("dissimilarity matrix has non-finite entries")
        if np.any(D < 0):
            raise MetricError("dissimilarity matrix has negative entries")
        if not np.allclose(D, D.T, atol=1e-9, rtol=0):
            raise MetricError("dissimilarity matrix is not symmetric")
        if np.any(np.abs(np.diag(D)) > 1e-9):
            raise MetricError("dissimilarity matrix needs a zero diagonal")
        n = len(D)
        J = np.eye(n) - np.full((n, n), 1.0 / n)
        B = -0.5 * J @ (D ** 2) @ J
        evals, evecs = jacobi_eigh(B, tol=self.tol)
        k = min(self.n_components, n)
        lam = np.clip(evals[:k], 0.0, None)
        X = evecs[:, :k] * np.sqrt(lam)
        for c in range(k):
            nz = np.flatnonzero(np.abs(X[:, c]) > 1e-12)
            if len(nz) and X[nz[0], c] < 0:
                X[:, c] = -X[:, c]
        if k < self.n_components:
            X = np.hstack([X, np.zeros((n, self.n_components - k))])
        X = X - X.mean(axis=0)
        self.embedding_ = X
        self.eigenvalues_ = evals
        Dhat = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2))
        denom = np.sum(D ** 2)
        self.stress_ = float(np.sqrt(np.sum((D - Dhat) ** 2) / denom)) if denom > 0 else 0.0
        return self

    def fit_transform(self, D, y=None):
        return self.fit(D).embedding_


def classical_mds(dissimilarity: DisagreementMatrix | np.ndarray, dims: int = 2,
                  methods: Sequence[str] | None = None) -> MdsEmbedding:
    if isinstance(dissimilarity, DisagreementMatrix):
        methods = dissimilarity.methods
        D = dissimilarity.values
    else:
        D = np.asarray(dissimilarity, dtype=float)
        methods = list(methods) if methods is not None else [str(i) for i in range(len(D))]
    est = ClassicalMDS(n_components=dims).fit(D)
    return MdsEmbedding(list(methods), est.embedding_, est.stress_, est.eigenvalues_)


def mds_input(esets: Sequence[ExplanationSet], mode: str = "jaccard", pooling: str = "global",
              methods: Sequence[str] | None = None, missing_as_empty=False) -> DisagreementMatrix:
    """Method dissimilarity matrix for MDS.

    ``mode="jaccard"`` averages Jaccard dissimilarity; ``mode="l0"`` uses the
    raw shared-feature ratio with the diagonal forced to 0.  ``pooling``
    either averages all instance cells together ("global") or averages
    per-dataset matrices ("per-dataset").  Pairs never observed together get
    the maximal dissimilarity (1) or, for l0, 0.
    """
    if mode not in ("jaccard", "l0"):
        raise MetricError(f"unknown MDS input {mode!r}")
    if pooling not in ("global", "per-dataset"):
        raise MetricError(f"unknown pooling {pooling!r}")
    if methods is None:
        seen = {}
        for es in esets:
            for m in es.methods:
                seen.setdefault(m, None)
        methods = list(seen)
    kind = "jaccard_dissim" if mode == "jaccard" else "l0"
    per = [pairwise_cells(es, kind, methods, missing_as_empty) for es in esets]
    if pooling == "global":
        values = _nanmean(np.concatenate(per, axis=0), axis=0)
    else:
        values = _nanmean(np.stack([_nanmean(p, axis=0) for p in per]), axis=0)
    values = np.where(np.isnan(values), 1.0 if mode == "jaccard" else 0.0, values)
    values = 0.5 * (values + values.T)
    np.fill_diagonal(values, 0.0)
    return DisagreementMatrix(list(methods), values, kind)
