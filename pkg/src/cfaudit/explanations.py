"""Explanations as feature-index sets, and the JSON interchange format.

Interchange layout::

    {"dataset": str, "classifier": str,
     "records": [{"method": str, "group": "Plaus"|"Prox"|"Other",
                  "instance": str, "found": bool, "features": [feature names]}]}
"""
from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .attrib import AnchorRule, Attribution
from .cfgen import OTHER, PLAUS, PROX, Counterfactual, method_group
from .exceptions import DataError

GROUP_NAMES = (PLAUS, PROX, OTHER)


@dataclass(frozen=True)
class Explanation:
    method: str
    origin_id: str
    features: frozenset = frozenset()
    found: bool = True
    group: str = OTHER

    def __post_init__(self):
        object.__setattr__(self, "features", frozenset(int(f) for f in self.features))
        if not self.found and self.features:
            raise DataError(f"{self.method}/{self.origin_id}: a missing explanation cannot name features")
        if self.group not in GROUP_NAMES:
            raise DataError(f"{self.method}: unknown group {self.group!r}")

    def __len__(self):
        return len(self.features)


class ExplanationSet:
    """All explanations for one (dataset, classifier) pair."""

    def __init__(self, dataset: str, classifier: str, feature_names: Sequence[str],
                 records: Iterable[Explanation] = ()):
        self.dataset = dataset
        self.classifier = classifier
        self.feature_names = list(feature_names)
        self.records: list[Explanation] = []
        self._keys = set()
        for r in records:
            self.add(r)

    def add(self, r: Explanation) -> None:
        key = (r.method, r.origin_id)
        if key in self._keys:
            raise DataError(f"duplicate explanation for method {r.method!r}, instance {r.origin_id!r}")
        if any(f < 0 or f >= len(self.feature_names) for f in r.features):
            raise DataError(f"{r.method}/{r.origin_id}: feature index out of range")
        self._keys.add(key)
        self.records.append(r)

    def __len__(self):
        return len(self.records)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def methods(self) -> list[str]:
        return list(OrderedDict.fromkeys(r.method for r in self.records))

    @property
    def instances(self) -> list[str]:
        return list(OrderedDict.fromkeys(r.origin_id for r in self.records))

    @property
    def groups(self) -> dict[str, str]:
        return {r.method: r.group for r in self.records}

    def by_instance(self) -> dict[str, dict[str, Explanation]]:
        out: dict[str, dict[str, Explanation]] = OrderedDict()
        for r in self.records:
            out.setdefault(r.origin_id, OrderedDict())[r.method] = r
        return out

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "classifier": self.classifier,
            "records": [
                {"method": r.method, "group": r.group, "instance": r.origin_id, "found": r.found,
                 "features": [self.feature_names[f] for f in sorted(r.features)]}
                for r in self.records
            ],
        }

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def from_dict(cls, payload: dict, feature_names: Sequence[str]) -> "ExplanationSet":
        lookup = {name: i for i, name in enumerate(feature_names)}
        try:
            out = cls(payload.get("dataset", ""), payload.get("classifier", ""), feature_names)
            for rec in payload["records"]:
                try:
                    feats = [lookup[name] for name in rec.get("features", [])]
                except KeyError as e:
                    raise DataError(f"unknown feature {e.args[0]!r} in record "
                                    f"{rec.get('method')}/{rec.get('instance')}") from None
                out.add(Explanation(str(rec["method"]), str(rec["instance"]), frozenset(feats),
                                    bool(rec.get("found", True)),
                                    rec.get("group") or method_group(str(rec["method"]))))
        except (KeyError, TypeError) as e:
            raise DataError(f"malformed explanation file: {e}") from None
        return out

    @classmethod
    def read(cls, path, feature_names: Sequence[str]) -> "ExplanationSet":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), feature_names)


def diff_features(a, b) -> frozenset:
    """Indices where two instances differ (strict inequality, no epsilon)."""
    if len(a) != len(b):
        raise DataError(f"schema mismatch: {len(a)} vs {len(b)} values")
    out = []
    for i, (u, v) in enumerate(zip(a, b)):
        if isinstance(u, str) or isinstance(v, str):
            if str(u) != str(v):
                out.append(i)
        elif float(u) != float(v):
            out.append(i)
    return frozenset(out)


def diff_to_explanation(orig, cf: Counterfactual, group: str | None = None) -> Explanation:
    """Features the counterfactual changes relative to ``orig``."""
    group = group or method_group(cf.method)
    if not cf.found:
        return Explanation(cf.method, cf.origin_id, frozenset(), False, group)
    return Explanation(cf.method, cf.origin_id, diff_features(list(orig), list(cf.instance)), True, group)


def topk_to_explanation(a: Attribution | np.ndarray, k: int = 7, method: str = "SHAP",
                        origin_id: str = "", signed: bool = False) -> Explanation:
    """The ``k`` features of largest |importance| (or largest signed value); ties to lower index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    values = a.values if isinstance(a, Attribution) else np.asarray(a, dtype=float)
    key = values if signed else np.abs(values)
    order = np.lexsort((np.arange(len(key)), -key))
    return Explanation(method, origin_id, frozenset(order[:k].tolist()), True, method_group(method))


def rule_to_explanation(r: AnchorRule, method: str = "Anchors", origin_id: str = "") -> Explanation:
    return Explanation(method, origin_id, frozenset(r.features), True, method_group(method))
