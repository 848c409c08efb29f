"""Binary scorers: a bagged CART ensemble and a bridge to external processes.

Every model exposes ``score(X)`` returning P(positive) for a matrix of
instance codes (see :mod:`cfaudit.data`) and ``predict(X)`` applying the
label threshold.
"""
from __future__ import annotations

import json
import queue
import shlex
import subprocess
import sys
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset, TabularEncoder
from .exceptions import BridgeError, DataError, ModelError


class PredictionModel:
    """Abstract binary scorer over instance codes."""

    threshold: float = 0.5
    feature_names: list[str]

    def score(self, X) -> np.ndarray:
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        return (self.score(X) >= self.threshold).astype(int)

    def _check(self, X) -> np.ndarray:
        if isinstance(X, Dataset):
            X = X.X
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :] if X.size else X.reshape(0, len(self.feature_names))
        if X.shape[1] != len(self.feature_names):
            raise DataError(f"schema mismatch: model expects {len(self.feature_names)} "
                            f"features, got {X.shape[1]}")
        return X


def score_batch(model: PredictionModel, batch) -> np.ndarray:
    """Scores in [0, 1], one per row, order preserved."""
    return model.score(batch)


class FunctionModel(PredictionModel):
    """Wraps a vectorised ``f(codes) -> P(positive)`` callable."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], feature_names, threshold: float = 0.5):
        self.fn = fn
        self.feature_names = list(feature_names)
        self.threshold = threshold

    def score(self, X) -> np.ndarray:
        X = self._check(X)
        s = np.asarray(self.fn(X), dtype=float).reshape(len(X))
        if len(s) and (not np.all(np.isfinite(s)) or s.min() < 0 or s.max() > 1):
            raise ModelError("scores must be finite and within [0, 1]")
        return s


# --------------------------------------------------------------------------
# CART trees


@dataclass
class _Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray   # positive fraction at the node
    depth: int


def _best_split(X, y, order, n_try, min_leaf):
    n = len(y)
    tot = y.sum()
    best = (np.inf, -1, 0.0)
    tried = 0
    nl = np.arange(1, n)
    nr = n - nl
    size_ok = (nl >= min_leaf) & (nr >= min_leaf)
    for f in order:
        x = X[:, f]
        if x[0] == x.min() == x.max():
            continue
        tried += 1
        o = np.argsort(x, kind="stable")
        xs = x[o]
        cpos = np.cumsum(y[o])[:-1]
        pl = cpos / nl
        pr = (tot - cpos) / nr
        imp = nl * pl * (1 - pl) + nr * pr * (1 - pr)
        ok = size_ok & (xs[1:] > xs[:-1])
        if ok.any():
            imp = np.where(ok, imp, np.inf)
            k = int(np.argmin(imp))
            if imp[k] < best[0]:
                best = (imp[k], int(f), 0.5 * (xs[k] + xs[k + 1]))
        if tried >= n_try:
            break
    return best[1], best[2]


def _grow_tree(X, y, rng, max_depth, min_leaf, n_try) -> _Tree:
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(len(left))
        right.append(len(right))
        value.append(float(y[idx].mean()))
        return len(feature) - 1

    stack = [(new_node(np.arange(len(y))), np.arange(len(y)), 0)]
    depth_seen = 0
    p = X.shape[1]
    while stack:
        node, idx, depth = stack.pop()
        depth_seen = max(depth_seen, depth)
        yn = y[idx]
        if depth >= max_depth or len(idx) < 2 * min_leaf or yn.min() == yn.max():
            continue
        f, t = _best_split(X[idx], yn, rng.permutation(p), n_try, min_leaf)
        if f < 0:
            continue
        go_left = X[idx, f] <= t
        li, ri = idx[go_left], idx[~go_left]
        feature[node] = f
        threshold[node] = t
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return _Tree(np.array(feature), np.array(threshold), np.array(left),
                 np.array(right), np.array(value), depth_seen)


class BaggedTreesClassifier(ClassifierMixin, BaseEstimator):
    """Bootstrap-aggregated Gini CART trees; the score is the positive vote share."""

    def __init__(self, n_estimators=100, max_depth=12, min_samples_leaf=2,
                 max_features="sqrt", bootstrap=True, random_state=None):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.random_state = random_state

    def _n_try(self, p):
        mf = self.max_features
        if mf == "sqrt":
            return max(1, int(np.sqrt(p)))
        if mf is None:
            return p
        if isinstance(mf, float):
            return max(1, int(mf * p))
        return max(1, min(int(mf), p))

    def fit(self, X, y):
        if self.n_estimators < 1 or self.max_depth < 1:
            raise ModelError("n_estimators and max_depth must be >= 1")
        X, y = check_X_y(X, y, dtype=float)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise ModelError(f"training set has {len(self.classes_)} class(es), need 2")
        yb = (y == self.classes_[1]).astype(float)
        rng = np.random.default_rng(self.random_state)
        n = len(yb)
        n_try = self._n_try(X.shape[1])
        self.trees_ = []
        for _ in range(self.n_estimators):
            trng = np.random.default_rng(rng.integers(2**63))
            idx = trng.integers(0, n, n) if self.bootstrap else np.arange(n)
            self.trees_.append(_grow_tree(X[idx], yb[idx], trng, self.max_depth,
                                          self.min_samples_leaf, n_try))
        self.n_features_in_ = X.shape[1]
        self._stack()
        return self

    def _stack(self):
        offsets = np.cumsum([0] + [len(t.feature) for t in self.trees_[:-1]])
        cat = lambda attr, shift: np.concatenate(
            [getattr(t, attr) + (o if shift else 0) for t, o in zip(self.trees_, offsets)])
        self._feature = cat("feature", False)
        self._threshold = cat("threshold", False)
        self._left = cat("left", True)
        self._right = cat("right", True)
        self._vote = (cat("value", False) > 0.5).astype(float)
        self._roots = offsets
        self._max_depth = max(t.depth for t in self.trees_)

    def tree_votes(self, X) -> np.ndarray:
        """(n_samples, n_trees) matrix of 0/1 votes."""
        check_is_fitted(self, "trees_")
        X = check_array(X, dtype=float)
        nodes = np.broadcast_to(self._roots, (len(X), len(self._roots))).copy()
        rows = np.arange(len(X))[:, None]
        for _ in range(self._max_depth):
            f = self._feature[nodes]
            inner = f >= 0
            if not inner.any():
                break
            go_left = X[rows, np.where(inner, f, 0)] <= self._threshold[nodes]
            nodes = np.where(inner, np.where(go_left, self._left[nodes], self._right[nodes]), nodes)
        return self._vote[nodes]

    def predict_proba(self, X):
        p = self.tree_votes(X).mean(axis=1)
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return self.classes_[(self.predict_proba(X)[:, 1] >= 0.5).astype(int)]


@dataclass
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 12
    min_leaf: int = 2
    feature_subsample: str | float | None = "sqrt"
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise ModelError("n_trees, max_depth and min_leaf must be >= 1")


class ForestModel(PredictionModel):
    """Encoder + :class:`BaggedTreesClassifier` behind the PredictionModel surface."""

    def __init__(self, encoder: TabularEncoder, forest: BaggedTreesClassifier,
                 feature_names, threshold: float = 0.5):
        self.encoder = encoder
        self.forest = forest
        self.feature_names = list(feature_names)
        self.threshold = threshold

    def score(self, X) -> np.ndarray:
        X = self._check(X)
        if len(X) == 0:
            return np.zeros(0)
        return self.forest.tree_votes(self.encoder.transform(X)).mean(axis=1)


def train_forest(train: Dataset, c: ForestConfig = ForestConfig(), threshold: float = 0.5) -> ForestModel:
    if len(np.unique(train.y)) != 2:
        raise ModelError(f"{train.name}: training set must contain both classes")
    enc = TabularEncoder(train.schema).fit(train.X)
    forest = BaggedTreesClassifier(n_estimators=c.n_trees, max_depth=c.max_depth,
                                   min_samples_leaf=c.min_leaf, max_features=c.feature_subsample,
                                   random_state=c.seed)
    forest.fit(enc.transform(train.X), train.y)
    return ForestModel(enc, forest, train.feature_names, threshold)


def auc_from_scores(scores, y) -> float:
    """P(random positive outranks random negative), ties counted 0.5.

    Counts (positive, negative) pairs in integers, so the result is the
    correctly rounded ratio with no trapezoid round-off.
    """
    y = np.asarray(y)
    s = np.asarray(scores, dtype=float)
    if len(np.unique(y)) != 2:
        raise ModelError("AUC needs both classes")
    pos = s[y == 1]
    neg = np.sort(s[y != 1])
    below = np.searchsorted(neg, pos, side="left")
    tied = np.searchsorted(neg, pos, side="right") - below
    twice_wins = int(2 * below.sum() + tied.sum())
    return twice_wins / (2 * len(pos) * len(neg))


def auc(m: PredictionModel, test: Dataset) -> float:
    return auc_from_scores(m.score(test.X), test.y)


# --------------------------------------------------------------------------
# bridge

_EOF = object()


class BridgeModel(PredictionModel):
    """Scores batches through a child process speaking newline-delimited JSON.

    Requests are ``{"id", "op": "schema"}`` and
    ``{"id", "op": "predict_proba", "instances": [[...], ...]}``; responses
    echo the id.  The child is spawned lazily, so pickled copies (e.g. in
    worker processes) start their own.
    """

    def __init__(self, command, schema: Dataset, timeout: float = 60.0, threshold: float = 0.5):
        self.command = command
        self.schema = schema
        self.timeout = timeout
        self.threshold = threshold
        self.feature_names = schema.feature_names
        self._proc = None
        self._lines = None
        self._next_id = 0

    def __getstate__(self):
        state = self.__dict__.copy()
        state.update(_proc=None, _lines=None, _next_id=0)
        return state

    def __enter__(self):
        self.connect()
        return self

    def __exit__(self, *exc):
        self.close()

    def connect(self):
        if self._proc is not None:
            return
        args = shlex.split(self.command) if isinstance(self.command, str) else list(self.command)
        try:
            self._proc = subprocess.Popen(args, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                          text=True, bufsize=1)
        except OSError as e:
            raise BridgeError(f"cannot start bridge process {self.command!r}: {e}") from e
        self._lines = queue.Queue()
        threading.Thread(target=self._pump, args=(self._proc.stdout, self._lines), daemon=True).start()
        reply = self._request({"op": "schema"})
        features = reply.get("features")
        if features != self.feature_names:
            self.close()
            raise BridgeError(f"bridge schema mismatch: child reports {features}, "
                              f"dataset has {self.feature_names}")
        label = reply.get("positive_label")
        if label is not None and str(label) != self.schema.positive_label:
            self.close()
            raise BridgeError(f"bridge positive label {label!r} != {self.schema.positive_label!r}")

    @staticmethod
    def _pump(stream, lines):
        for line in stream:
            lines.put(line)
        lines.put(_EOF)

    def _request(self, payload: dict) -> dict:
        rid = self._next_id
        self._next_id += 1
        try:
            self._proc.stdin.write(json.dumps({"id": rid, **payload}) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise BridgeError(f"request {rid}: bridge process is gone ({e})") from e
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise BridgeError(f"request {rid}: no response within {self.timeout}s") from None
        if line is _EOF:
            code = self._proc.poll()
            raise BridgeError(f"request {rid}: bridge process exited (code {code})")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError:
            raise BridgeError(f"request {rid}: malformed response {line[:200]!r}") from None
        if not isinstance(reply, dict):
            raise BridgeError(f"request {rid}: response is not an object")
        if reply.get("id") != rid:
            raise BridgeError(f"request {rid}: response id {reply.get('id')!r} does not match")
        return reply

    def score(self, X) -> np.ndarray:
        X = self._check(X)
        if len(X) == 0:
            return np.zeros(0)
        self.connect()
        instances = [self.schema.decode_row(row) for row in X]
        reply = self._request({"op": "predict_proba", "instances": instances})
        scores = reply.get("scores")
        if not isinstance(scores, list) or len(scores) != len(X):
            raise BridgeError(f"expected {len(X)} scores, got {scores if not isinstance(scores, list) else len(scores)}")
        out = np.asarray(scores, dtype=float)
        if not np.all(np.isfinite(out)) or out.min() < 0 or out.max() > 1:
            raise BridgeError("bridge scores must be finite and within [0, 1]")
        return out

    def close(self):
        if self._proc is None:
            return
        try:
            self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.wait(timeout=2)
        except subprocess.TimeoutExpired:
            self._proc.kill()
        self._proc = None


def bridge_model(command, schema: Dataset, timeout: float = 60.0, threshold: float = 0.5) -> BridgeModel:
    """Spawn ``command`` and validate its schema handshake."""
    m = BridgeModel(command, schema, timeout=timeout, threshold=threshold)
    m.connect()
    return m


def serve(predict_proba: Callable[[list], Sequence[float]], features: Sequence[str],
          positive_label: str, stdin=None, stdout=None) -> None:
    """Run the child side of the bridge protocol until stdin closes.

    ``predict_proba`` receives a list of instances (lists of strings and
    floats, in ``features`` order) and returns one score per instance.
    """
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        req = json.loads(line)
        if req.get("op") == "schema":
            reply = {"id": req["id"], "features": list(features), "positive_label": positive_label}
        elif req.get("op") == "predict_proba":
            reply = {"id": req["id"], "scores": [float(s) for s in predict_proba(req["instances"])]}
        else:
            reply = {"id": req.get("id"), "error": f"unknown op {req.get('op')!r}"}
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()
