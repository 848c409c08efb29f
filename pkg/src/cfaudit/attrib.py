"""Non-counterfactual baselines: permutation-sampled Shapley values and anchor rules."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .model import PredictionModel


@dataclass
class Attribution:
    values: np.ndarray
    stderr: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.stderr is None:
            self.stderr = np.zeros_like(self.values)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("attributions must be finite")

    def __len__(self):
        return len(self.values)


def shapley_estimate(m: PredictionModel, orig, background: Dataset | np.ndarray,
                     samples: int = 1000, seed: int = 0, chunk_rows: int = 20_000) -> Attribution:
    """Monte-Carlo Shapley values of the score function at ``orig``.

    Each sample draws a feature permutation and one background row, walks
    from the background row to ``orig`` one feature at a time, and credits
    each feature with the score change its step causes.
    """
    B = background.X if isinstance(background, Dataset) else np.atleast_2d(np.asarray(background, float))
    if len(B) == 0:
        raise ValueError("background must not be empty")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    orig = np.asarray(orig, dtype=float)
    d = len(orig)
    if B.shape[1] != d:
        raise ValueError(f"schema mismatch: background has {B.shape[1]} features, instance {d}")
    rng = np.random.default_rng(seed)
    perms = np.argsort(rng.random((samples, d)), axis=1)
    rows = rng.integers(0, len(B), size=samples)
    contrib = np.empty((samples, d))
    per_chunk = max(1, chunk_rows // (d + 1))
    for start in range(0, samples, per_chunk):
        stop = min(samples, start + per_chunk)
        k = stop - start
        path = np.repeat(B[rows[start:stop]][:, None, :], d + 1, axis=1)
        for step in range(d):
            cols = perms[start:stop, step]
            # advanced indices around a slice put the sample axis first: (k, 1, d - step)
            path[np.arange(k)[:, None], step + 1:, cols[:, None]] = orig[cols][:, None, None]
        s = m.score(path.reshape(-1, d)).reshape(k, d + 1)
        delta = np.diff(s, axis=1)
        np.put_along_axis(contrib[start:stop], perms[start:stop], delta, axis=1)
    values = contrib.mean(axis=0)
    stderr = contrib.std(axis=0, ddof=1) / math.sqrt(samples) if samples > 1 else np.zeros(d)
    return Attribution(values, stderr)


def exact_shapley(m: PredictionModel, orig, background: Dataset | np.ndarray) -> Attribution:
    """Shapley values by enumerating all 2^d coalitions (interventional value function)."""
    B = background.X if isinstance(background, Dataset) else np.atleast_2d(np.asarray(background, float))
    orig = np.asarray(orig, dtype=float)
    d = len(orig)
    if d > 16:
        raise ValueError("exact enumeration is limited to 16 features")
    masks = np.array(list(itertools.product([False, True], repeat=d)), dtype=bool)
    rows = np.where(masks[:, None, :], orig, B[None, :, :]).reshape(-1, d)
    value = m.score(rows).reshape(len(masks), len(B)).mean(axis=1)
    index = {tuple(mk): i for i, mk in enumerate(masks)}
    phi = np.zeros(d)
    for i, mk in enumerate(masks):
        size = int(mk.sum())
        for j in np.flatnonzero(~mk):
            w = math.factorial(size) * math.factorial(d - size - 1) / math.factorial(d)
            with_j = mk.copy()
            with_j[j] = True
            phi[j] += w * (value[index[tuple(with_j)]] - value[i])
    return Attribution(phi)


@dataclass(frozen=True)
class Predicate:
    feature: int
    low: float          # exclusive; categorical predicates use low == high == code
    high: float         # inclusive
    categorical: bool

    def holds(self, X) -> np.ndarray:
        col = np.asarray(X)[:, self.feature]
        if self.categorical:
            return col == self.low
        return (col > self.low) & (col <= self.high)


@dataclass
class AnchorRule:
    predicates: tuple[Predicate, ...] = ()
    precision: float = 1.0
    coverage: float = 1.0

    @property
    def features(self) -> list[int]:
        return [p.feature for p in self.predicates]


def _predicate(train: Dataset, orig, j) -> Predicate:
    if train.schema[j].is_categorical:
        return Predicate(j, orig[j], orig[j], True)
    q = np.percentile(train.X[:, j], [25, 50, 75])
    edges = np.concatenate([[-np.inf], q, [np.inf]])
    for lo, hi in zip(edges[:-1], edges[1:]):
        if lo < orig[j] <= hi:
            return Predicate(j, float(lo), float(hi), False)
    return Predicate(j, -np.inf, np.inf, False)


class _AnchorSampler:
    """Fixed perturbation sample; a rule swaps in predicate-respecting columns."""

    def __init__(self, m, orig, train, n_samples, rng):
        self.m = m
        self.train = train
        d = train.n_features
        n = len(train)
        self.label = int(m.predict(orig[None, :])[0])
        self.base = train.X[rng.integers(0, n, size=(n_samples, d)), np.arange(d)[None, :]]
        self.preds = [_predicate(train, orig, j) for j in range(d)]
        self.constrained = np.empty_like(self.base)
        for j, p in enumerate(self.preds):
            ok = train.X[p.holds(train.X), j]
            self.constrained[:, j] = ok[rng.integers(0, len(ok), size=n_samples)] if len(ok) else orig[j]
        self._cache = {}

    def evaluate(self, features: tuple[int, ...]) -> tuple[float, float]:
        if features not in self._cache:
            Z = self.base.copy()
            idx = list(features)
            Z[:, idx] = self.constrained[:, idx]
            precision = float(np.mean(self.m.predict(Z) == self.label))
            covered = np.ones(len(self.train), dtype=bool)
            for j in features:
                covered &= self.preds[j].holds(self.train.X)
            coverage = float(covered.mean()) if len(self.train) else 0.0
            self._cache[features] = (precision, coverage)
        return self._cache[features]

    def rule(self, features) -> AnchorRule:
        precision, coverage = self.evaluate(features)
        return AnchorRule(tuple(self.preds[j] for j in features), precision, coverage)


def anchor_rule(m: PredictionModel, orig, train: Dataset, precision_target: float = 0.95,
                seed: int = 0, n_samples: int = 400, beam_width: int = 2) -> AnchorRule:
    """Greedy beam search for an if-then rule that keeps the prediction.

    Predicates fix a categorical feature to the instance's value or a numeric
    feature to its training-quartile interval.  Among rules reaching
    ``precision_target`` at the shallowest depth, the one with the highest
    coverage wins.
    """
    orig = np.asarray(orig, dtype=float)
    rng = np.random.default_rng(seed)
    sampler = _AnchorSampler(m, orig, train, n_samples, rng)
    d = train.n_features
    if sampler.evaluate(())[0] >= precision_target:
        return sampler.rule(())
    beam = [()]
    best = ()
    for _ in range(d):
        children = sorted({tuple(sorted(r + (j,))) for r in beam for j in range(d) if j not in r})
        scored = [(sampler.evaluate(c), c) for c in children]
        hits = [(cov, prec, c) for (prec, cov), c in scored if prec >= precision_target]
        if hits:
            hits.sort(key=lambda t: (-t[0], -t[1], t[2]))
            return sampler.rule(hits[0][2])
        scored.sort(key=lambda t: (-t[0][0], -t[0][1], t[1]))
        beam = [c for _, c in scored[:beam_width]]
        best = beam[0]
    return sampler.rule(best)
