"""Desk-scale counterfactual generators.

Nine methods cover both sides of the plausibility/proximity taxonomy.  They
are reconstructions that keep each original's optimisation target, not ports
of the reference code.  All operate on instance codes, count model
evaluations against a budget, and break ties by lowest feature index and
lowest training index.
"""
from __future__ import annotations

import hashlib
import heapq
import itertools
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .data import Dataset, TabularEncoder
from .exceptions import CfauditError, ModelError
from .model import PredictionModel


class Method(str, Enum):
    CBR = "CBR"
    WIT = "WIT"
    NICE_none = "NICE_none"
    NICE_plaus = "NICE_plaus"
    NICE_prox = "NICE_prox"
    NICE_spars = "NICE_spars"
    SEDC = "SEDC"
    GeCo = "GeCo"
    DiCE = "DiCE"

    def __str__(self):
        return self.value

    @property
    def group(self) -> str:
        return GROUPS[self.value]


PLAUS = "Plaus"
PROX = "Prox"
OTHER = "Other"

GROUPS = {
    "CBR": PLAUS, "WIT": PLAUS, "NICE_none": PLAUS, "NICE_plaus": PLAUS, "GeCo": PLAUS,
    "DiCE": PROX, "NICE_prox": PROX, "NICE_spars": PROX, "SEDC": PROX,
}
# published names of methods that are not built in but may be imported
GROUPS_EXTERNAL = {"CFproto": PLAUS, "Anchors": OTHER, "SHAP": OTHER}


def method_group(name: str) -> str:
    return GROUPS.get(name) or GROUPS_EXTERNAL.get(name) or OTHER


@dataclass
class GeneratorConfig:
    seed: int = 0
    max_evaluations: int = 20_000
    population: int = 40
    generations: int = 30
    diversity_k: int = 4
    plausibility_k: int = 5
    diversity_weight: float = 0.5

    def __post_init__(self):
        for name in ("max_evaluations", "population", "generations", "diversity_k", "plausibility_k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class Counterfactual:
    instance: np.ndarray | None
    origin_id: str
    method: str
    found: bool
    evaluations: int = 0

    def __post_init__(self):
        if not self.found:
            self.instance = None


class NoCounterfactual(CfauditError):
    """Raised inside a search when it cannot proceed (no unlike neighbour, budget)."""


def cell_seed(*parts) -> int:
    """Stable 64-bit seed from arbitrary JSON-able parts."""
    blob = json.dumps([str(p) for p in parts]).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


# --------------------------------------------------------------------------
# distances


def _gower_terms(A, b, span, cat):
    A = np.atleast_2d(A)
    diff = np.abs(A - b)
    num = np.where(span > 0, diff / np.where(span > 0, span, 1.0), 0.0)
    return np.where(cat, (diff > 0).astype(float), np.minimum(num, 1.0))


def heterogeneous_distance(a, b, d: Dataset) -> float:
    """Gower distance in [0, 1]: range-scaled |diff| for numeric, mismatch for categorical.

    Ranges come from ``d`` (the training set); numeric terms are capped at 1
    for values outside that range.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (d.n_features,) or b.shape != (d.n_features,):
        raise ValueError(f"schema mismatch: expected {d.n_features} features")
    return float(_gower_terms(a, b, d.feature_max - d.feature_min, d.categorical_mask).mean())


class SearchSpace:
    """Per (model, training set) state shared by every generator call."""

    def __init__(self, model: PredictionModel, train: Dataset):
        self.model = model
        self.train = train
        self.X = train.X
        self.cat = train.categorical_mask
        self.lo = train.feature_min
        self.hi = train.feature_max
        self.span = self.hi - self.lo
        self.d = train.n_features
        self.train_pred = model.predict(train.X) if len(train) else np.zeros(0, int)
        self.encoder = TabularEncoder(train.schema).fit(train.X)
        self.train_enc = self.encoder.transform(train.X)
        self.reference = {c: self._reference(c) for c in (0, 1)}

    def _reference(self, c):
        rows = self.X[self.train_pred == c]
        if len(rows) == 0:
            rows = self.X[self.train.y == c]
        if len(rows) == 0:
            rows = self.X
        ref = rows.mean(axis=0)
        for j in np.flatnonzero(self.cat):
            ref[j] = np.argmax(np.bincount(rows[:, j].astype(int)))
        return ref

    def distance(self, A, b) -> np.ndarray:
        return _gower_terms(A, b, self.span, self.cat).mean(axis=1)

    def terms(self, A, b) -> np.ndarray:
        return _gower_terms(A, b, self.span, self.cat)

    def plausibility(self, V, target: int, k: int) -> np.ndarray:
        """Mean encoded distance from each row of V to its k nearest target-class rows."""
        ref = self.train_enc[self.train_pred == target]
        if len(ref) == 0:
            ref = self.train_enc
        E = self.encoder.transform(np.atleast_2d(V))
        dist = np.sqrt(((E[:, None, :] - ref[None, :, :]) ** 2).sum(axis=2))
        k = min(k, len(ref))
        return np.sort(dist, axis=1)[:, :k].mean(axis=1)


def nearest_unlike_neighbor(orig, train: Dataset, m: PredictionModel,
                            space: SearchSpace | None = None) -> int:
    """Index of the closest training row predicted to the other label (ties: lowest index)."""
    space = space or SearchSpace(m, train)
    orig = np.asarray(orig, dtype=float)
    label = int(m.predict(orig[None, :])[0])
    unlike = np.flatnonzero(space.train_pred != label)
    if len(unlike) == 0:
        raise NoCounterfactual("no training instance is predicted to the opposite label")
    dist = space.distance(space.X[unlike], orig)
    return int(unlike[np.argmin(dist)])


# --------------------------------------------------------------------------
# search plumbing


class _Budget:
    def __init__(self, model, target, limit):
        self.model = model
        self.target = target
        self.limit = limit
        self.used = 0

    def __call__(self, rows):
        """(target-class score, flipped) for a batch of candidate rows."""
        rows = np.atleast_2d(rows)
        if self.used + len(rows) > self.limit:
            raise NoCounterfactual(f"evaluation budget of {self.limit} exhausted")
        self.used += len(rows)
        s = self.model.score(rows)
        flipped = (s >= self.model.threshold) == bool(self.target)
        return (s if self.target == 1 else 1.0 - s), flipped


def _apply(orig, source, features):
    row = orig.copy()
    idx = list(features)
    row[idx] = source[idx]
    return row


def _pick(keys, candidates):
    """Index of the max key; first wins ties."""
    return int(np.argmax(np.asarray(keys, dtype=float))) if len(candidates) else -1


def _minimal(orig, cf, evaluate, prefer, max_enum=10):
    """Shrink the change-set of a flipping ``cf`` so no strict subset flips.

    Up to ``max_enum`` changed features, subsets are enumerated by size and
    the first size with a flip wins (ties by ``prefer``, then lexicographic
    order).  Larger sets fall back to backward elimination.
    """
    changed = np.flatnonzero(cf != orig)
    if len(changed) <= 1:
        return cf
    if len(changed) <= max_enum:
        for k in range(1, len(changed)):
            subsets = list(itertools.combinations(changed, k))
            rows = np.array([_apply(orig, cf, s) for s in subsets])
            ts, flipped = evaluate(rows)
            if flipped.any():
                keys = np.where(flipped, prefer(rows, ts), -np.inf)
                return rows[_pick(keys, rows)]
        return cf
    current = set(changed.tolist())
    improved = True
    while improved and len(current) > 1:
        improved = False
        for j in sorted(current):
            trial = _apply(orig, cf, sorted(current - {j}))
            _, flipped = evaluate(trial)
            if flipped[0]:
                current.discard(j)
                improved = True
    return _apply(orig, cf, sorted(current))


# --------------------------------------------------------------------------
# generators


def _wit(space, orig, target, cfg, evaluate, rng):
    return space.X[nearest_unlike_neighbor(orig, space.train, space.model, space)]


def _nice(variant):
    def run(space, orig, target, cfg, evaluate, rng):
        nun = space.X[nearest_unlike_neighbor(orig, space.train, space.model, space)]
        ts0, _ = evaluate(orig)
        base_ts = ts0[0]
        x, cur_ts = orig.copy(), base_ts
        remaining = [int(j) for j in np.flatnonzero(nun != orig)]
        move = space.terms(nun, orig)[0]

        def reward(rows, ts, gain_from, added):
            gain = ts - gain_from
            if variant == "none":
                return move[added]
            if variant == "prox":
                return gain / np.maximum(move[added], 1e-12)
            if variant == "spars":
                return gain
            return gain / np.maximum(space.plausibility(rows, target, cfg.plausibility_k), 1e-12)

        result = None
        while remaining:
            rows = np.array([_apply(x, nun, [j]) for j in remaining])
            ts, flipped = evaluate(rows)
            keys = reward(rows, ts, cur_ts, np.array(remaining))
            if flipped.any():
                result = rows[_pick(np.where(flipped, keys, -np.inf), rows)]
                break
            k = _pick(keys, rows)
            x, cur_ts = rows[k], ts[k]
            remaining.pop(k)
        if result is None:
            result = x

        def prefer(rows, ts):
            if variant == "none":
                return -space.distance(rows, orig)
            if variant == "prox":
                return (ts - base_ts) / np.maximum(space.distance(rows, orig), 1e-12)
            if variant == "spars":
                return ts - base_ts
            return (ts - base_ts) / np.maximum(space.plausibility(rows, target, cfg.plausibility_k), 1e-12)

        return _minimal(orig, result, evaluate, prefer)
    return run


def _sedc(space, orig, target, cfg, evaluate, rng):
    ref = space.reference[target]
    features = [int(j) for j in np.flatnonzero(ref != orig)]
    if not features:
        raise NoCounterfactual("instance already equals the target-class reference")
    frontier, seen = [], set()
    level = [(j,) for j in features]
    found = None
    while level:
        rows = np.array([_apply(orig, ref, s) for s in level])
        ts, flipped = evaluate(rows)
        if flipped.any():
            found = rows[_pick(np.where(flipped, ts, -np.inf), rows)]
            break
        for s, t in zip(level, ts):
            heapq.heappush(frontier, (-t, s))
        level = []
        while frontier and not level:
            _, best = heapq.heappop(frontier)
            for j in features:
                if j in best:
                    continue
                child = tuple(sorted(best + (j,)))
                if child not in seen:
                    seen.add(child)
                    level.append(child)
    if found is None:
        raise NoCounterfactual("SEDC search space exhausted")
    return _minimal(orig, found, evaluate, lambda rows, ts: ts)


def _cbr(space, orig, target, cfg, evaluate, rng):
    nun = space.X[nearest_unlike_neighbor(orig, space.train, space.model, space)]
    diff = [int(j) for j in np.flatnonzero(nun != orig)]
    ts0, _ = evaluate(orig)
    rows = np.array([_apply(orig, nun, [j]) for j in diff])
    ts, _ = evaluate(rows)
    keep = [j for j, t in zip(diff, ts) if t > ts0[0]]
    if not keep:
        raise NoCounterfactual("no single substitution helps")
    cand = _apply(orig, nun, keep)
    _, flipped = evaluate(cand)
    if not flipped[0]:
        raise NoCounterfactual("assembled case does not flip")
    return cand


def _geco(space, orig, target, cfg, evaluate, rng):
    d, n = space.d, len(space.X)
    P = cfg.population
    pool = space.X[space.train_pred == target]
    if len(pool) == 0:
        raise NoCounterfactual("no target-class training rows")

    def marginal_draw(size):
        return space.X[rng.integers(0, n, size=(size, d)), np.arange(d)[None, :]]

    partners = pool[rng.integers(0, len(pool), size=P)]
    mask = rng.random((P, d)) < 0.5
    popn = np.where(mask, partners, orig)

    def fitness(rows):
        _, flipped = evaluate(rows)
        return flipped.astype(float) - space.distance(rows, orig), flipped

    fit, flipped = fitness(popn)
    best, best_fit = None, -np.inf

    def track(rows, fit, flipped):
        nonlocal best, best_fit
        if flipped.any():
            k = _pick(np.where(flipped, fit, -np.inf), rows)
            if fit[k] > best_fit:
                best, best_fit = rows[k].copy(), fit[k]

    track(popn, fit, flipped)
    n_elite = max(1, P // 5)
    for _ in range(cfg.generations):
        order = np.argsort(-fit, kind="stable")
        elite = popn[order[:n_elite]]
        n_child = P - n_elite
        a = rng.integers(0, P, size=(n_child, 2))
        b = rng.integers(0, P, size=(n_child, 2))
        pa = np.where(fit[a[:, 0]] >= fit[a[:, 1]], a[:, 0], a[:, 1])
        pb = np.where(fit[b[:, 0]] >= fit[b[:, 1]], b[:, 0], b[:, 1])
        cross = rng.random((n_child, d)) < 0.5
        children = np.where(cross, popn[pa], popn[pb])
        mutate = rng.random((n_child, d)) < 1.0 / d
        children = np.where(mutate, marginal_draw(n_child), children)
        cfit, cflip = fitness(children)
        track(children, cfit, cflip)
        popn = np.vstack([elite, children])
        fit = np.concatenate([fit[order[:n_elite]], cfit])
    if best is None:
        raise NoCounterfactual("genetic search found no flipping individual")
    return best


def _dice(space, orig, target, cfg, evaluate, rng):
    d, n = space.d, len(space.X)
    k = cfg.diversity_k
    batch = 128
    want = 10 * k
    found = []
    budget = min(cfg.max_evaluations, 40 * batch)
    while len(found) < want and evaluate.used + batch <= budget:
        m = rng.integers(1, d + 1, size=batch)
        rank = np.argsort(rng.random((batch, d)), axis=1)
        change = rank < m[:, None]
        noise = orig + rng.normal(0.0, 0.3, size=(batch, d)) * space.span
        noise = np.clip(noise, space.lo, space.hi)
        draws = space.X[rng.integers(0, n, size=(batch, d)), np.arange(d)[None, :]]
        proposal = np.where(space.cat, draws, noise)
        rows = np.where(change, proposal, orig)
        _, flipped = evaluate(rows)
        found.extend(rows[flipped])
    if not found:
        raise NoCounterfactual("random perturbation found no flip")
    C = np.array(found[:want])
    prox = space.distance(C, orig)
    pair = np.array([space.distance(C, c) for c in C])
    chosen = [int(np.argmax(-prox + cfg.diversity_weight * pair.mean(axis=1)))]
    while len(chosen) < min(k, len(C)):
        gain = -prox + cfg.diversity_weight * pair[:, chosen].min(axis=1)
        gain[chosen] = -np.inf
        chosen.append(int(np.argmax(gain)))
    chosen = np.array(chosen)
    return C[chosen[np.argmin(prox[chosen])]]


_IMPL = {
    "WIT": _wit,
    "NICE_none": _nice("none"),
    "NICE_plaus": _nice("plaus"),
    "NICE_prox": _nice("prox"),
    "NICE_spars": _nice("spars"),
    "SEDC": _sedc,
    "CBR": _cbr,
    "GeCo": _geco,
    "DiCE": _dice,
}


def generate(method, m: PredictionModel, orig, train: Dataset, cfg: GeneratorConfig = GeneratorConfig(),
             origin_id: str = "", space: SearchSpace | None = None) -> Counterfactual:
    """Search for a counterfactual of ``orig`` (a code row).

    Exhausting the budget or lacking an unlike neighbour yields
    ``found=False``.  A found result that does not flip the label raises
    :class:`ModelError`.
    """
    name = Method(method).value
    space = space or SearchSpace(m, train)
    orig = np.asarray(orig, dtype=float)
    label = int(m.predict(orig[None, :])[0])
    target = 1 - label
    rng = np.random.default_rng(cell_seed(cfg.seed, train.name, name, origin_id))
    evaluate = _Budget(m, target, cfg.max_evaluations)
    try:
        cf = _IMPL[name](space, orig, target, cfg, evaluate, rng)
    except NoCounterfactual:
        return Counterfactual(None, origin_id, name, False, evaluate.used)
    cf = np.asarray(cf, dtype=float).copy()
    if int(m.predict(cf[None, :])[0]) == label:
        raise ModelError(f"{name} returned a non-flipping counterfactual for {origin_id!r}")
    return Counterfactual(cf, origin_id, name, True, evaluate.used)
