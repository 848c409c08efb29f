"""Small built-in binary datasets for desk-scale audits.

``tic_tac_toe``, ``mofn_3_7_10`` and ``parity5_5`` are exact enumerations of
well-known synthetic benchmarks, ``wdbc`` is the breast-cancer table shipped
with scikit-learn, and ``credit_synth`` is a seeded mixed-type credit
scoring simulation.
"""
from __future__ import annotations

import itertools
from pathlib import Path

import numpy as np

from .data import CATEGORICAL, NUMERIC, Dataset, FeatureSchema, write_dataset

BUILTIN = ("tic_tac_toe", "mofn_3_7_10", "parity5_5", "wdbc", "credit_synth")

_SQUARES = ["top-left", "top-middle", "top-right", "middle-left", "middle-middle",
            "middle-right", "bottom-left", "bottom-middle", "bottom-right"]
_LINES = [(0, 1, 2), (3, 4, 5), (6, 7, 8), (0, 3, 6), (1, 4, 7), (2, 5, 8), (0, 4, 8), (2, 4, 6)]


def _winner(board):
    for a, b, c in _LINES:
        if board[a] != "b" and board[a] == board[b] == board[c]:
            return board[a]
    return None


def tic_tac_toe() -> Dataset:
    """All final boards of games where x moves first; positive when x wins."""
    finals = set()

    def play(board, player):
        w = _winner(board)
        if w or "b" not in board:
            finals.add(tuple(board))
            return
        for i, cell in enumerate(board):
            if cell == "b":
                board[i] = player
                play(board, "o" if player == "x" else "x")
                board[i] = "b"

    play(["b"] * 9, "x")
    boards = sorted(finals)
    cats = ("b", "o", "x")
    schema = [FeatureSchema(s, CATEGORICAL, j, cats) for j, s in enumerate(_SQUARES)]
    X = np.array([[cats.index(c) for c in b] for b in boards], dtype=float)
    y = np.array([_winner(b) == "x" for b in boards], dtype=int)
    return Dataset("tic_tac_toe", schema, X, y, "positive", "negative")


def _bits(n):
    return np.array(list(itertools.product([0, 1], repeat=n)), dtype=float)


def _bit_schema(n):
    return [FeatureSchema(f"bit{j}", CATEGORICAL, j, ("0", "1")) for j in range(n)]


def mofn_3_7_10() -> Dataset:
    """Ten bits; positive when at least 3 of bits 2..8 are set."""
    X = _bits(10)
    y = (X[:, 2:9].sum(axis=1) >= 3).astype(int)
    return Dataset("mofn_3_7_10", _bit_schema(10), X, y, "1", "0")


def parity5_5() -> Dataset:
    """Ten bits; positive when bits 0..4 have odd parity, bits 5..9 are noise."""
    X = _bits(10)
    y = (X[:, :5].sum(axis=1) % 2).astype(int)
    return Dataset("parity5_5", _bit_schema(10), X, y, "1", "0")


def wdbc() -> Dataset:
    from sklearn.datasets import load_breast_cancer

    raw = load_breast_cancer()
    names = [n.replace(" ", "_") for n in raw.feature_names]
    schema = [FeatureSchema(n, NUMERIC, j) for j, n in enumerate(names)]
    # sklearn codes malignant as 0
    y = (raw.target == 0).astype(int)
    return Dataset("wdbc", schema, raw.data, y, "malignant", "benign")


def credit_synth(n: int = 1000, seed: int = 7) -> Dataset:
    rng = np.random.default_rng(seed)
    age = rng.integers(18, 76, n).astype(float)
    income = np.round(np.exp(rng.normal(10.4, 0.5, n)), -2)
    debt_ratio = np.round(rng.beta(2, 5, n), 3)
    years_employed = np.minimum(np.round(rng.exponential(6, n)), age - 18)
    credit_lines = rng.poisson(4, n).astype(float)
    housing = rng.choice(3, n, p=[0.35, 0.4, 0.25])
    purpose = rng.choice(4, n)
    education = rng.choice(4, n, p=[0.3, 0.35, 0.25, 0.1])
    employment = rng.choice(3, n, p=[0.6, 0.25, 0.15])
    logit = (
        0.9 * (np.log(income) - 10.4) / 0.5
        - 3.0 * (debt_ratio - 0.28) / 0.16
        + 0.05 * years_employed
        + 0.02 * (age - 45)
        + np.array([0.4, -0.3, 0.1])[housing]
        + np.array([0.0, -0.5, 0.3, 0.2])[purpose]
        + 0.25 * education
        + np.array([0.2, -0.1, -0.6])[employment]
        - 0.15 * np.maximum(credit_lines - 6, 0)
        + rng.normal(0, 0.5, n)
    )
    y = (logit > 0).astype(int)
    schema = [
        FeatureSchema("age", NUMERIC, 0),
        FeatureSchema("income", NUMERIC, 1),
        FeatureSchema("debt_ratio", NUMERIC, 2),
        FeatureSchema("years_employed", NUMERIC, 3),
        FeatureSchema("credit_lines", NUMERIC, 4),
        FeatureSchema("housing", CATEGORICAL, 5, ("own", "rent", "mortgage")),
        FeatureSchema("purpose", CATEGORICAL, 6, ("car", "business", "home", "education")),
        FeatureSchema("education", CATEGORICAL, 7, ("basic", "secondary", "bachelor", "graduate")),
        FeatureSchema("employment", CATEGORICAL, 8, ("salaried", "self-employed", "unemployed")),
    ]
    X = np.column_stack([age, income, debt_ratio, years_employed, credit_lines,
                         housing, purpose, education, employment]).astype(float)
    return Dataset("credit_synth", schema, X, y, "good", "bad")


def load_builtin(name: str) -> Dataset:
    makers = {"tic_tac_toe": tic_tac_toe, "mofn_3_7_10": mofn_3_7_10, "parity5_5": parity5_5,
              "wdbc": wdbc, "credit_synth": credit_synth}
    if name not in makers:
        raise KeyError(f"unknown built-in dataset {name!r}; choose from {', '.join(BUILTIN)}")
    return makers[name]()


def write_builtin(directory, names=BUILTIN) -> list[dict]:
    """Write CSV + schema pairs; returns config-ready dataset entries."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in names:
        d = load_builtin(name)
        csv_path, schema_path = directory / f"{name}.csv", directory / f"{name}.schema.json"
        write_dataset(d, csv_path, schema_path)
        entries.append({"csv": str(csv_path), "schema": str(schema_path)})
    return entries
