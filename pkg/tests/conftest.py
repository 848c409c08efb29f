import json
import sys
from pathlib import Path

import numpy as np
import pytest

from cfaudit.data import CATEGORICAL, NUMERIC, Dataset, FeatureSchema
from cfaudit.explanations import ExplanationSet

HERE = Path(__file__).parent
FIXTURES = HERE / "fixtures"
CHILD = HERE / "bridge_child.py"


def child_command(mode, *extra):
    return [sys.executable, str(CHILD), mode, *map(str, extra)]


@pytest.fixture(scope="session")
def adult_names():
    spec = json.loads((FIXTURES / "adult_schema.json").read_text())
    return [f["name"] for f in spec["features"]]


@pytest.fixture(scope="session")
def adult_example(adult_names):
    return ExplanationSet.read(FIXTURES / "adult_example_explanations.json", adult_names)


@pytest.fixture(scope="session")
def span_tables():
    return json.loads((FIXTURES / "span_tables.json").read_text())


def make_mixed(n=300, seed=0, name="mixed"):
    """Two numeric and two categorical features; label from a noisy linear rule."""
    rng = np.random.default_rng(seed)
    a = rng.normal(0, 1, n).round(3)
    b = rng.uniform(0, 10, n).round(2)
    c = rng.integers(0, 3, n)
    d = rng.integers(0, 2, n)
    y = ((a + 0.3 * b - 1.5 + 0.8 * (c == 2) - 0.5 * d + rng.normal(0, 0.3, n)) > 0).astype(int)
    schema = [FeatureSchema("a", NUMERIC, 0), FeatureSchema("b", NUMERIC, 1),
              FeatureSchema("c", CATEGORICAL, 2, ("red", "green", "blue")),
              FeatureSchema("d", CATEGORICAL, 3, ("no", "yes"))]
    return Dataset(name, schema, np.column_stack([a, b, c, d]), y, "yes", "no")


@pytest.fixture
def mixed():
    return make_mixed()
