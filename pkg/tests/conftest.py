import random
from fractions import Fraction
from functools import lru_cache

import pytest

from roughflow.graded import GradedElement, WordAlgebra, make_algebra
from roughflow.trees import enumerate_aromatic_forests, enumerate_trees

ACCEPTANCE = {}


def record(criterion, passed, detail):
    ACCEPTANCE[criterion] = (passed, detail)
    print(f"CRITERION {criterion}: {'PASS' if passed else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"CRITERION {k}: {'PASS' if passed else 'FAIL'} - {detail}")


@lru_cache(maxsize=None)
def key_pool(kind, alphabet, grade):
    alg = make_algebra(kind, alphabet)
    if grade == 0:
        return (alg.unit,)
    if isinstance(alg, WordAlgebra):
        return tuple(alg.words(grade))
    if kind == "branched-tree":
        return tuple(enumerate_trees(alphabet, grade))
    return tuple(enumerate_aromatic_forests(alphabet, grade))


def random_element(rng, alg, order, terms=3, min_grade=1, max_grade=None, exact=True):
    """Sparse element with small rational (or float) coefficients."""
    top = order if max_grade is None else max_grade
    out = {}
    for _ in range(terms):
        g = rng.randint(min_grade, top)
        pool = key_pool(alg.kind, "".join(alg.alphabet), g)
        key = rng.choice(pool)
        c = Fraction(rng.randint(-4, 4), rng.randint(1, 3)) if exact else rng.uniform(-1, 1)
        out[key] = out.get(key, 0) + c
    return GradedElement(alg, out, order)


@pytest.fixture
def rng():
    return random.Random(20240611)
