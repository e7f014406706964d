import io
import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import iterated_integrals
from roughflow.graded import DomainError, GradedElement, WordAlgebra, exp_truncated, graded_norm, mul_truncated
from roughflow.words import (
    ControlFunction,
    ConvergenceError,
    PiecewiseLinearPath,
    RoughPath,
    chen_defect,
    export_rough_path_csv,
    hoelder_level_bounds,
    load_path_csv,
    lyons_extend,
    pure_area_rough_path,
    segment_signature,
    signature,
    signature_path,
)

T2 = WordAlgebra("ab", "tensor")


def rational_path(rng, knots=5, dim=2):
    times = sorted(rng.sample(range(1, 40), knots - 2))
    times = [Fraction(0)] + [Fraction(t, 40) for t in times] + [Fraction(1)]
    values = [[Fraction(rng.randint(-6, 6), rng.randint(1, 4)) for _ in range(dim)] for _ in times]
    return PiecewiseLinearPath(times, values)


path_seeds = st.integers(0, 2 ** 32 - 1)


@settings(max_examples=25, deadline=None)
@given(path_seeds, st.integers(1, 4))
def test_signature_matches_symbolic_iterated_integrals(seed, n):
    rng = random.Random(seed)
    path = rational_path(rng)
    ref = iterated_integrals(path.times, path.values, ("a", "b"), n)
    assert signature(path, path.T0, path.T, n) == GradedElement(T2, ref, n)


@settings(max_examples=25, deadline=None)
@given(path_seeds, st.integers(1, 4))
def test_chen_relation_exact(seed, n):
    rng = random.Random(seed)
    path = rational_path(rng, knots=6)
    x = signature_path(path, n)
    r, s, t = sorted(Fraction(rng.randint(0, 64), 64) for _ in range(3))
    assert x(r, s) * x(s, t) == x(r, t)
    assert all(v == 0 for v in chen_defect(x, r, s, t))


def test_straight_segment_is_tensor_exponential():
    v = [Fraction(2), Fraction(-1, 3)]
    sig = segment_signature(v, T2, 4)
    lin = GradedElement(T2, {("a",): v[0], ("b",): v[1]}, 4)
    assert sig == exp_truncated(lin)


def test_reparametrisation_invariance():
    vals = [[0, 0], [1, 2], [3, -1], [2, 2]]
    p1 = PiecewiseLinearPath([0, 1, 2, 3], vals)
    p2 = PiecewiseLinearPath([0, Fraction(1, 7), Fraction(1, 2), 5], vals)
    assert signature(p1, 0, 3, 4) == signature(p2, 0, 5, 4)


def test_path_times_reverse_is_unit():
    vals = [[0, 0], [1, 2], [3, -1]]
    fwd = PiecewiseLinearPath([0, 1, 2], vals)
    back = PiecewiseLinearPath([0, 1, 2], vals[::-1])
    assert signature(fwd, 0, 2, 4) * signature(back, 0, 2, 4) == GradedElement.unit(T2, 4)


def test_area_of_unit_square():
    sq = PiecewiseLinearPath([0, 1, 2, 3, 4], [[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]])
    sig = signature(sq, 0, 4, 2)
    # Lévy area of a counter-clockwise unit square is 1
    assert sig[("a", "b")] - sig[("b", "a")] == 2
    assert sig[("a",)] == 0 and sig[("b",)] == 0


def test_float_paths_are_float():
    p = PiecewiseLinearPath([0.0, 0.5, 1.0], [[0.0, 0.0], [0.3, 0.1], [0.2, 0.7]])
    assert not p.exact
    x = signature_path(p, 3)
    d = chen_defect(x, 0.0, 0.3, 1.0)
    assert max(float(v) for v in d) < 1e-15


def test_path_validation():
    with pytest.raises(ValueError):
        PiecewiseLinearPath([0], [[0]])
    with pytest.raises(ValueError):
        PiecewiseLinearPath([0, 0], [[0], [1]])
    with pytest.raises(ValueError):
        PiecewiseLinearPath([0, 1], [[0], [1, 2]])
    p = PiecewiseLinearPath([0, 1], [[0], [1]])
    with pytest.raises(DomainError):
        p(2)
    with pytest.raises(DomainError):
        p.increments(1, 0)


def test_rough_path_domain():
    x = signature_path(PiecewiseLinearPath([0, 1], [[0, 0], [1, 1]]), 2)
    assert x(Fraction(1, 2), Fraction(1, 2)) == GradedElement.unit(T2, 2)
    with pytest.raises(DomainError):
        x(1, 0)
    with pytest.raises(ValueError):
        RoughPath(lambda s, t: None, T2, 2, p=0.5)


# -- pure area ----------------------------------------------------------------
def test_pure_area_levels_and_chen():
    x = pure_area_rough_path([[0, 1], [-1, 0]])
    e = x(Fraction(1, 4), Fraction(3, 4))
    assert e == GradedElement(T2, {(): 1, ("a", "b"): Fraction(1, 2), ("b", "a"): Fraction(-1, 2)}, 2)
    assert x(0, Fraction(1, 3)) * x(Fraction(1, 3), 1) == x(0, 1)
    assert x.level_bounds == [1, 0, 2]


def test_pure_area_rejects_symmetric_part():
    with pytest.raises(DomainError):
        pure_area_rough_path([[1, 0], [0, 0]])
    with pytest.raises(DomainError):
        pure_area_rough_path([[0, 1, 0], [-1, 0]])


def test_truncated_family_defect_lives_in_overflow_grades():
    x = pure_area_rough_path([[0, 1], [-1, 0]])
    d = chen_defect(x, 0, Fraction(1, 2), 1, order=4)
    assert d[:3] == [0, 0, 0] and d[4] != 0
    assert d[3] == 0


# -- Lyons extension -------------------------------------------------------------
def test_lyons_extension_of_pure_area_is_exponential():
    x = pure_area_rough_path([[0, 1], [-1, 0]])
    ext = lyons_extend(x, 4, depth=8)
    got = ext(0.0, 1.0)
    area = GradedElement(T2, {("a", "b"): 1.0, ("b", "a"): -1.0}, 4)
    assert graded_norm(got - exp_truncated(area)) < 1e-10


def test_lyons_extension_matches_signature():
    path = PiecewiseLinearPath([0.0, 0.3, 0.55, 1.0], [[0.0, 0.0], [0.4, -0.2], [0.1, 0.5], [0.6, 0.3]])
    x = signature_path(path, 2)
    # depth 10 is two levels coarser than the acceptance run, so allow 1e-7
    ext = lyons_extend(x, 3, depth=10)
    for s, t in [(0.0, 1.0), (0.2, 0.7)]:
        ref = signature(path, s, t, 3)
        assert graded_norm(ext(s, t) - ref) < 1e-7
    assert ext.diagnostics


def test_lyons_extension_keeps_low_levels_and_is_multiplicative():
    path = PiecewiseLinearPath([0.0, 0.5, 1.0], [[0.0, 0.0], [0.4, -0.2], [0.1, 0.5]])
    x = signature_path(path, 2)
    ext = lyons_extend(x, 4, depth=8)
    e = ext(0.0, 1.0)
    assert e.truncate(2) == x(0.0, 1.0).to_float()
    d = chen_defect(ext, 0.0, 0.5, 1.0)
    assert max(float(v) for v in d) < 1e-6


def test_lyons_extension_chen_defect_at_depth_12():
    path = PiecewiseLinearPath([0.0, 0.5, 1.0], [[0.0, 0.0], [0.4, -0.2], [0.1, 0.5]])
    ext = lyons_extend(signature_path(path, 2), 4, depth=12)
    assert max(float(v) for v in chen_defect(ext, 0.1, 0.3, 0.9)) < 1e-10


def test_lyons_extension_at_or_below_order_truncates():
    x = pure_area_rough_path([[0, 1], [-1, 0]])
    assert lyons_extend(x, 1)(0, 1) == x(0, 1).truncate(1)


def test_lyons_extension_rejects_low_order():
    x = pure_area_rough_path([[0, 1], [-1, 0]]).with_evaluator(lambda s, t: GradedElement.unit(T2, 1), order=1)
    with pytest.raises(DomainError):
        lyons_extend(x, 3)


def test_lyons_extension_detects_divergence():
    def ev(s, t):
        return GradedElement(T2, {(): 1.0, ("a",): math.sqrt(t - s)}, 1)

    x = RoughPath(ev, T2, 1, p=1.0)
    with pytest.raises(ConvergenceError):
        lyons_extend(x, 2, depth=6)(0.0, 1.0)


# -- controls and level bounds ---------------------------------------------------------
def test_control_superadditivity():
    ok, worst, _ = ControlFunction().check_superadditive(samples=500)
    assert ok and worst <= 1e-12
    bad = ControlFunction(lambda s, t: math.sqrt(t - s))
    ok, worst, where = bad.check_superadditive(samples=500)
    assert not ok and worst > 0 and where is not None


def test_level_bounds_pure_area():
    x = pure_area_rough_path([[0, 3], [-3, 0]])
    lb = hoelder_level_bounds(x, [0, 0.25, 0.5, 1])
    assert lb.mu[1] == 0
    assert lb.mu[2] == pytest.approx(6.0)


def test_level_bounds_linear_path():
    v = np.array([0.6, -0.8])
    path = PiecewiseLinearPath([0.0, 1.0], [[0.0, 0.0], list(v)])
    x = signature_path(path, 2, p=1.0)
    lb = hoelder_level_bounds(x, np.linspace(0, 1, 9))
    assert lb.mu[1] == pytest.approx(np.abs(v).sum())
    # level 2 of a straight line is v⊗v/2
    assert lb.mu[2] == pytest.approx(np.abs(v).sum() ** 2 / 2)


def test_level_bounds_constant_path():
    path = PiecewiseLinearPath([0.0, 1.0], [[1.0, 1.0], [1.0, 1.0]])
    lb = hoelder_level_bounds(signature_path(path, 3), [0, 0.5, 1])
    assert lb.mu[1:] == [0.0, 0.0, 0.0]


# -- CSV ----------------------------------------------------------------------------
def test_csv_roundtrip(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("time,x_1,x_2\n0,0,0\n1/2,1,1/3\n1,2,0\n")
    p = load_path_csv(f, exact=True)
    assert p.exact and p.values[1] == [1, Fraction(1, 3)]
    buf = io.StringIO()
    export_rough_path_csv(signature_path(p, 2), [(0, 1)], buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "s,t,grade,key,coefficient"
    assert lines[1].startswith("0,1,0,1,1")


def test_csv_requires_header(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("0,0\n1,1\n")
    with pytest.raises(ValueError):
        load_path_csv(f)


def test_multiplication_is_chen_for_concatenation():
    a = PiecewiseLinearPath([0, 1], [[0, 0], [1, 2]])
    b = PiecewiseLinearPath([0, 1], [[1, 2], [-1, 3]])
    both = PiecewiseLinearPath([0, 1, 2], [[0, 0], [1, 2], [-1, 3]])
    assert mul_truncated(signature(a, 0, 1, 4), signature(b, 0, 1, 4)) == signature(both, 0, 2, 4)


@settings(max_examples=20, deadline=None)
@given(path_seeds, st.integers(1, 4))
def test_log_signature_is_lie(seed, n):
    from roughflow.graded import lie_residual, log_truncated

    path = rational_path(random.Random(seed))
    assert lie_residual(log_truncated(signature(path, path.T0, path.T, n))).is_zero()


@settings(max_examples=20, deadline=None)
@given(path_seeds)
def test_symmetric_part_of_level_two(seed):
    path = rational_path(random.Random(seed))
    sig = signature(path, path.T0, path.T, 2)
    for i in "ab":
        for j in "ab":
            assert (sig[(i, j)] + sig[(j, i)]) / 2 == sig[(i,)] * sig[(j,)] / 2


def test_corrupted_level_two_defect_sits_at_grade_two():
    x = signature_path(PiecewiseLinearPath([0, 1], [[0, 0], [1, 2]]), 2)
    bad = x.with_evaluator(lambda s, t: x(s, t) + GradedElement(T2, {("a", "b"): (t - s) ** 2}, 2))
    d = chen_defect(bad, 0, Fraction(1, 3), 1)
    assert d[0] == 0 and d[1] == 0 and d[2] != 0


def test_pure_area_zero_and_log():
    from roughflow.graded import log_truncated

    x0 = pure_area_rough_path([[0, 0], [0, 0]])
    assert x0(0, 1) == GradedElement.unit(T2, 2)
    x = pure_area_rough_path([[0, 3], [-3, 0]])
    s, t = Fraction(1, 5), Fraction(7, 10)
    assert log_truncated(x(s, t)) == GradedElement(T2, {("a", "b"): 3 * (t - s), ("b", "a"): -3 * (t - s)}, 2)


def test_signature_over_empty_interval_is_unit():
    p = PiecewiseLinearPath([0, 1], [[0, 0], [1, 2]])
    assert signature(p, Fraction(1, 2), Fraction(1, 2), 3) == GradedElement.unit(T2, 3)
