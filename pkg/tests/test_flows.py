import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from roughflow.fields import ElementaryDifferentials, LinearFamily, builtin_family
from roughflow.flows import (
    AlmostFlow,
    BlowUpError,
    DecayConstants,
    GeometricityError,
    almost_flow_defect,
    commuting_flows_check,
    compose_scheme,
    composition_defect,
    composition_defect_slope,
    convergence_study,
    d_solution_constant,
    davie_flow,
    davie_lemma_bound,
    decay_propagate,
    dyadic_partition,
    dyadic_triples,
    fit_order,
    flow_four_point_check,
    four_point_check,
    hoelder_lambda_bounds,
    log_ode_flow,
    newton_defect,
    piecewise_linear_reference,
    propagate_factorial_decay,
    rk4,
    sup_closed_form,
    sup_grid,
    taylor_operator_main,
    taylor_remainder,
    taylor_remainder_slope,
)
from roughflow.graded import DomainError, GradedElement, WordAlgebra, exp_truncated, parse_element
from roughflow.trees import TreeAlgebra, branched_lift_level2
from roughflow.words import PiecewiseLinearPath, RoughPath, pure_area_rough_path, signature_path

MATS = {"a": np.array([[0.0, 1.0], [-1.0, 0.3]]), "b": np.array([[0.5, 0.0], [0.2, -0.4]])}
A0 = np.array([1.0, 0.5])
STARTS = [A0, np.array([-0.3, 0.8])]


def pure_area_setup():
    x = pure_area_rough_path([[0, 1], [-1, 0]])
    fam = LinearFamily(MATS)
    F = ElementaryDifferentials(fam, x.algebra)
    B = MATS["b"] @ MATS["a"] - MATS["a"] @ MATS["b"]
    return x, fam, F, B


# -- integration helpers --------------------------------------------------------------
def test_rk4_linear_shortcut_matches_loop():
    M = MATS["a"]

    class Field:
        matrix = M

        def __call__(self, y):
            return M @ y

    fast = rk4(Field(), A0, 0.7, 20)
    slow = rk4(lambda y: M @ y, A0, 0.7, 20)
    assert np.allclose(fast, slow, atol=1e-14)
    assert np.allclose(fast, expm(0.7 * M) @ A0, atol=1e-8)


def test_rk4_blow_up():
    with pytest.raises(BlowUpError), np.errstate(over="ignore", invalid="ignore"):
        rk4(lambda y: y ** 2, np.array([10.0]), 1.0, 8)


def test_dyadic_helpers():
    assert dyadic_partition(1, 2) == [0, 0.25, 0.5, 0.75, 1]
    tr = dyadic_triples(1.0, [1], per_level=None)
    assert tr == [(0.0, 0.25, 0.5), (0.5, 0.75, 1.0)]
    assert len(dyadic_triples(1.0, [6], per_level=4)) == 4


def test_fit_order_recovers_slope():
    h = np.array([0.1, 0.05, 0.025])
    slope, used = fit_order(h, 3 * h ** 2.5)
    assert slope == pytest.approx(2.5) and used == 3
    slope, used = fit_order(h, [1e-20, 1e-20, 1e-20])
    assert math.isnan(slope) and used == 0


# -- almost flows ------------------------------------------------------------------------
@settings(max_examples=20, deadline=None)
@given(st.floats(0, 1))
def test_flows_are_identity_on_the_diagonal(t):
    x, fam, F, _ = pure_area_setup()
    for phi in (davie_flow(x, F), log_ode_flow(x, F)):
        assert np.array_equal(phi(t, t, A0), A0)


def test_flow_rejects_backwards_times():
    x, fam, F, _ = pure_area_setup()
    with pytest.raises(DomainError):
        davie_flow(x, F)(0.5, 0.2, A0)


def test_davie_flow_level_two_formula():
    fam = builtin_family("vanderpol", mu=0.6)
    path = PiecewiseLinearPath([0.0, 0.4, 1.0], [[0.0, 0.0], [0.3, -0.2], [0.1, 0.4]])
    x = signature_path(path, 2)
    phi = davie_flow(x, ElementaryDifferentials(fam, x.algebra))
    a = np.array([0.2, -0.1])
    e = x(0.1, 0.9)
    ref = a.copy()
    for i in "ab":
        ref += float(e[(i,)]) * fam[i].value(a)
        for j in "ab":
            ref += float(e[(i, j)]) * fam[j].tensor(a, 1) @ fam[i].value(a)
    assert np.allclose(phi(0.1, 0.9, a), ref, atol=1e-14)


def test_branched_davie_equals_tensor_davie():
    fam = builtin_family("vanderpol", mu=0.6)
    path = PiecewiseLinearPath([0, Fraction(1, 2), 1], [[0, 0], [Fraction(1, 3), -1], [1, 1]])
    x = signature_path(path, 2)
    tau = branched_lift_level2(x)
    d_word = davie_flow(x, ElementaryDifferentials(fam, x.algebra))
    d_tree = davie_flow(tau, ElementaryDifferentials(fam, TreeAlgebra(x.algebra.alphabet)))
    for s, t in [(0, 1), (Fraction(1, 4), Fraction(3, 4))]:
        a = np.array([0.3, 0.1])
        assert np.allclose(d_word(s, t, a), d_tree(s, t, a), atol=1e-14)


def test_log_ode_flow_on_pure_area_is_matrix_exponential():
    x, fam, F, B = pure_area_setup()
    phi = log_ode_flow(x, F, substeps=64)
    for s, t in [(0.0, 1.0), (0.25, 0.5)]:
        assert np.allclose(phi(s, t, A0), expm((t - s) * B) @ A0, atol=1e-10)


def test_log_ode_flow_for_smooth_lift_matches_ode():
    path = PiecewiseLinearPath.from_function(lambda t: [np.sin(t), 0.5 * t * t], np.linspace(0, 1, 65))
    x = signature_path(path, 3)
    fam = LinearFamily(MATS)
    phi = log_ode_flow(x, ElementaryDifferentials(fam, x.algebra), substeps=64)
    errs = [np.linalg.norm(phi(0.0, h, A0) - piecewise_linear_reference(path, fam, A0, 0.0, h)) for h in (0.25, 0.125)]
    # level-3 truncation leaves an O(h^4) local error
    assert errs[1] < errs[0] / 12
    assert errs[1] < 1e-6


def test_log_ode_rejects_non_geometric_driver():
    W = WordAlgebra("ab", "tensor")
    x = RoughPath(lambda s, t: GradedElement(W, {(): 1.0, ("a", "a"): t - s}, 2), W, 2, p=2.0)
    fam = LinearFamily(MATS)
    phi = log_ode_flow(x, ElementaryDifferentials(fam, W))
    with pytest.raises(GeometricityError):
        phi(0.0, 0.5, A0)


def test_flow_algebra_mismatch():
    x, fam, _, _ = pure_area_setup()
    with pytest.raises(DomainError):
        davie_flow(x, ElementaryDifferentials(fam, WordAlgebra("ab", "word")))


def test_exact_flow_flag_for_matrix_exponentials():
    B = MATS["a"]
    phi = AlmostFlow(lambda s, t, a: expm((t - s) * B) @ a)
    fit = almost_flow_defect(phi, dyadic_triples(1.0, range(1, 6), 3), [A0])
    assert fit.exact_flow and math.isnan(fit.theta)


def test_davie_defect_exponent_pure_area():
    x, fam, F, _ = pure_area_setup()
    fit = almost_flow_defect(davie_flow(x, F), dyadic_triples(1.0, range(2, 8), 4), [A0, np.array([-0.3, 0.8])])
    assert not fit.exact_flow
    assert fit.theta >= 1.4
    assert all(row[4] <= fit.L * row[3] ** fit.theta * (1 + 1e-9) for row in fit.table if row[4] > 0)


def test_compose_scheme_convergence_pure_area():
    x, fam, F, B = pure_area_setup()
    ref = expm(B) @ A0
    res = convergence_study(davie_flow(x, F), A0, ref, range(4, 9))
    assert res.order >= 0.4
    assert res.errors[-1] < res.errors[0]


def test_compose_scheme_cap_and_partition():
    phi = AlmostFlow(lambda s, t, a: a * 1e3)
    with pytest.raises(BlowUpError):
        compose_scheme(phi, dyadic_partition(1.0, 4), A0, cap=1e6)
    with pytest.raises(DomainError):
        compose_scheme(phi, [0.0, 0.5, 0.5], A0)


def test_d_solution_constant_is_finite():
    x, fam, F, _ = pure_area_setup()
    phi = davie_flow(x, F)
    run = compose_scheme(phi, dyadic_partition(1.0, 6), A0)
    c = d_solution_constant(run, phi, 1.5)
    assert np.isfinite(c) and c >= 0


# -- Taylor and composition formulas -------------------------------------------------------
def test_taylor_remainder_slope_and_zero_time():
    fam = builtin_family("vanderpol", mu=0.5)
    W = WordAlgebra("ab", "tensor")
    F = ElementaryDifferentials(fam, W)
    alpha = parse_element("1 * a + 1/2 * b", W, 2)
    beta = GradedElement.unit(W, 2)
    a = np.array([0.3, -0.2])
    main, rem = taylor_remainder(F, alpha, beta, a, 0.0)
    assert np.array_equal(rem, np.zeros(2))
    slope, _ = taylor_remainder_slope(F, alpha, beta, a)
    assert slope >= 3 - 0.1


def test_taylor_main_term_is_classical_taylor():
    fam = builtin_family("vanderpol", mu=0.5)
    W = WordAlgebra("a", "tensor")
    F = ElementaryDifferentials(fam, W)
    a = np.array([0.3, -0.2])
    t = 0.05
    main, _ = taylor_remainder(F, GradedElement.letter(W, "a", 4), GradedElement.unit(W, 4), a, t)
    sol = solve_ivp(lambda _, z: fam["a"].value(z), (0, t), a, method="DOP853", rtol=1e-13, atol=1e-15).y[:, -1]
    # fourth-order Taylor polynomial: error O(t^5)
    assert np.linalg.norm(main - sol) < 10 * t ** 5


def test_taylor_operator_form_matches_vector_form():
    from roughflow.fields import IdentityMap

    fam = builtin_family("vanderpol", mu=0.5)
    W = WordAlgebra("ab", "tensor")
    F = ElementaryDifferentials(fam, W)
    alpha = parse_element("1/5 * a + -1/10 * b", W, 3)
    a = np.array([0.1, 0.4])
    assert np.allclose(taylor_operator_main(fam, alpha, IdentityMap(2), a), F(exp_truncated(alpha), a), atol=1e-14)


def test_composition_formula():
    fam = builtin_family("vanderpol", mu=0.5)
    W = WordAlgebra("ab", "tensor")
    F = ElementaryDifferentials(fam, W)
    a = np.array([0.3, -0.2])
    alpha, beta = GradedElement.letter(W, "a", 2), GradedElement.letter(W, "b", 2)
    zero = GradedElement.zero(W, 2)
    assert np.linalg.norm(composition_defect(F, alpha, zero, a)) < 1e-14
    slope, _ = composition_defect_slope(F, alpha, beta, a)
    assert slope >= 2 + 0.8


def test_commuting_flows():
    fam = LinearFamily({"a": [[1.0, 2.0], [0.0, 1.0]], "b": [[0.5, 1.0], [0.0, 0.5]]})
    rep = commuting_flows_check(fam, "a", "b", [1.0, -0.5], [0.5, 0.25, 0.125])
    assert rep.max_defect <= 1e-10 and rep.bracket_norm == 0
    same = commuting_flows_check(fam, "a", "a", [1.0, -0.5], [0.5])
    assert same.max_defect == 0


def test_non_commuting_flows_defect_scales_with_bracket():
    fam = builtin_family("rotation")
    a = [1.0, 0.3]
    ts = [2.0 ** -k for k in range(4, 9)]
    rep = commuting_flows_check(fam, "a", "b", a, ts)
    assert rep.lower_constant > 0
    assert rep.defects[-1] / ts[-1] ** 2 == pytest.approx(rep.bracket_norm, rel=0.05)


# -- Davie lemma -----------------------------------------------------------------------
def test_davie_lemma_synthetic_power():
    triples = dyadic_triples(1.0, range(0, 8))
    res = davie_lemma_bound(lambda s, t: (t - s) ** 1.5, triples, lambda w: w ** 1.5, 2 ** -0.5)
    assert res.passed
    assert res.M == pytest.approx(1 - 2 ** -0.5)
    assert res.constant == pytest.approx(1.0)
    assert res.worst_ratio <= res.constant * (1 + 1e-12)


def test_davie_lemma_zero_family():
    res = davie_lemma_bound(lambda s, t: 0.0, dyadic_triples(1.0, range(0, 5)), lambda w: w ** 1.5, 2 ** -0.5)
    assert res.passed and res.worst_ratio == 0


def test_davie_lemma_rejects_bad_hypotheses():
    tr = dyadic_triples(1.0, range(0, 4))
    assert not davie_lemma_bound(lambda s, t: t - s, tr, lambda w: w, 1.0).passed
    # ϖ(x) = x is not strictly super-linear: 2ϖ(x) <= κϖ(2x) fails for κ < 1
    assert not davie_lemma_bound(lambda s, t: t - s, tr, lambda w: w, 0.9).passed
    # prescribed M too small for the triple inequality
    res = davie_lemma_bound(lambda s, t: (t - s) ** 1.5, tr, lambda w: w ** 1.5, 2 ** -0.5, M=0.01)
    assert not res.passed and "M >=" in res.message


def test_davie_lemma_on_scheme_defects():
    x, fam, F, B = pure_area_setup()
    phi = davie_flow(x, F)

    def U(s, t):
        ys = expm(s * B) @ A0
        return float(np.linalg.norm(expm(t * B) @ A0 - phi(s, t, ys)))

    res = davie_lemma_bound(U, dyadic_triples(1.0, range(0, 9)), lambda w: w ** 1.5, 2 ** -0.5)
    assert res.passed


# -- decay propagation -------------------------------------------------------------------
@pytest.mark.parametrize("a,b", [(0.5, 0.5), (1.5, 0.5), (2.0, 3.0), (0.25, 2.75), (3.5, 1.0)])
def test_sup_closed_form_vs_grid(a, b):
    assert abs(sup_closed_form(a, b) - sup_grid(a, b)) < 1e-10


def test_sup_edge_cases():
    assert sup_closed_form(0, 2) == 1.0
    with pytest.raises(DomainError):
        sup_closed_form(-1, 1)


def test_decay_propagate_zero_fields():
    c = DecayConstants(2.0, 1.0, 3, [1.0, 1.0, 1.0], [1.0, 0.0, 0.0, 0.0])
    assert decay_propagate(c) == 0.0


def test_decay_propagate_single_term():
    c = DecayConstants(2.0, 1.0, 3, [0.0, 0.0, 2.0], [1.0, 3.0, 0.0, 0.0], x_norm=0.5)
    pref = 1 / (1 - 2 ** ((2 - 3 - 1) / 2))
    assert decay_propagate(c) == pytest.approx(0.5 * pref * 2.0 * 3.0 * sup_closed_form(1.5, 0.5))


def test_decay_validation():
    with pytest.raises(DomainError):
        decay_propagate(DecayConstants(3.0, 0.5, 2, [1, 1], [1, 1, 1]))
    with pytest.raises(DomainError):
        decay_propagate(DecayConstants(2.0, 1.0, 3, [1], [1, 1, 1, 1]))


def test_factorial_decay_budget():
    p, gamma, m = 2.0, 1.0, 2
    B = math.sqrt(p * (1 - 2 ** ((p - m - gamma) / p)))
    K = (1 - 2 ** ((p - m - gamma) / p)) / (B * p)
    rep = propagate_factorial_decay(p, gamma, 6, m, K)
    assert rep.B == pytest.approx(B)
    assert rep.maintained
    assert len(rep.k) == 7
    assert not propagate_factorial_decay(p, gamma, 6, m, 1.0).maintained


def test_factorial_decay_scales_with_driver_norm():
    p, gamma, m = 2.0, 1.0, 2
    B = math.sqrt(p * (1 - 2 ** ((p - m - gamma) / p)))
    K = (1 - 2 ** ((p - m - gamma) / p)) / (B * p)
    assert propagate_factorial_decay(p, gamma, 6, m, K / 3, x_norm=3.0).maintained


# -- 4-points control -----------------------------------------------------------------------
def test_four_point_linear():
    M = np.array([[1.0, 2.0], [0.5, -1.0]])
    prof = four_point_check(lambda a: M @ a, [[-1, 1], [-1, 1]], 500, 0, jacobian=lambda a: M)
    assert prof.g_star == pytest.approx(np.linalg.norm(M, 2))
    assert np.max(prof.envelope) < 1e-12


def test_four_point_envelope_bounded_by_second_derivative():
    g = builtin_family("vanderpol", mu=0.5)["a"]
    box = [[-0.5, 0.5], [-0.5, 0.5]]
    prof = four_point_check(g.value, box, 2000, 0, jacobian=lambda a: g.tensor(a, 1))
    # sup of the bilinear operator norm of D^2 g over the box, densely sampled
    th = np.linspace(0, 2 * np.pi, 361)
    U = np.stack([np.cos(th), np.sin(th)], 1)
    d2 = 0.0
    for a in np.random.default_rng(1).uniform(-0.5, 0.5, (400, 2)):
        vals = np.einsum("qij,ui,vj->uvq", g.tensor(a, 2), U, U)
        d2 = max(d2, float(np.linalg.norm(vals, axis=2).max()))
    assert np.all(np.diff(prof.envelope) >= 0)
    assert np.all(prof.envelope <= d2 * prof.radii * (1 + 1e-9))
    assert prof.ghat(0.0) >= 0


def test_flow_four_point_propagation():
    g = builtin_family("vanderpol", mu=0.5)["a"]
    out = flow_four_point_check(g, [[-0.5, 0.5], [-0.5, 0.5]], 250, 0)
    assert out["star_ok"]
    assert out["h_star"] <= math.exp(out["g_star"]) * 1.05


# -- λ / L bounds -----------------------------------------------------------------------------
def test_lambda_bounds_pure_area():
    x = pure_area_rough_path([[0, 2], [-2, 0]])
    lam, L = hoelder_lambda_bounds(x, [0, 0.25, 0.5, 1])
    assert lam.mu[1] == 0 and lam.mu[2] == pytest.approx(4.0)
    assert L.mu[2] == pytest.approx(4.0)


def test_lambda_bounds_smooth_lift_are_finite():
    path = PiecewiseLinearPath.from_function(lambda t: [np.sin(t), t * t], np.linspace(0, 1, 17))
    # 32 grid points give 528 pairs
    lam, L = hoelder_lambda_bounds(signature_path(path, 3), np.linspace(0, 1, 32))
    assert all(np.isfinite(lam.mu)) and all(np.isfinite(L.mu))
    assert lam.mu[1] == pytest.approx(L.mu[1])


# -- structural properties ---------------------------------------------------------------
def test_constant_driver_gives_identity_flow():
    x = signature_path(PiecewiseLinearPath([0, 1], [[1, 2], [1, 2]]), 2)
    F = ElementaryDifferentials(LinearFamily(MATS), x.algebra)
    for phi in (davie_flow(x, F), log_ode_flow(x, F)):
        assert np.allclose(phi(0.2, 0.9, A0), A0, atol=1e-15)
        run = compose_scheme(phi, dyadic_partition(1.0, 3), A0)
        assert all(np.allclose(y, A0, atol=1e-15) for y in run.states)


def test_single_interval_partition_is_one_step():
    x, fam, F, _ = pure_area_setup()
    phi = davie_flow(x, F)
    run = compose_scheme(phi, [0.0, 1.0], A0)
    assert np.array_equal(run.final, phi(0.0, 1.0, A0))


def test_log_ode_pure_area_group_law():
    x, fam, F, _ = pure_area_setup()
    phi = log_ode_flow(x, F, substeps=64)
    r, s, t = 0.1, 0.45, 0.9
    assert np.allclose(phi(s, t, phi(r, s, A0)), phi(r, t, A0), atol=1e-10)


def test_davie_and_log_ode_agree_to_order():
    x, fam, F, _ = pure_area_setup()
    davie, logode = davie_flow(x, F), log_ode_flow(x, F, substeps=64)
    hs = [2.0 ** -k for k in range(2, 8)]
    gaps = [max(np.linalg.norm(davie(0.3, 0.3 + h, a) - logode(0.3, 0.3 + h, a)) for a in STARTS) for h in hs]
    slope, _ = fit_order(hs, gaps)
    assert slope >= 1.5 - 0.1


def test_d_solution_constant_is_stable_across_depths():
    x, fam, F, _ = pure_area_setup()
    phi = davie_flow(x, F)
    cs = [d_solution_constant(compose_scheme(phi, dyadic_partition(1.0, d), A0), phi, 1.5) for d in range(5, 10)]
    assert max(cs) <= 1.2 * min(cs)


def test_two_point_taylor_formula():
    from roughflow.fields import PolynomialFamily, PolynomialMap

    # constant field v: the flow is b ↦ b + t v, so exp(a) acting on a cubic g is exact Taylor
    v = [0.3, -0.7]
    fam = PolynomialFamily({"a": [{(0, 0): v[0]}, {(0, 0): v[1]}]})
    g = PolynomialMap([{(3, 0): 0.5, (1, 2): -1.0, (0, 1): 2.0}, {(2, 1): 1.5, (0, 0): 1.0}])
    W = WordAlgebra("a", "tensor")
    b = np.array([0.4, 0.9])
    got = taylor_operator_main(fam, GradedElement.letter(W, "a", 3), g, b)
    assert np.allclose(got, g.value(b + np.array(v)), atol=1e-13)
    # truncating at n = 1 keeps only g(b) + Dg(b) v
    got1 = taylor_operator_main(fam, GradedElement.letter(W, "a", 1), g, b)
    assert np.allclose(got1, g.value(b) + g.tensor(b, 1) @ np.array(v), atol=1e-13)


@pytest.mark.parametrize("n", [2, 3])
def test_newton_formula_order(n):
    from roughflow.fields import PolynomialMap

    path = PiecewiseLinearPath.from_function(lambda t: [np.sin(t), np.cos(2 * t)], np.linspace(0, 1, 1025))
    x = signature_path(path, n)
    fam = LinearFamily(MATS)
    g = PolynomialMap([{(2, 0): 1.0, (0, 1): -0.5}])
    ys = piecewise_linear_reference(path, fam, A0, 0.0, 0.5)
    hs = [2.0 ** -k for k in range(3, 8)]
    errs = [newton_defect(fam, x, g, ys, piecewise_linear_reference(path, fam, ys, 0.5, 0.5 + h), 0.5, 0.5 + h)
            for h in hs]
    slope, used = fit_order(hs, errs)
    assert used == len(hs) and slope >= n + 1 - 0.2


def test_lambda_bounds_unit_path():
    x = signature_path(PiecewiseLinearPath([0.0, 1.0], [[0.0, 0.0], [0.0, 0.0]]), 3)
    lam, L = hoelder_lambda_bounds(x, [0, 0.5, 1])
    assert lam.mu[1:] == [0.0, 0.0, 0.0] and L.mu[1:] == [0.0, 0.0, 0.0]
