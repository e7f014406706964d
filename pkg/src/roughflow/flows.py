"""Almost flows for rough differential equations and their error bookkeeping.

``AlmostFlow.flow(s, t, a)`` is the map ``φ_{t,s}`` applied to ``a``: it
carries a state from time ``s`` to time ``t``.  Two constructions are
provided: the log-ODE flow (solve ``y' = F[log x_{s,t}](y)`` over unit time)
and the Davie flow ``a -> F[x_{s,t}](a)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm
from scipy.special import gamma as gamma_fn

from .fields import ElementaryDifferentials, SmoothMap, VectorFieldFamily, word_operator
from .graded import (
    DomainError,
    GradedElement,
    WordAlgebra,
    bchd,
    exp_truncated,
    graded_norm,
    grade_norms,
    lie_residual,
    log_truncated,
    mul_truncated,
)
from .words import LevelBounds, PiecewiseLinearPath, RoughPath, hoelder_level_bounds

__all__ = [
    "BlowUpError",
    "GeometricityError",
    "rk4",
    "solve_field",
    "AlmostFlow",
    "log_ode_flow",
    "davie_flow",
    "SchemeRun",
    "compose_scheme",
    "dyadic_partition",
    "dyadic_triples",
    "ConvergenceResult",
    "fit_order",
    "convergence_study",
    "DefectFit",
    "almost_flow_defect",
    "d_solution_constant",
    "piecewise_linear_reference",
    "taylor_remainder",
    "taylor_remainder_slope",
    "taylor_operator_main",
    "composition_defect",
    "composition_defect_slope",
    "CommutationReport",
    "commuting_flows_check",
    "newton_defect",
    "DavieLemmaResult",
    "davie_lemma_bound",
    "DecayConstants",
    "sup_closed_form",
    "sup_grid",
    "decay_propagate",
    "FactorialDecayReport",
    "propagate_factorial_decay",
    "FourPointProfile",
    "four_point_check",
    "flow_four_point_check",
    "hoelder_lambda_bounds",
]

NOISE = 1e3 * np.finfo(float).eps


class BlowUpError(RuntimeError):
    """A state became non-finite or exceeded the configured cap."""


class GeometricityError(DomainError):
    """The logarithm of the driver leaves the free Lie span."""


def _check_finite(y, cap=math.inf):
    if not np.all(np.isfinite(y)) or np.max(np.abs(y), initial=0.0) > cap:
        raise BlowUpError(f"state blew up: {y}")
    return y


# -- ODE integration --------------------------------------------------------------
def rk4(field: Callable, y0, T: float = 1.0, steps: int = 32) -> np.ndarray:
    """Classical fourth-order Runge-Kutta for the autonomous ``y' = field(y)``."""
    y = np.array(y0, dtype=float)
    if T == 0:
        return y
    matrix = getattr(field, "matrix", None)
    h = T / steps
    if matrix is not None:
        # RK4 applied to a linear field is multiplication by its stability polynomial
        hB = h * matrix
        P = np.eye(len(y))
        term = np.eye(len(y))
        for k in range(1, 5):
            term = term @ hB / k
            P = P + term
        return _check_finite(np.linalg.matrix_power(P, steps) @ y)
    for _ in range(steps):
        k1 = field(y)
        k2 = field(y + 0.5 * h * k1)
        k3 = field(y + 0.5 * h * k2)
        k4 = field(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        _check_finite(y)
    return y


def solve_field(F: ElementaryDifferentials, alpha: GradedElement, a, T: float = 1.0, steps: int = 32):
    """``y_T[α](a)``: the time-``T`` solution of ``y' = F[α](y)`` from ``a``."""
    return rk4(F.field(alpha), a, T, steps)


# -- almost flows -----------------------------------------------------------------
class AlmostFlow:
    """Two-parameter family of maps; ``flow(s, t, a)`` moves ``a`` from ``s`` to ``t``."""

    def __init__(self, evaluator: Callable, kind: str = "custom", theta: Optional[float] = None,
                 control: Optional[Callable] = None):
        self._eval = evaluator
        self.kind = kind
        self.theta = theta
        self.control = control or (lambda s, t: t - s)

    def flow(self, s, t, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        if t == s:
            return a.copy()
        if t < s:
            raise DomainError(f"need s <= t, got s={s}, t={t}")
        return self._eval(s, t, a)

    __call__ = flow

    def __repr__(self):
        return f"AlmostFlow(kind={self.kind!r})"


def log_ode_flow(x: RoughPath, F: ElementaryDifferentials, substeps: int = 32, check_geometric: bool = True,
                 tol: float = 1e-10) -> AlmostFlow:
    """``φ_{t,s}(a) = y_1[log x_{s,t}](a)``, integrated by RK4 with ``substeps`` steps."""
    if x.algebra != F.algebra:
        raise DomainError("rough path and Newtonian map use different algebras")
    cache: Dict[Tuple, Callable] = {}

    def field_for(s, t):
        key = (s, t)
        if key not in cache:
            lam = log_truncated(x(s, t))
            if check_geometric and isinstance(lam.algebra, WordAlgebra):
                res = graded_norm(lie_residual(lam))
                if float(res) > tol * max(1.0, float(graded_norm(lam))):
                    raise GeometricityError(f"log x_{{{s},{t}}} is not a Lie element (residual {float(res):.3e})")
            if len(cache) > 4096:
                cache.clear()
            cache[key] = F.field(lam)
        return cache[key]

    def evaluate(s, t, a):
        return rk4(field_for(s, t), a, 1.0, substeps)

    flow = AlmostFlow(evaluate, "log-ode", control=x.control)
    flow.substeps = substeps
    return flow


def davie_flow(x: RoughPath, F: ElementaryDifferentials) -> AlmostFlow:
    """``φ_{t,s}(a) = F[x_{s,t}](a)``."""
    if x.algebra != F.algebra:
        raise DomainError("rough path and Newtonian map use different algebras")

    def evaluate(s, t, a):
        return _check_finite(F(x(s, t), a))

    return AlmostFlow(evaluate, "davie", control=x.control)


@dataclass
class SchemeRun:
    """States of a composed scheme over a partition."""

    partition: List[float]
    states: np.ndarray
    increments: List[float]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def compose_scheme(phi: AlmostFlow, partition: Sequence, a0, cap: float = 1e12) -> SchemeRun:
    """``y_{k+1} = φ_{t_{k+1}, t_k}(y_k)`` along an increasing partition."""
    part = list(partition)
    if len(part) < 1 or any(b <= a for a, b in zip(part, part[1:])):
        raise DomainError("partition must be strictly increasing")
    y = np.array(a0, dtype=float)
    states, incs = [y], []
    for s, t in zip(part, part[1:]):
        nxt = _check_finite(phi.flow(s, t, y), cap)
        incs.append(float(np.linalg.norm(nxt - y)))
        states.append(nxt)
        y = nxt
    return SchemeRun(part, np.array(states), incs)


def dyadic_partition(T, depth: int, T0=0) -> List:
    n = 2 ** depth
    return [T0 + (T - T0) * k / n for k in range(n + 1)]


def dyadic_triples(T, levels: Sequence[int], per_level: Optional[int] = None, T0=0.0) -> List[Tuple]:
    """Triples ``(r, midpoint, r + h)`` for ``h = (T - T0) 2^-l`` at each level."""
    out = []
    for lev in levels:
        n = 2 ** lev
        h = (T - T0) / n
        ks = range(n) if per_level is None else np.unique(np.linspace(0, n - 1, min(per_level, n)).round().astype(int))
        for k in ks:
            r = T0 + k * h
            out.append((r, r + h / 2, r + h))
    return out


# -- rate fitting -----------------------------------------------------------------
def fit_order(meshes: Sequence[float], errors: Sequence[float], floor: float = NOISE) -> Tuple[float, int]:
    """Least-squares slope of ``log error`` against ``log mesh``, ignoring errors below ``floor``.

    Returns ``(slope, points_used)``; the slope is ``nan`` with fewer than two points.
    """
    pts = [(math.log(h), math.log(e)) for h, e in zip(meshes, errors) if e > floor]
    if len(pts) < 2:
        return float("nan"), len(pts)
    X, Y = np.array(pts).T
    return float(np.polyfit(X, Y, 1)[0]), len(pts)


@dataclass
class ConvergenceResult:
    depths: List[int]
    meshes: List[float]
    errors: List[float]
    order: float
    points_used: int

    @property
    def below_noise(self) -> bool:
        """Every error sits below the noise floor: the scheme is exact to rounding."""
        return self.points_used == 0

    def rows(self):
        out = []
        for i, (d, h, e) in enumerate(zip(self.depths, self.meshes, self.errors)):
            ratio = self.errors[i - 1] / e if i and e > 0 else float("nan")
            out.append((d, h, e, ratio))
        return out


def convergence_study(phi: AlmostFlow, a0, reference, depths: Sequence[int] = range(4, 11), T=1.0,
                      floor: Optional[float] = None) -> ConvergenceResult:
    """Error of the composed scheme at time ``T`` against ``reference`` per dyadic depth.

    Depths whose error is below ``1e3 eps |ref| 2^d`` are treated as
    rounding noise and left out of the fit (override with ``floor``).
    """
    ref = np.asarray(reference, dtype=float)
    scale = max(1.0, float(np.linalg.norm(ref)))
    errs, meshes, kept = [], [], []
    for d in depths:
        run = compose_scheme(phi, dyadic_partition(T, d), a0)
        errs.append(float(np.linalg.norm(run.final - ref)))
        meshes.append(float(T) / 2 ** d)
        # worst case: rounding grows linearly in the 2^d steps
        lim = NOISE * scale * 2 ** d if floor is None else floor
        kept.append(errs[-1] > lim)
    order, used = fit_order([h for h, k in zip(meshes, kept) if k], [e for e, k in zip(errs, kept) if k], 0.0)
    return ConvergenceResult(list(depths), meshes, errs, order, used)


@dataclass
class DefectFit:
    """Fit of ``defect ≈ L ω^θ`` over sampled triples."""

    theta: float
    L: float
    table: List[Tuple[float, float, float, float, float]]
    exact_flow: bool


def almost_flow_defect(phi: AlmostFlow, triples: Sequence[Tuple], points: Sequence, control: Optional[Callable] = None,
                       exact_tol: float = 1e-12) -> DefectFit:
    """``sup_a |φ_{t,s}(φ_{s,r}(a)) - φ_{t,r}(a)|`` per triple and its log-log slope in ``ω_{r,t}``.

    Table rows are ``(r, s, t, ω_{r,t}, defect)``.  If every defect is below
    ``exact_tol`` (relative to the state scale) the family is flagged as an
    exact flow and ``θ``/``L`` are ``nan``.
    """
    omega = control or phi.control
    rows = []
    scale = 1.0
    for r, s, t in triples:
        if not (r <= s <= t):
            raise DomainError("triples must satisfy r <= s <= t")
        worst = 0.0
        for a in points:
            direct = phi.flow(r, t, a)
            scale = max(scale, float(np.linalg.norm(direct)))
            worst = max(worst, float(np.linalg.norm(phi.flow(s, t, phi.flow(r, s, a)) - direct)))
        rows.append((r, s, t, float(omega(r, t)), worst))
    usable = [(w, d) for *_, w, d in rows if w > 0 and d > exact_tol * scale]
    if not usable:
        return DefectFit(float("nan"), float("nan"), rows, True)
    if len(usable) < 2:
        w, d = usable[0]
        return DefectFit(float("nan"), float("nan"), rows, False)
    X = np.log([w for w, _ in usable])
    Y = np.log([d for _, d in usable])
    slope, icpt = np.polyfit(X, Y, 1)
    # smallest L with d <= L w^θ on every usable triple
    L = max(d / w ** slope for w, d in usable)
    return DefectFit(float(slope), float(L), rows, False)


def d_solution_constant(run: SchemeRun, phi: AlmostFlow, exponent: float, pairs: Optional[Sequence] = None) -> float:
    """``max |y_t - φ_{t,s}(y_s)| / ω_{s,t}^exponent`` over pairs of partition indices."""
    part, ys = run.partition, run.states
    if pairs is None:
        n = len(part) - 1
        pairs = [(i, j) for i in range(0, n, max(1, n // 8)) for j in range(i + 1, n + 1, max(1, n // 8))]
    worst = 0.0
    for i, j in pairs:
        s, t = part[i], part[j]
        d = float(np.linalg.norm(ys[j] - phi.flow(s, t, ys[i])))
        worst = max(worst, d / float(phi.control(s, t)) ** exponent)
    return worst


def piecewise_linear_reference(path: PiecewiseLinearPath, family: VectorFieldFamily, a0, s=None, t=None,
                               steps_per_segment: int = 256) -> np.ndarray:
    """Solution of ``dy = Σ f_i(y) dx^i`` along a piecewise-linear path.

    Linear fields use the exact segment exponentials; others use RK4.
    """
    s = path.T0 if s is None else s
    t = path.T if t is None else t
    y = np.array(a0, dtype=float)
    letters = family.alphabet
    for v in path.increments(s, t):
        v = [float(c) for c in v]
        if family.is_linear:
            G = sum(c * family[l].M for c, l in zip(v, letters))
            y = expm(G) @ y
        else:
            y = rk4(lambda z: sum(c * family[l].value(z) for c, l in zip(v, letters)), y, 1.0, steps_per_segment)
    return y


# -- formula checks ----------------------------------------------------------------
def taylor_remainder(F: ElementaryDifferentials, alpha: GradedElement, beta: GradedElement, a, t,
                     substeps: int = 64) -> Tuple[np.ndarray, np.ndarray]:
    """``(main, remainder)`` with ``main = F[exp(tα) ▷ β](a)`` and ``F[β](y_t[α](a)) = main + remainder``."""
    a = np.asarray(a, dtype=float)
    main = F(mul_truncated(exp_truncated(alpha * t), beta), a)
    y = solve_field(F, alpha * t, a, 1.0, substeps) if t != 0 else a.copy()
    return main, F(beta, y) - main


def taylor_remainder_slope(F, alpha, beta, a, ks: Sequence[int] = range(2, 7), substeps: int = 64) -> Tuple[float, List]:
    ts = [2.0 ** -k for k in ks]
    errs = [float(np.linalg.norm(taylor_remainder(F, alpha, beta, a, t, substeps)[1])) for t in ts]
    return fit_order(ts, errs)[0], errs


def taylor_operator_main(family: VectorFieldFamily, alpha: GradedElement, g: SmoothMap, a) -> np.ndarray:
    """Operator form ``F†[exp(α)] g (a)`` of the Taylor main term."""
    return word_operator(exp_truncated(alpha), family, g, a)


def composition_defect(F: ElementaryDifferentials, alpha: GradedElement, beta: GradedElement, a,
                       substeps: int = 64) -> np.ndarray:
    """``y_1[β](y_1[α](a)) - y_1[α ⊛ β](a)``."""
    lhs = solve_field(F, beta, solve_field(F, alpha, a, 1.0, substeps), 1.0, substeps)
    return lhs - solve_field(F, bchd(alpha, beta), a, 1.0, substeps)


def composition_defect_slope(F, alpha, beta, a, ks: Sequence[int] = range(2, 7), substeps: int = 64):
    ts = [2.0 ** -k for k in ks]
    errs = [float(np.linalg.norm(composition_defect(F, alpha * t, beta * t, a, substeps))) for t in ts]
    return fit_order(ts, errs)[0], errs


@dataclass
class CommutationReport:
    max_defect: float
    bracket_norm: float
    lower_constant: float
    defects: List[float]


def commuting_flows_check(family: VectorFieldFamily, i: str, j: str, a, ts: Sequence[float],
                          steps: int = 64) -> CommutationReport:
    """Compare ``Φ[i]_t ∘ Φ[j]_t`` with ``Φ[j]_t ∘ Φ[i]_t`` on a grid of times.

    ``lower_constant`` is ``min defect / t^2`` over the grid; the bracket norm is
    ``|D f_j f_i - D f_i f_j|(a)``.
    """
    fi, fj = family[i], family[j]
    a = np.asarray(a, dtype=float)

    def flow(f, t, y):
        if isinstance(getattr(f, "M", None), np.ndarray):
            return expm(t * f.M) @ y
        return rk4(f.value, y, t, steps)

    defects = []
    for t in ts:
        d = flow(fi, t, flow(fj, t, a)) - flow(fj, t, flow(fi, t, a))
        defects.append(float(np.linalg.norm(d)))
    bracket = fj.tensor(a, 1) @ fi.value(a) - fi.tensor(a, 1) @ fj.value(a)
    lower = min((d / t ** 2 for d, t in zip(defects, ts) if t > 0), default=0.0)
    return CommutationReport(max(defects, default=0.0), float(np.linalg.norm(bracket)), lower, defects)


def newton_defect(family: VectorFieldFamily, x: RoughPath, g: SmoothMap, ys, yt, s, t) -> float:
    """``|g(y_t) - F†[x_{s,t}] g(y_s)|`` for a word/tensor rough path."""
    return float(np.linalg.norm(g.value(yt) - word_operator(x(s, t), family, g, ys)))


# -- Davie lemma -----------------------------------------------------------------------
@dataclass
class DavieLemmaResult:
    passed: bool
    worst_ratio: float
    M: float
    kappa: float
    constant: float
    offending: Optional[Tuple] = None
    message: str = ""


def davie_lemma_bound(U: Callable, triples: Sequence[Tuple], varpi: Callable, kappa: float,
                      M: Optional[float] = None, omega: Optional[Callable] = None, rtol: float = 1e-12,
                      xs: Optional[Sequence[float]] = None) -> DavieLemmaResult:
    """Check the Davie-lemma hypotheses on samples and then its conclusion.

    Hypotheses: ``ϖ(0) = 0``, ``2ϖ(x) <= κϖ(2x)`` with ``κ < 1``, finite
    ``U/ϖ(ω)`` and ``U_{r,t} <= U_{r,s} + U_{s,t} + M ϖ(ω_{r,t})``.  Without
    ``M`` the smallest admissible value on the samples is used.  Conclusion:
    ``U_{r,t} <= M/(1-κ) ϖ(ω_{r,t})``; ``worst_ratio`` is the largest
    observed ``U_{r,t} / ϖ(ω_{r,t})``.
    """
    omega = omega or (lambda s, t: t - s)
    if not kappa < 1:
        return DavieLemmaResult(False, math.nan, math.nan, kappa, math.nan, None, "kappa must be < 1")
    if varpi(0.0) != 0:
        return DavieLemmaResult(False, math.nan, math.nan, kappa, math.nan, None, "varpi(0) != 0")
    if xs is None:
        xs = sorted({float(omega(r, t)) for r, _, t in triples} | {float(omega(r, s)) for r, s, _ in triples})
    for x in xs:
        if 2 * varpi(x) > kappa * varpi(2 * x) * (1 + rtol):
            return DavieLemmaResult(False, math.nan, math.nan, kappa, math.nan, (x,), "2ϖ(x) <= κϖ(2x) fails")
    needed = 0.0
    worst_ratio, arg = 0.0, None
    for r, s, t in triples:
        w = varpi(float(omega(r, t)))
        urt = U(r, t)
        excess = urt - U(r, s) - U(s, t)
        if w == 0:
            if excess > 0 or urt > 0:
                return DavieLemmaResult(False, math.inf, math.nan, kappa, math.nan, (r, s, t), "ϖ(ω) = 0 with U > 0")
            continue
        needed = max(needed, excess / w)
        if urt / w > worst_ratio:
            worst_ratio, arg = urt / w, (r, s, t)
    if M is None:
        M = needed
    elif needed > M * (1 + rtol) + rtol:
        return DavieLemmaResult(False, worst_ratio, M, kappa, M / (1 - kappa), arg,
                                f"triple inequality needs M >= {needed}")
    constant = M / (1 - kappa)
    passed = worst_ratio <= constant * (1 + rtol) + rtol
    return DavieLemmaResult(passed, worst_ratio, M, kappa, constant, None if passed else arg,
                            "" if passed else "conclusion bound violated")


# -- decay propagation ---------------------------------------------------------------
@dataclass
class DecayConstants:
    """Inputs of the decay recursion; ``k[j]`` for ``j < n`` and ``nu[j]`` for ``1 <= j <= n``."""

    p: float
    gamma: float
    n: int
    k: List[float]
    nu: List[float]
    x_norm: float = 1.0
    mu: List[float] = field(default_factory=list)
    lam: List[float] = field(default_factory=list)

    def validate(self):
        if not self.n - 1 + self.gamma > self.p:
            raise DomainError(f"need n - 1 + gamma > p, got n={self.n}, gamma={self.gamma}, p={self.p}")
        if len(self.k) < self.n or len(self.nu) < self.n + 1:
            raise DomainError("need k_0..k_{n-1} and nu_0..nu_n")
        if any(v < 0 for v in list(self.k) + list(self.nu) + [self.x_norm]):
            raise DomainError("constants must be non-negative")


def sup_closed_form(a: float, b: float) -> float:
    """``sup_{u in (0,1)} u^a (1-u)^b = a^a b^b / (a+b)^(a+b)``, attained at ``u = a/(a+b)``."""
    if a < 0 or b < 0:
        raise DomainError("exponents must be non-negative")
    if a == 0 and b == 0:
        return 1.0
    if a == 0 or b == 0:
        return 1.0
    return math.exp(a * math.log(a) + b * math.log(b) - (a + b) * math.log(a + b))


def sup_grid(a: float, b: float, points: int = 200001) -> float:
    """Dense-grid estimate of the same supremum (bracketed refinement around the best node)."""
    u = np.linspace(0.0, 1.0, points)[1:-1]
    vals = u ** a * (1 - u) ** b
    i = int(np.argmax(vals))
    lo, hi = u[max(i - 1, 0)], u[min(i + 1, len(u) - 1)]
    fine = np.linspace(lo, hi, points)
    return float(np.max(fine ** a * (1 - fine) ** b))


def decay_propagate(c: DecayConstants) -> float:
    """``k_n`` from the decay recursion with each supremum taken term by term.

    With ``ω`` additive the triple supremum reduces to one over ``u ∈ (0,1)``;
    bounding the sup of the sum by the sum of per-term sups keeps ``k_n`` an
    upper bound.
    """
    c.validate()
    p, g, n = c.p, c.gamma, c.n
    if n + g <= p:
        raise DomainError("n + gamma <= p: the prefactor diverges")
    pref = 1.0 / (1.0 - 2.0 ** ((p - n - g) / p))
    total = 0.0
    for j in range(1, n + 1):
        total += c.k[n - j] * c.nu[j] * sup_closed_form((g + n - j) / p, j / p)
    return c.x_norm * pref * total


@dataclass
class FactorialDecayReport:
    k: List[float]
    budget: List[float]
    B: float
    max_relative_excess: float

    @property
    def maintained(self) -> bool:
        return self.max_relative_excess <= 1e-12


def propagate_factorial_decay(p: float, gamma: float, n: int, m: int, K: float, x_norm: float = 1.0,
                              B: Optional[float] = None) -> FactorialDecayReport:
    """Seed ``k_j = B/Γ(j/p+1)`` for ``j <= m`` and ``ν_j = K B/Γ(j/p+1)``, then run the recursion to ``n``.

    ``B`` defaults to ``sqrt(p (1 - 2^{(p-m-γ)/p}))``.  The report gives the
    largest relative excess of a propagated ``k_j`` over its budget.
    """
    if not m + gamma > p:
        raise DomainError("need m + gamma > p")
    if B is None:
        B = math.sqrt(p * (1 - 2.0 ** ((p - m - gamma) / p)))
    budget = [float(B / gamma_fn(j / p + 1)) for j in range(n + 1)]
    nu = [K * b for b in budget]
    k = budget[: m + 1]
    for j in range(m + 1, n + 1):
        k.append(decay_propagate(DecayConstants(p, gamma, j, k, nu, x_norm)))
    excess = max(((k[j] - budget[j]) / budget[j] for j in range(m + 1, n + 1)), default=-math.inf)
    return FactorialDecayReport([float(v) for v in k], budget, B, float(excess))


# -- 4-points control ------------------------------------------------------------------
@dataclass
class FourPointProfile:
    """``g*`` and a non-decreasing envelope ``ĝ`` sampled at ``radii``."""

    g_star: float
    radii: np.ndarray
    envelope: np.ndarray

    def ghat(self, r: float) -> float:
        i = int(np.searchsorted(self.radii, r, side="left"))
        if i >= len(self.radii):
            return float(self.envelope[-1]) if len(self.envelope) else 0.0
        return float(self.envelope[i])


def _quadruples(box, samples, rng, scales):
    box = np.asarray(box, dtype=float)
    lo, hi = box[:, 0], box[:, 1]
    m = len(lo)
    out = []
    for k in range(samples):
        r = scales[k % len(scales)]
        # all four points stay in the box
        a = rng.uniform(lo, hi)
        b = np.clip(a + r * rng.uniform(-1, 1, m), lo, hi)
        c = rng.uniform(lo, hi)
        d = np.clip(c + (b - a) + r * 0.1 * rng.uniform(-1, 1, m), lo, hi)
        out.append((a, b, c, d))
    return out


def four_point_check(g: Callable, box, samples: int = 2000, seed: int = 0, jacobian: Optional[Callable] = None,
                     scales: Sequence[float] = (1e-2, 3e-2, 1e-1, 3e-1, 1.0)) -> FourPointProfile:
    """Estimate ``g*`` and ``ĝ`` in ``|g(a)-g(b)-g(c)+g(d)| <= ĝ(|a-b|∨|c-d|)(|a-c|∨|b-d|) + g*|a-b-c+d|``.

    ``g*`` is the largest Jacobian operator norm on the samples (from
    ``jacobian`` or central differences).  The envelope is the running
    maximum over radius of the remaining excess divided by ``|a-c|∨|b-d|``.
    """
    rng = np.random.default_rng(seed)
    quads = _quadruples(box, samples, rng, list(scales))
    if jacobian is None:
        def jacobian(a, h=1e-6):
            a = np.asarray(a, dtype=float)
            cols = []
            for j in range(len(a)):
                e = np.zeros(len(a))
                e[j] = h
                cols.append((np.asarray(g(a + e)) - np.asarray(g(a - e))) / (2 * h))
            return np.column_stack(cols)
    g_star = 0.0
    for a, b, c, d in quads:
        for z in (a, b, c, d):
            g_star = max(g_star, float(np.linalg.norm(jacobian(z), 2)))
    radii, ratios = [], []
    for a, b, c, d in quads:
        lhs = float(np.linalg.norm(np.asarray(g(a)) - g(b) - g(c) + g(d)))
        excess = lhs - g_star * float(np.linalg.norm(a - b - c + d))
        spread = max(float(np.linalg.norm(a - c)), float(np.linalg.norm(b - d)))
        rad = max(float(np.linalg.norm(a - b)), float(np.linalg.norm(c - d)))
        radii.append(rad)
        ratios.append(max(excess, 0.0) / spread if spread > 0 else 0.0)
    order = np.argsort(radii)
    radii = np.asarray(radii)[order]
    env = np.maximum.accumulate(np.asarray(ratios)[order])
    return FourPointProfile(g_star, radii, env)


def flow_four_point_check(g: SmoothMap, box, samples: int = 1000, seed: int = 0, steps: int = 64,
                          tol: float = 0.05) -> Dict[str, float]:
    """Compare the time-1 flow ``h`` of ``g`` with the propagated constants.

    Checks ``h* <= exp(g*)`` and ``ĥ(r) <= exp(g*) ĝ(L r) L`` with
    ``L = exp(Lip g)``, both up to the relative tolerance ``tol``.
    """
    def jac_g(a):
        return g.tensor(a, 1)

    prof_g = four_point_check(g.value, box, samples, seed, jacobian=jac_g)

    def h(a):
        return rk4(g.value, a, 1.0, steps)

    prof_h = four_point_check(h, box, samples, seed + 1)
    L = math.exp(prof_g.g_star)
    bound_star = math.exp(prof_g.g_star)
    worst = 0.0
    for r, e in zip(prof_h.radii, prof_h.envelope):
        bound = math.exp(prof_g.g_star) * prof_g.ghat(L * r) * L
        if e > 0:
            worst = max(worst, e / bound if bound > 0 else math.inf)
    return {
        "g_star": prof_g.g_star,
        "h_star": prof_h.g_star,
        "h_star_bound": bound_star,
        "star_ok": bool(prof_h.g_star <= bound_star * (1 + tol)),
        "ghat_worst_ratio": float(worst),
        "ghat_ok": bool(worst <= 1 + tol),
    }


def hoelder_lambda_bounds(x: RoughPath, grid: Sequence, thetas: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0)
                          ) -> Tuple[LevelBounds, LevelBounds]:
    """Empirical ``λ_i`` (levels of ``log x``) and ``L_i`` (levels of ``exp(θ log x)`` over ``θ``)."""
    lam = hoelder_level_bounds(x, grid, levels=lambda s, t: log_truncated(x(s, t)))

    def exp_levels(s, t):
        lg = log_truncated(x(s, t))
        best: Dict[int, GradedElement] = {}
        worst = [0.0] * (x.order + 1)
        for th in thetas:
            e = exp_truncated(lg * th)
            norms = grade_norms(e, x.order)
            for i in range(1, x.order + 1):
                if float(norms[i]) > worst[i]:
                    worst[i] = float(norms[i])
                    best[i] = e
        # one element whose grade-i part has the largest norm over θ
        terms = {}
        for i, e in best.items():
            terms.update({k: c for k, c in e.terms.items() if x.algebra.grade(k) == i})
        return GradedElement(x.algebra, terms, x.order)

    L = hoelder_level_bounds(x, grid, levels=exp_levels)
    return lam, L
