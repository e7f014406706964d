"""Rough paths over word/tensor algebras.

Drivers are piecewise-linear: the signature of a straight segment with
increment ``v`` is the tensor exponential ``sum_k v^{⊗k}/k!`` and a path
signature is the ▷-product of its segment signatures.  With rational knot
data everything stays exact.
"""
from __future__ import annotations

import csv
import math
import string
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .graded import (
    Algebra,
    DomainError,
    GradedElement,
    WordAlgebra,
    grade_norms,
    mul_truncated,
)

__all__ = [
    "ConvergenceError",
    "ControlFunction",
    "RoughPath",
    "PiecewiseLinearPath",
    "LevelBounds",
    "default_alphabet",
    "segment_signature",
    "signature",
    "signature_path",
    "pure_area_rough_path",
    "lyons_extend",
    "chen_defect",
    "hoelder_level_bounds",
    "load_path_csv",
    "export_rough_path_csv",
]


class ConvergenceError(RuntimeError):
    """Dyadic products failed to settle while extending a rough path."""


def default_alphabet(d: int) -> str:
    if d > 26:
        raise ValueError("at most 26 letters are supported")
    return string.ascii_lowercase[:d]


class ControlFunction:
    """Two-parameter control ``(s, t) -> omega_{s,t}``; defaults to ``t - s``."""

    def __init__(self, evaluator: Optional[Callable] = None, T: float = 1.0):
        self._eval = evaluator
        self.T = T

    def __call__(self, s, t):
        if t == s:
            return 0 * (t - s)
        if self._eval is None:
            return t - s
        return self._eval(s, t)

    def check_superadditive(self, samples: int = 1000, seed: int = 0, tol: float = 1e-12):
        """Sample ``r <= s <= t`` and return the worst violation of super-additivity.

        Returns ``(ok, worst_excess, triple)``.
        """
        rng = np.random.default_rng(seed)
        worst, where = -math.inf, None
        for _ in range(samples):
            r, s, t = np.sort(rng.uniform(0.0, float(self.T), 3))
            excess = float(self(r, s)) + float(self(s, t)) - float(self(r, t))
            if excess > worst:
                worst, where = excess, (r, s, t)
        for v in (0.0, float(self.T) / 2, float(self.T)):
            if float(self(v, v)) != 0.0:
                return False, math.inf, (v, v, v)
        return worst <= tol, worst, where


class RoughPath:
    """Two-parameter family ``(s, t) -> x_{s,t}`` of graded elements with unit scalar part."""

    def __init__(
        self,
        evaluator: Callable,
        algebra: Algebra,
        order: int,
        p: float = 1.0,
        control: Optional[ControlFunction] = None,
        level_bounds: Optional[Sequence[float]] = None,
        T=1,
    ):
        if p < 1:
            raise ValueError("p must be >= 1")
        self._eval = evaluator
        self.algebra = algebra
        self.order = order
        self.p = p
        self.control = control or ControlFunction(T=T)
        self.level_bounds = None if level_bounds is None else list(level_bounds)
        self.T = T

    def __call__(self, s, t) -> GradedElement:
        if s > t:
            raise DomainError(f"need s <= t, got s={s}, t={t}")
        if s == t:
            return GradedElement.unit(self.algebra, self.order)
        return self._eval(s, t)

    def with_evaluator(self, evaluator, order=None, algebra=None) -> "RoughPath":
        return RoughPath(
            evaluator,
            algebra or self.algebra,
            self.order if order is None else order,
            self.p,
            self.control,
            None,
            self.T,
        )

    def __repr__(self):
        return f"RoughPath({self.algebra!r}, order={self.order}, p={self.p})"


def _as_number(v, exact):
    if exact:
        return Fraction(v)
    return float(v)


class PiecewiseLinearPath:
    """Linear interpolation through knots ``(times[k], values[k])`` in ``R^d``."""

    def __init__(self, times: Sequence, values: Sequence[Sequence]):
        if len(times) < 2:
            raise ValueError("a path needs at least two knots")
        if len(values) != len(times):
            raise ValueError("times and values must have the same length")
        self.exact = all(isinstance(t, (int, Fraction)) for t in times) and all(
            isinstance(c, (int, Fraction)) for row in values for c in row
        )
        self.times = [_as_number(t, self.exact) for t in times]
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("knot times must be strictly increasing")
        self.values = [[_as_number(c, self.exact) for c in row] for row in values]
        self.dim = len(self.values[0])
        if any(len(row) != self.dim for row in self.values):
            raise ValueError("all knot values must share one dimension")

    @classmethod
    def from_function(cls, func: Callable, times: Sequence) -> "PiecewiseLinearPath":
        """Sample ``func`` at the given times (e.g. to lift a smooth curve)."""
        return cls(list(times), [list(np.atleast_1d(func(t))) for t in times])

    @property
    def T0(self):
        return self.times[0]

    @property
    def T(self):
        return self.times[-1]

    def __call__(self, t):
        if t < self.T0 or t > self.T:
            raise DomainError(f"time {t} outside [{self.T0}, {self.T}]")
        if self.exact and isinstance(t, (int, Fraction)):
            t = Fraction(t)
        k = self._segment(t)
        t0, t1 = self.times[k], self.times[k + 1]
        w = (t - t0) / (t1 - t0)
        return [a + w * (b - a) for a, b in zip(self.values[k], self.values[k + 1])]

    def _segment(self, t):
        # index k with times[k] <= t <= times[k+1]
        lo, hi = 0, len(self.times) - 2
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.times[mid] <= t:
                lo = mid
            else:
                hi = mid - 1
        return lo

    def increments(self, s, t) -> List[List]:
        """Increments of the linear pieces covering ``[s, t]``, in time order."""
        if s > t:
            raise DomainError(f"need s <= t, got s={s}, t={t}")
        if s < self.T0 or t > self.T:
            raise DomainError(f"[{s}, {t}] outside [{self.T0}, {self.T}]")
        if s == t:
            return []
        cuts = [s] + [u for u in self.times if s < u < t] + [t]
        out, prev = [], self(s)
        for u in cuts[1:]:
            cur = self(u)
            out.append([b - a for a, b in zip(prev, cur)])
            prev = cur
        return out


def segment_signature(v: Sequence, algebra: WordAlgebra, n: int) -> GradedElement:
    """Tensor exponential of a single increment, truncated at ``n``."""
    if len(v) != len(algebra.alphabet):
        raise ValueError("increment dimension does not match the alphabet")
    exact = all(isinstance(c, (int, Fraction)) for c in v)
    terms: Dict = {(): 1}
    idx = range(len(v))
    for k in range(1, n + 1):
        scale = Fraction(1, math.factorial(k)) if exact else 1.0 / math.factorial(k)
        for pos in product(idx, repeat=k):
            c = scale
            for i in pos:
                c = c * v[i]
                if c == 0:
                    break
            if c != 0:
                terms[tuple(algebra.alphabet[i] for i in pos)] = c
    return GradedElement(algebra, terms, n)


def _word_algebra_for(path: PiecewiseLinearPath, alphabet, kind="tensor") -> WordAlgebra:
    return WordAlgebra(alphabet or default_alphabet(path.dim), kind)


def signature(path: PiecewiseLinearPath, s, t, n: int, alphabet: Optional[str] = None) -> GradedElement:
    """Step-``n`` signature of ``path`` over ``[s, t]``."""
    if n < 1:
        raise ValueError("signature depth must be >= 1")
    alg = _word_algebra_for(path, alphabet)
    result = GradedElement.unit(alg, n)
    for v in path.increments(s, t):
        result = mul_truncated(result, segment_signature(v, alg, n))
    return result


def signature_path(path: PiecewiseLinearPath, n: int, p: float = 1.0, alphabet: Optional[str] = None) -> RoughPath:
    """The step-``n`` signature lift of a piecewise-linear path as a :class:`RoughPath`."""
    alg = _word_algebra_for(path, alphabet)
    return RoughPath(
        lambda s, t: signature(path, s, t, n, alg.alphabet),
        alg,
        n,
        p=p,
        control=ControlFunction(T=path.T),
        T=path.T,
    )


def pure_area_rough_path(A, alphabet: Optional[str] = None, p: float = 2.0, T=1) -> RoughPath:
    """``x_{s,t} = 1 + (t - s) A`` with zero first level; ``A`` must be antisymmetric."""
    A = [list(row) for row in A]
    d = len(A)
    if any(len(row) != d for row in A):
        raise DomainError("area matrix must be square")
    for i in range(d):
        for j in range(d):
            if A[i][j] != -A[j][i]:
                raise DomainError("area matrix must be antisymmetric")
    alg = WordAlgebra(alphabet or default_alphabet(d), "tensor")
    letters = alg.alphabet

    def evaluate(s, t):
        dt = t - s
        terms = {(): 1}
        for i in range(d):
            for j in range(d):
                if A[i][j] != 0:
                    terms[(letters[i], letters[j])] = dt * A[i][j]
        return GradedElement(alg, terms, 2)

    norm = sum(abs(c) for row in A for c in row)
    return RoughPath(evaluate, alg, 2, p=p, control=ControlFunction(T=T), level_bounds=[1, 0, norm], T=T)


# -- Lyons extension ---------------------------------------------------------
def _dyadic_product(x: RoughPath, s, t, N: int, depth: int) -> GradedElement:
    pieces = 2 ** depth
    h = (t - s) / pieces
    knots = [s + k * h for k in range(pieces)] + [t]
    elems = [x(a, b).to_float().truncate(N) for a, b in zip(knots, knots[1:])]
    acc = elems[-1]
    # right-nested fold
    for e in reversed(elems[:-1]):
        acc = mul_truncated(e, acc)
    return acc


def _level_vectors(a: GradedElement, lo: int, hi: int) -> Dict[int, Dict]:
    groups = a.by_grade()
    return {g: dict(groups.get(g, {})) for g in range(lo, hi + 1)}


def _l1_diff(u: Dict, v: Dict) -> float:
    keys = set(u) | set(v)
    return sum(abs(u.get(k, 0.0) - v.get(k, 0.0)) for k in keys)


def lyons_extend(
    x: RoughPath,
    N: int,
    depth: int = 12,
    extrapolate: bool = True,
    rtol: float = 1e-13,
) -> RoughPath:
    """Extend a rough path to order ``N`` by dyadic ▷-products at fixed ``depth``.

    Levels up to ``x.order`` are copied from ``x``.  Levels above are taken from
    the product over ``2**depth`` equal pieces; with ``extrapolate`` the per-level
    geometric decay of the last two depth increments is summed to its limit.
    The evaluator exposes the last diagnostics as ``extended.diagnostics``.
    """
    n = x.order
    if N <= n:
        return x.with_evaluator(lambda s, t: x(s, t).truncate(N), order=N)
    if n < math.floor(x.p):
        raise DomainError(f"order {n} is below floor(p) = {math.floor(x.p)}")
    if depth < 3:
        raise ValueError("depth must be at least 3")
    cache: Dict[Tuple, GradedElement] = {}
    lock = threading.Lock()
    diagnostics: Dict[Tuple, Dict] = {}

    def evaluate(s, t):
        key = (s, t, depth)
        with lock:
            if key in cache:
                return cache[key]
        levels = [
            _level_vectors(_dyadic_product(x, s, t, N, d), n + 1, N) for d in range(depth - 3, depth + 1)
        ]
        top = levels[-1]
        ratios = {}
        result = {k: c for k, c in x(s, t).to_float().terms.items()}
        for g in range(n + 1, N + 1):
            incs = [_l1_diff(levels[i + 1][g], levels[i][g]) for i in range(3)]
            scale = max(sum(abs(c) for c in top[g].values()), 1e-300)
            if incs[-1] <= rtol * scale:
                r = 0.0
            else:
                r1 = incs[1] / incs[0] if incs[0] > 0 else math.inf
                r2 = incs[2] / incs[1] if incs[1] > 0 else math.inf
                if r1 >= 1 and r2 >= 1:
                    raise ConvergenceError(
                        f"level {g} increments {incs} do not decay on [{s}, {t}]"
                    )
                r = r2
            ratios[g] = r
            vals = dict(top[g])
            if extrapolate and 0 < r < 1:
                prev = levels[-2][g]
                factor = r / (1 - r)
                for k in set(vals) | set(prev):
                    vals[k] = vals.get(k, 0.0) + (vals.get(k, 0.0) - prev.get(k, 0.0)) * factor
            result.update(vals)
        out = GradedElement(x.algebra, result, N)
        with lock:
            cache[key] = out
            diagnostics[key] = {"ratios": ratios}
        return out

    ext = x.with_evaluator(evaluate, order=N)
    ext.diagnostics = diagnostics
    return ext


def chen_defect(x: RoughPath, r, s, t, order: Optional[int] = None) -> List:
    """Per-grade norms of ``x_{r,s} x_{s,t} - x_{r,t}``.

    With ``order`` given, the elements are embedded at that order before the
    product, exposing the overflow grades of a truncated family.
    """
    if not (r <= s <= t):
        raise DomainError("need r <= s <= t")
    a, b, c = x(r, s), x(s, t), x(r, t)
    if order is not None:
        a, b, c = a.truncate(order), b.truncate(order), c.truncate(order)
    return grade_norms(mul_truncated(a, b) - c)


@dataclass
class LevelBounds:
    """Estimated ``mu_i`` with the arg-max pair for each grade."""

    mu: List[float]
    argmax: List[Optional[Tuple]]
    infinite: List[bool] = field(default_factory=list)


def hoelder_level_bounds(x: RoughPath, grid: Sequence, levels: Optional[Callable] = None) -> LevelBounds:
    """``mu_i = max |x^(i)_{s,t}| / omega_{s,t}^{i/p}`` over pairs ``s < t`` of the grid.

    ``levels`` optionally maps ``(s, t)`` to the element to measure (used for
    the logarithm bounds); it defaults to ``x`` itself.
    """
    grid = sorted(grid)
    if not grid:
        raise ValueError("sample grid must be nonempty")
    get = levels or x
    n = x.order
    mu = [0.0] * (n + 1)
    arg: List[Optional[Tuple]] = [None] * (n + 1)
    inf = [False] * (n + 1)
    for a_i, s in enumerate(grid):
        for t in grid[a_i:]:
            norms = grade_norms(get(s, t), n)
            w = float(x.control(s, t))
            for i in range(1, n + 1):
                v = float(norms[i])
                if v == 0:
                    continue
                if w == 0:
                    inf[i], mu[i], arg[i] = True, math.inf, (s, t)
                    continue
                ratio = v / w ** (i / x.p)
                if ratio > mu[i]:
                    mu[i], arg[i] = ratio, (s, t)
    mu[0], arg[0] = 1.0, None
    return LevelBounds(mu, arg, inf)


# -- CSV ---------------------------------------------------------------------
def load_path_csv(path, exact: bool = False) -> PiecewiseLinearPath:
    """Read ``time,x_1..x_d`` rows (header required) into a path."""
    conv = Fraction if exact else float
    times, values = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "time":
            raise ValueError("path CSV must start with a 'time,x_1,...' header")
        for row in reader:
            if not row:
                continue
            times.append(conv(row[0]))
            values.append([conv(c) for c in row[1:]])
    return PiecewiseLinearPath(times, values)


def export_rough_path_csv(x: RoughPath, pairs: Sequence[Tuple], fh) -> None:
    """Write ``s,t,grade,key,coefficient`` rows for the given ``(s, t)`` pairs."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["s", "t", "grade", "key", "coefficient"])
    for s, t in pairs:
        elem = x(s, t)
        for k, c in elem.sorted_terms():
            writer.writerow([s, t, x.algebra.grade(k), x.algebra.format_key(k), c])
