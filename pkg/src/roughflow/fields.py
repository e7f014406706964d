"""Vector-field families on R^m and their elementary differentials.

Conventions::

    F[1](a)      = a
    F[•_i](a)    = f_i(a)
    F[⌊τ_1..τ_k⌋_i](a) = D^k f_i(a)[F[τ_1](a), ..., F[τ_k](a)]
    F[i w](a)    = D F[w](a) · f_i(a)          # words, so F[ij] = D f_j · f_i

For linear fields ``f_i(x) = M_i x`` this gives ``F[i1...ik](a) = M_ik ... M_i1 a``.
Derivative tensors are indexed ``T[out, j1, ..., jk]`` and are symmetric in
the ``j`` slots.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import permutations
from string import ascii_letters
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .graded import Algebra, DomainError, GradedElement, WordAlgebra, full_product
from .trees import (
    AromaticAlgebra,
    AromaticForest,
    DecoratedTree,
    TreeAlgebra,
    word_to_tree_element,
)

__all__ = [
    "CapabilityError",
    "SmoothMap",
    "LinearMap",
    "PolynomialMap",
    "CallableMap",
    "IdentityMap",
    "VectorFieldFamily",
    "LinearFamily",
    "PolynomialFamily",
    "CallableFamily",
    "builtin_family",
    "tree_elementary",
    "word_elementary",
    "davie_iterates",
    "aromatic_operator",
    "word_operator",
    "ElementaryDifferentials",
    "MatrixProductMap",
    "newtonian_residual",
    "FieldNorms",
    "estimate_field_norms",
]


class CapabilityError(RuntimeError):
    """A computation needs more derivatives than the oracle provides."""


# -- smooth maps ----------------------------------------------------------------
class SmoothMap:
    """Map ``R^m -> R^q`` with derivative tensors up to ``order`` (``None``: unlimited)."""

    dim_in: int
    dim_out: int
    order: Optional[int] = None

    def value(self, a) -> np.ndarray:
        return self.tensor(a, 0)

    def __call__(self, a):
        return self.value(a)

    def tensor(self, a, k: int) -> np.ndarray:
        raise NotImplementedError

    def check_order(self, k: int):
        if self.order is not None and k > self.order:
            raise CapabilityError(f"derivative of order {k} requested, oracle provides {self.order}")

    def deriv(self, a, vectors: Sequence) -> np.ndarray:
        """``D^k f(a)[v_1, ..., v_k]``."""
        T = self.tensor(a, len(vectors))
        for v in reversed(vectors):
            T = T @ np.asarray(v, dtype=float)
        return T


class LinearMap(SmoothMap):
    def __init__(self, M):
        self.M = np.array(M, dtype=float)
        if self.M.ndim != 2:
            raise ValueError("linear map needs a matrix")
        self.dim_out, self.dim_in = self.M.shape

    def tensor(self, a, k):
        if k == 0:
            return self.M @ np.asarray(a, dtype=float)
        if k == 1:
            return self.M.copy()
        return np.zeros((self.dim_out,) + (self.dim_in,) * k)


class IdentityMap(LinearMap):
    def __init__(self, m: int):
        super().__init__(np.eye(m))

    def tensor(self, a, k):
        if k == 0:
            return np.array(a, dtype=float)
        return super().tensor(a, k)


class PolynomialMap(SmoothMap):
    """Polynomial components given as ``{exponent tuple: coefficient}`` tables."""

    def __init__(self, components: Sequence[Mapping]):
        comps = []
        dims = set()
        for poly in components:
            table = {}
            for exps, c in dict(poly).items():
                exps = tuple(int(e) for e in exps)
                if any(e < 0 for e in exps):
                    raise ValueError("exponents must be non-negative")
                dims.add(len(exps))
                table[exps] = table.get(exps, 0.0) + float(c)
            comps.append(table)
        if len(dims) > 1:
            raise ValueError("all monomials must have the same number of variables")
        if not dims:
            raise ValueError("polynomial map needs at least one monomial")
        self.components = comps
        self.dim_in = dims.pop()
        self.dim_out = len(comps)

    def tensor(self, a, k):
        a = np.asarray(a, dtype=float)
        m = self.dim_in
        T = np.zeros((self.dim_out,) + (m,) * k)
        for idx in np.ndindex(*((m,) * k)) if k else [()]:
            counts = np.bincount(np.array(idx, dtype=int), minlength=m) if k else np.zeros(m, int)
            for q, table in enumerate(self.components):
                s = 0.0
                for exps, c in table.items():
                    term = c
                    for j in range(m):
                        e, n = exps[j], counts[j]
                        if n > e:
                            term = 0.0
                            break
                        term *= math.perm(e, n) * a[j] ** (e - n)
                    s += term
                T[(q,) + idx] = s
        return T


class CallableMap(SmoothMap):
    """Black-box map with derivatives by finite differences or forward-mode AD.

    ``strategy="fd"`` uses nested central differences with step
    ``max(h, eps**(1/(k+2)))`` for order ``k``, optionally Richardson-extrapolated.
    ``strategy="forward"`` needs ``jax`` and a jax-traceable ``func``.
    """

    def __init__(self, func: Callable, dim_in: int, dim_out: Optional[int] = None, strategy="fd",
                 h: float = 1e-5, richardson: bool = False, order: Optional[int] = 4):
        if strategy not in ("fd", "forward"):
            raise ValueError(f"unknown derivative strategy {strategy!r}")
        self.func = func
        self.dim_in = dim_in
        self.dim_out = dim_out if dim_out is not None else dim_in
        self.strategy = strategy
        self.h = h
        self.richardson = richardson
        self.order = order
        self._jax_cache: Dict[int, Callable] = {}

    def value(self, a):
        return np.asarray(self.func(np.asarray(a, dtype=float)), dtype=float).reshape(self.dim_out)

    def _fd(self, a, k, h):
        if k == 0:
            return self.value(a)
        m = self.dim_in
        T = np.empty((self.dim_out, m) + (m,) * (k - 1))
        for j in range(m):
            e = np.zeros(m)
            e[j] = h
            T[:, j] = (self._fd(a + e, k - 1, h) - self._fd(a - e, k - 1, h)) / (2 * h)
        return T

    def _forward(self, a, k):
        import jax

        jax.config.update("jax_enable_x64", True)
        if k not in self._jax_cache:
            f = self.func
            for _ in range(k):
                f = jax.jacfwd(f)
            self._jax_cache[k] = jax.jit(f)
        return np.asarray(self._jax_cache[k](np.asarray(a, dtype=float))).reshape(
            (self.dim_out,) + (self.dim_in,) * k
        )

    def tensor(self, a, k):
        self.check_order(k)
        a = np.asarray(a, dtype=float)
        if k == 0:
            return self.value(a)
        if self.strategy == "forward":
            return self._forward(a, k)
        h = max(self.h, np.finfo(float).eps ** (1.0 / (k + 2)))
        T = self._fd(a, k, h)
        if self.richardson:
            T = (4 * self._fd(a, k, h / 2) - T) / 3
        # symmetrize the derivative slots
        if k > 1:
            perms = list(permutations(range(1, k + 1)))
            T = sum(np.transpose(T, (0,) + p) for p in perms) / len(perms)
        return T


# -- families -------------------------------------------------------------------
class VectorFieldFamily:
    """Letters of an alphabet mapped to vector fields on ``R^m``."""

    def __init__(self, fields: Mapping[str, SmoothMap]):
        if not fields:
            raise ValueError("a family needs at least one field")
        self.fields = dict(fields)
        self.alphabet = tuple(self.fields)
        dims = {(f.dim_in, f.dim_out) for f in self.fields.values()}
        if len(dims) != 1:
            raise ValueError("all fields must share one dimension")
        m_in, m_out = dims.pop()
        if m_in != m_out:
            raise ValueError("vector fields must map R^m to R^m")
        self.dim = m_in

    def __getitem__(self, letter) -> SmoothMap:
        try:
            return self.fields[letter]
        except KeyError:
            raise DomainError(f"no field for letter {letter!r}") from None

    @property
    def order(self) -> Optional[int]:
        orders = [f.order for f in self.fields.values() if f.order is not None]
        return min(orders) if orders else None

    @property
    def is_linear(self) -> bool:
        return all(isinstance(f, LinearMap) for f in self.fields.values())

    def matrices(self) -> Dict[str, np.ndarray]:
        if not self.is_linear:
            raise DomainError("family is not linear")
        return {k: f.M for k, f in self.fields.items()}

    def value(self, letter, a):
        return self[letter].value(a)

    def tensor(self, letter, a, k):
        return self[letter].tensor(a, k)

    def deriv(self, letter, a, vectors):
        return self[letter].deriv(a, vectors)

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim}, alphabet={''.join(self.alphabet)!r})"


class LinearFamily(VectorFieldFamily):
    def __init__(self, matrices: Mapping[str, object]):
        super().__init__({k: LinearMap(M) for k, M in matrices.items()})


class PolynomialFamily(VectorFieldFamily):
    def __init__(self, tables: Mapping[str, Sequence[Mapping]]):
        super().__init__({k: PolynomialMap(c) for k, c in tables.items()})


class CallableFamily(VectorFieldFamily):
    def __init__(self, funcs: Mapping[str, Callable], dim: int, **kwargs):
        super().__init__({k: CallableMap(f, dim, dim, **kwargs) for k, f in funcs.items()})


def builtin_family(name: str, **params) -> VectorFieldFamily:
    """Named families: ``linear``, ``polynomial``, ``rotation``, ``vanderpol``."""
    if name == "linear":
        return LinearFamily(params["matrices"])
    if name == "polynomial":
        tables = {}
        for letter, comps in params["tables"].items():
            tables[letter] = [
                {tuple(e): c for e, c in (comp.items() if isinstance(comp, Mapping) else comp)}
                for comp in comps
            ]
        return PolynomialFamily(tables)
    if name == "rotation":
        # rotation generator and a shear; they do not commute
        return LinearFamily({"a": [[0.0, -1.0], [1.0, 0.0]], "b": [[0.0, 1.0], [0.0, 0.0]]})
    if name in ("vanderpol", "vanderpol-like"):
        mu = float(params.get("mu", 1.0))
        return PolynomialFamily(
            {
                "a": [{(0, 1): 1.0}, {(1, 0): -1.0, (0, 1): mu, (2, 1): -mu}],
                "b": [{(0, 0): 0.0}, {(0, 0): 1.0, (1, 0): 0.5}],
            }
        )
    raise ValueError(f"unknown field family {name!r}")


# -- elementary differentials ---------------------------------------------------
def _tree_values(tau: DecoratedTree, family: VectorFieldFamily, a, memo: Dict) -> np.ndarray:
    hit = memo.get(tau)
    if hit is not None:
        return hit
    k = len(tau.children)
    f = family[tau.label]
    f.check_order(k)
    vecs = [_tree_values(c, family, a, memo) for c in tau.children]
    val = f.deriv(a, vecs) if k else f.value(a)
    memo[tau] = val
    return val


def tree_elementary(tau: DecoratedTree, family: VectorFieldFamily, a) -> np.ndarray:
    """``F[τ](a)``; the empty tree gives ``a``."""
    a = np.asarray(a, dtype=float)
    if tau.is_empty:
        return a.copy()
    return _tree_values(tau, family, a, {})


@lru_cache(maxsize=4096)
def _word_trees(word: Tuple[str, ...]) -> Tuple[Tuple[DecoratedTree, int], ...]:
    alg = TreeAlgebra(tuple(sorted(set(word))))
    return tuple(word_to_tree_element(word, alg).terms.items())


def word_elementary(word, family: VectorFieldFamily, a, budget: Optional[int] = None) -> np.ndarray:
    """``F[w](a)`` through the expansion of ``w`` as a right-nested tree product.

    ``budget`` is the regularity class ``n`` of the fields; words longer than
    ``n + 1`` are rejected.
    """
    word = tuple(word)
    if budget is not None and len(word) > budget + 1:
        raise CapabilityError(f"word of length {len(word)} exceeds the C^{budget} budget")
    a = np.asarray(a, dtype=float)
    if not word:
        return a.copy()
    out = np.zeros(family.dim)
    memo: Dict = {}
    for tree, c in _word_trees(word):
        out += c * _tree_values(tree, family, a, memo)
    return out


def _series_eval(family: VectorFieldFamily, letter: str, a: np.ndarray, K: int) -> np.ndarray:
    """Taylor coefficients ``y_0..y_K`` of the solution of ``y' = f(y), y(0) = a``."""
    m = len(a)
    f = family[letter]
    tensors = [f.tensor(a, k) for k in range(K)]
    y = np.zeros((K + 1, m))
    y[0] = a
    for j in range(K):
        # coefficient of t^j in f(y(t)) using y_1..y_j
        delta = y.copy()
        delta[0] = 0.0
        coeff = tensors[0].copy() if j == 0 else np.zeros(m)
        if j > 0:
            for k in range(1, j + 1):
                # series of D^k f(a)[δ, ..., δ] / k!
                S = np.zeros((j + 1,) + tensors[k].shape)
                S[0] = tensors[k]
                for _ in range(k):
                    new = np.zeros(S.shape[:1] + S.shape[1:-1])
                    for p in range(j + 1):
                        for r in range(1, p + 1):
                            new[p] += S[p - r] @ delta[r]
                    S = new
                coeff += S[j] / math.factorial(k)
        y[j + 1] = coeff / (j + 1)
    return y


def davie_iterates(family: VectorFieldFamily, letter: str, k: int) -> Callable:
    """``f^{{k}}`` with ``f^{{0}} = id`` and ``f^{{k+1}} = D f^{{k}} · f``.

    Computed from the Taylor series of the flow of ``f`` (``f^{{k}}(a) = k! y_k``),
    independently of the tree expansion.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    f = family[letter]
    if k > 0:
        f.check_order(k - 1)

    def iterate(a):
        a = np.asarray(a, dtype=float)
        if k == 0:
            return a.copy()
        return math.factorial(k) * _series_eval(family, letter, a, k)[k]

    return iterate


def aromatic_operator(sigma: AromaticForest, family: VectorFieldFamily, g: SmoothMap, a) -> np.ndarray:
    """``F†[σ] g (a)`` by contracting per-vertex derivative tensors (einsum).

    Each vertex ``v`` with in-neighbours ``u_1..u_s`` contributes
    ``∂^s f^{i_v}[α_v] / ∂x_{i_{u_1}} ... ∂x_{i_{u_s}}``; the roots are
    contracted with ``D^r g``.  A self-loop becomes a trace.
    """
    a = np.asarray(a, dtype=float)
    n = sigma.grade
    if n + 1 > len(ascii_letters):
        raise CapabilityError("forest too large for the contraction")
    idx = ascii_letters[:n]
    out_sym = ascii_letters[n]
    operands, subs = [], []
    for v in range(n):
        ins = sigma.in_neighbours(v)
        f = family[sigma.labels[v]]
        f.check_order(len(ins))
        operands.append(f.tensor(a, len(ins)))
        subs.append(idx[v] + "".join(idx[u] for u in ins))
    roots = sigma.roots
    g.check_order(len(roots))
    operands.append(g.tensor(a, len(roots)))
    subs.append(out_sym + "".join(idx[r] for r in roots))
    return np.einsum(",".join(subs) + "->" + out_sym, *operands, optimize=len(operands) > 2)


def _word_forest_terms(word: Tuple[str, ...]):
    alg = AromaticAlgebra(tuple(sorted(set(word))))
    acc = GradedElement.unit(alg)
    for letter in reversed(word):
        acc = full_product(GradedElement.letter(alg, letter), acc)
    return acc.terms.items()


def word_operator(alpha: GradedElement, family: VectorFieldFamily, g: SmoothMap, a) -> np.ndarray:
    """``F†[α] g (a)`` for word/tensor ``α``: ``F†[i1...ik] = F†[•_{i1}] ... F†[•_{ik}]``."""
    if not isinstance(alpha.algebra, WordAlgebra):
        raise DomainError("word_operator expects a word/tensor element")
    a = np.asarray(a, dtype=float)
    out = np.zeros(g.dim_out)
    for w, c in alpha.terms.items():
        if not w:
            out += float(c) * g.value(a)
            continue
        for forest, m in _word_forest_terms(w):
            out += float(c) * m * aromatic_operator(forest, family, g, a)
    return out


# -- Newtonian map --------------------------------------------------------------
class _LinearField:
    """``a -> B a``: the image of an element under linear fields."""

    def __init__(self, B):
        self.matrix = B

    def __call__(self, a):
        return self.matrix @ np.asarray(a, dtype=float)

    def jacobian(self, a=None):
        return self.matrix


class ElementaryDifferentials:
    """Newtonian map ``α -> F[α]`` over a word, tree or aromatic algebra."""

    def __init__(self, family: VectorFieldFamily, algebra: Algebra):
        if set(algebra.alphabet) - set(family.alphabet):
            raise DomainError("family lacks fields for some letters of the algebra")
        self.family = family
        self.algebra = algebra
        self._identity = IdentityMap(family.dim)

    def key_value(self, key, a) -> np.ndarray:
        alg = self.algebra
        if isinstance(alg, WordAlgebra):
            if self.family.is_linear:
                v = np.array(a, dtype=float)
                for letter in key:
                    v = self.family[letter].M @ v
                return v
            return word_elementary(key, self.family, a)
        if isinstance(alg, TreeAlgebra):
            return tree_elementary(key, self.family, a)
        if isinstance(alg, AromaticAlgebra):
            return aromatic_operator(key, self.family, self._identity, a)
        raise DomainError(f"unsupported algebra {alg!r}")

    def __call__(self, alpha: GradedElement, a) -> np.ndarray:
        if alpha.algebra != self.algebra:
            raise DomainError("element lives in a different algebra")
        a = np.asarray(a, dtype=float)
        out = np.zeros(self.family.dim)
        for k, c in alpha.terms.items():
            out += float(c) * self.key_value(k, a)
        return out

    def matrix(self, alpha: GradedElement) -> np.ndarray:
        """Matrix of ``F[α]`` for linear fields on a word/tensor algebra."""
        if not (self.family.is_linear and isinstance(self.algebra, WordAlgebra)):
            raise DomainError("closed-form matrices need linear fields and words")
        M = self.family.matrices()
        B = np.zeros((self.family.dim, self.family.dim))
        for w, c in alpha.terms.items():
            P = np.eye(self.family.dim)
            for letter in w:
                P = M[letter] @ P
            B += float(c) * P
        return B

    def field(self, alpha: GradedElement) -> Callable:
        """``F[α]`` as a function of the state."""
        if self.family.is_linear and isinstance(self.algebra, WordAlgebra):
            return _LinearField(self.matrix(alpha))
        return lambda a: self(alpha, a)

    def multiply(self, alpha: GradedElement, beta: GradedElement) -> GradedElement:
        return full_product(alpha, beta)

    def _tree_directional(self, tau: DecoratedTree, a, h, memo) -> np.ndarray:
        if tau.is_empty:
            return np.array(h, dtype=float)
        f = self.family[tau.label]
        kids = tau.children
        vals = [_tree_values(c, self.family, a, memo) for c in kids]
        f.check_order(len(kids) + 1)
        out = f.deriv(a, [h] + vals)
        for j, c in enumerate(kids):
            d = self._tree_directional(c, a, h, memo)
            out = out + f.deriv(a, vals[:j] + [d] + vals[j + 1 :])
        return out

    def directional(self, alpha: GradedElement, a, h, method: str = "exact", step: float = 1e-5) -> np.ndarray:
        """``D F[α](a) · h``, by the product rule (``exact``) or central differences (``fd``)."""
        a = np.asarray(a, dtype=float)
        h = np.asarray(h, dtype=float)
        if method == "fd":
            return (self(alpha, a + step * h) - self(alpha, a - step * h)) / (2 * step)
        if method != "exact":
            raise ValueError(f"unknown method {method!r}")
        alg = self.algebra
        out = np.zeros(self.family.dim)
        memo: Dict = {}
        for k, c in alpha.terms.items():
            if isinstance(alg, WordAlgebra):
                if self.family.is_linear:
                    v = h.copy()
                    for letter in k:
                        v = self.family[letter].M @ v
                    out += float(c) * v
                    continue
                if not k:
                    out += float(c) * h
                    continue
                for tree, m in _word_trees(k):
                    out += float(c) * m * self._tree_directional(tree, a, h, memo)
            elif isinstance(alg, TreeAlgebra):
                out += float(c) * self._tree_directional(k, a, h, memo)
            else:
                raise DomainError("exact directional derivatives need a word or tree algebra")
        return out


class MatrixProductMap:
    """Right multiplication ``F[α](a) = a α`` on square matrices."""

    def __call__(self, alpha, a):
        return a @ alpha

    def multiply(self, alpha, beta):
        return alpha @ beta

    def directional(self, beta, a, h, method="exact"):
        return h @ beta


def newtonian_residual(F, alpha, beta, points) -> float:
    """``max |F[αβ](a) - D F[β](a) · F[α](a)|`` over the sample points."""
    prod = F.multiply(alpha, beta)
    worst = 0
    for a in points:
        r = F(prod, a) - F.directional(beta, a, F(alpha, a))
        worst = max(worst, np.max(np.abs(r)) if np.size(r) else 0)
    return worst


@dataclass
class FieldNorms:
    """Per-grade bounds ``ν_i`` with ``max(Lip, sup) of F[α^(i)] <= ν_i |α^(i)|``."""

    nu: List[float]
    sup: List[float]
    lip: List[float]
    per_key: Dict[str, Tuple[float, float]] = field(default_factory=dict)


def estimate_field_norms(family: VectorFieldFamily, n: int, box, samples: int = 200, seed: int = 0,
                         algebra: Optional[Algebra] = None) -> FieldNorms:
    """Empirical ``ν_i`` over a box ``[(lo, hi), ...]`` for all basis words of grade ``1..n``.

    The sup norm is maximized over samples; the Lipschitz constant is the
    largest operator norm of the Jacobian from the product-rule derivative.
    """
    box = np.asarray(box, dtype=float)
    if box.shape != (family.dim, 2):
        raise ValueError("box must list (lo, hi) per coordinate")
    alg = algebra or WordAlgebra(family.alphabet, "word")
    F = ElementaryDifferentials(family, alg)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(box[:, 0], box[:, 1], size=(samples, family.dim))
    pts = np.vstack([pts, box[:, 0], box[:, 1]])
    sup, lip, per = [0.0] * (n + 1), [0.0] * (n + 1), {}
    eye = np.eye(family.dim)
    keys_by_grade = {i: alg.words(i) for i in range(1, n + 1)}
    for i, keys in keys_by_grade.items():
        for key in keys:
            e = GradedElement(alg, {key: 1})
            s = l = 0.0
            for a in pts:
                s = max(s, float(np.linalg.norm(F(e, a))))
                J = np.column_stack([F.directional(e, a, eye[j]) for j in range(family.dim)])
                l = max(l, float(np.linalg.norm(J, 2)))
            per[alg.format_key(key)] = (s, l)
            sup[i], lip[i] = max(sup[i], s), max(lip[i], l)
    nu = [max(s, l) for s, l in zip(sup, lip)]
    nu[0] = 1.0
    return FieldNorms(nu, sup, lip, per)
