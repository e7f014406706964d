"""Truncated graded algebras.

An element is a sparse map from basis keys to coefficients together with a
truncation order ``n`` (``None`` meaning untruncated).  Coefficients are
either exact (``int``/``Fraction``) or ``float``; exact inputs stay exact
through every operation.

The two products follow the usual split of a graded product::

    a * b == mul_truncated(a, b)            # grades <= n
    full_product(a, b) == mul_truncated(a, b) + mul_overflow(a, b)

Chained products in non-associative algebras are always evaluated from the
right, ``a ▷ b ▷ c == a ▷ (b ▷ c)``.
"""
from __future__ import annotations

import math
import re
from fractions import Fraction
from itertools import product
from numbers import Number
from types import MappingProxyType
from typing import Dict, Hashable, Iterable, Mapping, Optional

__all__ = [
    "SignatureMismatch",
    "DomainError",
    "Algebra",
    "WordAlgebra",
    "GradedElement",
    "make_algebra",
    "mul_truncated",
    "mul_overflow",
    "full_product",
    "exp_truncated",
    "log_truncated",
    "bchd",
    "lie_bracket",
    "project_grade",
    "project_up_to",
    "graded_norm",
    "grade_norms",
    "dynkin_projection",
    "lie_residual",
    "format_element",
    "parse_element",
]

# relative pruning threshold for float coefficients (per grade)
FLOAT_PRUNE = 1e-15


class SignatureMismatch(ValueError):
    """Operands live in different algebras or carry different truncation orders."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


def _is_exact(c) -> bool:
    return isinstance(c, (int, Fraction)) and not isinstance(c, bool)


def _coerce(c):
    if _is_exact(c):
        return c
    if isinstance(c, bool):
        return int(c)
    if isinstance(c, Number):
        return float(c)
    raise TypeError(f"unsupported coefficient {c!r}")


class Algebra:
    """A graded unital algebra given by a basis and a product of basis keys.

    Subclasses define ``unit``, :meth:`grade`, :meth:`_product` (returning
    a mapping ``key -> integer multiplicity``) and the text encoding of keys.
    """

    kind = "abstract"
    associative = True
    unit: Hashable = None

    def __init__(self, alphabet: Iterable[str]):
        alphabet = tuple(alphabet)
        if len(set(alphabet)) != len(alphabet):
            raise ValueError("alphabet letters must be distinct")
        self.alphabet = alphabet
        self._cache: Dict[tuple, Mapping] = {}

    def grade(self, key) -> int:
        raise NotImplementedError

    def _product(self, k1, k2) -> Mapping:
        raise NotImplementedError

    def key_product(self, k1, k2) -> Mapping:
        """Product of two basis keys as ``{key: multiplicity}``, memoized."""
        try:
            return self._cache[(k1, k2)]
        except KeyError:
            res = MappingProxyType(dict(self._product(k1, k2)))
            self._cache[(k1, k2)] = res
            return res

    def generator(self, letter):
        raise NotImplementedError

    def format_key(self, key) -> str:
        raise NotImplementedError

    def parse_key(self, text: str):
        raise NotImplementedError

    def sort_key(self, key):
        return (self.grade(key), self.format_key(key))

    def check_letter(self, letter):
        if letter not in self.alphabet:
            raise DomainError(f"unknown letter {letter!r} for alphabet {self.alphabet}")

    def __eq__(self, other):
        return (
            isinstance(other, Algebra)
            and self.kind == other.kind
            and self.alphabet == other.alphabet
        )

    def __hash__(self):
        return hash((self.kind, self.alphabet))

    def __repr__(self):
        return f"{type(self).__name__}(kind={self.kind!r}, alphabet={''.join(self.alphabet)!r})"


class WordAlgebra(Algebra):
    """Free associative algebra on an alphabet (words, or the tensor algebra).

    Keys are tuples of letters; the empty tuple is the unit.  ``kind`` is
    either ``"word"`` or ``"tensor"``; the two share the monomial basis.
    """

    associative = True
    unit = ()

    def __init__(self, alphabet, kind="word"):
        if kind not in ("word", "tensor"):
            raise ValueError(f"kind must be 'word' or 'tensor', got {kind!r}")
        super().__init__(alphabet)
        for a in self.alphabet:
            if len(a) != 1 or not a.isalpha():
                raise ValueError("word letters must be single alphabetic characters")
        self.kind = kind

    def grade(self, key):
        return len(key)

    def _product(self, k1, k2):
        return {k1 + k2: 1}

    def key_product(self, k1, k2):
        # concatenation is cheap; skip the cache
        return {k1 + k2: 1}

    def generator(self, letter):
        self.check_letter(letter)
        return (letter,)

    def format_key(self, key):
        return "".join(key) if key else "1"

    def parse_key(self, text):
        text = text.strip()
        if text == "1":
            return ()
        key = tuple(text)
        for a in key:
            self.check_letter(a)
        return key

    def words(self, length):
        """All words of the given length, in lexicographic alphabet order."""
        return [tuple(w) for w in product(self.alphabet, repeat=length)]


def make_algebra(kind: str, alphabet: Iterable[str]) -> Algebra:
    """Build an algebra by kind: ``word``, ``tensor``, ``branched-tree`` or ``aromatic``."""
    if kind in ("word", "tensor"):
        return WordAlgebra(alphabet, kind)
    if kind == "branched-tree":
        from .trees import TreeAlgebra

        return TreeAlgebra(alphabet)
    if kind == "aromatic":
        from .trees import AromaticAlgebra

        return AromaticAlgebra(alphabet)
    raise ValueError(f"unknown algebra kind {kind!r}")


def _prune(algebra: Algebra, terms: dict) -> dict:
    out = {k: c for k, c in terms.items() if c != 0}
    if not any(not _is_exact(c) for c in out.values()):
        return out
    # floats: drop coefficients negligible relative to the largest one of the same grade
    peak: Dict[int, float] = {}
    for k, c in out.items():
        g = algebra.grade(k)
        peak[g] = max(peak.get(g, 0.0), abs(c))
    return {
        k: c
        for k, c in out.items()
        if _is_exact(c) or abs(c) >= FLOAT_PRUNE * peak[algebra.grade(k)]
    }


class GradedElement:
    """Immutable finite linear combination of basis keys, truncated at ``order``."""

    __slots__ = ("algebra", "order", "_terms", "_by_grade")

    def __init__(self, algebra: Algebra, terms: Optional[Mapping] = None, order: Optional[int] = None):
        if order is not None and (not isinstance(order, int) or order < 0):
            raise ValueError("truncation order must be a non-negative integer or None")
        raw: dict = {}
        for k, c in (terms or {}).items():
            c = _coerce(c)
            if order is not None and algebra.grade(k) > order:
                if c != 0:
                    raise DomainError(
                        f"key {algebra.format_key(k)!r} of grade {algebra.grade(k)} exceeds order {order}"
                    )
                continue
            raw[k] = raw.get(k, 0) + c
        object.__setattr__(self, "algebra", algebra)
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "_terms", _prune(algebra, raw))
        object.__setattr__(self, "_by_grade", None)

    def __setattr__(self, name, value):
        raise AttributeError("GradedElement is immutable")

    # -- constructors -------------------------------------------------------
    @classmethod
    def zero(cls, algebra, order=None):
        return cls(algebra, {}, order)

    @classmethod
    def unit(cls, algebra, order=None, coefficient=1):
        return cls(algebra, {algebra.unit: coefficient}, order)

    @classmethod
    def letter(cls, algebra, letter, order=None, coefficient=1):
        return cls(algebra, {algebra.generator(letter): coefficient}, order)

    # -- accessors ----------------------------------------------------------
    @property
    def terms(self) -> Mapping:
        return MappingProxyType(self._terms)

    def coefficient(self, key):
        return self._terms.get(key, 0)

    def __getitem__(self, key):
        return self._terms.get(key, 0)

    def __iter__(self):
        return iter(self.sorted_terms())

    def __len__(self):
        return len(self._terms)

    def sorted_terms(self):
        """Terms as ``(key, coefficient)`` pairs in (grade, text) order."""
        return sorted(self._terms.items(), key=lambda kv: self.algebra.sort_key(kv[0]))

    def by_grade(self) -> Dict[int, Dict]:
        if self._by_grade is None:
            groups: Dict[int, Dict] = {}
            for k, c in self._terms.items():
                groups.setdefault(self.algebra.grade(k), {})[k] = c
            object.__setattr__(self, "_by_grade", groups)
        return self._by_grade

    @property
    def max_grade(self) -> int:
        return max(self.by_grade(), default=-1)

    @property
    def is_exact(self) -> bool:
        return all(_is_exact(c) for c in self._terms.values())

    def is_zero(self) -> bool:
        return not self._terms

    def scalar_part(self):
        return self._terms.get(self.algebra.unit, 0)

    # -- truncation ---------------------------------------------------------
    def truncate(self, n: Optional[int]) -> "GradedElement":
        """Same element with truncation order ``n`` (drops grades above ``n``)."""
        if n is None:
            return GradedElement(self.algebra, self._terms, None)
        return GradedElement(
            self.algebra, {k: c for k, c in self._terms.items() if self.algebra.grade(k) <= n}, n
        )

    def to_float(self) -> "GradedElement":
        return GradedElement(self.algebra, {k: float(c) for k, c in self._terms.items()}, self.order)

    def to_exact(self, max_denominator: Optional[int] = None) -> "GradedElement":
        def conv(c):
            f = Fraction(c)
            return f.limit_denominator(max_denominator) if max_denominator else f

        return GradedElement(self.algebra, {k: conv(c) for k, c in self._terms.items()}, self.order)

    # -- arithmetic ---------------------------------------------------------
    def _check(self, other: "GradedElement"):
        if not isinstance(other, GradedElement):
            raise TypeError(f"expected GradedElement, got {type(other).__name__}")
        if self.algebra != other.algebra:
            raise SignatureMismatch(f"{self.algebra!r} vs {other.algebra!r}")
        if self.order != other.order:
            raise SignatureMismatch(f"truncation orders differ: {self.order} vs {other.order}")

    def __add__(self, other):
        if isinstance(other, Number):
            other = GradedElement.unit(self.algebra, self.order, other)
        self._check(other)
        terms = dict(self._terms)
        for k, c in other._terms.items():
            terms[k] = terms.get(k, 0) + c
        return GradedElement(self.algebra, terms, self.order)

    __radd__ = __add__

    def __neg__(self):
        return GradedElement(self.algebra, {k: -c for k, c in self._terms.items()}, self.order)

    def __sub__(self, other):
        if isinstance(other, Number):
            other = GradedElement.unit(self.algebra, self.order, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Number):
            other = _coerce(other)
            return GradedElement(self.algebra, {k: c * other for k, c in self._terms.items()}, self.order)
        return mul_truncated(self, other)

    def __rmul__(self, other):
        if isinstance(other, Number):
            return self.__mul__(other)
        return NotImplemented

    def __truediv__(self, other):
        if not isinstance(other, Number):
            return NotImplemented
        if _is_exact(other):
            return self * (Fraction(1) / other)
        return self * (1.0 / other)

    def __eq__(self, other):
        if not isinstance(other, GradedElement):
            return NotImplemented
        return self.algebra == other.algebra and self.order == other.order and self._terms == other._terms

    def __hash__(self):
        return hash((self.algebra, self.order, frozenset(self._terms.items())))

    def norm(self) -> float:
        return graded_norm(self)

    def __repr__(self):
        return f"GradedElement({format_element(self)!r}, order={self.order})"

    def __str__(self):
        return format_element(self)


# -- products -------------------------------------------------------------
def _convolve(a: GradedElement, b: GradedElement, lo: int, hi: Optional[int]) -> dict:
    """Sum of a^(i) b^(j) over lo <= i + j <= hi."""
    alg = a.algebra
    out: dict = {}
    ga, gb = a.by_grade(), b.by_grade()
    for i, ta in ga.items():
        for j, tb in gb.items():
            g = i + j
            if g < lo or (hi is not None and g > hi):
                continue
            for ka, ca in ta.items():
                for kb, cb in tb.items():
                    c = ca * cb
                    for k, m in alg.key_product(ka, kb).items():
                        out[k] = out.get(k, 0) + m * c
    return out


def mul_truncated(a: GradedElement, b: GradedElement) -> GradedElement:
    """The ▷ product: grade-``<= n`` part of ``a b``."""
    a._check(b)
    return GradedElement(a.algebra, _convolve(a, b, 0, a.order), a.order)


def mul_overflow(a: GradedElement, b: GradedElement) -> GradedElement:
    """The ▶ product: grades ``n+1 .. 2n`` of ``a b``, carried at order ``2n``."""
    a._check(b)
    if a.order is None:
        raise DomainError("overflow product needs a finite truncation order")
    n = a.order
    return GradedElement(a.algebra, _convolve(a, b, n + 1, 2 * n), 2 * n)


def full_product(a: GradedElement, b: GradedElement) -> GradedElement:
    """Untruncated product; for order-``n`` operands the result carries order ``2n``."""
    a._check(b)
    order = None if a.order is None else 2 * a.order
    return GradedElement(a.algebra, _convolve(a, b, 0, None), order)


def _one(a: GradedElement):
    return 1 if a.is_exact else 1.0


def _require_finite(a: GradedElement, what: str):
    if a.order is None:
        raise DomainError(f"{what} needs a finite truncation order")


def exp_truncated(a: GradedElement) -> GradedElement:
    """``sum_k a^{▷k} / k!`` with right-nested powers; needs zero scalar part."""
    _require_finite(a, "exp")
    if a.scalar_part() != 0:
        raise DomainError("exp requires a vanishing grade-0 part")
    exact = a.is_exact
    result = GradedElement.unit(a.algebra, a.order)
    power = GradedElement.unit(a.algebra, a.order)
    for k in range(1, a.order + 1):
        power = mul_truncated(a, power)
        if power.is_zero():
            break
        scale = Fraction(1, math.factorial(k)) if exact else 1.0 / math.factorial(k)
        result = result + power * scale
    return result


def log_truncated(a: GradedElement, tol: float = 1e-12) -> GradedElement:
    """``sum_{k>=1} (-1)^{k+1} (a - 1)^{▷k} / k``; needs scalar part equal to one."""
    _require_finite(a, "log")
    c0 = a.scalar_part()
    if (c0 != 1) if _is_exact(c0) else abs(c0 - 1.0) > tol:
        raise DomainError(f"log requires grade-0 coefficient 1, got {c0!r}")
    exact = a.is_exact
    beta = a - GradedElement.unit(a.algebra, a.order, c0)
    result = GradedElement.zero(a.algebra, a.order)
    power = GradedElement.unit(a.algebra, a.order)
    for k in range(1, a.order + 1):
        power = mul_truncated(beta, power)
        if power.is_zero():
            break
        scale = Fraction((-1) ** (k + 1), k) if exact else (-1) ** (k + 1) / k
        result = result + power * scale
    return result


def bchd(a: GradedElement, b: GradedElement) -> GradedElement:
    """Truncated Baker-Campbell-Hausdorff-Dynkin product ``log(exp(a) ▷ exp(b))``."""
    a._check(b)
    return log_truncated(mul_truncated(exp_truncated(a), exp_truncated(b)))


def lie_bracket(a: GradedElement, b: GradedElement) -> GradedElement:
    return mul_truncated(a, b) - mul_truncated(b, a)


def project_grade(a: GradedElement, i: int) -> GradedElement:
    return GradedElement(a.algebra, a.by_grade().get(i, {}), a.order)


def project_up_to(a: GradedElement, n: int) -> GradedElement:
    """Keep grades ``<= n``; the truncation order is unchanged."""
    return GradedElement(
        a.algebra, {k: c for k, c in a.terms.items() if a.algebra.grade(k) <= n}, a.order
    )


def graded_norm(a: GradedElement):
    """l1 norm of the coefficients, i.e. the sum of the per-grade norms."""
    return sum((abs(c) for c in a.terms.values()), 0)


def grade_norms(a: GradedElement, upto: Optional[int] = None) -> list:
    """Per-grade l1 norms as a list indexed by grade ``0..upto`` (default: order)."""
    top = upto if upto is not None else (a.order if a.order is not None else max(a.max_grade, 0))
    out = [0] * (top + 1)
    for g, terms in a.by_grade().items():
        if g <= top:
            out[g] = sum((abs(c) for c in terms.values()), 0)
    return out


# -- Lie structure in the free associative algebra --------------------------
def _left_bracketing(word: tuple) -> dict:
    """Expansion of ``[...[[w1, w2], w3], ..., wk]`` in the word basis."""
    terms = {word[:1]: 1}
    for letter in word[1:]:
        new: dict = {}
        for w, c in terms.items():
            new[w + (letter,)] = new.get(w + (letter,), 0) + c
            new[(letter,) + w] = new.get((letter,) + w, 0) - c
        terms = new
    return terms


def dynkin_projection(a: GradedElement) -> GradedElement:
    """Dynkin map ``w -> [w]/|w|`` applied per grade; identity exactly on Lie elements."""
    if not isinstance(a.algebra, WordAlgebra):
        raise DomainError("the Lie projection is only defined for word/tensor algebras")
    out: dict = {}
    exact = a.is_exact
    for w, c in a.terms.items():
        if not w:
            continue
        scale = Fraction(1, len(w)) if exact else 1.0 / len(w)
        for u, m in _left_bracketing(w).items():
            out[u] = out.get(u, 0) + m * c * scale
    return GradedElement(a.algebra, out, a.order)


def lie_residual(a: GradedElement) -> GradedElement:
    """``a - dynkin_projection(a)``: zero iff ``a`` lies in the free Lie span."""
    return a - dynkin_projection(a)


# -- text encoding ----------------------------------------------------------
def _format_coeff(c) -> str:
    if isinstance(c, Fraction):
        return str(c)
    if isinstance(c, int):
        return str(c)
    return repr(float(c))


_FLOAT_RE = re.compile(r"[.eEn]")


def _parse_coeff(text: str):
    text = text.strip()
    if _FLOAT_RE.search(text) or text.lower() in ("inf", "-inf"):
        return float(text)
    return Fraction(text)


def format_element(a: GradedElement) -> str:
    """Encode as ``coeff * key`` terms joined by `` + ``; the zero element is ``0``."""
    if a.is_zero():
        return "0"
    return " + ".join(f"{_format_coeff(c)} * {a.algebra.format_key(k)}" for k, c in a.sorted_terms())


_TERM_SPLIT = re.compile(r"\s\+\s")


def parse_element(text: str, algebra: Algebra, order: Optional[int] = None) -> GradedElement:
    """Inverse of :func:`format_element`."""
    text = text.strip()
    if text == "0":
        return GradedElement.zero(algebra, order)
    terms: dict = {}
    for part in _TERM_SPLIT.split(text):
        coeff, sep, key = part.partition(" * ")
        if not sep:
            raise ValueError(f"malformed term {part!r}")
        k = algebra.parse_key(key)
        terms[k] = terms.get(k, 0) + _parse_coeff(coeff)
    return GradedElement(algebra, terms, order)
