"""Decorated rooted trees, the grafting product, and aromatic forests.

Tree codes are ``._i`` for a single vertex decorated ``i`` and
``[c1,c2,...]_i`` otherwise, with the child codes sorted.  The grafting
product ``σ·τ`` attaches the root of ``σ`` to every vertex of ``τ`` in turn;
it is not associative, so chained products go right to left.

Aromatic forests are functional graphs (out-degree at most one).  Their
product adds edges from the roots of the left factor into the right factor in
every possible way, which is the composition of the associated differential
operators.
"""
from __future__ import annotations

import random
from fractions import Fraction
from functools import lru_cache
from itertools import combinations_with_replacement, product
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .graded import Algebra, DomainError, GradedElement, WordAlgebra, mul_truncated
from .words import RoughPath, chen_defect

__all__ = [
    "InvalidForestError",
    "DecoratedTree",
    "EMPTY_TREE",
    "Forest",
    "graft",
    "leaf",
    "parse_tree",
    "TreeAlgebra",
    "tree_product",
    "chain_product",
    "word_to_tree_element",
    "branched_lift_level2",
    "branched_log_level2",
    "enumerate_trees",
    "AromaticForest",
    "EMPTY_FOREST",
    "aromatic_canonicalize",
    "aromatic_compose",
    "parse_aromatic",
    "AromaticAlgebra",
    "root_count",
    "tree_to_aromatic",
    "enumerate_aromatic_forests",
    "random_aromatic_forest",
]

_RESERVED = set("[],_.{}:;->() |")


class InvalidForestError(ValueError):
    """A directed graph with a vertex of out-degree two or more."""


def _check_label(label):
    if not isinstance(label, str) or not label or set(label) & _RESERVED:
        raise DomainError(f"invalid decoration {label!r}")


class DecoratedTree:
    """Immutable rooted tree with decorated vertices and unordered children."""

    __slots__ = ("label", "children", "code", "grade", "_hash")

    def __init__(self, label: Optional[str], children: Iterable["DecoratedTree"] = ()):
        kids = tuple(sorted(children, key=lambda c: c.code))
        if label is None:
            if kids:
                raise ValueError("the empty tree has no children")
            code, grade = "1", 0
        else:
            _check_label(label)
            if any(c.label is None for c in kids):
                raise ValueError("the empty tree cannot be grafted")
            code = f"._{label}" if not kids else "[" + ",".join(c.code for c in kids) + f"]_{label}"
            grade = 1 + sum(c.grade for c in kids)
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "children", kids)
        object.__setattr__(self, "code", code)
        object.__setattr__(self, "grade", grade)
        object.__setattr__(self, "_hash", hash(code))

    def __setattr__(self, name, value):
        raise AttributeError("DecoratedTree is immutable")

    def __eq__(self, other):
        return isinstance(other, DecoratedTree) and self.code == other.code

    def __lt__(self, other):
        return self.code < other.code

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"DecoratedTree({self.code!r})"

    __str__ = lambda self: self.code

    @property
    def is_empty(self):
        return self.label is None

    def vertices(self) -> List["DecoratedTree"]:
        """Subtrees rooted at every vertex, in pre-order."""
        out = [self]
        for c in self.children:
            out.extend(c.vertices())
        return out

    def labels(self) -> List[str]:
        return [v.label for v in self.vertices()]


EMPTY_TREE = DecoratedTree(None)


def leaf(label: str) -> DecoratedTree:
    return DecoratedTree(label)


def graft(subtrees: Sequence[DecoratedTree], letter: str, alphabet: Optional[Sequence[str]] = None) -> DecoratedTree:
    """``⌊τ_1, ..., τ_m⌋_i``: join the roots of ``subtrees`` to a new root decorated ``letter``."""
    if alphabet is not None and letter not in alphabet:
        raise DomainError(f"unknown letter {letter!r}")
    return DecoratedTree(letter, subtrees)


def parse_tree(text: str) -> DecoratedTree:
    """Inverse of ``DecoratedTree.code``."""
    text = text.strip()
    if text == "1":
        return EMPTY_TREE
    pos = 0

    def label_at(i):
        if text[i] != "_":
            raise ValueError(f"expected '_' at {i} in {text!r}")
        j = i + 1
        while j < len(text) and text[j] not in ",]":
            j += 1
        return text[i + 1 : j], j

    def node(i):
        if text[i] == ".":
            lab, j = label_at(i + 1)
            return DecoratedTree(lab), j
        if text[i] != "[":
            raise ValueError(f"unexpected {text[i]!r} at {i} in {text!r}")
        kids, i = [], i + 1
        while True:
            kid, i = node(i)
            kids.append(kid)
            if text[i] == ",":
                i += 1
                continue
            if text[i] == "]":
                break
            raise ValueError(f"unexpected {text[i]!r} at {i} in {text!r}")
        lab, j = label_at(i + 1)
        return DecoratedTree(lab, kids), j

    try:
        tree, pos = node(0)
    except IndexError:
        raise ValueError(f"truncated tree code {text!r}") from None
    if pos != len(text):
        raise ValueError(f"trailing characters in {text!r}")
    return tree


class Forest:
    """Commutative multiset of trees; the empty forest is the unit."""

    __slots__ = ("trees", "code", "grade")

    def __init__(self, trees: Iterable[DecoratedTree] = ()):
        ts = tuple(sorted((t for t in trees if not t.is_empty), key=lambda t: t.code))
        object.__setattr__(self, "trees", ts)
        object.__setattr__(self, "code", " ".join(t.code for t in ts) if ts else "1")
        object.__setattr__(self, "grade", sum(t.grade for t in ts))

    def __setattr__(self, name, value):
        raise AttributeError("Forest is immutable")

    def __mul__(self, other: "Forest") -> "Forest":
        return Forest(self.trees + other.trees)

    def __eq__(self, other):
        return isinstance(other, Forest) and self.code == other.code

    def __hash__(self):
        return hash(("forest", self.code))

    def __repr__(self):
        return f"Forest({self.code!r})"


# -- grafting product --------------------------------------------------------
@lru_cache(maxsize=None)
def _graft_product(sigma: DecoratedTree, tau: DecoratedTree) -> Tuple[Tuple[DecoratedTree, int], ...]:
    """σ·τ for nonempty trees as ``((tree, multiplicity), ...)``."""
    out: Dict[DecoratedTree, int] = {}
    top = DecoratedTree(tau.label, tau.children + (sigma,))
    out[top] = 1
    kids = tau.children
    for j, child in enumerate(kids):
        rest = kids[:j] + kids[j + 1 :]
        for t, m in _graft_product(sigma, child):
            new = DecoratedTree(tau.label, rest + (t,))
            out[new] = out.get(new, 0) + m
    return tuple(out.items())


class TreeAlgebra(Algebra):
    """Span of decorated rooted trees with the grafting product (non-associative)."""

    kind = "branched-tree"
    associative = False
    unit = EMPTY_TREE

    def grade(self, key):
        return key.grade

    def _product(self, k1, k2):
        if k1.is_empty:
            return {k2: 1}
        if k2.is_empty:
            return {k1: 1}
        return dict(_graft_product(k1, k2))

    def generator(self, letter):
        self.check_letter(letter)
        return DecoratedTree(letter)

    def format_key(self, key):
        return key.code

    def parse_key(self, text):
        tree = parse_tree(text)
        for lab in ([] if tree.is_empty else tree.labels()):
            self.check_letter(lab)
        return tree


def _infer_alphabet(*trees) -> Tuple[str, ...]:
    labs = set()
    for t in trees:
        if not t.is_empty:
            labs.update(t.labels())
    return tuple(sorted(labs))


def tree_product(sigma, tau, algebra: Optional[TreeAlgebra] = None) -> GradedElement:
    """Grafting product of two trees or two tree-algebra elements.

    Trees give an untruncated element; elements use the ▷ product at their order.
    """
    if isinstance(sigma, DecoratedTree) and isinstance(tau, DecoratedTree):
        alg = algebra or TreeAlgebra(_infer_alphabet(sigma, tau))
        return GradedElement(alg, dict(alg.key_product(sigma, tau)), None)
    if isinstance(sigma, GradedElement) and isinstance(tau, GradedElement):
        if not isinstance(sigma.algebra, TreeAlgebra):
            raise DomainError("tree_product needs tree-algebra elements")
        return mul_truncated(sigma, tau)
    raise TypeError("tree_product takes two trees or two GradedElements")


def chain_product(*elems: GradedElement) -> GradedElement:
    """``e1 ▷ (e2 ▷ (... ▷ ek))``."""
    if not elems:
        raise ValueError("chain_product needs at least one factor")
    acc = elems[-1]
    for e in reversed(elems[:-1]):
        acc = mul_truncated(e, acc)
    return acc


def word_to_tree_element(word: Sequence[str], algebra: TreeAlgebra, order=None) -> GradedElement:
    """Right-nested product ``•_{i1}·(•_{i2}·(...•_{ik}))`` of a word's letters."""
    if not word:
        return GradedElement.unit(algebra, order)
    gens = [GradedElement.letter(algebra, a, order) for a in word]
    return chain_product(*gens)


def enumerate_trees(alphabet: Sequence[str], grade: int) -> List[DecoratedTree]:
    """All decorated rooted trees with ``grade`` vertices, sorted by code."""
    if grade < 1:
        return []
    found = set()
    for parents in product(*[range(v) for v in range(1, grade)]):
        for labels in product(alphabet, repeat=grade):
            kids: List[List[int]] = [[] for _ in range(grade)]
            for v, par in enumerate(parents, start=1):
                kids[par].append(v)

            def build(v):
                return DecoratedTree(labels[v], [build(c) for c in kids[v]])

            found.add(build(0))
    return sorted(found, key=lambda t: t.code)


# -- branched lift ------------------------------------------------------------
def _branched_terms(elem: GradedElement, alg: TreeAlgebra) -> Dict:
    terms = {EMPTY_TREE: elem.scalar_part()}
    for k, c in elem.terms.items():
        if len(k) == 1:
            terms[DecoratedTree(k[0])] = terms.get(DecoratedTree(k[0]), 0) + c
        elif len(k) == 2:
            t = DecoratedTree(k[1], [DecoratedTree(k[0])])
            terms[t] = terms.get(t, 0) + c
    return terms


def branched_lift_level2(
    x: RoughPath,
    check_times: Optional[Sequence] = None,
    tol: float = 1e-12,
) -> RoughPath:
    """Lift a level-2 tensor rough path to trees: ``1 + Σ x^i •_i + Σ x^{ij} ⌊•_i⌋_j``.

    The input's Chen relation is checked on triples from ``check_times``
    (default: five evenly spaced times in ``[0, T]``).
    """
    if not isinstance(x.algebra, WordAlgebra):
        raise DomainError("branched lift expects a word/tensor rough path")
    if x.order < 2:
        raise DomainError("branched lift needs levels 1 and 2")
    times = list(check_times) if check_times is not None else [x.T * k / 4 for k in range(5)]
    times.sort()
    for a in range(len(times)):
        for b in range(a, len(times)):
            for c in range(b, len(times)):
                d = chen_defect(x, times[a], times[b], times[c])
                if any(float(v) > tol for v in d[:3]):
                    raise DomainError(
                        f"input is not multiplicative at ({times[a]}, {times[b]}, {times[c]}): {d[:3]}"
                    )
    alg = TreeAlgebra(x.algebra.alphabet)

    def evaluate(s, t):
        return GradedElement(alg, _branched_terms(x(s, t), alg), 2)

    # x^{ij} ↦ ⌊•_i⌋_j is injective, so per-grade norms and bounds carry over
    bounds = None if x.level_bounds is None else x.level_bounds[:3]
    return RoughPath(evaluate, alg, 2, p=x.p, control=x.control, level_bounds=bounds, T=x.T)


def branched_log_level2(x_st: GradedElement) -> GradedElement:
    """Closed form ``x^(1) + Σ (x^{ij} - ½ x^i x^j) ⌊•_i⌋_j`` of the lifted logarithm."""
    alg = TreeAlgebra(x_st.algebra.alphabet)
    exact = x_st.is_exact
    half = Fraction(1, 2) if exact else 0.5
    terms: Dict = {}
    first = {k[0]: c for k, c in x_st.terms.items() if len(k) == 1}
    for k, c in x_st.terms.items():
        if len(k) == 1:
            terms[DecoratedTree(k[0])] = c
        elif len(k) == 2:
            t = DecoratedTree(k[1], [DecoratedTree(k[0])])
            terms[t] = terms.get(t, 0) + c
    for i, ci in first.items():
        for j, cj in first.items():
            t = DecoratedTree(j, [DecoratedTree(i)])
            terms[t] = terms.get(t, 0) - half * ci * cj
    return GradedElement(alg, terms, 2)


# -- aromatic forests ---------------------------------------------------------
def _normalize_graph(labels, edges):
    if isinstance(labels, Mapping):
        verts = sorted(labels)
        lab = [labels[v] for v in verts]
        index = {v: k for k, v in enumerate(verts)}
    else:
        lab = list(labels)
        index = {k: k for k in range(len(lab))}
    for l in lab:
        _check_label(l)
    out: List[Optional[int]] = [None] * len(lab)
    for u, v in edges:
        if u not in index or v not in index:
            raise InvalidForestError(f"edge {u}->{v} references an unknown vertex")
        iu = index[u]
        if out[iu] is not None:
            raise InvalidForestError(f"vertex {u} has out-degree >= 2")
        out[iu] = index[v]
    return lab, out


def _encode(lab: List[str], out: List[Optional[int]]):
    """Canonical code, canonical labels and canonical out-map of a functional graph."""
    n = len(lab)
    ins: List[List[int]] = [[] for _ in range(n)]
    for u, v in enumerate(out):
        if v is not None:
            ins[v].append(u)
    # components via undirected union-find
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for u, v in enumerate(out):
        if v is not None:
            parent[find(u)] = find(v)
    comps: Dict[int, List[int]] = {}
    for v in range(n):
        comps.setdefault(find(v), []).append(v)

    def tree_at(v, skip):
        return DecoratedTree(lab[v], [tree_at(u, skip) for u in ins[v] if u not in skip])

    encoded = []
    for members in comps.values():
        v = members[0]
        seen = []
        seen_set = set()
        while v is not None and v not in seen_set:
            seen.append(v)
            seen_set.add(v)
            v = out[v]
        if v is None:
            root = seen[-1]
            t = tree_at(root, frozenset())
            encoded.append((t.code, ("tree", t)))
        else:
            cycle = seen[seen.index(v) :]
            cset = frozenset(cycle)
            pieces = [tree_at(c, cset) for c in cycle]
            codes = [p.code for p in pieces]
            k = len(codes)
            best = min(range(k), key=lambda r: codes[r:] + codes[:r])
            rot = pieces[best:] + pieces[:best]
            code = "(" + "|".join(p.code for p in rot) + ")"
            encoded.append((code, ("aroma", rot)))
    encoded.sort(key=lambda e: e[0])
    # canonical numbering
    c_lab: List[str] = []
    c_out: List[Optional[int]] = []

    def emit(t: DecoratedTree, target: Optional[int]) -> int:
        me = len(c_lab)
        c_lab.append(t.label)
        c_out.append(target)
        for ch in t.children:
            emit(ch, me)
        return me

    for _, (kind, data) in encoded:
        if kind == "tree":
            emit(data, None)
        else:
            first = len(c_lab)
            heads = []
            for piece in data:
                heads.append(emit(piece, None))
            for a, b in zip(heads, heads[1:] + heads[:1]):
                c_out[a] = b
            assert heads[0] == first
    code = " ".join(e[0] for e in encoded) if encoded else "1"
    return code, tuple(c_lab), tuple(c_out)


class AromaticForest:
    """Canonical aromatic forest: vertex decorations plus an out-edge map."""

    __slots__ = ("code", "labels", "out", "_hash")

    def __init__(self, code, labels, out):
        object.__setattr__(self, "code", code)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "out", out)
        object.__setattr__(self, "_hash", hash(("aromatic", code)))

    def __setattr__(self, name, value):
        raise AttributeError("AromaticForest is immutable")

    @property
    def grade(self):
        return len(self.labels)

    @property
    def roots(self) -> Tuple[int, ...]:
        return tuple(v for v, w in enumerate(self.out) if w is None)

    def in_neighbours(self, v) -> Tuple[int, ...]:
        return tuple(u for u, w in enumerate(self.out) if w == v)

    def edges(self):
        return [(u, v) for u, v in enumerate(self.out) if v is not None]

    def text(self) -> str:
        if not self.labels:
            return "1"
        verts = ",".join(f"{v}:{l}" for v, l in enumerate(self.labels))
        es = ",".join(f"{u}->{v}" for u, v in self.edges())
        return "{" + verts + (";" + es if es else "") + "}"

    def __eq__(self, other):
        return isinstance(other, AromaticForest) and self.code == other.code

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"AromaticForest({self.text()!r})"

    __str__ = text


def aromatic_canonicalize(labels, edges=()) -> AromaticForest:
    """Canonical form of the graph with vertex ``labels`` and directed ``edges``.

    ``labels`` is a sequence (vertices ``0..k-1``) or a mapping vertex -> decoration.
    """
    lab, out = _normalize_graph(labels, edges)
    return AromaticForest(*_encode(lab, out))


EMPTY_FOREST = aromatic_canonicalize([], [])


def parse_aromatic(text: str) -> AromaticForest:
    """Parse ``{0:a,1:b;0->1}`` (or ``1`` for the empty forest)."""
    text = text.strip()
    if text in ("1", "{}"):
        return EMPTY_FOREST
    if not (text.startswith("{") and text.endswith("}")):
        raise ValueError(f"malformed aromatic forest {text!r}")
    body = text[1:-1]
    vpart, _, epart = body.partition(";")
    labels = {}
    for item in vpart.split(","):
        v, sep, l = item.partition(":")
        if not sep:
            raise ValueError(f"malformed vertex {item!r}")
        labels[int(v)] = l.strip()
    edges = []
    if epart.strip():
        for item in epart.split(","):
            u, sep, v = item.partition("->")
            if not sep:
                raise ValueError(f"malformed edge {item!r}")
            edges.append((int(u), int(v)))
    return aromatic_canonicalize(labels, edges)


@lru_cache(maxsize=None)
def _compose(sigma: AromaticForest, tau: AromaticForest) -> Tuple[Tuple[AromaticForest, int], ...]:
    k = sigma.grade
    lab = list(sigma.labels) + list(tau.labels)
    base = list(sigma.out) + [None if w is None else w + k for w in tau.out]
    roots = sigma.roots
    targets = [None] + list(range(k, k + tau.grade))
    out: Dict[AromaticForest, int] = {}
    for choice in product(targets, repeat=len(roots)):
        o = list(base)
        for r, t in zip(roots, choice):
            o[r] = t
        f = AromaticForest(*_encode(lab, o))
        out[f] = out.get(f, 0) + 1
    return tuple(out.items())


def aromatic_compose(sigma: AromaticForest, tau: AromaticForest, algebra=None) -> GradedElement:
    """Sum over all ways to send each root of ``sigma`` into ``tau`` or leave it a root."""
    alg = algebra or AromaticAlgebra(sorted(set(sigma.labels) | set(tau.labels)))
    return GradedElement(alg, dict(_compose(sigma, tau)), None)


class AromaticAlgebra(Algebra):
    """Span of aromatic forests with the composition product (associative)."""

    kind = "aromatic"
    associative = True
    unit = EMPTY_FOREST

    def grade(self, key):
        return key.grade

    def _product(self, k1, k2):
        return dict(_compose(k1, k2))

    def generator(self, letter):
        self.check_letter(letter)
        return aromatic_canonicalize([letter])

    def format_key(self, key):
        return key.text()

    def parse_key(self, text):
        f = parse_aromatic(text)
        for l in f.labels:
            self.check_letter(l)
        return f


def root_count(sigma: AromaticForest) -> int:
    return len(sigma.roots)


def tree_to_aromatic(tree: DecoratedTree) -> AromaticForest:
    """The single-root aromatic forest of a rooted tree (edges point to parents)."""
    if tree.is_empty:
        return EMPTY_FOREST
    labels, edges = [], []

    def walk(t, parent):
        me = len(labels)
        labels.append(t.label)
        if parent is not None:
            edges.append((me, parent))
        for c in t.children:
            walk(c, me)

    walk(tree, None)
    return aromatic_canonicalize(labels, edges)


def enumerate_aromatic_forests(alphabet: Sequence[str], grade: int) -> List[AromaticForest]:
    """All aromatic forests with ``grade`` vertices, sorted by code."""
    if grade == 0:
        return [EMPTY_FOREST]
    found = set()
    targets = [None] + list(range(grade))
    # decorations as sorted multisets suffice up to relabelling of vertices
    for labels in combinations_with_replacement(alphabet, grade):
        for out in product(targets, repeat=grade):
            found.add(AromaticForest(*_encode(list(labels), list(out))))
    return sorted(found, key=lambda f: f.code)


def random_aromatic_forest(rng: random.Random, alphabet: Sequence[str], grade: int) -> AromaticForest:
    labels = [rng.choice(list(alphabet)) for _ in range(grade)]
    out = [rng.choice([None] + list(range(grade))) for _ in range(grade)]
    return AromaticForest(*_encode(labels, out))
