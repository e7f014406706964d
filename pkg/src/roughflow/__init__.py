"""Truncated graded algebras, rough paths and almost-flow schemes."""
from .graded import (
    DomainError,
    GradedElement,
    SignatureMismatch,
    WordAlgebra,
    bchd,
    exp_truncated,
    format_element,
    graded_norm,
    lie_bracket,
    log_truncated,
    make_algebra,
    mul_overflow,
    mul_truncated,
    parse_element,
)
from .words import PiecewiseLinearPath, RoughPath, lyons_extend, pure_area_rough_path, signature
from .trees import AromaticAlgebra, DecoratedTree, TreeAlgebra, aromatic_compose, graft, tree_product
from .fields import ElementaryDifferentials, LinearFamily, PolynomialFamily, builtin_family
from .flows import AlmostFlow, compose_scheme, davie_flow, log_ode_flow

__version__ = "0.1.0"
