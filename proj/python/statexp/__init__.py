"""Expansions of nonequilibrium steady states in entropy flux and dynamical activity."""

from fractions import Fraction

from ._statexp import *  # noqa: F401,F403
from ._statexp import __version__, enumerate_terms as _enumerate_terms


def expansion_terms(order, activity_cutoff=None):
    """Order-`order` terms as (exponents, Fraction coefficient) pairs."""
    args = (order,) if activity_cutoff is None else (order, activity_cutoff)
    return [(tuple(b), Fraction(num, den)) for b, _, num, den in _enumerate_terms(*args)]
