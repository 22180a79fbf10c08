"""Finite-bath engine bounds.

Numerical machinery for heat engines coupled to finite baths carrying
multiple (possibly non-commuting) conserved quantities: generalized thermal
states, Kubo-Mori information geometry, first- and second-order work
bounds, and the optimal eigenbasis-permutation protocol that attains them.
"""

__version__ = "0.1.0"

from . import bounds, models, observables, protocol, thermal  # noqa: F401
from .errors import FBEError  # noqa: F401
