"""loopforge: transformation-based compiler for array kernels.

Kernels come from the native kernel language or a Fortran-77 subset,
pass through a user-scripted library of semantics-preserving
transformations, and leave as C or OpenCL source.  A reference
interpreter provides the semantic oracle for every transformation.
"""

from .polyset import (AffineExpr, Assumptions, BasicSet, Constraint,
                      DomainTree, parse_set)
from .errors import (CodegenError, InterpError, LoopforgeError,
                     NonAffineError, ParseError, RestrictionError,
                     ScheduleError, TransformError, ValidationError)

__all__ = [
    "AffineExpr", "Assumptions", "BasicSet", "Constraint", "DomainTree",
    "parse_set",
    "CodegenError", "InterpError", "LoopforgeError", "NonAffineError",
    "ParseError", "RestrictionError", "ScheduleError", "TransformError",
    "ValidationError",
]

__version__ = "0.1.0"
