"""
Exception hierarchy shared by the second-order Beckmann toolkit.

Input and precondition problems derive from ValueError so callers that only
know the builtin types still catch them; the CLI maps them to exit code 2.
"""

from typing import Any, Dict, Optional, Sequence


class BeckmannError(Exception):
    """Base class for every error raised by the toolkit"""

    #: True when the error describes bad input or a failed precondition
    user_error: bool = True

    def details(self) -> Dict[str, Any]:
        """Structured diagnostic for JSON reports"""
        return {"error": type(self).__name__, "message": str(self)}


class InvalidMeasureError(BeckmannError, ValueError):
    """Negative weights, zero total mass or inconsistent point dimensions"""


class DimensionMismatchError(BeckmannError, ValueError):
    """Two objects that must live in the same R^n do not"""


class PreconditionError(BeckmannError, ValueError):
    """A documented precondition of an operation does not hold"""


class MalformedProgramError(BeckmannError, ValueError):
    """Linear program rows do not match the objective or use an unknown relation"""


class ProblemTooLargeError(BeckmannError):
    """Rational mode refuses programs above the nonzero guard"""

    def __init__(self, nonzeros: int, limit: int):
        self.nonzeros = nonzeros
        self.limit = limit
        super().__init__(
            f"Linear program has {nonzeros} nonzeros, above the rational-mode limit of {limit}. "
            f"Re-run with --mode float."
        )

    def details(self) -> Dict[str, Any]:
        out = super().details()
        out.update({"nonzeros": self.nonzeros, "limit": self.limit})
        return out


class InfeasibleGridError(BeckmannError):
    """The transport LP has no feasible point on the candidate z grid"""

    def __init__(self, problem: str, grid_size: int):
        self.problem = problem
        self.grid_size = grid_size
        super().__init__(
            f"{problem} is infeasible on a z grid of {grid_size} points. "
            f"Enlarge the grid (enable grid.product_points or pass --grid)."
        )

    def details(self) -> Dict[str, Any]:
        out = super().details()
        out.update({"problem": self.problem, "grid_size": self.grid_size})
        return out


class BalanceError(BeckmannError):
    """Mass or barycenter balance fails on a leaf of the partition"""

    def __init__(self, message: str, path: Sequence[int], key: Sequence[Any]):
        self.path = list(path)
        self.key = [str(k) for k in key]
        super().__init__(f"{message} (leaf path {self.path}, key {self.key})")

    def details(self) -> Dict[str, Any]:
        out = super().details()
        out.update({"leaf": self.path, "key": self.key})
        return out


class LeafCouplingError(BeckmannError):
    """A terminal leaf admits no bimartingale coupling"""

    def __init__(self, path: Sequence[int]):
        self.path = list(path)
        super().__init__(
            f"No bimartingale coupling on terminal leaf {self.path}; "
            f"the instance is outside the regime where the leaf decomposition is exact."
        )

    def details(self) -> Dict[str, Any]:
        out = super().details()
        out["leaf"] = self.path
        return out


class InstanceFormatError(BeckmannError, ValueError):
    """The JSON instance file does not match the expected schema"""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        prefix = f"Field '{field}': " if field else ""
        super().__init__(f"{prefix}{message}")

    def details(self) -> Dict[str, Any]:
        out = super().details()
        out["field"] = self.field
        return out
