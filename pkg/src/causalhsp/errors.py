"""Exception hierarchy.

Every error carries a stable ``code`` and a ``details`` mapping so the CLI can
emit it as machine-readable JSON without string parsing.
"""

from __future__ import annotations

from typing import Any


class CausalHSPError(Exception):
    code = "error"

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.details = details

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self), "details": _jsonable(self.details)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return str(obj)


# -- data --------------------------------------------------------------------

class DivisionByZero(CausalHSPError, ZeroDivisionError):
    code = "division_by_zero"

    def __init__(self, date):
        super().__init__(f"zero level used as divisor at {date}", date=date)
        self.date = date


class TooShort(CausalHSPError, ValueError):
    code = "too_short"


class EmptyIntersection(CausalHSPError, ValueError):
    code = "empty_intersection"


class InsufficientHistory(CausalHSPError, ValueError):
    code = "insufficient_history"

    def __init__(self, needed: int, available: int):
        super().__init__(f"need {needed} rows, only {available} available",
                         needed=needed, available=available)
        self.needed = needed
        self.available = available


class MissingData(CausalHSPError, ValueError):
    code = "missing_data"


class ShapeMismatch(CausalHSPError, ValueError):
    code = "shape_mismatch"


# -- selection ---------------------------------------------------------------

class DegenerateSeries(CausalHSPError, ValueError):
    code = "degenerate_series"

    def __init__(self, name):
        super().__init__(f"series {name!r} has zero variance", name=name)
        self.name = name


class EmptySelection(CausalHSPError, ValueError):
    code = "empty_selection"


class SingularDesign(CausalHSPError, ValueError):
    code = "singular_design"


class TableTooLarge(CausalHSPError, ValueError):
    code = "table_too_large"


class SingularCovariance(CausalHSPError, ValueError):
    code = "singular_covariance"


# -- models ------------------------------------------------------------------

class RankDeficient(CausalHSPError, ValueError):
    code = "rank_deficient"


class NonFiniteLoss(CausalHSPError, FloatingPointError):
    code = "non_finite_loss"


# -- geometry / allocation ---------------------------------------------------

class EigenFailure(CausalHSPError, ArithmeticError):
    code = "eigen_failure"


class SingularMatrix(CausalHSPError, ValueError):
    code = "singular_matrix"


class Infeasible(CausalHSPError, ValueError):
    code = "infeasible"


class ZeroVariance(CausalHSPError, ValueError):
    code = "zero_variance"

    def __init__(self, name):
        super().__init__(f"asset {name!r} has zero variance", name=name)
        self.name = name


class NegativeQuadraticForm(CausalHSPError, ValueError):
    code = "negative_quadratic_form"


class NonPsdCorrelation(CausalHSPError, ValueError):
    code = "non_psd_correlation"


# -- cli ---------------------------------------------------------------------

class ConfigInvalid(CausalHSPError, ValueError):
    code = "config_invalid"

    def __init__(self, path, reason: str):
        super().__init__(f"{path}: {reason}", path=path, reason=reason)
        self.path = path
        self.reason = reason
