"""Error types.

Every error carries a short machine-readable ``code`` that the command line
front end prints before the human message.
"""


class StackSVDError(Exception):
    """Base class for all package errors."""

    code = "ERROR"

    def __str__(self):
        msg = super().__str__()
        return msg if msg else self.code


# validation ---------------------------------------------------------------


class NonPositiveAspectRatio(StackSVDError, ValueError):
    code = "NON_POSITIVE_ASPECT_RATIO"


class NegativeTheta(StackSVDError, ValueError):
    code = "NEGATIVE_THETA"


class ShapeMismatch(StackSVDError, ValueError):
    code = "SHAPE_MISMATCH"


class InvalidWeights(StackSVDError, ValueError):
    code = "INVALID_WEIGHTS"


# linear algebra -----------------------------------------------------------


class RankTooLarge(StackSVDError, ValueError):
    code = "RANK_TOO_LARGE"


class ConvergenceFailure(StackSVDError, RuntimeError):
    code = "CONVERGENCE_FAILURE"


class NotSymmetric(StackSVDError, ValueError):
    code = "NOT_SYMMETRIC"


# theory -------------------------------------------------------------------


class DegenerateTopEigenvalue(StackSVDError, ArithmeticError):
    code = "DEGENERATE_TOP_EIGENVALUE"


class SubsetEmpty(StackSVDError, ValueError):
    code = "SUBSET_EMPTY"


class TooManyTablesForEnumeration(StackSVDError, ValueError):
    code = "TOO_MANY_TABLES_FOR_ENUMERATION"


class NoSecularRoot(StackSVDError, ArithmeticError):
    code = "NO_SECULAR_ROOT"


class AmbiguousComponentOrder(StackSVDError, ValueError):
    code = "AMBIGUOUS_COMPONENT_ORDER"


class EpsilonOutOfRange(StackSVDError, ValueError):
    code = "EPSILON_OUT_OF_RANGE"


# estimation ---------------------------------------------------------------


class NoOutlierSingularValue(StackSVDError, ValueError):
    code = "NO_OUTLIER_SINGULAR_VALUE"


class ReferenceBelowThreshold(StackSVDError, ValueError):
    code = "REFERENCE_BELOW_THRESHOLD"


class AllTablesBelowThreshold(StackSVDError, ValueError):
    code = "ALL_TABLES_BELOW_THRESHOLD"


# simulation and I/O -------------------------------------------------------


class InvalidPlan(StackSVDError, ValueError):
    code = "INVALID_PLAN"


class NegativeCounts(StackSVDError, ValueError):
    code = "NEGATIVE_COUNTS"


class FileFormatError(StackSVDError, ValueError):
    code = "FILE_FORMAT_ERROR"


class ConfigError(StackSVDError, ValueError):
    code = "CONFIG_ERROR"
