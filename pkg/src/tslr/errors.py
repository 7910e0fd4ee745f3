"""Exception hierarchy.

Every error carries a short kebab-case ``code`` that the command-line
front end prints on standard error.
"""


class TslrError(Exception):
    code = "tslr-error"


class InvalidPeriod(TslrError, ValueError):
    code = "invalid-period"


class EmptySeries(TslrError, ValueError):
    code = "empty-series"


class MalformedLog(TslrError, ValueError):
    code = "malformed-log"


class IllPosedSubproblem(TslrError, ArithmeticError):
    code = "ill-posed-subproblem"


class DegenerateComponent(TslrError, ArithmeticError):
    code = "degenerate-component"


class EmptyDataset(TslrError, ValueError):
    code = "empty-dataset"


class ShapeMismatch(TslrError, ValueError):
    code = "shape-mismatch"


class RankExceedsData(TslrError, ValueError):
    code = "rank-exceeds-data"


class NoOverlap(TslrError, ValueError):
    code = "no-overlap"


class TooManyClusters(TslrError, ValueError):
    code = "too-many-clusters"


class NoGroundTruth(TslrError, ValueError):
    code = "no-ground-truth"


class InfeasibleSpec(TslrError, ValueError):
    code = "infeasible-spec"


class ConfigError(TslrError, ValueError):
    code = "config-error"


class ConvergenceFailure(TslrError, RuntimeError):
    code = "convergence-failure"
