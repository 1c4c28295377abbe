"""Exception hierarchy shared by every module."""


class S2QNError(Exception):
    """Base class for all library errors.

    ``code`` is a short machine-readable reason, printed by the CLI.
    """

    code = "error"

    def __init__(self, *args, code=None):
        super().__init__(*args)
        if code is not None:
            self.code = code


class NotPositiveDefinite(S2QNError):
    """A symmetric factorization met a non-positive pivot; raise the damping."""

    code = "not-positive-definite"


class DimensionMismatch(S2QNError, ValueError):
    code = "dimension-mismatch"


class Singular(S2QNError):
    code = "singular"


class UnsupportedModel(S2QNError):
    """The problem cannot supply the derivative object that was requested."""

    code = "unsupported-model"


class LayerUnsupported(S2QNError):
    code = "layer-unsupported"


class ZeroStep(S2QNError):
    """The parameter step is exactly zero, so no curvature pair exists."""

    code = "zero-step"


class SingularP(S2QNError):
    """The middle matrix of the compact representation is numerically singular."""

    code = "singular-p"


class RankDeficientU(S2QNError):
    """U^T Lambda U is singular in a block update; prune columns and retry."""

    code = "rank-deficient-u"


class EmptyCache(S2QNError):
    code = "empty-cache"


class ShapeMismatch(S2QNError, ValueError):
    code = "shape-mismatch"


class NonFiniteActivation(S2QNError):
    code = "non-finite-activation"


class SolveFailed(S2QNError):
    """The direction solve kept failing after every allowed damping increase."""

    code = "solve-failed"


class NonFiniteLoss(S2QNError):
    code = "non-finite-loss"


class NotConverged(S2QNError):
    code = "not-converged"


class ParseError(S2QNError, ValueError):
    code = "parse-error"

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class IndexOrderError(ParseError):
    code = "index-order"


class ConfigError(S2QNError, ValueError):
    code = "config-invalid"
