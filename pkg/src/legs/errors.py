"""Exception hierarchy.

Every error raised by the library derives from :class:`LegsError`, which is
itself a ``ValueError`` so callers validating input can catch either.
"""


class LegsError(ValueError):
    pass


# graph construction / operators
class IndexOutOfRange(LegsError):
    pass


class NonPositiveWeight(LegsError):
    pass


class DuplicateEdge(LegsError):
    pass


class IsolatedNode(LegsError):
    pass


class DimensionMismatch(LegsError):
    pass


class GraphTooLargeForDenseOracle(LegsError):
    pass


# filter banks / scattering
class ScaleExceedsCascade(LegsError):
    pass


class InvalidScales(LegsError):
    pass


class UnsupportedOrder(LegsError):
    pass


class PathIndexOutOfRange(LegsError):
    pass


# learnable selection
class InvalidShape(LegsError):
    pass


class NonFiniteParameter(LegsError):
    pass


# gradients
class ShapeMismatch(LegsError):
    pass


class MissingCache(LegsError):
    pass


# heads
class BatchTooSmall(LegsError):
    pass


class AlreadyInitialized(LegsError):
    pass


class AnchorsNotInitialized(LegsError):
    pass


class LabelOutOfRange(LegsError):
    pass


# training
class NonFiniteGradient(LegsError):
    pass


class EmptySplit(LegsError):
    pass


class DatasetTooSmall(LegsError):
    pass


class LengthMismatch(LegsError):
    pass


# data
class ParseError(LegsError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class InconsistentIndicator(LegsError):
    pass


class AsymmetricEdgeList(LegsError):
    pass


class InvalidSizeRange(LegsError):
    pass


class ZeroVarianceTarget(LegsError):
    def __init__(self, dim):
        self.dim = dim
        super().__init__(f"target dimension {dim} has zero variance")


class ConfigError(LegsError):
    pass


class SelfLoop(LegsError):
    pass
