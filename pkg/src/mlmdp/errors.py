"""Exception hierarchy shared by every module."""


class MlmdpError(Exception):
    """Base class for all errors raised by the package."""


class ConfigError(MlmdpError):
    """Malformed experiment configuration or unresolvable reference."""


class RowNotStochastic(MlmdpError):
    pass


class MissingEndAction(MlmdpError):
    pass


class NoConvergence(MlmdpError):
    pass


class OverlappingFactors(MlmdpError):
    pass


class EmptyFactorCover(MlmdpError):
    pass


class NoFactorCover(MlmdpError):
    pass


class VocabularyMismatch(MlmdpError):
    pass


class SolverDivergence(MlmdpError):
    pass


class SingularSystem(MlmdpError):
    pass


class TrajectoryCap(MlmdpError):
    pass


class Unbounded(MlmdpError):
    pass


class InconsistentEmbedding(MlmdpError):
    pass


class UnknownToken(MlmdpError):
    pass


class DuplicateName(MlmdpError):
    pass


class UnknownSkill(MlmdpError):
    pass


class OutOfOrder(MlmdpError):
    pass


class InvalidGeometry(MlmdpError):
    pass


class UnknownSubject(MlmdpError):
    pass
