"""Exceptions raised across the package."""


class GuidanceError(Exception):
    """Base class."""


class DegenerateFrame(GuidanceError):
    pass


class NonFiniteState(GuidanceError):
    pass


class SingularSystem(GuidanceError):
    pass


class NearTerminal(GuidanceError):
    """t_go dropped below one guidance cycle; the caller should hold."""


class DegenerateLabels(GuidanceError):
    pass


class InsufficientData(GuidanceError):
    pass


class NonConvergence(GuidanceError):
    pass


class DegenerateConic(GuidanceError):
    pass


class DegenerateCenter(GuidanceError):
    pass


class ZeroLambda(GuidanceError):
    pass


class NoFeasiblePerturbation(GuidanceError):
    pass


class UndefinedReduction(GuidanceError):
    pass


class NoHorizontalIntersection(GuidanceError):
    pass


class RetargetInfeasible(GuidanceError):
    pass


class MissingModels(GuidanceError):
    pass


class ConfigError(GuidanceError):
    pass
