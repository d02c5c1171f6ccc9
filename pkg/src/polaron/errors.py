"""Exception types shared by all modules."""


class PolaronError(Exception):
    """Base class. ``exit_code`` is what the CLI returns when it surfaces."""

    exit_code = 1


# anisotropy
class NotSymmetric(PolaronError):
    pass


class EigenvalueOutOfRange(PolaronError):
    def __init__(self, value: float, msg: str = ""):
        self.value = value
        super().__init__(msg or f"eigenvalue {value!r} outside admissible range")


class OriginSingular(PolaronError):
    pass


# field
class GridTooSmall(PolaronError):
    pass


class GridMismatch(PolaronError):
    pass


class NegativeInput(PolaronError):
    pass


class ZeroMass(PolaronError):
    pass


class IoError(PolaronError):
    pass


class BadMagic(IoError):
    pass


class VersionMismatch(IoError):
    pass


class ShapeMismatch(IoError):
    pass


# energy
class NoBinding(PolaronError):
    exit_code = 2


class NotConverged(PolaronError):
    exit_code = 2

    def __init__(self, msg: str = "not converged", result=None):
        self.result = result
        super().__init__(msg)


# linop
class NotSymmetricSolution(PolaronError):
    pass


class LanczosStall(PolaronError):
    pass


class CriterionFailed(PolaronError):
    pass


# cylinder
class SingularConfiguration(PolaronError):
    pass


class SlowConvergence(PolaronError):
    pass


class NotCylindrical(PolaronError):
    pass


# cli
class ConfigError(PolaronError):
    pass


class VerificationFailed(PolaronError):
    exit_code = 3
