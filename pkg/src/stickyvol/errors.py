"""Exception hierarchy shared by every stickyvol module."""

from __future__ import annotations


class StickyVolError(Exception):
    """Base class for all errors raised by this package."""


# parameter / domain validation
class ParameterError(StickyVolError, ValueError):
    pass


class FellerViolation(ParameterError):
    pass


class OrderingViolation(ParameterError):
    pass


class NonPositive(ParameterError):
    pass


class CorrelationOutOfRange(ParameterError):
    pass


class DegenerateBox(ParameterError):
    pass


class UnknownParameter(ParameterError, KeyError):
    pass


# simulation
class SimulationError(StickyVolError, RuntimeError):
    pass


class NonPositiveVariance(SimulationError):
    pass


class NotSymmetric(SimulationError, ValueError):
    pass


class NegativeEigenvalue(SimulationError, ValueError):
    pass


class ZeroStep(SimulationError):
    pass


class StepBudgetExceeded(SimulationError):
    pass


class VarianceFloorExceeded(SimulationError):
    pass


class InconsistentState(SimulationError):
    pass


# network / training
class NumericalError(StickyVolError, ArithmeticError):
    pass


class NonFiniteOutput(NumericalError):
    pass


class NonFiniteDerivative(NumericalError):
    pass


class NonFiniteGradient(NumericalError):
    pass


class DivergedLoss(NumericalError):
    pass


class TrainingStalled(StickyVolError, RuntimeError):
    pass


class RegionMismatch(StickyVolError, ValueError):
    pass


class RejectionBudget(StickyVolError, RuntimeError):
    pass


# calibration
class EmptyChain(StickyVolError, ValueError):
    pass


class SingularNormalMatrix(NumericalError):
    pass


class NonFiniteResidual(NumericalError):
    pass


class LengthMismatch(StickyVolError, ValueError):
    pass


class NonPositiveMarketPrice(StickyVolError, ValueError):
    pass


class QuadratureFailure(NumericalError):
    pass


# data ingestion
class MissingColumn(StickyVolError, ValueError):
    pass


class ParseError(StickyVolError, ValueError):
    pass


class ScaleOutOfBox(UserWarning):
    """Network inputs fell outside the training box; results are extrapolated."""
