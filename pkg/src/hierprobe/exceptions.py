from __future__ import annotations


class ValidationError(ValueError):
    """Input violates a documented precondition (bad grade, shape, file...)."""


class UndefinedMetricError(ValueError):
    """A metric is mathematically undefined for the given data (e.g. single-class AUC)."""


class DegenerateInputError(ValueError):
    """Input has no variance / no mass where some is required."""


class TrainingDivergedError(RuntimeError):
    pass
