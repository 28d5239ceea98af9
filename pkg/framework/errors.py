from __future__ import annotations


class EnhanceError(Exception):
    """Base error; ``exit_code`` is what the CLI returns when it escapes a command."""

    exit_code: int = 2

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigError(EnhanceError, ValueError):
    """Invalid configuration, extents or unsupported option."""


class DimensionError(EnhanceError, ValueError):
    """Operands whose shapes do not line up."""


class PreconditionError(EnhanceError, ValueError):
    """An operation was called outside its domain."""


class DatasetError(EnhanceError):
    """Missing or unusable paired dataset."""


class MetricError(EnhanceError, ValueError):
    """Quality metric cannot be evaluated on the given images."""


class CheckpointError(EnhanceError):
    """Unreadable checkpoint or one incompatible with the network."""


class NonFiniteError(EnhanceError, FloatingPointError):
    exit_code = 1

    def __init__(self, op: str, stage: str = "forward"):
        super().__init__(f"non-finite value produced by {op} ({stage})")
        self.op = op
        self.stage = stage


class OptimizationError(EnhanceError):
    exit_code = 1

    def __init__(self, parameter: str):
        super().__init__(f"non-finite gradient for parameter {parameter!r}; step aborted")
        self.parameter = parameter


class GradCheckFailure(EnhanceError):
    exit_code = 1

    def __init__(self, failing: list[str]):
        super().__init__("gradient check failed for: " + ", ".join(failing))
        self.failing = failing
