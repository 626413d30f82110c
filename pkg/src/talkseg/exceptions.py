"""Exception types shared across the package.

Each class carries the CLI exit code used when it escapes to the command line.
"""


class TalkSegError(Exception):
    exit_code = 1


class InvalidInputError(TalkSegError, ValueError):
    exit_code = 2


class ConfigurationError(TalkSegError, ValueError):
    exit_code = 2


class UndefinedMetricError(TalkSegError, ValueError):
    """Raised when a metric has no meaningful value for the given inputs."""

    exit_code = 2


class TrainingDivergenceError(TalkSegError, RuntimeError):
    exit_code = 3

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}


class CheckpointMismatchError(TalkSegError, ValueError):
    exit_code = 2


class StageError(TalkSegError, RuntimeError):
    def __init__(self, stage, config_hash, cause):
        super().__init__(f"stage {stage!r} failed (config {config_hash[:12]}): {cause}")
        self.stage = stage
        self.config_hash = config_hash
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 4 if isinstance(cause, OSError) else 1)
