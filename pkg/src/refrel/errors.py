"""Exception types raised across the package."""


class RefrelError(Exception):
    """Base class; ``category`` is the machine-parsable tag printed by the CLI."""

    category = "error"


class ShapeMismatchError(RefrelError, ValueError):
    category = "shape_mismatch"


class InvalidRegionError(RefrelError, ValueError):
    category = "invalid_region"


class GenerationError(RefrelError, RuntimeError):
    category = "generation_failed"


class NonFiniteError(RefrelError, FloatingPointError):
    category = "non_finite"


class TrainingDataError(RefrelError, RuntimeError):
    """Training set cannot support the requested stage (e.g. no positives)."""

    category = "training_data"


class PrerequisiteError(RefrelError, RuntimeError):
    """A pipeline stage was run before the stage it depends on."""

    category = "missing_prerequisite"

    def __init__(self, stage, detail=""):
        self.stage = stage
        msg = f"stage '{stage}' has not been run"
        super().__init__(f"{msg}: {detail}" if detail else msg)
