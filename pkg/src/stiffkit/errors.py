"""Exception hierarchy.

``ValidationError`` maps to CLI exit code 1, ``NumericError`` and its
subclasses to exit code 2.
"""


class StiffkitError(Exception):
    pass


class ValidationError(StiffkitError, ValueError):
    pass


class SchemaError(ValidationError):
    """Malformed input file; ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class NumericError(StiffkitError, ArithmeticError):
    pass


class DivergenceError(NumericError):
    """Fixed-step integration blew up at ``step``."""

    def __init__(self, step, state=None):
        self.step = int(step)
        self.state = state
        super().__init__(f"diverged at step {self.step}")


class StalledError(NumericError):
    def __init__(self, t, message):
        self.t = t
        super().__init__(f"stalled: {message}")


class NumericBlowupError(NumericError):
    def __init__(self, block, message="non-finite activation"):
        self.block = block
        super().__init__(f"numeric blowup at block {block}: {message}")


class TrainingDivergedError(NumericError):
    def __init__(self, epoch):
        self.epoch = epoch
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")


class ZeroNormStateError(ValidationError):
    pass


class DegenerateBoundsError(ValidationError):
    pass


class ConstantInputError(ValidationError):
    pass


class EnsembleMemberError(NumericError):
    """Training of one ensemble member failed."""

    def __init__(self, model_id, cause):
        self.model_id = model_id
        self.cause = cause
        super().__init__(f"model {model_id}: {cause}")
