"""Exception types shared across the package."""


class ConfigurationError(Exception):
    """Invalid model, run, or experiment configuration."""


class EvaluationError(Exception):
    """An observable produced non-finite values."""


class DegenerateMeasureError(Exception):
    """Every importance weight vanished; the reweighted measure is undefined."""


class BlowupError(Exception):
    """State norm exceeded the blow-up guard during time integration."""

    def __init__(self, step_index, norm):
        super().__init__(
            f"state blew up at step {step_index} (|x| = {norm:.3e})"
        )
        self.step_index = step_index
        self.norm = norm


class NonContractionError(Exception):
    """Fixed-point inversion did not contract; a construction invariant is violated."""
