"""Error types shared across the training pipeline and CLI."""


class ConfigError(ValueError):
    """Invalid or unknown run configuration."""


class MissingPrerequisiteError(RuntimeError):
    """A required checkpoint or dataset phase has not been produced yet."""


class DivergenceError(RuntimeError):
    """Training produced non-finite losses or gradients."""
