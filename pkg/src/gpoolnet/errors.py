"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """An invalid hyperparameter or configuration value."""


class DegenerateGraphError(ValueError):
    """A graph has no real nodes (or all rows are masked out)."""


class FormatError(ValueError):
    """A data file does not follow its expected layout."""
