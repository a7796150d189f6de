"""Exception types shared across the package.

The CLI maps each class onto a distinct exit code.
"""


class InputError(ValueError):
    """Malformed or inconsistent input (unknown node, bad file, bad range)."""


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


class IdentificationError(ValueError):
    """A pattern whose parameters cannot be identified from a covariance matrix."""
