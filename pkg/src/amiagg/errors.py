"""Common exception base for the whole package.

Every module-specific error derives from AmiError so callers (and the CLI)
can distinguish protocol-level failures from programming errors.
"""


class AmiError(Exception):
    """Base class for all protocol, codec, and simulation errors."""
