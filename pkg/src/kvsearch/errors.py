"""Error taxonomy shared across the package.

Plain ``ValueError`` is used for invalid arguments; the classes below cover
tree-structural violations and backend failures that callers need to tell
apart (each surfaces differently in a problem result).
"""


class KVSearchError(Exception):
    """Base class for package-specific errors."""


class InvalidNodeError(KVSearchError):
    """Referenced node id is unknown, pruned, or frozen."""


class ConstraintViolationError(KVSearchError):
    """An operation would violate a structural constraint (e.g. empty retain set)."""


class BackendError(KVSearchError):
    """Base class for provider/transport failures."""


class TransportError(BackendError):
    """HTTP transport failed after retry."""


class SchemaError(BackendError):
    """Provider response did not match the wire schema."""


class RewardRangeError(BackendError):
    """Reward provider returned a value outside [0, 1]."""
