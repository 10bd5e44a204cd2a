"""Exception types shared across the package."""


class PixelstormError(Exception):
    """Base class for errors raised by this package."""


class FormatError(PixelstormError):
    """A file or byte stream does not conform to its declared format."""


class EvaluationError(PixelstormError):
    """A fitness evaluation produced an unusable (non-finite) value."""

    def __init__(self, message, genome=None, index=None):
        super().__init__(message)
        self.genome = genome
        self.index = index


class TransportError(PixelstormError):
    """A remote oracle could not be reached after the configured retries."""


class ProtocolError(PixelstormError):
    """A remote oracle answered, but the payload violates the wire contract."""


class AttackError(PixelstormError):
    """An attack run aborted; carries the oracle budget spent so far."""

    def __init__(self, message, evaluations_used=0):
        super().__init__(message)
        self.evaluations_used = evaluations_used
