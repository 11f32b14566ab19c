"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class MultihopError(Exception):
    """Base class."""


class ConfigurationError(MultihopError, ValueError):
    """Bad user-supplied configuration (CLI exit code 2)."""


class EmptyDatasetError(ConfigurationError):
    pass


class ContractViolation(MultihopError, ValueError):
    """An argument broke a documented precondition (shape, size, count)."""


class IntegrityError(MultihopError):
    """A checkpoint archive is unreadable or fails its checksums."""


class UnsupportedVersionError(IntegrityError):
    pass


class TrainingDiverged(MultihopError, RuntimeError):
    """A loss term became non-finite (CLI exit code 1)."""

    def __init__(self, term, hop, direction, value):
        self.term = term
        self.hop = hop
        self.direction = direction
        self.value = value
        super().__init__(
            f"non-finite {term} loss ({value}) at hop {hop}, direction {direction}"
        )
