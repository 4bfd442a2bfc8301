"""Exception hierarchy shared across the package."""


class AttrCtlError(Exception):
    """Base class for all package errors."""


class ContractViolation(AttrCtlError, ValueError):
    """An operation was called with inputs outside its contract."""


class ConfigurationError(AttrCtlError):
    """Invalid or incomplete configuration (missing scorer, bad lexicon...)."""


class ValidationError(ConfigurationError):
    """User-facing input failed validation (empty corpus, unknown scenario)."""


class DegenerateFusionError(AttrCtlError):
    pass


class InsufficientDataError(AttrCtlError):
    pass


class IllPosedError(AttrCtlError):
    pass


class UndefinedMetricError(AttrCtlError):
    pass


class BackendError(AttrCtlError):
    """A rewriter backend failed to produce a candidate."""


class BackendTimeout(BackendError):
    pass


class ServiceError(BackendError):
    """Retryable server-side failure (HTTP 5xx)."""


class ProtocolError(BackendError):
    def __init__(self, message: str, field: str):
        super().__init__(message)
        self.field = field


class EmptyOutputError(BackendError):
    pass
