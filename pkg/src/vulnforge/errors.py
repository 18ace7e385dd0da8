"""Exception hierarchy shared across the pipeline.

The CLI maps these onto exit-code categories, so new exceptions should
subclass the branch that matches how an operator would triage them.
"""


class VulnforgeError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(VulnforgeError):
    """Invalid or missing configuration; message names the offending key."""


# -- corpus store ------------------------------------------------------------

class StoreError(VulnforgeError):
    pass


class DuplicateDesignError(StoreError):
    pass


class UnknownDesignError(StoreError):
    pass


class UnknownLabelError(StoreError):
    pass


class InvalidRecordError(StoreError):
    pass


class IntegrityError(StoreError):
    """A stored design file is missing or its digest no longer matches."""


# -- RTL reading -------------------------------------------------------------

class RtlError(VulnforgeError):
    pass


class LexError(RtlError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class ParseError(RtlError):
    pass


# -- LLM client --------------------------------------------------------------

class BackendError(VulnforgeError):
    pass


class TransientBackendError(BackendError):
    """Retryable failure (rate limit, 5xx, timeout)."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class PermanentBackendError(BackendError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class BackendUnreachableError(BackendError):
    """Connection-level failure; campaigns halt rather than burn the budget."""


class CredentialMissingError(BackendError):
    pass


class RequestTooLargeError(BackendError):
    pass


class CompletionFailedError(BackendError):
    """Retry budget exhausted; carries the last underlying failure."""

    def __init__(self, attempts: int, last: BackendError):
        super().__init__(f"completion failed after {attempts} attempts: {last}")
        self.attempts = attempts
        self.last = last


# -- downstream stages -------------------------------------------------------

class CampaignError(VulnforgeError):
    pass


class DatasetError(VulnforgeError):
    pass


class LeakageError(VulnforgeError):
    """A non-test row reached the evaluator."""


class EvalError(VulnforgeError):
    pass
