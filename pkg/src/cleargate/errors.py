"""Exception hierarchy shared by every layer of the gateway."""

from __future__ import annotations


class ClearGateError(Exception):
    """Base class; ``code`` is the machine-readable name surfaced to clients."""

    code = "InternalError"

    def __init__(self, message: str = "") -> None:
        super().__init__(message or self.code)
        self.message = message or self.code


class PolicyInvalid(ClearGateError):
    code = "PolicyInvalid"


class ConfigInvalid(ClearGateError):
    """Malformed policy/corpus/config input; ``diagnostics`` carry line/field detail."""

    code = "ConfigInvalid"

    def __init__(self, message: str, diagnostics: list[str] | None = None) -> None:
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])


class UnknownSubject(ClearGateError):
    code = "UnknownSubject"


class UnknownResource(ClearGateError):
    code = "UnknownResource"


class DuplicateId(ClearGateError):
    code = "DuplicateId"


class DanglingRoleRef(ClearGateError):
    code = "DanglingRoleRef"


class EmptyText(ClearGateError):
    code = "EmptyText"


class EmptyPrompt(ClearGateError):
    code = "EmptyPrompt"


class EmptyRoleSet(ClearGateError):
    code = "EmptyRoleSet"


class NotFound(ClearGateError):
    code = "NotFound"


class NotFoundOrDenied(ClearGateError):
    """Raised for both missing and unauthorized fetches; carries no detail on purpose."""

    code = "NotFoundOrDenied"

    def __init__(self) -> None:
        super().__init__(self.code)


class NoAuthorizedExperts(ClearGateError):
    code = "NoAuthorizedExperts"


class UntrainedExpert(ClearGateError):
    code = "UntrainedExpert"


class Forbidden(ClearGateError):
    code = "Forbidden"


class StorageFailure(ClearGateError):
    code = "StorageFailure"


class InvalidRequest(ClearGateError):
    code = "InvalidRequest"


class BindFailure(ClearGateError):
    code = "BindFailure"
