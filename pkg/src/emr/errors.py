"""Domain error taxonomy shared by every subsystem.

Each error carries a stable machine-readable ``code`` so transport layers
(HTTP handlers, the CLI) can map failures deterministically without
matching on message text.
"""

from __future__ import annotations


class EmrError(Exception):
    """Base class for all expected domain failures."""

    code = "error"


class AuthFailure(EmrError):
    """Credentials were wrong or the session token is unusable.

    Deliberately carries no hint about whether the username exists.
    """

    code = "auth_failure"


class AuthorizationDenied(EmrError):
    """The capability matrix (or an event-role rule) denied the action."""

    code = "authorization_denied"


class NotFound(EmrError):
    """The addressed record, version, or route target does not exist."""

    code = "not_found"


class ValidationError(EmrError):
    """Input failed a domain validity rule (shape, reference data, etc.)."""

    code = "validation_error"


class LabMismatch(ValidationError):
    """A laborant filed results for a panel outside their assigned lab."""

    code = "lab_mismatch"


class KindMismatch(ValidationError):
    """An entry's kind does not match the archetype definition's kind."""

    code = "kind_mismatch"


class ConstraintViolationError(EmrError):
    """An entry violated one or more archetype field constraints.

    ``violations`` holds the complete list of
    :class:`emr.archetype.ConstraintViolation` records, never just the first.
    """

    code = "constraint_violation"

    def __init__(self, message: str, violations) -> None:
        super().__init__(message)
        self.violations = list(violations)


class IllegalTransition(EmrError):
    """The (status, event) pair is not in the card workflow table."""

    code = "illegal_transition"


class IllegalState(EmrError):
    """The operation is defined, but not for the card's current status."""

    code = "illegal_state"


class VersionConflict(EmrError):
    """An optimistic write lost the race, or a stale artifact was re-registered."""

    code = "version_conflict"


class ParseError(EmrError):
    """Archetype source text failed to parse.

    ``line`` and ``column`` are 1-based positions of the offending token.
    """

    code = "parse_error"

    def __init__(self, message: str, line: int, column: int) -> None:
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class StorageError(EmrError):
    """The journal on disk is unreadable or structurally broken."""

    code = "storage_error"


class SnapshotImportError(EmrError):
    """A snapshot could not be imported (malformed line, occupied store,
    or an audit chain that does not verify)."""

    code = "import_error"

    def __init__(self, message: str, line: int | None = None) -> None:
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
