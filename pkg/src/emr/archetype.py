"""Archetype definition language: parser, serializer, validator, registry.

The language is line oriented. A definition is a header line, a kind line,
then zero or more field lines; ``#`` starts a comment that runs to end of
line and blank lines are ignored:

    archetype openEHR-EHR-OBSERVATION.vital_signs.v1
    kind OBSERVATION
    field systolic_bp quantity required range 0..400 unit mmHg
    field body_temp quantity optional range 25..45 unit C
    field note text optional

Field clauses appear in the fixed order ``range``, ``unit``, ``values``;
``range``/``unit`` apply only to quantity fields and ``values`` only to
coded fields. ``parse_archetype`` raises :class:`ParseError` with a 1-based
line and column for anything outside the grammar, and
``serialize_archetype`` emits canonical text such that
parse -> serialize -> parse is the identity.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from typing import Iterator

from .errors import (
    ConstraintViolationError,
    KindMismatch,
    NotFound,
    ParseError,
    VersionConflict,
)
from .model import Coded, EntryKind, FieldValue, Quantity, Text

ARCHETYPE_ID_RE = re.compile(
    r"^(?P<ns>[A-Za-z][A-Za-z0-9]*)-EHR-(?P<kind>[A-Z]+)"
    r"\.(?P<name>[a-z][a-z0-9_]*)\.v(?P<version>\d+)$"
)
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_RANGE_RE = re.compile(r"^(-?\d+(?:\.\d+)?)\.\.(-?\d+(?:\.\d+)?)$")
_CODE_RE = re.compile(r"^[A-Za-z0-9_.-]+$")
_TOKEN_RE = re.compile(r"\S+")

_KIND_TOKENS = {kind.value.upper(): kind for kind in EntryKind}


class ValueType(str, Enum):
    QUANTITY = "quantity"
    TEXT = "text"
    CODED = "coded"


class ViolationKind(str, Enum):
    MISSING_FIELD = "missing_field"
    UNKNOWN_FIELD = "unknown_field"
    TYPE_MISMATCH = "type_mismatch"
    RANGE_EXCEEDED = "range_exceeded"
    UNIT_MISMATCH = "unit_mismatch"
    VALUE_NOT_ALLOWED = "value_not_allowed"


@dataclass(frozen=True)
class ConstraintViolation:
    """One broken field constraint; validation always reports all of them."""

    field: str
    kind: ViolationKind
    detail: str

    def to_dict(self) -> dict[str, str]:
        return {"field": self.field, "kind": self.kind.value, "detail": self.detail}


@dataclass(frozen=True)
class FieldConstraint:
    name: str
    value_type: ValueType
    required: bool
    range: tuple[Decimal, Decimal] | None = None
    unit: str | None = None
    allowed_values: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.value_type is not ValueType.QUANTITY and (
            self.range is not None or self.unit is not None
        ):
            raise ValueError("range/unit constraints apply only to quantity fields")
        if self.value_type is not ValueType.CODED and self.allowed_values is not None:
            raise ValueError("a values constraint applies only to coded fields")
        if self.range is not None and self.range[0] > self.range[1]:
            raise ValueError("range low bound exceeds high bound")

    def to_dict(self) -> dict:
        out: dict = {
            "name": self.name,
            "value_type": self.value_type.value,
            "required": self.required,
        }
        if self.range is not None:
            out["range"] = {"lo": str(self.range[0]), "hi": str(self.range[1])}
        if self.unit is not None:
            out["unit"] = self.unit
        if self.allowed_values is not None:
            out["allowed_values"] = list(self.allowed_values)
        return out


@dataclass(frozen=True)
class ArchetypeDefinition:
    archetype_id: str
    kind: EntryKind
    fields: tuple[FieldConstraint, ...]

    def __post_init__(self) -> None:
        match = ARCHETYPE_ID_RE.match(self.archetype_id)
        if match is None:
            raise ValueError(f"malformed archetype id {self.archetype_id!r}")
        if _KIND_TOKENS.get(match.group("kind")) is not self.kind:
            raise ValueError("archetype id KIND segment disagrees with kind")
        names = [f.name for f in self.fields]
        if len(names) != len(set(names)):
            raise ValueError("duplicate field names in archetype definition")

    @property
    def base_name(self) -> str:
        match = ARCHETYPE_ID_RE.match(self.archetype_id)
        assert match is not None
        return f"{match.group('ns')}-EHR-{match.group('kind')}.{match.group('name')}"

    @property
    def version(self) -> int:
        match = ARCHETYPE_ID_RE.match(self.archetype_id)
        assert match is not None
        return int(match.group("version"))

    def field_named(self, name: str) -> FieldConstraint | None:
        for constraint in self.fields:
            if constraint.name == name:
                return constraint
        return None

    def to_dict(self) -> dict:
        return {
            "archetype_id": self.archetype_id,
            "kind": self.kind.value,
            "fields": [f.to_dict() for f in self.fields],
        }


class _Line:
    """One significant source line, tokenized with 1-based columns."""

    def __init__(self, number: int, text: str) -> None:
        self.number = number
        self.text = text
        self.tokens: list[tuple[str, int]] = [
            (m.group(0), m.start() + 1) for m in _TOKEN_RE.finditer(text)
        ]
        self.index = 0

    def take(self, expected: str | None = None) -> tuple[str, int]:
        if self.index >= len(self.tokens):
            col = len(self.text) + 1
            want = f"'{expected}'" if expected else "a token"
            raise ParseError(f"expected {want}, got end of line", self.number, col)
        token, col = self.tokens[self.index]
        self.index += 1
        if expected is not None and token != expected:
            raise ParseError(f"expected '{expected}', got {token!r}", self.number, col)
        return token, col

    def peek(self) -> tuple[str, int] | None:
        if self.index >= len(self.tokens):
            return None
        return self.tokens[self.index]

    def rest_from(self, col: int) -> str:
        return self.text[col - 1 :]

    def expect_end(self) -> None:
        leftover = self.peek()
        if leftover is not None:
            raise ParseError(
                f"unexpected token {leftover[0]!r}", self.number, leftover[1]
            )


def _significant_lines(source: str) -> Iterator[_Line]:
    for number, raw in enumerate(source.split("\n"), start=1):
        hash_at = raw.find("#")
        if hash_at >= 0:
            raw = raw[:hash_at]
        if raw.strip():
            yield _Line(number, raw.rstrip())


def _parse_values_clause(line: _Line, keyword_col: int) -> tuple[str, ...]:
    rest = line.rest_from(keyword_col + len("values")).strip()
    start_col = line.text.index(rest[0], keyword_col) + 1 if rest else len(line.text) + 1
    if not rest.startswith("{"):
        raise ParseError("expected '{' after 'values'", line.number, start_col)
    if "}" in rest and not rest.endswith("}"):
        raise ParseError("unexpected text after values list", line.number, len(line.text) + 1)
    if not rest.endswith("}"):
        raise ParseError("unterminated values list, expected '}'", line.number, len(line.text) + 1)
    inner = rest[1:-1].strip()
    if not inner:
        raise ParseError("values list must name at least one code", line.number, start_col)
    codes = []
    for part in inner.split(","):
        code = part.strip()
        if not code or not _CODE_RE.match(code):
            raise ParseError(f"malformed code {part.strip()!r} in values list", line.number, start_col)
        if code in codes:
            raise ParseError(f"duplicate code {code!r} in values list", line.number, start_col)
        codes.append(code)
    # Everything through the closing brace is consumed; drop those tokens.
    line.index = len(line.tokens)
    return tuple(codes)


def _parse_field_line(line: _Line, seen: set[str]) -> FieldConstraint:
    name, name_col = line.take()
    if not _NAME_RE.match(name):
        raise ParseError(f"malformed field name {name!r}", line.number, name_col)
    if name in seen:
        raise ParseError(f"duplicate field {name!r}", line.number, name_col)

    type_token, type_col = line.take()
    try:
        value_type = ValueType(type_token)
    except ValueError:
        raise ParseError(f"unknown field type {type_token!r}", line.number, type_col) from None

    req_token, req_col = line.take()
    if req_token not in ("required", "optional"):
        raise ParseError(
            f"expected 'required' or 'optional', got {req_token!r}", line.number, req_col
        )
    required = req_token == "required"

    value_range: tuple[Decimal, Decimal] | None = None
    unit: str | None = None
    allowed: tuple[str, ...] | None = None

    clause = line.peek()
    if clause is not None and clause[0] == "range":
        _, range_col = line.take()
        if value_type is not ValueType.QUANTITY:
            raise ParseError("'range' applies only to quantity fields", line.number, range_col)
        bounds_token, bounds_col = line.take()
        bounds = _RANGE_RE.match(bounds_token)
        if bounds is None:
            raise ParseError(f"malformed range {bounds_token!r}", line.number, bounds_col)
        lo, hi = Decimal(bounds.group(1)), Decimal(bounds.group(2))
        if lo > hi:
            raise ParseError(
                f"range low bound {lo} exceeds high bound {hi}", line.number, bounds_col
            )
        value_range = (lo, hi)
        clause = line.peek()

    if clause is not None and clause[0] == "unit":
        _, unit_col = line.take()
        if value_type is not ValueType.QUANTITY:
            raise ParseError("'unit' applies only to quantity fields", line.number, unit_col)
        unit, _ = line.take()
        clause = line.peek()

    if clause is not None and clause[0] == "values":
        _, values_col = line.take()
        if value_type is not ValueType.CODED:
            raise ParseError("'values' applies only to coded fields", line.number, values_col)
        allowed = _parse_values_clause(line, values_col)

    line.expect_end()
    return FieldConstraint(
        name=name,
        value_type=value_type,
        required=required,
        range=value_range,
        unit=unit,
        allowed_values=allowed,
    )


def parse_archetype(source: str) -> ArchetypeDefinition:
    """Parse definition source text; total over inputs, raising ParseError
    (never any other exception) for text outside the grammar."""
    if not isinstance(source, str):
        raise ParseError("source must be text", 1, 1)
    lines = list(_significant_lines(source))
    if not lines:
        raise ParseError("missing 'archetype' header", 1, 1)

    header = lines[0]
    header.take("archetype")
    id_token, id_col = header.take()
    id_match = ARCHETYPE_ID_RE.match(id_token)
    if id_match is None:
        raise ParseError(f"malformed archetype id {id_token!r}", header.number, id_col)
    header.expect_end()

    if len(lines) < 2:
        raise ParseError("missing 'kind' line", header.number + 1, 1)
    kind_line = lines[1]
    first = kind_line.peek()
    if first is None or first[0] != "kind":
        raise ParseError("expected 'kind' line after the header", kind_line.number, 1)
    kind_line.take("kind")
    kind_token, kind_col = kind_line.take()
    kind = _KIND_TOKENS.get(kind_token)
    if kind is None:
        raise ParseError(f"unknown kind {kind_token!r}", kind_line.number, kind_col)
    if kind_token != id_match.group("kind"):
        raise ParseError(
            f"kind {kind_token!r} disagrees with archetype id segment "
            f"{id_match.group('kind')!r}",
            kind_line.number,
            kind_col,
        )
    kind_line.expect_end()

    fields: list[FieldConstraint] = []
    seen: set[str] = set()
    for line in lines[2:]:
        keyword, keyword_col = line.take()
        if keyword != "field":
            raise ParseError(
                f"expected 'field' directive, got {keyword!r}", line.number, keyword_col
            )
        constraint = _parse_field_line(line, seen)
        seen.add(constraint.name)
        fields.append(constraint)

    return ArchetypeDefinition(archetype_id=id_token, kind=kind, fields=tuple(fields))


def serialize_archetype(definition: ArchetypeDefinition) -> str:
    """Emit canonical source text; a fixed point of parse -> serialize."""
    out = [f"archetype {definition.archetype_id}"]
    out.append(f"kind {definition.kind.value.upper()}")
    for constraint in definition.fields:
        parts = [
            "field",
            constraint.name,
            constraint.value_type.value,
            "required" if constraint.required else "optional",
        ]
        if constraint.range is not None:
            parts.append(f"range {constraint.range[0]}..{constraint.range[1]}")
        if constraint.unit is not None:
            parts.append(f"unit {constraint.unit}")
        if constraint.allowed_values is not None:
            parts.append("values {" + ", ".join(constraint.allowed_values) + "}")
        out.append(" ".join(parts))
    return "\n".join(out) + "\n"


def validate_entry_fields(
    fields: dict[str, FieldValue],
    definition: ArchetypeDefinition,
) -> list[ConstraintViolation]:
    """Check a field map against a definition and report every violation.

    Declared-but-missing required fields come first (in declaration order),
    then per-present-field problems in the entry's own order. A field whose
    type is wrong gets exactly one TYPE_MISMATCH; range/unit/value checks
    only run once the type is right, so one broken constraint yields one
    violation.
    """
    violations: list[ConstraintViolation] = []

    for constraint in definition.fields:
        if constraint.required and constraint.name not in fields:
            violations.append(ConstraintViolation(
                constraint.name,
                ViolationKind.MISSING_FIELD,
                "required field is absent",
            ))

    expected_class = {
        ValueType.QUANTITY: Quantity,
        ValueType.TEXT: Text,
        ValueType.CODED: Coded,
    }

    for name, value in fields.items():
        constraint = definition.field_named(name)
        if constraint is None:
            violations.append(ConstraintViolation(
                name, ViolationKind.UNKNOWN_FIELD, "field is not in the archetype"
            ))
            continue
        if not isinstance(value, expected_class[constraint.value_type]):
            violations.append(ConstraintViolation(
                name,
                ViolationKind.TYPE_MISMATCH,
                f"expected a {constraint.value_type.value} value",
            ))
            continue
        if isinstance(value, Quantity):
            if constraint.unit is not None and value.unit != constraint.unit:
                violations.append(ConstraintViolation(
                    name,
                    ViolationKind.UNIT_MISMATCH,
                    f"expected unit {constraint.unit!r}, got {value.unit!r}",
                ))
            if constraint.range is not None:
                lo, hi = constraint.range
                if not (lo <= value.magnitude <= hi):
                    violations.append(ConstraintViolation(
                        name,
                        ViolationKind.RANGE_EXCEEDED,
                        f"magnitude {value.magnitude} outside {lo}..{hi}",
                    ))
        elif isinstance(value, Coded):
            if constraint.allowed_values is not None and value.code not in constraint.allowed_values:
                violations.append(ConstraintViolation(
                    name,
                    ViolationKind.VALUE_NOT_ALLOWED,
                    f"code {value.code!r} not in the allowed set",
                ))

    return violations


def check_entry(
    kind: EntryKind,
    fields: dict[str, FieldValue],
    definition: ArchetypeDefinition,
) -> None:
    """Raise KindMismatch or ConstraintViolationError unless the entry
    satisfies the definition completely."""
    if kind is not definition.kind:
        raise KindMismatch(
            f"entry kind {kind.value!r} does not match archetype kind "
            f"{definition.kind.value!r}"
        )
    violations = validate_entry_fields(fields, definition)
    if violations:
        raise ConstraintViolationError(
            f"{len(violations)} constraint violation(s) against {definition.archetype_id}",
            violations,
        )


class ArchetypeRegistry:
    """In-memory registry keyed by base name (id minus the version).

    Re-registering the identical definition is a no-op; a higher version
    replaces; a lower version, or the same version with different content,
    conflicts. Persistence of source text is the caller's concern.
    """

    def __init__(self) -> None:
        self._by_base: dict[str, ArchetypeDefinition] = {}
        self._lock = threading.RLock()

    def register(self, definition: ArchetypeDefinition) -> str:
        """Returns one of 'registered', 'replaced', 'unchanged'."""
        with self._lock:
            current = self._by_base.get(definition.base_name)
            if current is None:
                self._by_base[definition.base_name] = definition
                return "registered"
            if definition.version > current.version:
                self._by_base[definition.base_name] = definition
                return "replaced"
            if definition.version == current.version:
                if definition == current:
                    return "unchanged"
                raise VersionConflict(
                    f"{definition.archetype_id} is already registered with "
                    "different content; bump the version"
                )
            raise VersionConflict(
                f"{definition.archetype_id} is older than the registered "
                f"{current.archetype_id}"
            )

    def register_source(self, source: str) -> tuple[ArchetypeDefinition, str]:
        definition = parse_archetype(source)
        return definition, self.register(definition)

    def resolve(self, archetype_id: str) -> ArchetypeDefinition:
        with self._lock:
            match = ARCHETYPE_ID_RE.match(archetype_id)
            if match is not None:
                base = f"{match.group('ns')}-EHR-{match.group('kind')}.{match.group('name')}"
                current = self._by_base.get(base)
                if current is not None and current.archetype_id == archetype_id:
                    return current
        raise NotFound(f"archetype {archetype_id!r} is not registered")

    def list(self) -> list[ArchetypeDefinition]:
        with self._lock:
            return sorted(self._by_base.values(), key=lambda d: d.archetype_id)
