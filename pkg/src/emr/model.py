"""Core clinical domain types.

Everything here is a plain value object: frozen dataclasses with explicit
``to_dict``/``from_dict`` wire codecs. Monetary amounts are integer minor
units (no floats), quantity magnitudes are :class:`decimal.Decimal`
serialized as strings, and timestamps are ISO-8601 UTC strings produced by
the caller's clock. Mutation happens only by deriving a new value
(``dataclasses.replace``); persistence and authorization live elsewhere.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from datetime import date
from decimal import Decimal, InvalidOperation
from enum import Enum
from typing import Any, Mapping, Union

from .errors import IllegalTransition, ValidationError

MRN_PREFIX = "MRN"
_MRN_RE = re.compile(r"^MRN(\d{8})$")


@dataclass(frozen=True, order=True)
class Mrn:
    """Medical record number: ``MRN`` followed by eight digits."""

    value: str

    def __post_init__(self) -> None:
        if not _MRN_RE.match(self.value):
            raise ValidationError(f"malformed MRN {self.value!r}")

    @classmethod
    def from_serial(cls, serial: int) -> "Mrn":
        if serial < 1 or serial > 99_999_999:
            raise ValidationError(f"MRN serial {serial} out of range")
        return cls(f"{MRN_PREFIX}{serial:08d}")

    @property
    def serial(self) -> int:
        return int(self.value[len(MRN_PREFIX):])

    def __str__(self) -> str:
        return self.value


class CardStatus(str, Enum):
    WAITING = "waiting"
    IN_DOCTOR_EXAM = "in_doctor_exam"
    IN_LAB_EXAM = "in_lab_exam"
    COMPLETE = "complete"


class CardEvent(str, Enum):
    START_DOCTOR_EXAM = "start_doctor_exam"
    SEND_TO_LAB = "send_to_lab"
    LAB_DONE = "lab_done"
    CLOSE = "close"


#: The complete card workflow. Any (status, event) pair absent from this
#: table is an illegal transition -- there are no implicit self-loops.
TRANSITIONS: dict[tuple[CardStatus, CardEvent], CardStatus] = {
    (CardStatus.WAITING, CardEvent.START_DOCTOR_EXAM): CardStatus.IN_DOCTOR_EXAM,
    (CardStatus.IN_DOCTOR_EXAM, CardEvent.SEND_TO_LAB): CardStatus.IN_LAB_EXAM,
    (CardStatus.IN_LAB_EXAM, CardEvent.LAB_DONE): CardStatus.IN_DOCTOR_EXAM,
    (CardStatus.IN_DOCTOR_EXAM, CardEvent.CLOSE): CardStatus.COMPLETE,
}


def next_status(status: CardStatus, event: CardEvent) -> CardStatus:
    """Resolve the workflow table; raise IllegalTransition for absent pairs."""
    try:
        return TRANSITIONS[(status, event)]
    except KeyError:
        raise IllegalTransition(
            f"event {event.value!r} is not legal in status {status.value!r}"
        ) from None


class EntryKind(str, Enum):
    OBSERVATION = "observation"
    HISTORY = "history"
    EXAMINATION = "examination"
    INVESTIGATION = "investigation"
    EVALUATION = "evaluation"
    INSTRUCTION = "instruction"


#: Kinds that record something observed about the patient, as opposed to
#: the doctor's assessment (evaluation) or plan (instruction).
OBSERVATION_FAMILY = frozenset({
    EntryKind.OBSERVATION,
    EntryKind.HISTORY,
    EntryKind.EXAMINATION,
    EntryKind.INVESTIGATION,
})


class LabPanelKind(str, Enum):
    HEMATOLOGY = "hematology"
    URINALYSIS = "urinalysis"
    BIOCHEMISTRY = "biochemistry"


class ItemKind(str, Enum):
    HANDLING = "handling"
    SERVICE = "service"


class ReferenceCategory(str, Enum):
    """Closed set of reference-data categories; there is no 'other'."""

    RELIGION = "religion"
    INSURANCE = "insurance"
    SEX = "sex"
    STATUS = "status"
    CARD_STATUS = "card_status"
    TREATMENT_TYPE = "treatment_type"
    SERVICE_TYPE = "service_type"
    ROLE = "role"
    SPECIALTY = "specialty"


def _parse_decimal(raw: Any, what: str) -> Decimal:
    if isinstance(raw, bool):
        raise ValidationError(f"{what} must be a number, got a boolean")
    if isinstance(raw, Decimal):
        return raw
    if isinstance(raw, int):
        return Decimal(raw)
    if isinstance(raw, float):
        # Floats arrive from JSON bodies; go through str() so 0.1 stays 0.1.
        return Decimal(str(raw))
    if isinstance(raw, str):
        try:
            return Decimal(raw.strip())
        except InvalidOperation:
            raise ValidationError(f"{what} is not a valid number: {raw!r}") from None
    raise ValidationError(f"{what} must be a number or numeric string")


@dataclass(frozen=True)
class Quantity:
    """A measured amount with a unit, e.g. 120 mmHg."""

    magnitude: Decimal
    unit: str

    def __post_init__(self) -> None:
        if not isinstance(self.magnitude, Decimal):
            object.__setattr__(self, "magnitude", _parse_decimal(self.magnitude, "magnitude"))
        if not self.unit or not self.unit.strip():
            raise ValidationError("quantity unit must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {"type": "quantity", "magnitude": str(self.magnitude), "unit": self.unit}


@dataclass(frozen=True)
class Text:
    """Free narrative text."""

    value: str

    def to_dict(self) -> dict[str, Any]:
        return {"type": "text", "value": self.value}


@dataclass(frozen=True)
class Coded:
    """A code drawn from a closed value set."""

    code: str

    def __post_init__(self) -> None:
        if not self.code or not self.code.strip():
            raise ValidationError("coded value must be a non-empty code")

    def to_dict(self) -> dict[str, Any]:
        return {"type": "coded", "code": self.code}


FieldValue = Union[Quantity, Text, Coded]


def field_value_from_dict(raw: Mapping[str, Any]) -> FieldValue:
    """Decode one wire field value: {"type": "quantity"|"text"|"coded", ...}."""
    if not isinstance(raw, Mapping):
        raise ValidationError("field value must be an object with a 'type' key")
    vtype = raw.get("type")
    if vtype == "quantity":
        if "magnitude" not in raw or "unit" not in raw:
            raise ValidationError("quantity value needs 'magnitude' and 'unit'")
        unit = raw["unit"]
        if not isinstance(unit, str):
            raise ValidationError("quantity unit must be a string")
        return Quantity(_parse_decimal(raw["magnitude"], "magnitude"), unit)
    if vtype == "text":
        value = raw.get("value")
        if not isinstance(value, str):
            raise ValidationError("text value needs a string 'value'")
        return Text(value)
    if vtype == "coded":
        code = raw.get("code")
        if not isinstance(code, str):
            raise ValidationError("coded value needs a string 'code'")
        return Coded(code)
    raise ValidationError(f"unknown field value type {vtype!r}")


@dataclass(frozen=True)
class Demographics:
    """Registration demographics; the coded fields must name active
    reference items of the matching category (checked by the service)."""

    full_name: str
    birth_date: date
    religion: str
    sex: str
    insurance: str
    marital_status: str
    contact: str | None = None

    def __post_init__(self) -> None:
        if not self.full_name or not self.full_name.strip():
            raise ValidationError("full_name must be non-empty")
        if not isinstance(self.birth_date, date):
            raise ValidationError("birth_date must be a date")

    def to_dict(self) -> dict[str, Any]:
        return {
            "full_name": self.full_name,
            "birth_date": self.birth_date.isoformat(),
            "religion": self.religion,
            "sex": self.sex,
            "insurance": self.insurance,
            "marital_status": self.marital_status,
            "contact": self.contact,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "Demographics":
        try:
            birth = date.fromisoformat(str(raw["birth_date"]))
        except (KeyError, ValueError):
            raise ValidationError("birth_date must be an ISO date (YYYY-MM-DD)") from None
        missing = [k for k in ("full_name", "religion", "sex", "insurance", "marital_status")
                   if not isinstance(raw.get(k), str)]
        if missing:
            raise ValidationError(f"demographics missing fields: {', '.join(missing)}")
        contact = raw.get("contact")
        if contact is not None and not isinstance(contact, str):
            raise ValidationError("contact must be a string when present")
        return cls(
            full_name=raw["full_name"],
            birth_date=birth,
            religion=raw["religion"],
            sex=raw["sex"],
            insurance=raw["insurance"],
            marital_status=raw["marital_status"],
            contact=contact,
        )


@dataclass(frozen=True)
class Patient:
    mrn: Mrn
    demographics: Demographics
    created_at: str
    credential_ref: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "mrn": self.mrn.value,
            "demographics": self.demographics.to_dict(),
            "created_at": self.created_at,
            "credential_ref": self.credential_ref,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "Patient":
        return cls(
            mrn=Mrn(raw["mrn"]),
            demographics=Demographics.from_dict(raw["demographics"]),
            created_at=raw["created_at"],
            credential_ref=raw.get("credential_ref"),
        )


@dataclass(frozen=True)
class ClinicalEntry:
    """One archetype-shaped note on a card, authored by a doctor."""

    entry_id: str
    kind: EntryKind
    archetype_id: str
    fields: Mapping[str, FieldValue]
    author: str
    authored_at: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "entry_id": self.entry_id,
            "kind": self.kind.value,
            "archetype_id": self.archetype_id,
            "fields": {name: value.to_dict() for name, value in self.fields.items()},
            "author": self.author,
            "authored_at": self.authored_at,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ClinicalEntry":
        return cls(
            entry_id=raw["entry_id"],
            kind=EntryKind(raw["kind"]),
            archetype_id=raw["archetype_id"],
            fields={name: field_value_from_dict(value) for name, value in raw["fields"].items()},
            author=raw["author"],
            authored_at=raw["authored_at"],
        )


@dataclass(frozen=True)
class LabResult:
    """One panel's measurements, filed by a laborant of that lab."""

    result_id: str
    panel: LabPanelKind
    measurements: Mapping[str, Quantity]
    author: str
    authored_at: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "result_id": self.result_id,
            "panel": self.panel.value,
            "measurements": {
                name: {"magnitude": str(q.magnitude), "unit": q.unit}
                for name, q in self.measurements.items()
            },
            "author": self.author,
            "authored_at": self.authored_at,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "LabResult":
        return cls(
            result_id=raw["result_id"],
            panel=LabPanelKind(raw["panel"]),
            measurements={
                name: Quantity(_parse_decimal(q["magnitude"], "magnitude"), q["unit"])
                for name, q in raw["measurements"].items()
            },
            author=raw["author"],
            authored_at=raw["authored_at"],
        )


@dataclass(frozen=True)
class TransactionItem:
    """A billable line: a handling (treatment) or a service, costed in
    integer minor units of the clinic currency."""

    item_id: str
    kind: ItemKind
    type_code: str
    cost: int
    added_by: str

    def __post_init__(self) -> None:
        if isinstance(self.cost, bool) or not isinstance(self.cost, int):
            raise ValidationError("cost must be an integer amount in minor units")
        if self.cost < 0:
            raise ValidationError("cost must be non-negative")
        if not self.type_code or not self.type_code.strip():
            raise ValidationError("transaction item needs a type code")

    @property
    def type_field(self) -> str:
        return "treatment_type" if self.kind is ItemKind.HANDLING else "service_type"

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "kind": self.kind.value,
            self.type_field: self.type_code,
            "cost": self.cost,
            "added_by": self.added_by,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "TransactionItem":
        kind = ItemKind(raw["kind"])
        key = "treatment_type" if kind is ItemKind.HANDLING else "service_type"
        return cls(
            item_id=raw["item_id"],
            kind=kind,
            type_code=raw[key],
            cost=raw["cost"],
            added_by=raw["added_by"],
        )


@dataclass(frozen=True)
class PatientCard:
    """One visit episode. Entries, lab results, and items are append-only;
    deriving a new card value is the only way to change one."""

    card_id: str
    mrn: Mrn
    seq_no: int
    status: CardStatus
    opened_by: str
    opened_at: str
    entries: tuple[ClinicalEntry, ...] = field(default=())
    lab_results: tuple[LabResult, ...] = field(default=())
    items: tuple[TransactionItem, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.seq_no < 1:
            raise ValidationError("card seq_no starts at 1")

    def with_status(self, status: CardStatus) -> "PatientCard":
        return replace(self, status=status)

    def with_entry(self, entry: ClinicalEntry) -> "PatientCard":
        return replace(self, entries=self.entries + (entry,))

    def with_lab_result(self, result: LabResult) -> "PatientCard":
        return replace(self, lab_results=self.lab_results + (result,))

    def with_item(self, item: TransactionItem) -> "PatientCard":
        return replace(self, items=self.items + (item,))

    def total(self) -> int:
        return sum(item.cost for item in self.items)

    def has_result_for(self, panel: LabPanelKind) -> bool:
        return any(r.panel is panel for r in self.lab_results)

    def to_dict(self) -> dict[str, Any]:
        return {
            "card_id": self.card_id,
            "mrn": self.mrn.value,
            "seq_no": self.seq_no,
            "status": self.status.value,
            "opened_by": self.opened_by,
            "opened_at": self.opened_at,
            "entries": [e.to_dict() for e in self.entries],
            "lab_results": [r.to_dict() for r in self.lab_results],
            "items": [i.to_dict() for i in self.items],
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "PatientCard":
        return cls(
            card_id=raw["card_id"],
            mrn=Mrn(raw["mrn"]),
            seq_no=raw["seq_no"],
            status=CardStatus(raw["status"]),
            opened_by=raw["opened_by"],
            opened_at=raw["opened_at"],
            entries=tuple(ClinicalEntry.from_dict(e) for e in raw["entries"]),
            lab_results=tuple(LabResult.from_dict(r) for r in raw["lab_results"]),
            items=tuple(TransactionItem.from_dict(i) for i in raw["items"]),
        )


@dataclass(frozen=True)
class ReferralLetter:
    """An outbound referral issued by a doctor for an examined card."""

    referral_id: str
    card_id: str
    mrn: Mrn
    issuing_doctor: str
    target_facility: str
    reason: str
    issued_at: str
    target_specialty: str | None = None

    def __post_init__(self) -> None:
        if not self.target_facility or not self.target_facility.strip():
            raise ValidationError("referral needs a target facility")
        if not self.reason or not self.reason.strip():
            raise ValidationError("referral needs a reason")

    def to_dict(self) -> dict[str, Any]:
        return {
            "referral_id": self.referral_id,
            "card_id": self.card_id,
            "mrn": self.mrn.value,
            "issuing_doctor": self.issuing_doctor,
            "target_facility": self.target_facility,
            "target_specialty": self.target_specialty,
            "reason": self.reason,
            "issued_at": self.issued_at,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ReferralLetter":
        return cls(
            referral_id=raw["referral_id"],
            card_id=raw["card_id"],
            mrn=Mrn(raw["mrn"]),
            issuing_doctor=raw["issuing_doctor"],
            target_facility=raw["target_facility"],
            target_specialty=raw.get("target_specialty"),
            reason=raw["reason"],
            issued_at=raw["issued_at"],
        )


@dataclass(frozen=True)
class ReferenceItem:
    """One code/label pair in a closed reference category. Deletion is a
    soft flag so historical records keep resolving."""

    category: ReferenceCategory
    code: str
    label: str
    active: bool = True

    def __post_init__(self) -> None:
        if not self.code or not self.code.strip():
            raise ValidationError("reference item needs a code")
        if not self.label or not self.label.strip():
            raise ValidationError("reference item needs a label")

    @property
    def record_id(self) -> str:
        return f"{self.category.value}:{self.code}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "category": self.category.value,
            "code": self.code,
            "label": self.label,
            "active": self.active,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ReferenceItem":
        return cls(
            category=ReferenceCategory(raw["category"]),
            code=raw["code"],
            label=raw["label"],
            active=raw.get("active", True),
        )
