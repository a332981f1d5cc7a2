"""Clinic EMR: demographics, examination cards, archetype-validated
clinical entries, lab panels, billing items, and referrals over a
role-guarded, audited, versioned record store."""

__version__ = "0.1.0"

from .access import AccessControl, Action, Capability, Decision, Resource, Role, Scope
from .archetype import (
    ArchetypeDefinition,
    ArchetypeRegistry,
    ConstraintViolation,
    parse_archetype,
    serialize_archetype,
)
from .clinical import ClinicalService, RecordView, RegistrationResult
from .model import (
    CardEvent,
    CardStatus,
    ClinicalEntry,
    Demographics,
    EntryKind,
    LabPanelKind,
    LabResult,
    Mrn,
    Patient,
    PatientCard,
    ReferralLetter,
    TransactionItem,
)
from .store import RecordStore

__all__ = [
    "AccessControl",
    "Action",
    "ArchetypeDefinition",
    "ArchetypeRegistry",
    "Capability",
    "CardEvent",
    "CardStatus",
    "ClinicalEntry",
    "ClinicalService",
    "ConstraintViolation",
    "Decision",
    "Demographics",
    "EntryKind",
    "LabPanelKind",
    "LabResult",
    "Mrn",
    "Patient",
    "PatientCard",
    "RecordStore",
    "RecordView",
    "ReferralLetter",
    "RegistrationResult",
    "Resource",
    "Role",
    "Scope",
    "TransactionItem",
    "parse_archetype",
    "serialize_archetype",
    "__version__",
]
