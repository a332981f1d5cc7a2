"""Clinical workflow service.

Every public operation here is one unit of clinic work: it authorizes the
actor exactly once through the access-control facade, enforces the domain
rules (workflow status, archetype constraints, reference data), and lands
its writes in the versioned store with a descriptive audit action. Reads
never mutate; queries used by dashboards live here too so the HTTP layer
stays a thin codec.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable, Mapping

from .access import AccessControl, Action, Resource, Role, Session
from .archetype import ArchetypeDefinition, ArchetypeRegistry, check_entry, parse_archetype, serialize_archetype
from .errors import IllegalState, LabMismatch, NotFound, ValidationError
from .model import (
    CardEvent,
    CardStatus,
    ClinicalEntry,
    Demographics,
    EntryKind,
    FieldValue,
    ItemKind,
    LabPanelKind,
    LabResult,
    Mrn,
    Patient,
    PatientCard,
    Quantity,
    ReferenceCategory,
    ReferenceItem,
    ReferralLetter,
    TransactionItem,
    next_status,
)
from .store import RecordStore

PATIENT_KIND = "Patient"
CARD_KIND = "PatientCard"
REFERRAL_KIND = "Referral"
REFERENCE_KIND = "Reference"
ARCHETYPE_KIND = "Archetype"

#: Which reference category legitimizes each transaction item kind.
_ITEM_CATEGORY = {
    ItemKind.HANDLING: ReferenceCategory.TREATMENT_TYPE,
    ItemKind.SERVICE: ReferenceCategory.SERVICE_TYPE,
}


def register_and_persist_archetype(
    store: RecordStore,
    registry: ArchetypeRegistry,
    source: str,
    actor: str,
) -> tuple[ArchetypeDefinition, str]:
    """Parse a definition, register it, and persist its canonical source.

    Returns the definition and one of 'registered', 'replaced',
    'unchanged'; only the first two write to the store. A same-version
    re-registration with different content raises VersionConflict before
    anything is persisted.
    """
    definition = parse_archetype(source)
    outcome = registry.register(definition)
    if outcome != "unchanged":
        head = store.head_version(ARCHETYPE_KIND, definition.base_name)
        payload = {
            "archetype_id": definition.archetype_id,
            "source": serialize_archetype(definition),
        }
        store.put(ARCHETYPE_KIND, definition.base_name, payload, head,
                  actor, "register_archetype")
    return definition, outcome


@dataclass(frozen=True)
class RegistrationResult:
    """A fresh patient plus the one-time login handed to the front desk."""

    patient: Patient
    username: str
    one_time_password: str


@dataclass(frozen=True)
class RecordView:
    """Everything one patient may see about themselves (and clinicians
    about them): demographics, every card with its bill, and referrals."""

    patient: Patient
    cards: tuple[PatientCard, ...]
    referrals: tuple[ReferralLetter, ...]

    def to_dict(self, currency: str) -> dict:
        return {
            "patient": self.patient.to_dict(),
            "cards": [
                {**card.to_dict(), "total": card.total(), "currency": currency}
                for card in self.cards
            ],
            "referrals": [r.to_dict() for r in self.referrals],
        }


class ClinicalService:
    def __init__(
        self,
        store: RecordStore,
        access: AccessControl,
        registry: ArchetypeRegistry | None = None,
        *,
        clock: Callable[[], datetime] | None = None,
        currency: str = "IDR",
    ) -> None:
        self.store = store
        self.access = access
        self.registry = registry or ArchetypeRegistry()
        self.clock = clock or (lambda: datetime.now(timezone.utc))
        self.currency = currency
        self._lock = threading.RLock()
        self._mrn_serial = 1
        self._card_serial = 1
        self._referral_serial = 1
        self._cards_by_mrn: dict[str, list[str]] = {}
        self._rebuild_indexes()

    def _now_iso(self) -> str:
        return self.clock().strftime("%Y-%m-%dT%H:%M:%S.%fZ")

    def _rebuild_indexes(self) -> None:
        with self._lock:
            for record in self.store.heads(PATIENT_KIND):
                serial = Mrn(record.record_id).serial
                self._mrn_serial = max(self._mrn_serial, serial + 1)
            cards = [PatientCard.from_dict(r.payload_dict()) for r in self.store.heads(CARD_KIND)]
            for card in sorted(cards, key=lambda c: c.seq_no):
                self._cards_by_mrn.setdefault(card.mrn.value, []).append(card.card_id)
                serial_text = card.card_id[3:]
                if serial_text.isdigit():
                    self._card_serial = max(self._card_serial, int(serial_text) + 1)
            for record in self.store.heads(REFERRAL_KIND):
                serial_text = record.record_id[3:]
                if serial_text.isdigit():
                    self._referral_serial = max(self._referral_serial, int(serial_text) + 1)
            for record in self.store.heads(ARCHETYPE_KIND):
                payload = record.payload_dict()
                if not payload.get("deleted"):
                    self.registry.register(parse_archetype(payload["source"]))

    # ------------------------------------------------------------- reference

    def reference_items(self, category: ReferenceCategory, *, include_inactive: bool = False) -> list[ReferenceItem]:
        items = []
        for record in self.store.heads(REFERENCE_KIND):
            item = ReferenceItem.from_dict(record.payload_dict())
            if item.category is category and (item.active or include_inactive):
                items.append(item)
        return sorted(items, key=lambda i: i.code)

    def _require_reference(self, category: ReferenceCategory, code: str, what: str) -> None:
        try:
            item = ReferenceItem.from_dict(
                self.store.get_payload(REFERENCE_KIND, f"{category.value}:{code}")
            )
        except NotFound:
            item = None
        if item is None or not item.active:
            raise ValidationError(
                f"{what} {code!r} is not an active {category.value} reference item"
            )

    def add_reference_item(
        self, category: ReferenceCategory, code: str, label: str, session: Session
    ) -> ReferenceItem:
        self.access.require(session, Action.CREATE, Resource.REFERENCE_ITEM)
        item = ReferenceItem(category=category, code=code, label=label, active=True)
        with self._lock:
            head = self.store.head_version(REFERENCE_KIND, item.record_id)
            if head:
                current = ReferenceItem.from_dict(
                    self.store.get_payload(REFERENCE_KIND, item.record_id)
                )
                if current.active:
                    raise ValidationError(
                        f"{category.value} item {code!r} already exists"
                    )
            actor = session.user_id if session else "system"
            self.store.put(REFERENCE_KIND, item.record_id, item.to_dict(), head,
                           actor, "add_reference")
        return item

    def remove_reference_item(
        self, category: ReferenceCategory, code: str, session: Session
    ) -> None:
        self.access.require(session, Action.DELETE, Resource.REFERENCE_ITEM)
        record_id = f"{category.value}:{code}"
        with self._lock:
            head = self.store.head_version(REFERENCE_KIND, record_id)
            if not head:
                raise NotFound(f"no {category.value} reference item {code!r}")
            current = ReferenceItem.from_dict(self.store.get_payload(REFERENCE_KIND, record_id))
            if not current.active:
                raise NotFound(f"{category.value} item {code!r} is already removed")
            payload = current.to_dict()
            payload["active"] = False
            actor = session.user_id if session else "system"
            self.store.put(REFERENCE_KIND, record_id, payload, head, actor, "remove_reference")

    # ------------------------------------------------------------ archetypes

    def register_archetype(self, source: str, session: Session) -> tuple[ArchetypeDefinition, str]:
        """Parse, register, and persist a definition; returns the parsed
        definition and one of 'registered', 'replaced', 'unchanged'."""
        self.access.require(session, Action.CREATE, Resource.ARCHETYPE)
        actor = session.user_id if session else "system"
        with self._lock:
            return register_and_persist_archetype(self.store, self.registry, source, actor)

    def archetypes(self) -> list[ArchetypeDefinition]:
        return self.registry.list()

    def archetype(self, archetype_id: str) -> ArchetypeDefinition:
        return self.registry.resolve(archetype_id)

    # -------------------------------------------------------------- patients

    def register_patient(self, demographics: Demographics, session: Session) -> RegistrationResult:
        """Register a walk-in: allocate the next MRN, file demographics,
        and provision the patient's own must-change login."""
        self.access.require(session, Action.CREATE, Resource.PATIENT)
        self._require_reference(ReferenceCategory.RELIGION, demographics.religion, "religion")
        self._require_reference(ReferenceCategory.SEX, demographics.sex, "sex")
        self._require_reference(ReferenceCategory.INSURANCE, demographics.insurance, "insurance")
        self._require_reference(ReferenceCategory.STATUS, demographics.marital_status, "marital status")
        actor = session.user_id if session else "system"
        with self._lock:
            mrn = Mrn.from_serial(self._mrn_serial)
            credential, password = self.access.provision_patient_credential(mrn, actor=actor)
            patient = Patient(
                mrn=mrn,
                demographics=demographics,
                created_at=self._now_iso(),
                credential_ref=credential.user_id,
            )
            self.store.put(PATIENT_KIND, mrn.value, patient.to_dict(), 0,
                           actor, "register_patient")
            self._mrn_serial += 1
        return RegistrationResult(patient, credential.username, password)

    def get_patient(self, mrn: str) -> Patient:
        return Patient.from_dict(self.store.get_payload(PATIENT_KIND, mrn))

    def list_patients(self) -> list[Patient]:
        return [Patient.from_dict(r.payload_dict()) for r in self.store.heads(PATIENT_KIND)]

    def patient_record_view(self, mrn: str, session: Session) -> RecordView:
        # Authorization first: a foreign MRN is denied before existence is
        # revealed, so the error itself leaks nothing.
        self.access.require(session, Action.READ, Resource.PATIENT, owner_mrn=mrn)
        patient = self.get_patient(mrn)
        cards = tuple(sorted(self.cards_for(mrn), key=lambda c: c.seq_no))
        referrals = tuple(r for r in self.list_referrals() if r.mrn.value == mrn)
        return RecordView(patient=patient, cards=cards, referrals=referrals)

    # ----------------------------------------------------------------- cards

    def open_card(self, mrn: str, session: Session) -> PatientCard:
        self.access.require(session, Action.CREATE, Resource.PATIENT_CARD)
        patient = self.get_patient(mrn)  # NotFound if unregistered
        actor = session.user_id if session else "system"
        with self._lock:
            card = PatientCard(
                card_id=f"CRD{self._card_serial:08d}",
                mrn=patient.mrn,
                seq_no=len(self._cards_by_mrn.get(mrn, [])) + 1,
                status=CardStatus.WAITING,
                opened_by=actor,
                opened_at=self._now_iso(),
            )
            self.store.put(CARD_KIND, card.card_id, card.to_dict(), 0, actor, "open_card")
            self._card_serial += 1
            self._cards_by_mrn.setdefault(mrn, []).append(card.card_id)
        return card

    def get_card(self, card_id: str) -> PatientCard:
        return PatientCard.from_dict(self.store.get_payload(CARD_KIND, card_id))

    def cards_for(self, mrn: str) -> list[PatientCard]:
        with self._lock:
            card_ids = list(self._cards_by_mrn.get(mrn, []))
        return [self.get_card(card_id) for card_id in card_ids]

    def all_cards(self) -> list[PatientCard]:
        return [PatientCard.from_dict(r.payload_dict()) for r in self.store.heads(CARD_KIND)]

    def cards_by_status(self, status: CardStatus) -> list[PatientCard]:
        return [c for c in self.all_cards() if c.status is status]

    def lab_queue(self, panel: LabPanelKind) -> list[PatientCard]:
        """Cards sent to the lab that still lack this panel's result."""
        return [
            c for c in self.cards_by_status(CardStatus.IN_LAB_EXAM)
            if not c.has_result_for(panel)
        ]

    def _put_card(self, card: PatientCard, expected_version: int, actor: str, action: str) -> None:
        self.store.put(CARD_KIND, card.card_id, card.to_dict(), expected_version, actor, action)

    def transition_card(self, card_id: str, event: CardEvent, session: Session) -> PatientCard:
        """Fire one workflow event. The pair table decides legality before
        the event-role rule, so an undefined pair reports IllegalTransition
        no matter who asks."""
        self.access.require(session, Action.UPDATE, Resource.PATIENT_CARD)
        head = self.store.head_version(CARD_KIND, card_id)
        card = self.get_card(card_id)
        status = next_status(card.status, event)
        self.access.require_event_role(session, event)
        updated = card.with_status(status)
        actor = session.user_id if session else "system"
        self._put_card(updated, head, actor, f"transition:{event.value}")
        return updated

    def attach_entry(
        self,
        card_id: str,
        kind: EntryKind,
        archetype_id: str,
        fields: Mapping[str, FieldValue],
        session: Session,
    ) -> PatientCard:
        self.access.require(session, Action.CREATE, Resource.CLINICAL_ENTRY)
        head = self.store.head_version(CARD_KIND, card_id)
        card = self.get_card(card_id)
        if card.status is not CardStatus.IN_DOCTOR_EXAM:
            raise IllegalState(
                f"entries require status {CardStatus.IN_DOCTOR_EXAM.value!r}, "
                f"card is {card.status.value!r}"
            )
        try:
            definition = self.registry.resolve(archetype_id)
        except NotFound:
            raise ValidationError(f"unknown archetype {archetype_id!r}") from None
        check_entry(kind, dict(fields), definition)
        actor = session.user_id if session else "system"
        entry = ClinicalEntry(
            entry_id=f"{card_id}.e{len(card.entries) + 1}",
            kind=kind,
            archetype_id=archetype_id,
            fields=dict(fields),
            author=actor,
            authored_at=self._now_iso(),
        )
        updated = card.with_entry(entry)
        self._put_card(updated, head, actor, "attach_entry")
        return updated

    def attach_lab_result(
        self,
        card_id: str,
        panel: LabPanelKind,
        measurements: Mapping[str, Quantity],
        session: Session,
    ) -> PatientCard:
        self.access.require(session, Action.CREATE, Resource.LAB_RESULT)
        head = self.store.head_version(CARD_KIND, card_id)
        card = self.get_card(card_id)
        if session is not None and session.assigned_lab is not panel:
            raise LabMismatch(
                f"assigned lab {session.assigned_lab.value if session.assigned_lab else None!r} "
                f"cannot file a {panel.value} panel"
            )
        if card.status is not CardStatus.IN_LAB_EXAM:
            raise IllegalState(
                f"lab results require status {CardStatus.IN_LAB_EXAM.value!r}, "
                f"card is {card.status.value!r}"
            )
        if not measurements:
            raise ValidationError("a lab result needs at least one measurement")
        for name, quantity in measurements.items():
            if not isinstance(quantity, Quantity):
                raise ValidationError(f"measurement {name!r} must be a quantity")
        actor = session.user_id if session else "system"
        result = LabResult(
            result_id=f"{card_id}.l{len(card.lab_results) + 1}",
            panel=panel,
            measurements=dict(measurements),
            author=actor,
            authored_at=self._now_iso(),
        )
        updated = card.with_lab_result(result)
        self._put_card(updated, head, actor, "attach_lab_result")
        return updated

    def add_transaction_item(
        self,
        card_id: str,
        kind: ItemKind,
        type_code: str,
        cost: int,
        session: Session,
    ) -> PatientCard:
        """Bill a handling or service onto the card. Billing is legal in
        any status -- the front desk finishes the paperwork after Close."""
        self.access.require(session, Action.CREATE, Resource.TRANSACTION_ITEM)
        head = self.store.head_version(CARD_KIND, card_id)
        card = self.get_card(card_id)
        category = _ITEM_CATEGORY[kind]
        self._require_reference(category, type_code, category.value)
        actor = session.user_id if session else "system"
        item = TransactionItem(
            item_id=f"{card_id}.i{len(card.items) + 1}",
            kind=kind,
            type_code=type_code,
            cost=cost,
            added_by=actor,
        )
        updated = card.with_item(item)
        self._put_card(updated, head, actor, "add_item")
        return updated

    def card_total(self, card_id: str) -> int:
        """The card's bill in minor currency units; 0 for no items."""
        return self.get_card(card_id).total()

    # ------------------------------------------------------------- referrals

    def make_referral(
        self,
        card_id: str,
        target_facility: str,
        target_specialty: str | None,
        reason: str,
        session: Session,
    ) -> ReferralLetter:
        self.access.require(session, Action.CREATE, Resource.REFERRAL)
        card = self.get_card(card_id)
        if card.status is CardStatus.WAITING:
            raise IllegalState("cannot refer before the examination has begun")
        if target_specialty is not None:
            self._require_reference(ReferenceCategory.SPECIALTY, target_specialty, "specialty")
        actor = session.user_id if session else "system"
        with self._lock:
            referral = ReferralLetter(
                referral_id=f"REF{self._referral_serial:08d}",
                card_id=card_id,
                mrn=card.mrn,
                issuing_doctor=actor,
                target_facility=target_facility,
                target_specialty=target_specialty,
                reason=reason,
                issued_at=self._now_iso(),
            )
            self.store.put(REFERRAL_KIND, referral.referral_id, referral.to_dict(), 0,
                           actor, "make_referral")
            self._referral_serial += 1
        return referral

    def list_referrals(self) -> list[ReferralLetter]:
        return [
            ReferralLetter.from_dict(r.payload_dict())
            for r in self.store.heads(REFERRAL_KIND)
        ]

    # ------------------------------------------------------------- dashboard

    def dashboard_for(self, session: Session) -> dict:
        """Role-shaped work summary; reading it never mutates anything."""
        role = session.role
        if role is Role.ADMIN:
            users = self.access.list_users()
            by_role: dict[str, int] = {}
            for user in users:
                by_role[user.role.value] = by_role.get(user.role.value, 0) + 1
            by_status = {status.value: 0 for status in CardStatus}
            for card in self.all_cards():
                by_status[card.status.value] += 1
            return {
                "role": role.value,
                "users": {"total": len(users), "by_role": by_role},
                "patients": len(self.store.list_ids(PATIENT_KIND)),
                "cards": {"by_status": by_status},
                "archetypes": len(self.registry.list()),
                "audit_events": self.store.audit_count(),
            }
        if role is Role.STAFF:
            open_cards = [c for c in self.all_cards() if c.status is not CardStatus.COMPLETE]
            unbilled = [c for c in self.all_cards()
                        if c.status is CardStatus.COMPLETE and not c.items]
            return {
                "role": role.value,
                "patients": len(self.store.list_ids(PATIENT_KIND)),
                "waiting": [self._card_summary(c) for c in self.cards_by_status(CardStatus.WAITING)],
                "open_cards": len(open_cards),
                "unbilled_complete": [self._card_summary(c) for c in unbilled],
            }
        if role is Role.DOCTOR:
            queue = self.cards_by_status(CardStatus.WAITING) + self.cards_by_status(
                CardStatus.IN_DOCTOR_EXAM
            )
            mine = [r for r in self.list_referrals() if r.issuing_doctor == session.user_id]
            return {
                "role": role.value,
                "queue": [self._card_summary(c) for c in queue],
                "awaiting_lab": len(self.cards_by_status(CardStatus.IN_LAB_EXAM)),
                "my_referrals": len(mine),
            }
        if role is Role.LABORANT:
            panel = session.assigned_lab
            pending = self.lab_queue(panel) if panel else []
            return {
                "role": role.value,
                "lab": panel.value if panel else None,
                "pending": [self._card_summary(c) for c in pending],
            }
        # Patient: own episodes only.
        mrn = session.linked_mrn
        cards = self.cards_for(mrn) if mrn else []
        return {
            "role": role.value,
            "mrn": mrn,
            "cards": len(cards),
            "open_cards": sum(1 for c in cards if c.status is not CardStatus.COMPLETE),
            "billed_total": sum(c.total() for c in cards),
            "currency": self.currency,
            "last_visit": max((c.opened_at for c in cards), default=None),
        }

    @staticmethod
    def _card_summary(card: PatientCard) -> dict:
        return {
            "card_id": card.card_id,
            "mrn": card.mrn.value,
            "seq_no": card.seq_no,
            "status": card.status.value,
            "opened_at": card.opened_at,
        }
