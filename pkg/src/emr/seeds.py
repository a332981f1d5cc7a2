"""Seed data: reference items and the bundled archetype definitions.

Both seeders are idempotent -- running them against a store that already
holds the data neither duplicates items nor bumps versions.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .archetype import ArchetypeRegistry, parse_archetype
from .clinical import ARCHETYPE_KIND, REFERENCE_KIND, register_and_persist_archetype
from .model import ReferenceCategory, ReferenceItem
from .store import RecordStore

_C = ReferenceCategory

#: (category, code, label) for every reference item a fresh clinic needs:
#: the registration vocabularies, the billable treatment and lab service
#: types, and the closed workflow/role/specialty code lists.
REFERENCE_SEED: tuple[tuple[ReferenceCategory, str, str], ...] = (
    (_C.RELIGION, "buddhism", "Buddhism"),
    (_C.RELIGION, "catholicism", "Catholicism"),
    (_C.RELIGION, "hinduism", "Hinduism"),
    (_C.RELIGION, "islam", "Islam"),
    (_C.RELIGION, "protestant_christian", "Protestant Christian"),
    (_C.RELIGION, "other", "Other"),
    (_C.SEX, "female", "Female"),
    (_C.SEX, "male", "Male"),
    (_C.INSURANCE, "health_insurance", "Health Insurance"),
    (_C.INSURANCE, "social_security", "Social Security"),
    (_C.STATUS, "divorced", "Divorced"),
    (_C.STATUS, "married", "Married"),
    (_C.STATUS, "single", "Single"),
    (_C.TREATMENT_TYPE, "dental", "Dental Treatment"),
    (_C.TREATMENT_TYPE, "eye", "Eye Examination"),
    (_C.TREATMENT_TYPE, "general_practitioner", "General Practitioner Consult"),
    (_C.SERVICE_TYPE, "hematology_lab", "Hematology Laboratory"),
    (_C.SERVICE_TYPE, "urinalysis_lab", "Urinalysis Laboratory"),
    (_C.SERVICE_TYPE, "biochemistry_lab", "Biochemistry Laboratory"),
    (_C.CARD_STATUS, "waiting", "Waiting"),
    (_C.CARD_STATUS, "in_doctor_exam", "In Doctor Examination"),
    (_C.CARD_STATUS, "in_lab_exam", "In Laboratory Examination"),
    (_C.CARD_STATUS, "complete", "Complete"),
    (_C.ROLE, "admin", "Administrator"),
    (_C.ROLE, "staff", "Staff"),
    (_C.ROLE, "doctor", "Doctor"),
    (_C.ROLE, "laborant", "Laborant"),
    (_C.ROLE, "patient", "Patient"),
    (_C.SPECIALTY, "dental", "Dentistry"),
    (_C.SPECIALTY, "eye", "Ophthalmology"),
    (_C.SPECIALTY, "general_practitioner", "General Practice"),
)


def seed_references(store: RecordStore, *, actor: str = "system") -> tuple[int, int]:
    """Insert any missing seed reference items; returns (added, existing)."""
    added = existing = 0
    for category, code, label in REFERENCE_SEED:
        item = ReferenceItem(category=category, code=code, label=label, active=True)
        if store.exists(REFERENCE_KIND, item.record_id):
            existing += 1
            continue
        store.put(REFERENCE_KIND, item.record_id, item.to_dict(), 0, actor, "seed_reference")
        added += 1
    return added, existing


def archetype_seed_dir() -> Path:
    """Directory of definition files bundled with the package."""
    return Path(str(resources.files("emr") / "archetypes"))


def load_registry(store: RecordStore) -> ArchetypeRegistry:
    """Rebuild a registry from the definitions persisted in the store."""
    registry = ArchetypeRegistry()
    for record in store.heads(ARCHETYPE_KIND):
        payload = record.payload_dict()
        if not payload.get("deleted"):
            registry.register(parse_archetype(payload["source"]))
    return registry


def import_archetype_dir(
    store: RecordStore,
    registry: ArchetypeRegistry,
    directory: str | Path | None = None,
    *,
    actor: str = "system",
) -> list[tuple[str, str]]:
    """Register every ``*.adsl`` file in the directory (bundled seeds by
    default); returns (archetype_id, outcome) pairs in filename order."""
    directory = Path(directory) if directory is not None else archetype_seed_dir()
    results = []
    for path in sorted(directory.glob("*.adsl")):
        definition, outcome = register_and_persist_archetype(
            store, registry, path.read_text(encoding="utf-8"), actor
        )
        results.append((definition.archetype_id, outcome))
    return results
