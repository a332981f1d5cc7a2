"""Shared fixtures: a seeded service stack and one session per role.

Password hashing iterations are dialed down for speed everywhere except
the tests that exercise hashing itself; nothing else differs from the
production wiring.
"""

from __future__ import annotations

from datetime import date

import pytest

from emr.access import Role
from emr.api import ApiConfig, build_services
from emr.model import Demographics, LabPanelKind
from emr.seeds import import_archetype_dir, seed_references

TEST_ITERATIONS = 800


@pytest.fixture
def services(tmp_path):
    config = ApiConfig(data_dir=tmp_path / "data", password_iterations=TEST_ITERATIONS)
    svcs = build_services(config)
    seed_references(svcs.store)
    import_archetype_dir(svcs.store, svcs.registry)
    return svcs


@pytest.fixture
def sessions(services):
    """One live session per clinic role (patient excluded; register one
    with ``register_patient_with_login`` when a test needs it)."""
    access = services.access
    admin, one_time = access.bootstrap_admin("root")
    access.set_password(admin.user_id, "RootPw123", actor=admin.user_id)
    access.create_user("desk", "Pw123456", Role.STAFF, actor=admin.user_id)
    access.create_user("doc", "Pw123456", Role.DOCTOR, actor=admin.user_id,
                       specialty="general_practitioner")
    access.create_user("lab-hema", "Pw123456", Role.LABORANT, actor=admin.user_id,
                       assigned_lab=LabPanelKind.HEMATOLOGY)
    return {
        "admin": access.authenticate("root", "RootPw123"),
        "staff": access.authenticate("desk", "Pw123456"),
        "doctor": access.authenticate("doc", "Pw123456"),
        "laborant": access.authenticate("lab-hema", "Pw123456"),
    }


def make_demographics(name: str = "Ayu Lestari") -> Demographics:
    return Demographics(
        full_name=name,
        birth_date=date(1990, 4, 12),
        religion="islam",
        sex="female",
        insurance="social_security",
        marital_status="married",
    )


def register_patient_with_login(services, sessions, name: str = "Ayu Lestari"):
    """Register a patient as staff and log the patient in; returns
    (patient, session)."""
    result = services.clinical.register_patient(make_demographics(name), sessions["staff"])
    access = services.access
    first = access.authenticate(result.username, result.one_time_password)
    access.set_password(first.user_id, "MyOwnPw12", actor=first.user_id)
    return result.patient, access.authenticate(result.username, "MyOwnPw12")
