"""Clinic workflow tests: registration, cards, entries, labs, billing,
referrals, and record views, exercised through the service layer."""

from __future__ import annotations

from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emr.access import AccessControl, Role
from emr.api import ApiConfig, build_services
from emr.errors import (
    AuthorizationDenied,
    IllegalState,
    IllegalTransition,
    LabMismatch,
    NotFound,
    ValidationError,
)
from emr.model import (
    CardEvent,
    CardStatus,
    Demographics,
    EntryKind,
    ItemKind,
    LabPanelKind,
    Quantity,
    Text,
)
from emr.seeds import import_archetype_dir, seed_references

from conftest import make_demographics, register_patient_with_login

VITALS = "openEHR-EHR-OBSERVATION.vital_signs.v1"
HEMATOLOGY = "openEHR-EHR-INVESTIGATION.hematology_panel.v1"


def _register(services, sessions, name="Ayu Lestari"):
    return services.clinical.register_patient(make_demographics(name), sessions["staff"])


def _card_in_doctor_exam(services, sessions):
    clinical = services.clinical
    patient = _register(services, sessions).patient
    card = clinical.open_card(patient.mrn.value, sessions["staff"])
    return clinical.transition_card(card.card_id, CardEvent.START_DOCTOR_EXAM,
                                    sessions["doctor"])


# -------------------------------------------------------------- registration


def test_identical_registrations_create_distinct_patients(services, sessions):
    first = _register(services, sessions)
    second = _register(services, sessions)
    assert first.patient.demographics == second.patient.demographics
    assert first.patient.mrn != second.patient.mrn
    assert first.username != second.username


def test_mrns_are_formatted_and_monotonic(services, sessions):
    mrns = [_register(services, sessions, f"P {i}").patient.mrn.value for i in range(3)]
    assert mrns == ["MRN00000001", "MRN00000002", "MRN00000003"]


def test_mrn_numbering_survives_restart(services, sessions):
    _register(services, sessions)
    _register(services, sessions)

    reopened = build_services(ApiConfig(data_dir=services.store.data_dir,
                                        password_iterations=800))
    staff = reopened.access.authenticate("desk", "Pw123456")
    third = reopened.clinical.register_patient(make_demographics("Late"), staff)
    assert third.patient.mrn.value == "MRN00000003"


def test_registration_issues_patient_credential(services, sessions):
    result = _register(services, sessions)
    assert result.username == result.patient.mrn.value
    session = services.access.authenticate(result.username, result.one_time_password)
    assert session.role is Role.PATIENT
    assert session.restricted
    assert result.patient.credential_ref == session.user_id


@pytest.mark.parametrize("field,value", [
    ("religion", "jedi"),
    ("sex", "unknown_code"),
    ("insurance", "crypto"),
    ("marital_status", "complicated"),
])
def test_demographics_must_use_registered_reference_values(services, sessions,
                                                           field, value):
    demo = make_demographics()
    demo = Demographics(**{**demo.to_dict(), field: value,
                           "birth_date": demo.birth_date})
    with pytest.raises(ValidationError, match=value):
        services.clinical.register_patient(demo, sessions["staff"])


def test_only_staff_may_register(services, sessions):
    for who in ("doctor", "laborant", "admin"):
        with pytest.raises(AuthorizationDenied):
            services.clinical.register_patient(make_demographics(), sessions[who])


# --------------------------------------------------------------------- cards


def test_cards_number_gaplessly_per_patient(services, sessions):
    clinical = services.clinical
    a = _register(services, sessions, "A").patient
    b = _register(services, sessions, "B").patient
    a1 = clinical.open_card(a.mrn.value, sessions["staff"])
    b1 = clinical.open_card(b.mrn.value, sessions["staff"])
    a2 = clinical.open_card(a.mrn.value, sessions["staff"])
    assert (a1.seq_no, a2.seq_no, b1.seq_no) == (1, 2, 1)
    assert a1.card_id != a2.card_id != b1.card_id
    assert a1.status is CardStatus.WAITING


def test_card_for_unknown_patient_fails(services, sessions):
    with pytest.raises(NotFound):
        services.clinical.open_card("MRN00009999", sessions["staff"])


def test_canonical_direct_visit(services, sessions):
    clinical = services.clinical
    card = _card_in_doctor_exam(services, sessions)
    assert card.status is CardStatus.IN_DOCTOR_EXAM
    closed = clinical.transition_card(card.card_id, CardEvent.CLOSE, sessions["staff"])
    assert closed.status is CardStatus.COMPLETE


def test_canonical_lab_visit(services, sessions):
    clinical = services.clinical
    card = _card_in_doctor_exam(services, sessions)
    in_lab = clinical.transition_card(card.card_id, CardEvent.SEND_TO_LAB,
                                      sessions["doctor"])
    assert in_lab.status is CardStatus.IN_LAB_EXAM
    back = clinical.transition_card(card.card_id, CardEvent.LAB_DONE,
                                    sessions["laborant"])
    assert back.status is CardStatus.IN_DOCTOR_EXAM
    done = clinical.transition_card(card.card_id, CardEvent.CLOSE, sessions["staff"])
    assert done.status is CardStatus.COMPLETE


def test_illegal_pair_beats_wrong_role(services, sessions):
    """A nonsensical (status, event) pair reports IllegalTransition even when
    the caller could not have fired the event anyway."""
    clinical = services.clinical
    patient = _register(services, sessions).patient
    card = clinical.open_card(patient.mrn.value, sessions["staff"])
    with pytest.raises(IllegalTransition):
        clinical.transition_card(card.card_id, CardEvent.LAB_DONE, sessions["staff"])


def test_right_pair_wrong_role_is_denied(services, sessions):
    clinical = services.clinical
    patient = _register(services, sessions).patient
    card = clinical.open_card(patient.mrn.value, sessions["staff"])
    with pytest.raises(AuthorizationDenied):
        clinical.transition_card(card.card_id, CardEvent.START_DOCTOR_EXAM,
                                 sessions["staff"])
    assert clinical.get_card(card.card_id).status is CardStatus.WAITING


def test_closed_card_is_terminal(services, sessions):
    clinical = services.clinical
    card = _card_in_doctor_exam(services, sessions)
    clinical.transition_card(card.card_id, CardEvent.CLOSE, sessions["staff"])
    for event, who in [(CardEvent.START_DOCTOR_EXAM, "doctor"),
                       (CardEvent.SEND_TO_LAB, "doctor"),
                       (CardEvent.LAB_DONE, "laborant"),
                       (CardEvent.CLOSE, "staff")]:
        with pytest.raises(IllegalTransition):
            clinical.transition_card(card.card_id, event, sessions[who])


# ------------------------------------------------------------------- entries


def test_doctor_attaches_validated_entry(services, sessions):
    clinical = services.clinical
    card = _card_in_doctor_exam(services, sessions)
    updated = clinical.attach_entry(
        card.card_id, EntryKind.OBSERVATION, VITALS,
        {"systolic_bp": Quantity(Decimal("120"), "mmHg"),
         "note": Text("stable")},
        sessions["doctor"],
    )
    assert len(updated.entries) == 1
    entry = updated.entries[0]
    assert entry.entry_id == f"{card.card_id}.e1"
    assert entry.archetype_id == VITALS
    assert entry.author == sessions["doctor"].user_id


def test_entry_ids_count_up_within_a_card(services, sessions):
    clinical = services.clinical
    card = _card_in_doctor_exam(services, sessions)
    for _ in range(3):
        updated = clinical.attach_entry(
            card.card_id, EntryKind.OBSERVATION, VITALS,
            {"systolic_bp": Quantity(Decimal("120"), "mmHg")},
            sessions["doctor"],
        )
    assert [e.entry_id for e in updated.entries] == [
        f"{card.card_id}.e{i}" for i in (1, 2, 3)
    ]


def test_entries_rejected_outside_doctor_exam(services, sessions):
    clinical = services.clinical
    patient = _register(services, sessions).patient
    card = clinical.open_card(patient.mrn.value, sessions["staff"])
    fields = {"systolic_bp": Quantity(Decimal("120"), "mmHg")}
    with pytest.raises(IllegalState):
        clinical.attach_entry(card.card_id, EntryKind.OBSERVATION, VITALS,
                              fields, sessions["doctor"])
    in_exam = clinical.transition_card(card.card_id, CardEvent.START_DOCTOR_EXAM,
                                       sessions["doctor"])
    clinical.transition_card(card.card_id, CardEvent.CLOSE, sessions["staff"])
    with pytest.raises(IllegalState):
        clinical.attach_entry(card.card_id, EntryKind.OBSERVATION, VITALS,
                              fields, sessions["doctor"])
    assert in_exam.entries == ()


def test_entry_against_unknown_archetype(services, sessions):
    card = _card_in_doctor_exam(services, sessions)
    with pytest.raises(ValidationError, match="unknown archetype"):
        services.clinical.attach_entry(
            card.card_id, EntryKind.OBSERVATION,
            "openEHR-EHR-OBSERVATION.not_a_thing.v1",
            {}, sessions["doctor"])


def test_only_doctor_attaches_entries(services, sessions):
    card = _card_in_doctor_exam(services, sessions)
    with pytest.raises(AuthorizationDenied):
        services.clinical.attach_entry(
            card.card_id, EntryKind.OBSERVATION, VITALS,
            {"systolic_bp": Quantity(Decimal("120"), "mmHg")},
            sessions["staff"])


# ---------------------------------------------------------------------- labs


def _card_in_lab(services, sessions):
    card = _card_in_doctor_exam(services, sessions)
    return services.clinical.transition_card(card.card_id, CardEvent.SEND_TO_LAB,
                                             sessions["doctor"])


def test_laborant_files_panel_for_their_own_lab(services, sessions):
    clinical = services.clinical
    card = _card_in_lab(services, sessions)
    updated = clinical.attach_lab_result(
        card.card_id, LabPanelKind.HEMATOLOGY,
        {"hemoglobin": Quantity(Decimal("13.5"), "g/dL")},
        sessions["laborant"],
    )
    assert len(updated.lab_results) == 1
    result = updated.lab_results[0]
    assert result.result_id == f"{card.card_id}.l1"
    assert result.panel is LabPanelKind.HEMATOLOGY
    assert updated.has_result_for(LabPanelKind.HEMATOLOGY)


def test_wrong_panel_for_assigned_lab_is_a_mismatch(services, sessions):
    card = _card_in_lab(services, sessions)
    with pytest.raises(LabMismatch):
        services.clinical.attach_lab_result(
            card.card_id, LabPanelKind.URINALYSIS,
            {"ph": Quantity(Decimal("7"), "pH")},
            sessions["laborant"])


def test_lab_result_requires_in_lab_status(services, sessions):
    card = _card_in_doctor_exam(services, sessions)
    with pytest.raises(IllegalState):
        services.clinical.attach_lab_result(
            card.card_id, LabPanelKind.HEMATOLOGY,
            {"hemoglobin": Quantity(Decimal("13.5"), "g/dL")},
            sessions["laborant"])


def test_lab_result_needs_measurements(services, sessions):
    card = _card_in_lab(services, sessions)
    with pytest.raises(ValidationError):
        services.clinical.attach_lab_result(
            card.card_id, LabPanelKind.HEMATOLOGY, {}, sessions["laborant"])


def test_lab_queue_lists_waiting_cards(services, sessions):
    clinical = services.clinical
    card = _card_in_lab(services, sessions)
    queued = clinical.lab_queue(LabPanelKind.HEMATOLOGY)
    assert [c.card_id for c in queued] == [card.card_id]
    clinical.attach_lab_result(
        card.card_id, LabPanelKind.HEMATOLOGY,
        {"hemoglobin": Quantity(Decimal("13.5"), "g/dL")},
        sessions["laborant"])
    clinical.transition_card(card.card_id, CardEvent.LAB_DONE, sessions["laborant"])
    assert clinical.lab_queue(LabPanelKind.HEMATOLOGY) == []


# ------------------------------------------------------------------- billing


def test_items_allowed_in_every_status_including_complete(services, sessions):
    clinical = services.clinical
    patient = _register(services, sessions).patient
    card = clinical.open_card(patient.mrn.value, sessions["staff"])
    clinical.add_transaction_item(card.card_id, ItemKind.SERVICE,
                                  "hematology_lab", 50_000, sessions["staff"])
    clinical.transition_card(card.card_id, CardEvent.START_DOCTOR_EXAM,
                             sessions["doctor"])
    clinical.add_transaction_item(card.card_id, ItemKind.HANDLING,
                                  "general_practitioner", 100_000, sessions["staff"])
    clinical.transition_card(card.card_id, CardEvent.CLOSE, sessions["staff"])
    updated = clinical.add_transaction_item(card.card_id, ItemKind.HANDLING,
                                            "dental", 250_000,
                                            sessions["staff"])
    assert updated.status is CardStatus.COMPLETE
    assert [i.item_id for i in updated.items] == [
        f"{card.card_id}.i{n}" for n in (1, 2, 3)
    ]
    assert clinical.card_total(card.card_id) == 400_000


def test_item_type_codes_come_from_reference_data(services, sessions):
    card = _card_in_doctor_exam(services, sessions)
    with pytest.raises(ValidationError, match="spa_day"):
        services.clinical.add_transaction_item(
            card.card_id, ItemKind.HANDLING, "spa_day", 10, sessions["staff"])
    # Service codes and handling codes are separate vocabularies.
    with pytest.raises(ValidationError):
        services.clinical.add_transaction_item(
            card.card_id, ItemKind.SERVICE, "general_practitioner", 10, sessions["staff"])


def test_empty_card_total_is_zero(services, sessions):
    patient = _register(services, sessions).patient
    card = services.clinical.open_card(patient.mrn.value, sessions["staff"])
    assert services.clinical.card_total(card.card_id) == 0


@given(costs=st.lists(st.integers(min_value=0, max_value=10_000_000),
                      min_size=1, max_size=8))
@settings(max_examples=25, deadline=None)
def test_total_equals_sum_of_item_costs(tmp_path_factory, costs):
    config = ApiConfig(data_dir=tmp_path_factory.mktemp("billing"),
                       password_iterations=800)
    svcs = build_services(config)
    seed_references(svcs.store)
    import_archetype_dir(svcs.store, svcs.registry)
    admin, one_time = svcs.access.bootstrap_admin("root")
    svcs.access.set_password(admin.user_id, "RootPw123", actor=admin.user_id)
    svcs.access.create_user("desk", "Pw123456", Role.STAFF, actor=admin.user_id)
    staff = svcs.access.authenticate("desk", "Pw123456")
    patient = svcs.clinical.register_patient(make_demographics(), staff).patient
    card = svcs.clinical.open_card(patient.mrn.value, staff)
    for cost in costs:
        svcs.clinical.add_transaction_item(card.card_id, ItemKind.HANDLING,
                                           "general_practitioner", cost, staff)
    assert svcs.clinical.card_total(card.card_id) == sum(costs)


def test_negative_and_boolean_costs_rejected(services, sessions):
    card = _card_in_doctor_exam(services, sessions)
    with pytest.raises(ValidationError):
        services.clinical.add_transaction_item(
            card.card_id, ItemKind.HANDLING, "general_practitioner", -1, sessions["staff"])
    with pytest.raises(ValidationError):
        services.clinical.add_transaction_item(
            card.card_id, ItemKind.HANDLING, "general_practitioner", True, sessions["staff"])


# ----------------------------------------------------------------- referrals


def test_referral_issued_from_active_exam(services, sessions):
    clinical = services.clinical
    card = _card_in_doctor_exam(services, sessions)
    referral = clinical.make_referral(card.card_id, "Regional Hospital",
                                      "eye", "suspected glaucoma",
                                      sessions["doctor"])
    assert referral.referral_id == "REF00000001"
    assert referral.mrn == card.mrn
    assert referral.issuing_doctor == sessions["doctor"].user_id
    assert [r.referral_id for r in clinical.list_referrals()] == ["REF00000001"]


def test_referral_rejected_while_waiting(services, sessions):
    clinical = services.clinical
    patient = _register(services, sessions).patient
    card = clinical.open_card(patient.mrn.value, sessions["staff"])
    with pytest.raises(IllegalState):
        clinical.make_referral(card.card_id, "Regional Hospital", None,
                               "too eager", sessions["doctor"])


def test_referral_specialty_checked_against_references(services, sessions):
    card = _card_in_doctor_exam(services, sessions)
    with pytest.raises(ValidationError, match="astrology"):
        services.clinical.make_referral(card.card_id, "Regional Hospital",
                                        "astrology", "why not",
                                        sessions["doctor"])
    # Specialty is optional; omitting it entirely is fine.
    referral = services.clinical.make_referral(card.card_id, "Regional Hospital",
                                               None, "second opinion",
                                               sessions["doctor"])
    assert referral.target_specialty is None


def test_referral_requires_facility_and_reason(services, sessions):
    card = _card_in_doctor_exam(services, sessions)
    with pytest.raises(ValidationError):
        services.clinical.make_referral(card.card_id, "", None, "reason",
                                        sessions["doctor"])
    with pytest.raises(ValidationError):
        services.clinical.make_referral(card.card_id, "Facility", None, "  ",
                                        sessions["doctor"])


def test_only_doctor_refers(services, sessions):
    card = _card_in_doctor_exam(services, sessions)
    for who in ("staff", "laborant", "admin"):
        with pytest.raises(AuthorizationDenied):
            services.clinical.make_referral(card.card_id, "Facility", None,
                                            "reason", sessions[who])


# ------------------------------------------------------------------ views


def test_patient_reads_own_record_but_not_others(services, sessions):
    clinical = services.clinical
    mine, my_session = register_patient_with_login(services, sessions, "Mine")
    other, _ = register_patient_with_login(services, sessions, "Other")
    clinical.open_card(mine.mrn.value, sessions["staff"])

    view = clinical.patient_record_view(mine.mrn.value, my_session)
    assert view.patient.mrn == mine.mrn
    assert len(view.cards) == 1

    with pytest.raises(AuthorizationDenied):
        clinical.patient_record_view(other.mrn.value, my_session)


def test_foreign_record_denial_does_not_reveal_existence(services, sessions):
    _, my_session = register_patient_with_login(services, sessions, "Mine")
    with pytest.raises(AuthorizationDenied):
        services.clinical.patient_record_view("MRN00009999", my_session)


def test_staff_view_includes_totals_and_referrals(services, sessions):
    clinical = services.clinical
    card = _card_in_doctor_exam(services, sessions)
    clinical.add_transaction_item(card.card_id, ItemKind.HANDLING,
                                  "general_practitioner", 75_000, sessions["staff"])
    clinical.make_referral(card.card_id, "Regional Hospital", None, "checkup",
                           sessions["doctor"])
    view = clinical.patient_record_view(card.mrn.value, sessions["staff"])
    shaped = view.to_dict("IDR")
    assert shaped["cards"][0]["total"] == 75_000
    assert shaped["cards"][0]["currency"] == "IDR"
    assert len(shaped["referrals"]) == 1


def test_authorization_is_asked_exactly_once_per_call(services, sessions,
                                                      monkeypatch):
    calls = []
    original = AccessControl.require

    def counting(self, *args, **kwargs):
        calls.append(args)
        return original(self, *args, **kwargs)

    monkeypatch.setattr(AccessControl, "require", counting)
    _register(services, sessions)
    # register_patient checks Create Patient once; the credential provisioning
    # underneath must not re-authorize.
    assert len(calls) == 1


# ----------------------------------------------------------------- dashboards


def test_dashboards_are_role_shaped(services, sessions):
    clinical = services.clinical
    card = _card_in_lab(services, sessions)

    staff_board = clinical.dashboard_for(sessions["staff"])
    doctor_board = clinical.dashboard_for(sessions["doctor"])
    laborant_board = clinical.dashboard_for(sessions["laborant"])
    admin_board = clinical.dashboard_for(sessions["admin"])

    assert staff_board["role"] == "staff"
    assert doctor_board["role"] == "doctor"
    assert {c["card_id"] for c in laborant_board["pending"]} == {card.card_id}
    assert admin_board["cards"]["by_status"]["in_lab_exam"] == 1
    assert admin_board["users"]["by_role"]["staff"] == 1


def test_patient_dashboard_totals_their_own_bills(services, sessions):
    clinical = services.clinical
    patient, session = register_patient_with_login(services, sessions)
    card = clinical.open_card(patient.mrn.value, sessions["staff"])
    clinical.add_transaction_item(card.card_id, ItemKind.HANDLING,
                                  "general_practitioner", 120_000, sessions["staff"])
    board = clinical.dashboard_for(session)
    assert board["role"] == "patient"
    assert board["mrn"] == patient.mrn.value
    assert board["billed_total"] == 120_000
    assert board["currency"] == "IDR"
