"""HTTP surface tests: status codes, body shapes, and the error taxonomy."""

from __future__ import annotations

from types import SimpleNamespace

import pytest
from fastapi.testclient import TestClient

from emr.access import Role
from emr.api import ApiConfig, build_services, create_app
from emr.model import LabPanelKind
from emr.seeds import import_archetype_dir, seed_references

VITALS = "openEHR-EHR-OBSERVATION.vital_signs.v1"


def _build_stack(tmp_path, *, enforce=True):
    config = ApiConfig(data_dir=tmp_path / "data", password_iterations=800,
                       enforce_authz=enforce)
    services = build_services(config)
    seed_references(services.store)
    import_archetype_dir(services.store, services.registry)
    access = services.access
    admin, _ = access.bootstrap_admin("root")
    access.set_password(admin.user_id, "RootPw123", actor=admin.user_id)
    access.create_user("desk", "Pw123456", Role.STAFF, actor=admin.user_id)
    access.create_user("doc", "Pw123456", Role.DOCTOR, actor=admin.user_id,
                       specialty="general_practitioner")
    access.create_user("lab-hema", "Pw123456", Role.LABORANT, actor=admin.user_id,
                       assigned_lab=LabPanelKind.HEMATOLOGY)
    client = TestClient(create_app(config, services))
    tokens = {}
    for name, username, password in [("admin", "root", "RootPw123"),
                                     ("staff", "desk", "Pw123456"),
                                     ("doctor", "doc", "Pw123456"),
                                     ("laborant", "lab-hema", "Pw123456")]:
        response = client.post("/api/login",
                               json={"username": username, "password": password})
        assert response.status_code == 200, response.text
        tokens[name] = response.json()["token"]
    return SimpleNamespace(client=client, tokens=tokens, services=services)


@pytest.fixture
def api(tmp_path):
    return _build_stack(tmp_path)


def _auth(token):
    return {"Authorization": f"Bearer {token}"}


def _register_patient(api, name="Ayu Lestari"):
    response = api.client.post("/api/patients", headers=_auth(api.tokens["staff"]), json={
        "full_name": name, "birth_date": "1990-04-12", "religion": "islam",
        "sex": "female", "insurance": "social_security", "marital_status": "married",
    })
    assert response.status_code == 201, response.text
    return response.json()


def _open_card(api, mrn):
    response = api.client.post(f"/api/patients/{mrn}/cards",
                               headers=_auth(api.tokens["staff"]))
    assert response.status_code == 201, response.text
    return response.json()


def _transition(api, card_id, event, who):
    return api.client.post(f"/api/cards/{card_id}/transition",
                           headers=_auth(api.tokens[who]), json={"event": event})


def _card_in_doctor_exam(api):
    card = _open_card(api, _register_patient(api)["patient"]["mrn"])
    response = _transition(api, card["card_id"], "start_doctor_exam", "doctor")
    assert response.status_code == 200
    return response.json()


# ---------------------------------------------------------------------- auth


def test_health_is_open(api):
    response = api.client.get("/api/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok"}


def test_login_returns_session_descriptor(api):
    response = api.client.post("/api/login",
                               json={"username": "lab-hema", "password": "Pw123456"})
    body = response.json()
    assert body["role"] == "laborant"
    assert body["assigned_lab"] == "hematology"
    assert body["must_change_password"] is False
    assert body["linked_mrn"] is None
    assert len(body["token"]) >= 32


def test_bad_credentials_are_401_with_challenge(api):
    response = api.client.post("/api/login",
                               json={"username": "desk", "password": "wrong"})
    assert response.status_code == 401
    assert response.headers["WWW-Authenticate"] == "Bearer"
    body = response.json()
    assert body["status"] == 401
    assert body["code"] == "auth_failure"
    assert "message" in body


def test_missing_and_malformed_tokens_are_401(api):
    assert api.client.get("/api/patients").status_code == 401
    assert api.client.get("/api/patients",
                          headers={"Authorization": "Basic abc"}).status_code == 401
    assert api.client.get("/api/patients",
                          headers=_auth("bogus-token")).status_code == 401


def test_malformed_body_is_400(api):
    response = api.client.post("/api/login", json={"username": "desk"})
    assert response.status_code == 400
    assert response.json()["code"] == "malformed_body"
    # Unknown body keys are rejected, not silently dropped.
    response = api.client.post("/api/login", json={"username": "desk",
                                                   "password": "x", "extra": 1})
    assert response.status_code == 400


def test_unknown_route_shares_the_error_shape(api):
    response = api.client.get("/api/nope")
    assert response.status_code == 404
    body = response.json()
    assert body["code"] == "not_found"
    assert set(body) == {"status", "code", "message"}


def test_restricted_session_can_only_change_password(api):
    credential = _register_patient(api)["credential"]
    assert credential["must_change_password"] is True
    login = api.client.post("/api/login", json={
        "username": credential["username"],
        "password": credential["one_time_password"],
    }).json()
    assert login["must_change_password"] is True

    locked = api.client.get("/api/dashboard", headers=_auth(login["token"]))
    assert locked.status_code == 403

    changed = api.client.post("/api/password", headers=_auth(login["token"]),
                              json={"new_password": "MyOwnPw12"})
    assert changed.status_code == 200

    relogin = api.client.post("/api/login", json={
        "username": credential["username"], "password": "MyOwnPw12"}).json()
    assert relogin["must_change_password"] is False
    assert api.client.get("/api/dashboard",
                          headers=_auth(relogin["token"])).status_code == 200


# --------------------------------------------------------------------- users


def test_admin_manages_users(api):
    created = api.client.post("/api/users", headers=_auth(api.tokens["admin"]), json={
        "username": "desk2", "password": "Pw123456", "role": "staff"})
    assert created.status_code == 201
    body = created.json()
    assert body["username"] == "desk2"
    assert "password_hash" not in body

    listed = api.client.get("/api/users", headers=_auth(api.tokens["admin"])).json()
    assert listed["total"] == 5
    assert {u["username"] for u in listed["items"]} >= {"root", "desk", "desk2"}

    deleted = api.client.delete(f"/api/users/{body['user_id']}",
                                headers=_auth(api.tokens["admin"]))
    assert deleted.status_code == 200
    remaining = api.client.get("/api/users", headers=_auth(api.tokens["admin"])).json()
    assert "desk2" not in {u["username"] for u in remaining["items"]}


def test_non_admins_cannot_touch_users(api):
    for who in ("staff", "doctor", "laborant"):
        assert api.client.post("/api/users", headers=_auth(api.tokens[who]), json={
            "username": "x", "password": "Pw123456", "role": "staff",
        }).status_code == 403
        assert api.client.delete("/api/users/USR00000001",
                                 headers=_auth(api.tokens[who])).status_code == 403
    # Listing is permitted for clinic staff, though.
    assert api.client.get("/api/users",
                          headers=_auth(api.tokens["staff"])).status_code == 200


def test_user_validation_errors_are_422(api):
    headers = _auth(api.tokens["admin"])
    bad_role = api.client.post("/api/users", headers=headers, json={
        "username": "x", "password": "Pw123456", "role": "wizard"})
    assert bad_role.status_code == 422
    assert "wizard" in bad_role.json()["message"]
    duplicate = api.client.post("/api/users", headers=headers, json={
        "username": "desk", "password": "Pw123456", "role": "staff"})
    assert duplicate.status_code == 422


# ------------------------------------------------------------------ patients


def test_registration_returns_patient_and_credential(api):
    body = _register_patient(api)
    patient = body["patient"]
    assert patient["mrn"] == "MRN00000001"
    assert patient["demographics"]["full_name"] == "Ayu Lestari"
    credential = body["credential"]
    assert credential["username"] == "MRN00000001"
    assert credential["must_change_password"] is True


def test_only_staff_registers_patients(api):
    for who in ("doctor", "laborant", "admin"):
        response = api.client.post("/api/patients", headers=_auth(api.tokens[who]), json={
            "full_name": "X", "birth_date": "1990-01-01", "religion": "islam",
            "sex": "male", "insurance": "health_insurance", "marital_status": "single",
        })
        assert response.status_code == 403, who


def test_unknown_reference_code_is_422_over_http(api):
    response = api.client.post("/api/patients", headers=_auth(api.tokens["staff"]), json={
        "full_name": "X", "birth_date": "1990-01-01", "religion": "jedi",
        "sex": "male", "insurance": "health_insurance", "marital_status": "single",
    })
    assert response.status_code == 422
    assert "jedi" in response.json()["message"]


def test_patient_listing_paginates(api):
    for i in range(5):
        _register_patient(api, f"Patient {i}")
    headers = _auth(api.tokens["staff"])
    page = api.client.get("/api/patients?offset=2&limit=2", headers=headers).json()
    assert page["total"] == 5
    assert page["offset"] == 2 and page["limit"] == 2
    assert [p["mrn"] for p in page["items"]] == ["MRN00000003", "MRN00000004"]
    beyond = api.client.get("/api/patients?offset=50", headers=headers).json()
    assert beyond["items"] == []
    assert api.client.get("/api/patients?limit=0", headers=headers).status_code == 400


def test_patient_reads_own_record_only(api):
    mine = _register_patient(api, "Mine")
    other = _register_patient(api, "Other")
    token = _patient_token(api, mine["credential"])

    own = api.client.get(f"/api/patients/{mine['patient']['mrn']}",
                         headers=_auth(token))
    assert own.status_code == 200
    assert own.json()["patient"]["mrn"] == mine["patient"]["mrn"]

    foreign = api.client.get(f"/api/patients/{other['patient']['mrn']}",
                             headers=_auth(token))
    assert foreign.status_code == 403
    ghost = api.client.get("/api/patients/MRN00009999", headers=_auth(token))
    assert ghost.status_code == 403  # no existence probe for other records


def _patient_token(api, credential):
    login = api.client.post("/api/login", json={
        "username": credential["username"],
        "password": credential["one_time_password"]}).json()
    api.client.post("/api/password", headers=_auth(login["token"]),
                    json={"new_password": "MyOwnPw12"})
    return api.client.post("/api/login", json={
        "username": credential["username"],
        "password": "MyOwnPw12"}).json()["token"]


def test_staff_sees_404_for_unknown_patient(api):
    response = api.client.get("/api/patients/MRN00009999",
                              headers=_auth(api.tokens["staff"]))
    assert response.status_code == 404
    assert response.json()["code"] == "not_found"


# --------------------------------------------------------------------- cards


def test_card_lifecycle_over_http(api):
    card = _open_card(api, _register_patient(api)["patient"]["mrn"])
    assert card["status"] == "waiting"
    assert card["seq_no"] == 1
    assert card["total"] == 0 and card["currency"] == "IDR"

    started = _transition(api, card["card_id"], "start_doctor_exam", "doctor")
    assert started.status_code == 200
    assert started.json()["status"] == "in_doctor_exam"

    closed = _transition(api, card["card_id"], "close", "staff")
    assert closed.json()["status"] == "complete"


def test_illegal_transition_is_409_regardless_of_actor(api):
    card = _open_card(api, _register_patient(api)["patient"]["mrn"])
    for who in ("staff", "doctor", "laborant"):
        response = _transition(api, card["card_id"], "lab_done", who)
        assert response.status_code == 409, who
        assert response.json()["code"] == "illegal_transition"


def test_legal_pair_wrong_role_is_403(api):
    card = _open_card(api, _register_patient(api)["patient"]["mrn"])
    response = _transition(api, card["card_id"], "start_doctor_exam", "staff")
    assert response.status_code == 403
    assert response.json()["code"] == "authorization_denied"


def test_unknown_event_name_is_422(api):
    card = _open_card(api, _register_patient(api)["patient"]["mrn"])
    response = _transition(api, card["card_id"], "warp_speed", "doctor")
    assert response.status_code == 422
    assert "warp_speed" in response.json()["message"]


def test_entry_round_trip_with_archetype_validation(api):
    card = _card_in_doctor_exam(api)
    response = api.client.post(
        f"/api/cards/{card['card_id']}/entries",
        headers=_auth(api.tokens["doctor"]),
        json={"kind": "observation", "archetype_id": VITALS, "fields": {
            "systolic_bp": {"type": "quantity", "magnitude": "128", "unit": "mmHg"},
            "note": {"type": "text", "value": "slightly elevated"},
        }},
    )
    assert response.status_code == 201, response.text
    entry = response.json()["entries"][0]
    assert entry["archetype_id"] == VITALS
    assert entry["fields"]["systolic_bp"]["magnitude"] == "128"


def test_constraint_violations_carry_details(api):
    card = _card_in_doctor_exam(api)
    response = api.client.post(
        f"/api/cards/{card['card_id']}/entries",
        headers=_auth(api.tokens["doctor"]),
        json={"kind": "observation", "archetype_id": VITALS, "fields": {
            "systolic_bp": {"type": "quantity", "magnitude": "9000", "unit": "psi"},
        }},
    )
    assert response.status_code == 422
    body = response.json()
    assert body["code"] == "constraint_violation"
    kinds = {d["kind"] for d in body["details"]}
    assert kinds == {"range_exceeded", "unit_mismatch"}


def test_lab_round_trip_and_mismatch(api):
    card = _card_in_doctor_exam(api)
    _transition(api, card["card_id"], "send_to_lab", "doctor")
    headers = _auth(api.tokens["laborant"])

    wrong_panel = api.client.post(f"/api/cards/{card['card_id']}/labs",
                                  headers=headers, json={
        "panel": "urinalysis",
        "measurements": {"ph": {"magnitude": 7, "unit": "pH"}}})
    assert wrong_panel.status_code == 422
    assert wrong_panel.json()["code"] == "lab_mismatch"

    filed = api.client.post(f"/api/cards/{card['card_id']}/labs",
                            headers=headers, json={
        "panel": "hematology",
        "measurements": {"hemoglobin": {"magnitude": "13.5", "unit": "g/dL"}}})
    assert filed.status_code == 201, filed.text
    result = filed.json()["lab_results"][0]
    assert result["panel"] == "hematology"
    assert result["measurements"]["hemoglobin"]["magnitude"] == "13.5"


def test_items_and_total_over_http(api):
    card = _card_in_doctor_exam(api)
    headers = _auth(api.tokens["staff"])
    first = api.client.post(f"/api/cards/{card['card_id']}/items", headers=headers,
                            json={"kind": "handling", "cost": 150_000,
                                  "treatment_type": "general_practitioner"})
    assert first.status_code == 201
    second = api.client.post(f"/api/cards/{card['card_id']}/items", headers=headers,
                             json={"kind": "service", "cost": 80_000,
                                   "service_type": "hematology_lab"})
    assert second.status_code == 201

    total = api.client.get(f"/api/cards/{card['card_id']}/total", headers=headers)
    assert total.json() == {"card_id": card["card_id"], "total": 230_000,
                            "currency": "IDR"}

    missing_code = api.client.post(f"/api/cards/{card['card_id']}/items",
                                   headers=headers,
                                   json={"kind": "handling", "cost": 10})
    assert missing_code.status_code == 422


def test_unknown_card_is_404(api):
    response = api.client.get("/api/cards/CRD00009999",
                              headers=_auth(api.tokens["staff"]))
    assert response.status_code == 404


# ----------------------------------------------------------------- referrals


def test_referral_flow_over_http(api):
    card = _card_in_doctor_exam(api)
    created = api.client.post("/api/referrals", headers=_auth(api.tokens["doctor"]),
                              json={"card_id": card["card_id"],
                                    "target_facility": "Regional Hospital",
                                    "target_specialty": "eye",
                                    "reason": "ophthalmology consult"})
    assert created.status_code == 201
    body = created.json()
    assert body["referral_id"] == "REF00000001"
    assert body["target_specialty"] == "eye"

    listed = api.client.get("/api/referrals", headers=_auth(api.tokens["staff"])).json()
    assert listed["total"] == 1
    assert listed["items"][0]["referral_id"] == "REF00000001"

    for who in ("staff", "laborant", "admin"):
        denied = api.client.post("/api/referrals", headers=_auth(api.tokens[who]),
                                 json={"card_id": card["card_id"],
                                       "target_facility": "X", "reason": "y"})
        assert denied.status_code == 403, who


# ---------------------------------------------------------------- references


def test_reference_catalog_reads(api):
    listed = api.client.get("/api/references/religion",
                            headers=_auth(api.tokens["staff"])).json()
    assert listed["category"] == "religion"
    assert {"code": "islam", "label": "Islam"} in listed["items"]
    assert len(listed["items"]) == 6

    unknown = api.client.get("/api/references/shoe_size",
                             headers=_auth(api.tokens["staff"]))
    assert unknown.status_code == 404


def test_reference_writes_are_admin_only(api):
    payload = {"category": "specialty", "code": "cardiology", "label": "Cardiology"}
    denied = api.client.post("/api/references", headers=_auth(api.tokens["staff"]),
                             json=payload)
    assert denied.status_code == 403

    created = api.client.post("/api/references", headers=_auth(api.tokens["admin"]),
                              json=payload)
    assert created.status_code == 201
    duplicate = api.client.post("/api/references", headers=_auth(api.tokens["admin"]),
                                json=payload)
    assert duplicate.status_code == 422

    removed = api.client.delete("/api/references?category=specialty&code=cardiology",
                                headers=_auth(api.tokens["admin"]))
    assert removed.status_code == 200
    listed = api.client.get("/api/references/specialty",
                            headers=_auth(api.tokens["admin"])).json()
    assert "cardiology" not in {i["code"] for i in listed["items"]}


# ---------------------------------------------------------------- archetypes


def test_archetype_catalog_and_fetch(api):
    listed = api.client.get("/api/archetypes", headers=_auth(api.tokens["doctor"])).json()
    ids = [d["archetype_id"] for d in listed["items"]]
    assert len(ids) == 10 and VITALS in ids

    fetched = api.client.get(f"/api/archetypes/{VITALS}",
                             headers=_auth(api.tokens["doctor"])).json()
    assert fetched["archetype_id"] == VITALS
    assert fetched["source"].startswith(f"archetype {VITALS}\n")
    field_names = [f["name"] for f in fetched["fields"]]
    assert field_names == ["systolic_bp", "body_temp", "note"]


def test_archetype_registration_outcomes(api):
    headers = {**_auth(api.tokens["admin"]), "Content-Type": "text/plain"}
    source = ("archetype openEHR-EHR-EVALUATION.risk_score.v1\n"
              "kind EVALUATION\n"
              "field score quantity required range 0..10\n")
    created = api.client.post("/api/archetypes", headers=headers, content=source)
    assert created.status_code == 201
    assert created.json()["outcome"] == "registered"

    unchanged = api.client.post("/api/archetypes", headers=headers, content=source)
    assert unchanged.status_code == 200
    assert unchanged.json()["outcome"] == "unchanged"

    conflicting = source.replace("0..10", "0..12")
    conflict = api.client.post("/api/archetypes", headers=headers, content=conflicting)
    assert conflict.status_code == 409
    assert conflict.json()["code"] == "version_conflict"

    v2 = source.replace(".v1", ".v2")
    replaced = api.client.post("/api/archetypes", headers=headers, content=v2)
    assert replaced.status_code == 201
    assert replaced.json()["outcome"] == "replaced"


def test_archetype_parse_errors_are_400_with_position(api):
    headers = {**_auth(api.tokens["admin"]), "Content-Type": "text/plain"}
    response = api.client.post("/api/archetypes", headers=headers,
                               content="archetype nope\nkind NOPE\n")
    assert response.status_code == 400
    body = response.json()
    assert body["code"] == "parse_error"
    assert "line 1" in body["message"]

    binary = api.client.post("/api/archetypes", headers=headers,
                             content=b"\xff\xfe\x00 binary")
    assert binary.status_code == 400


def test_archetype_writes_are_admin_only(api):
    source = ("archetype openEHR-EHR-EVALUATION.x.v1\n"
              "kind EVALUATION\nfield a text optional\n")
    for who in ("staff", "doctor", "laborant"):
        response = api.client.post("/api/archetypes",
                                   headers=_auth(api.tokens[who]), content=source)
        assert response.status_code == 403, who


# ------------------------------------------------------------ dashboard/menu


def test_dashboards_for_each_role_over_http(api):
    for who, expected_role in [("admin", "admin"), ("staff", "staff"),
                               ("doctor", "doctor"), ("laborant", "laborant")]:
        body = api.client.get("/api/dashboard", headers=_auth(api.tokens[who])).json()
        assert body["role"] == expected_role


def test_anonymous_menu_is_the_public_four(api):
    body = api.client.get("/api/menu").json()
    assert body["role"] is None
    assert [i["key"] for i in body["items"]] == ["home", "login", "user_guide", "faq"]
    assert body["capabilities"] == []
    assert len(body["transitions"]) == 4


def test_menu_reflects_the_callers_role(api):
    body = api.client.get("/api/menu", headers=_auth(api.tokens["laborant"])).json()
    assert body["role"] == "laborant"
    keys = [i["key"] for i in body["items"]]
    assert "medical_support" in keys and "logout" in keys
    assert {"action": "create", "resource": "lab_result",
            "scope": "all"} in body["capabilities"]


def test_menu_with_restricted_or_garbage_token_degrades_to_anonymous(api):
    credential = _register_patient(api)["credential"]
    login = api.client.post("/api/login", json={
        "username": credential["username"],
        "password": credential["one_time_password"]}).json()
    for headers in (_auth(login["token"]), _auth("junk")):
        body = api.client.get("/api/menu", headers=headers).json()
        assert body["role"] is None
        assert [i["key"] for i in body["items"]] == ["home", "login",
                                                     "user_guide", "faq"]


def test_transition_table_matches_the_state_machine(api):
    table = api.client.get("/api/menu").json()["transitions"]
    assert {frozenset(row.items()) for row in table} == {
        frozenset({"from": "waiting", "event": "start_doctor_exam",
                   "to": "in_doctor_exam", "role": "doctor"}.items()),
        frozenset({"from": "in_doctor_exam", "event": "send_to_lab",
                   "to": "in_lab_exam", "role": "doctor"}.items()),
        frozenset({"from": "in_lab_exam", "event": "lab_done",
                   "to": "in_doctor_exam", "role": "laborant"}.items()),
        frozenset({"from": "in_doctor_exam", "event": "close",
                   "to": "complete", "role": "staff"}.items()),
    }


# ------------------------------------------------------------- miscellaneous


def test_reads_are_idempotent(api):
    _register_patient(api)
    headers = _auth(api.tokens["staff"])
    first = api.client.get("/api/patients", headers=headers)
    second = api.client.get("/api/patients", headers=headers)
    assert first.content == second.content


def test_enforcement_off_lifts_role_checks(tmp_path):
    api = _build_stack(tmp_path, enforce=False)
    response = api.client.post("/api/patients", headers=_auth(api.tokens["doctor"]),
                               json={"full_name": "X", "birth_date": "1990-01-01",
                                     "religion": "islam", "sex": "male",
                                     "insurance": "health_insurance",
                                     "marital_status": "single"})
    assert response.status_code == 201

