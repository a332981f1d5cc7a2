"""HTTP/JSON surface over the clinical service.

Handlers are deliberately thin: decode the body, hand off to the service
or access layer (which do all authorization and domain checking), encode
the result. The domain error taxonomy maps onto status codes in exactly
one place, so every failure body has the same shape:

    {"status": <int>, "code": "<machine code>", "message": "...", "details": [...]}

Authentication is a bearer token from POST /api/login. A session whose
password is flagged must-change may only call POST /api/password; the
menu endpoint is open so clients can render navigation before login.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

from fastapi import Depends, FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict
from starlette.exceptions import HTTPException as StarletteHTTPException

from . import errors
from .access import (
    AccessControl,
    Action,
    EVENT_ROLES,
    Resource,
    Role,
    Session,
    capabilities_for,
    menu_for,
)
from .archetype import ArchetypeRegistry
from .clinical import ARCHETYPE_KIND, ClinicalService
from .model import (
    CardEvent,
    Demographics,
    EntryKind,
    ItemKind,
    LabPanelKind,
    Quantity,
    ReferenceCategory,
    TRANSITIONS,
    field_value_from_dict,
)
from .store import RecordStore

DEFAULT_PORT = 8080
DEFAULT_DATA_DIR = "./data"


@dataclass(frozen=True)
class ApiConfig:
    data_dir: Path
    session_ttl_hours: float = 12.0
    password_iterations: int = 100_000
    currency: str = "IDR"
    enforce_authz: bool = True


@dataclass
class Services:
    config: ApiConfig
    store: RecordStore
    access: AccessControl
    registry: ArchetypeRegistry
    clinical: ClinicalService


def build_services(config: ApiConfig) -> Services:
    store = RecordStore(config.data_dir)
    access = AccessControl(
        store,
        session_ttl_hours=config.session_ttl_hours,
        password_iterations=config.password_iterations,
        enforce=config.enforce_authz,
    )
    registry = ArchetypeRegistry()
    clinical = ClinicalService(store, access, registry, currency=config.currency)
    return Services(config=config, store=store, access=access,
                    registry=registry, clinical=clinical)


# ------------------------------------------------------------- error mapping

_STATUS_BY_ERROR: tuple[tuple[type, int], ...] = (
    (errors.AuthFailure, 401),
    (errors.AuthorizationDenied, 403),
    (errors.NotFound, 404),
    (errors.VersionConflict, 409),
    (errors.IllegalTransition, 409),
    (errors.IllegalState, 409),
    (errors.ParseError, 400),
    (errors.ConstraintViolationError, 422),
    (errors.ValidationError, 422),
    (errors.SnapshotImportError, 500),
    (errors.StorageError, 500),
)


def _error_response(status: int, code: str, message: str,
                    details: list | None = None) -> JSONResponse:
    body: dict[str, Any] = {"status": status, "code": code, "message": message}
    if details is not None:
        body["details"] = details
    headers = {"WWW-Authenticate": "Bearer"} if status == 401 else None
    return JSONResponse(status_code=status, content=body, headers=headers)


def _map_domain_error(exc: errors.EmrError) -> JSONResponse:
    for error_type, status in _STATUS_BY_ERROR:
        if isinstance(exc, error_type):
            details = None
            if isinstance(exc, errors.ConstraintViolationError):
                details = [v.to_dict() for v in exc.violations]
            return _error_response(status, exc.code, str(exc), details)
    return _error_response(500, "internal_error", str(exc))


# ----------------------------------------------------------------- wire DTOs

class LoginBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    username: str
    password: str


class PasswordBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    new_password: str


class UserCreateBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    username: str
    password: str
    role: str
    linked_mrn: Optional[str] = None
    assigned_lab: Optional[str] = None
    specialty: Optional[str] = None
    must_change_password: bool = False


class PatientCreateBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    full_name: str
    birth_date: str
    religion: str
    sex: str
    insurance: str
    marital_status: str
    contact: Optional[str] = None


class TransitionBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    event: str


class EntryBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kind: str
    archetype_id: str
    fields: dict[str, dict]


class MeasurementBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    magnitude: float | int | str
    unit: str


class LabBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    panel: str
    measurements: dict[str, MeasurementBody]


class ItemBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kind: str
    cost: int
    treatment_type: Optional[str] = None
    service_type: Optional[str] = None


class ReferralBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    card_id: str
    target_facility: str
    reason: str
    target_specialty: Optional[str] = None


class ReferenceBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    category: str
    code: str
    label: str


def _enum_arg(enum_cls, raw: str, what: str):
    try:
        return enum_cls(raw)
    except ValueError:
        allowed = ", ".join(member.value for member in enum_cls)
        raise errors.ValidationError(
            f"{what} must be one of: {allowed}; got {raw!r}"
        ) from None


def _card_body(card, currency: str) -> dict:
    return {**card.to_dict(), "total": card.total(), "currency": currency}


def _page(items: list, offset: int, limit: int) -> dict:
    return {
        "items": items[offset:offset + limit],
        "offset": offset,
        "limit": limit,
        "total": len(items),
    }


# ------------------------------------------------------------------- the app

def create_app(config: ApiConfig, services: Services | None = None) -> FastAPI:
    services = services or build_services(config)
    access = services.access
    clinical = services.clinical
    currency = services.config.currency

    app = FastAPI(title="clinic-emr", docs_url=None, redoc_url=None, openapi_url=None)
    app.state.services = services

    @app.exception_handler(errors.EmrError)
    async def on_domain_error(request: Request, exc: errors.EmrError):
        return _map_domain_error(exc)

    @app.exception_handler(RequestValidationError)
    async def on_malformed_body(request: Request, exc: RequestValidationError):
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err.get('loc', ()))}: {err.get('msg', '')}"
            for err in exc.errors()[:5]
        )
        return _error_response(400, "malformed_body", f"malformed request: {problems}")

    @app.exception_handler(StarletteHTTPException)
    async def on_http_error(request: Request, exc: StarletteHTTPException):
        code = "not_found" if exc.status_code == 404 else "http_error"
        return _error_response(exc.status_code, code, str(exc.detail))

    def current_session(request: Request) -> Session:
        header = request.headers.get("authorization", "")
        if not header.lower().startswith("bearer "):
            raise errors.AuthFailure("missing bearer token")
        session = access.validate_token(header[7:].strip())
        if session.restricted and request.url.path != "/api/password":
            raise errors.AuthorizationDenied(
                "password change required before any other action"
            )
        return session

    # ------------------------------------------------------------------ auth

    @app.get("/api/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/api/login")
    def login(body: LoginBody) -> dict:
        session = access.authenticate(body.username, body.password)
        return {
            "token": session.token,
            "user_id": session.user_id,
            "username": session.username,
            "role": session.role.value,
            "must_change_password": session.restricted,
            "linked_mrn": session.linked_mrn,
            "assigned_lab": session.assigned_lab.value if session.assigned_lab else None,
        }

    @app.post("/api/password")
    def change_password(body: PasswordBody, session: Session = Depends(current_session)) -> dict:
        access.set_password(session.user_id, body.new_password, actor=session.user_id)
        return {"status": "password_changed", "user_id": session.user_id}

    # ----------------------------------------------------------------- users

    @app.get("/api/users")
    def list_users(
        session: Session = Depends(current_session),
        offset: int = Query(0, ge=0),
        limit: int = Query(50, ge=1, le=500),
    ) -> dict:
        access.require(session, Action.LIST, Resource.USER)
        users = [u.public_dict() for u in access.list_users()]
        return _page(users, offset, limit)

    @app.post("/api/users", status_code=201)
    def create_user(body: UserCreateBody, session: Session = Depends(current_session)) -> dict:
        access.require(session, Action.CREATE, Resource.USER)
        role = _enum_arg(Role, body.role, "role")
        lab = _enum_arg(LabPanelKind, body.assigned_lab, "assigned_lab") if body.assigned_lab else None
        user = access.create_user(
            body.username,
            body.password,
            role,
            actor=session.user_id if session else "system",
            linked_mrn=body.linked_mrn,
            assigned_lab=lab,
            specialty=body.specialty,
            must_change_password=body.must_change_password,
        )
        return user.public_dict()

    @app.delete("/api/users/{user_id}")
    def delete_user(user_id: str, session: Session = Depends(current_session)) -> dict:
        access.require(session, Action.DELETE, Resource.USER)
        access.delete_user(user_id, actor=session.user_id if session else "system")
        return {"status": "deleted", "user_id": user_id}

    # -------------------------------------------------------------- patients

    @app.get("/api/patients")
    def list_patients(
        session: Session = Depends(current_session),
        offset: int = Query(0, ge=0),
        limit: int = Query(50, ge=1, le=500),
    ) -> dict:
        access.require(session, Action.LIST, Resource.PATIENT)
        patients = [p.to_dict() for p in clinical.list_patients()]
        return _page(patients, offset, limit)

    @app.post("/api/patients", status_code=201)
    def register_patient(body: PatientCreateBody, session: Session = Depends(current_session)) -> dict:
        demographics = Demographics.from_dict(body.model_dump())
        result = clinical.register_patient(demographics, session)
        return {
            "patient": result.patient.to_dict(),
            "credential": {
                "username": result.username,
                "one_time_password": result.one_time_password,
                "must_change_password": True,
            },
        }

    @app.get("/api/patients/{mrn}")
    def patient_record(mrn: str, session: Session = Depends(current_session)) -> dict:
        return clinical.patient_record_view(mrn, session).to_dict(currency)

    @app.post("/api/patients/{mrn}/cards", status_code=201)
    def open_card(mrn: str, session: Session = Depends(current_session)) -> dict:
        return _card_body(clinical.open_card(mrn, session), currency)

    # ----------------------------------------------------------------- cards

    @app.get("/api/cards/{card_id}")
    def get_card(card_id: str, session: Session = Depends(current_session)) -> dict:
        card = clinical.get_card(card_id)
        access.require(session, Action.READ, Resource.PATIENT_CARD, owner_mrn=card.mrn.value)
        return _card_body(card, currency)

    @app.post("/api/cards/{card_id}/transition")
    def transition_card(card_id: str, body: TransitionBody,
                        session: Session = Depends(current_session)) -> dict:
        event = _enum_arg(CardEvent, body.event, "event")
        return _card_body(clinical.transition_card(card_id, event, session), currency)

    @app.post("/api/cards/{card_id}/entries", status_code=201)
    def attach_entry(card_id: str, body: EntryBody,
                     session: Session = Depends(current_session)) -> dict:
        kind = _enum_arg(EntryKind, body.kind, "kind")
        fields = {name: field_value_from_dict(value) for name, value in body.fields.items()}
        card = clinical.attach_entry(card_id, kind, body.archetype_id, fields, session)
        return _card_body(card, currency)

    @app.post("/api/cards/{card_id}/labs", status_code=201)
    def attach_lab_result(card_id: str, body: LabBody,
                          session: Session = Depends(current_session)) -> dict:
        panel = _enum_arg(LabPanelKind, body.panel, "panel")
        measurements = {
            name: Quantity(m.magnitude, m.unit) for name, m in body.measurements.items()
        }
        card = clinical.attach_lab_result(card_id, panel, measurements, session)
        return _card_body(card, currency)

    @app.post("/api/cards/{card_id}/items", status_code=201)
    def add_item(card_id: str, body: ItemBody,
                 session: Session = Depends(current_session)) -> dict:
        kind = _enum_arg(ItemKind, body.kind, "kind")
        type_code = body.treatment_type if kind is ItemKind.HANDLING else body.service_type
        if type_code is None:
            needed = "treatment_type" if kind is ItemKind.HANDLING else "service_type"
            raise errors.ValidationError(f"a {kind.value} item needs {needed!r}")
        card = clinical.add_transaction_item(card_id, kind, type_code, body.cost, session)
        return _card_body(card, currency)

    @app.get("/api/cards/{card_id}/total")
    def card_total(card_id: str, session: Session = Depends(current_session)) -> dict:
        card = clinical.get_card(card_id)
        access.require(session, Action.READ, Resource.TRANSACTION_ITEM, owner_mrn=card.mrn.value)
        return {"card_id": card_id, "total": card.total(), "currency": currency}

    # ------------------------------------------------------------- referrals

    @app.post("/api/referrals", status_code=201)
    def make_referral(body: ReferralBody, session: Session = Depends(current_session)) -> dict:
        referral = clinical.make_referral(
            body.card_id, body.target_facility, body.target_specialty, body.reason, session
        )
        return referral.to_dict()

    @app.get("/api/referrals")
    def list_referrals(
        session: Session = Depends(current_session),
        offset: int = Query(0, ge=0),
        limit: int = Query(50, ge=1, le=500),
    ) -> dict:
        access.require(session, Action.LIST, Resource.REFERRAL)
        referrals = [r.to_dict() for r in clinical.list_referrals()]
        return _page(referrals, offset, limit)

    # ------------------------------------------------------------- reference

    @app.get("/api/references/{category}")
    def reference_items(category: str, session: Session = Depends(current_session)) -> dict:
        access.require(session, Action.READ, Resource.REFERENCE_ITEM)
        try:
            cat = ReferenceCategory(category)
        except ValueError:
            raise errors.NotFound(f"no reference category {category!r}") from None
        items = clinical.reference_items(cat)
        return {
            "category": cat.value,
            "items": [{"code": i.code, "label": i.label} for i in items],
        }

    @app.post("/api/references", status_code=201)
    def add_reference(body: ReferenceBody, session: Session = Depends(current_session)) -> dict:
        category = _enum_arg(ReferenceCategory, body.category, "category")
        item = clinical.add_reference_item(category, body.code, body.label, session)
        return item.to_dict()

    @app.delete("/api/references")
    def remove_reference(
        category: str = Query(...),
        code: str = Query(...),
        session: Session = Depends(current_session),
    ) -> dict:
        cat = _enum_arg(ReferenceCategory, category, "category")
        clinical.remove_reference_item(cat, code, session)
        return {"status": "removed", "category": cat.value, "code": code}

    # ------------------------------------------------------------ archetypes

    @app.get("/api/archetypes")
    def list_archetypes(session: Session = Depends(current_session)) -> dict:
        access.require(session, Action.LIST, Resource.ARCHETYPE)
        return {"items": [d.to_dict() for d in clinical.archetypes()]}

    @app.get("/api/archetypes/{archetype_id}")
    def get_archetype(archetype_id: str, session: Session = Depends(current_session)) -> dict:
        access.require(session, Action.READ, Resource.ARCHETYPE)
        definition = clinical.archetype(archetype_id)
        source = clinical.store.get_payload(ARCHETYPE_KIND, definition.base_name)["source"]
        return {**definition.to_dict(), "source": source}

    @app.post("/api/archetypes")
    async def register_archetype(request: Request,
                                 session: Session = Depends(current_session)) -> JSONResponse:
        raw = await request.body()
        try:
            source = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise errors.ParseError("body is not valid UTF-8 text", 1, 1) from None
        definition, outcome = clinical.register_archetype(source, session)
        status = 200 if outcome == "unchanged" else 201
        return JSONResponse(
            status_code=status,
            content={**definition.to_dict(), "outcome": outcome},
        )

    # ------------------------------------------------------- dashboard, menu

    @app.get("/api/dashboard")
    def dashboard(session: Session = Depends(current_session)) -> dict:
        access.require(session, Action.READ, Resource.DASHBOARD)
        return clinical.dashboard_for(session)

    @app.get("/api/menu")
    def menu(request: Request) -> dict:
        # Open endpoint: anonymous (or restricted) callers get the public
        # menu so a client can render navigation before login.
        session: Session | None = None
        header = request.headers.get("authorization", "")
        if header.lower().startswith("bearer "):
            try:
                candidate = access.validate_token(header[7:].strip())
                if not candidate.restricted:
                    session = candidate
            except errors.AuthFailure:
                session = None
        role = session.role if session else None
        return {
            "role": role.value if role else None,
            "items": menu_for(role),
            "capabilities": [c.to_dict() for c in capabilities_for(role)],
            "transitions": [
                {
                    "from": status.value,
                    "event": event.value,
                    "to": target.value,
                    "role": EVENT_ROLES[event].value,
                }
                for (status, event), target in TRANSITIONS.items()
            ],
        }

    return app


def serve(config: ApiConfig, *, host: str = "127.0.0.1", port: int = DEFAULT_PORT) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=host, port=port, log_level="warning")
