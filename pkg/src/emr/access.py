"""Role-based access control: capability matrix, users, and sessions.

Authorization is deny-by-default: a (role, action, resource) triple is
allowed only if the matrix holds a row for it, and rows scoped OwnOnly
additionally require the session's linked MRN to match the record owner.
``authorize`` is pure -- same session, triple, owner, and clock instant,
same decision -- and every mutating operation in the service layer calls
it exactly once.

Sessions are opaque bearer tokens with a sliding idle expiry; a user whose
password is flagged must-change gets a restricted session good only for
changing it.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Callable, Mapping

from .errors import AuthFailure, AuthorizationDenied, NotFound, ValidationError
from .model import CardEvent, LabPanelKind, Mrn
from .store import RecordStore

USER_KIND = "User"
DEFAULT_SESSION_TTL_HOURS = 12
DEFAULT_PBKDF2_ITERATIONS = 100_000


class Role(str, Enum):
    ADMIN = "admin"
    STAFF = "staff"
    DOCTOR = "doctor"
    LABORANT = "laborant"
    PATIENT = "patient"


class Action(str, Enum):
    CREATE = "create"
    READ = "read"
    UPDATE = "update"
    DELETE = "delete"
    LIST = "list"
    MANAGE = "manage"


class Resource(str, Enum):
    USER = "user"
    PATIENT = "patient"
    PATIENT_CARD = "patient_card"
    CLINICAL_ENTRY = "clinical_entry"
    LAB_RESULT = "lab_result"
    TRANSACTION_ITEM = "transaction_item"
    REFERRAL = "referral"
    REFERENCE_ITEM = "reference_item"
    ARCHETYPE = "archetype"
    DASHBOARD = "dashboard"


class Scope(str, Enum):
    ALL = "all"
    OWN_ONLY = "own_only"


class Decision(Enum):
    ALLOW = "allow"
    DENY = "deny"


@dataclass(frozen=True)
class Capability:
    role: Role
    action: Action
    resource: Resource
    scope: Scope

    def to_dict(self) -> dict[str, str]:
        return {
            "action": self.action.value,
            "resource": self.resource.value,
            "scope": self.scope.value,
        }


_A = Action
_R = Resource
_ALL = Scope.ALL
_OWN = Scope.OWN_ONLY

# One block per role; a (action, resource) pair absent everywhere is denied
# for everyone. Clinical authoring stays with the treating roles: admins
# administer accounts, reference data, and archetypes but never write care
# records, and patients see only their own.
_MATRIX_ROWS: dict[Role, tuple[tuple[Action, Resource, Scope], ...]] = {
    Role.ADMIN: (
        (_A.CREATE, _R.USER, _ALL),
        (_A.READ, _R.USER, _ALL),
        (_A.UPDATE, _R.USER, _ALL),
        (_A.DELETE, _R.USER, _ALL),
        (_A.LIST, _R.USER, _ALL),
        (_A.MANAGE, _R.USER, _ALL),
        (_A.READ, _R.PATIENT, _ALL),
        (_A.LIST, _R.PATIENT, _ALL),
        (_A.READ, _R.PATIENT_CARD, _ALL),
        (_A.LIST, _R.PATIENT_CARD, _ALL),
        (_A.READ, _R.CLINICAL_ENTRY, _ALL),
        (_A.LIST, _R.CLINICAL_ENTRY, _ALL),
        (_A.READ, _R.LAB_RESULT, _ALL),
        (_A.LIST, _R.LAB_RESULT, _ALL),
        (_A.READ, _R.TRANSACTION_ITEM, _ALL),
        (_A.LIST, _R.TRANSACTION_ITEM, _ALL),
        (_A.READ, _R.REFERRAL, _ALL),
        (_A.LIST, _R.REFERRAL, _ALL),
        (_A.CREATE, _R.REFERENCE_ITEM, _ALL),
        (_A.READ, _R.REFERENCE_ITEM, _ALL),
        (_A.UPDATE, _R.REFERENCE_ITEM, _ALL),
        (_A.DELETE, _R.REFERENCE_ITEM, _ALL),
        (_A.LIST, _R.REFERENCE_ITEM, _ALL),
        (_A.MANAGE, _R.REFERENCE_ITEM, _ALL),
        (_A.CREATE, _R.ARCHETYPE, _ALL),
        (_A.READ, _R.ARCHETYPE, _ALL),
        (_A.DELETE, _R.ARCHETYPE, _ALL),
        (_A.LIST, _R.ARCHETYPE, _ALL),
        (_A.MANAGE, _R.ARCHETYPE, _ALL),
        (_A.READ, _R.DASHBOARD, _ALL),
    ),
    Role.STAFF: (
        (_A.READ, _R.USER, _ALL),
        (_A.LIST, _R.USER, _ALL),
        (_A.CREATE, _R.PATIENT, _ALL),
        (_A.READ, _R.PATIENT, _ALL),
        (_A.UPDATE, _R.PATIENT, _ALL),
        (_A.LIST, _R.PATIENT, _ALL),
        (_A.CREATE, _R.PATIENT_CARD, _ALL),
        (_A.READ, _R.PATIENT_CARD, _ALL),
        (_A.UPDATE, _R.PATIENT_CARD, _ALL),
        (_A.LIST, _R.PATIENT_CARD, _ALL),
        (_A.READ, _R.CLINICAL_ENTRY, _ALL),
        (_A.LIST, _R.CLINICAL_ENTRY, _ALL),
        (_A.READ, _R.LAB_RESULT, _ALL),
        (_A.LIST, _R.LAB_RESULT, _ALL),
        (_A.CREATE, _R.TRANSACTION_ITEM, _ALL),
        (_A.READ, _R.TRANSACTION_ITEM, _ALL),
        (_A.LIST, _R.TRANSACTION_ITEM, _ALL),
        (_A.READ, _R.REFERRAL, _ALL),
        (_A.LIST, _R.REFERRAL, _ALL),
        (_A.READ, _R.REFERENCE_ITEM, _ALL),
        (_A.LIST, _R.REFERENCE_ITEM, _ALL),
        (_A.READ, _R.ARCHETYPE, _ALL),
        (_A.LIST, _R.ARCHETYPE, _ALL),
        (_A.READ, _R.DASHBOARD, _ALL),
    ),
    Role.DOCTOR: (
        (_A.READ, _R.USER, _ALL),
        (_A.LIST, _R.USER, _ALL),
        (_A.READ, _R.PATIENT, _ALL),
        (_A.LIST, _R.PATIENT, _ALL),
        (_A.READ, _R.PATIENT_CARD, _ALL),
        (_A.UPDATE, _R.PATIENT_CARD, _ALL),
        (_A.LIST, _R.PATIENT_CARD, _ALL),
        (_A.CREATE, _R.CLINICAL_ENTRY, _ALL),
        (_A.READ, _R.CLINICAL_ENTRY, _ALL),
        (_A.LIST, _R.CLINICAL_ENTRY, _ALL),
        (_A.READ, _R.LAB_RESULT, _ALL),
        (_A.LIST, _R.LAB_RESULT, _ALL),
        (_A.READ, _R.TRANSACTION_ITEM, _ALL),
        (_A.LIST, _R.TRANSACTION_ITEM, _ALL),
        (_A.CREATE, _R.REFERRAL, _ALL),
        (_A.READ, _R.REFERRAL, _ALL),
        (_A.LIST, _R.REFERRAL, _ALL),
        (_A.READ, _R.REFERENCE_ITEM, _ALL),
        (_A.LIST, _R.REFERENCE_ITEM, _ALL),
        (_A.READ, _R.ARCHETYPE, _ALL),
        (_A.LIST, _R.ARCHETYPE, _ALL),
        (_A.READ, _R.DASHBOARD, _ALL),
    ),
    Role.LABORANT: (
        (_A.READ, _R.USER, _ALL),
        (_A.LIST, _R.USER, _ALL),
        (_A.READ, _R.PATIENT, _ALL),
        (_A.LIST, _R.PATIENT, _ALL),
        (_A.READ, _R.PATIENT_CARD, _ALL),
        (_A.UPDATE, _R.PATIENT_CARD, _ALL),
        (_A.LIST, _R.PATIENT_CARD, _ALL),
        (_A.READ, _R.CLINICAL_ENTRY, _ALL),
        (_A.LIST, _R.CLINICAL_ENTRY, _ALL),
        (_A.CREATE, _R.LAB_RESULT, _ALL),
        (_A.READ, _R.LAB_RESULT, _ALL),
        (_A.LIST, _R.LAB_RESULT, _ALL),
        (_A.READ, _R.TRANSACTION_ITEM, _ALL),
        (_A.LIST, _R.TRANSACTION_ITEM, _ALL),
        (_A.READ, _R.REFERRAL, _ALL),
        (_A.LIST, _R.REFERRAL, _ALL),
        (_A.READ, _R.REFERENCE_ITEM, _ALL),
        (_A.LIST, _R.REFERENCE_ITEM, _ALL),
        (_A.READ, _R.ARCHETYPE, _ALL),
        (_A.LIST, _R.ARCHETYPE, _ALL),
        (_A.READ, _R.DASHBOARD, _ALL),
    ),
    Role.PATIENT: (
        (_A.READ, _R.PATIENT, _OWN),
        (_A.UPDATE, _R.PATIENT, _OWN),
        (_A.READ, _R.PATIENT_CARD, _OWN),
        (_A.READ, _R.CLINICAL_ENTRY, _OWN),
        (_A.READ, _R.LAB_RESULT, _OWN),
        (_A.READ, _R.TRANSACTION_ITEM, _OWN),
        (_A.READ, _R.REFERRAL, _OWN),
        (_A.READ, _R.REFERENCE_ITEM, _ALL),
        (_A.READ, _R.ARCHETYPE, _ALL),
        (_A.LIST, _R.ARCHETYPE, _ALL),
        (_A.READ, _R.DASHBOARD, _ALL),
    ),
}

CAPABILITY_MATRIX: dict[tuple[Role, Action, Resource], Capability] = {
    (role, action, resource): Capability(role, action, resource, scope)
    for role, rows in _MATRIX_ROWS.items()
    for action, resource, scope in rows
}

#: Which role may fire each card workflow event.
EVENT_ROLES: dict[CardEvent, Role] = {
    CardEvent.START_DOCTOR_EXAM: Role.DOCTOR,
    CardEvent.SEND_TO_LAB: Role.DOCTOR,
    CardEvent.LAB_DONE: Role.LABORANT,
    CardEvent.CLOSE: Role.STAFF,
}


def matrix_lookup(role: Role, action: Action, resource: Resource) -> Capability | None:
    return CAPABILITY_MATRIX.get((role, action, resource))


# --------------------------------------------------------------------- menus

_MENU_HOME = {"key": "home", "label": "Home", "route": "/"}
_MENU_LOGIN = {"key": "login", "label": "Login", "route": "/login"}
_MENU_GUIDE = {"key": "user_guide", "label": "User Guide", "route": "/guide"}
_MENU_FAQ = {"key": "faq", "label": "FAQ", "route": "/faq"}
_MENU_LOGOUT = {"key": "logout", "label": "Logout", "route": "/logout"}

#: Menu entries that exist only when the matrix grants the paired
#: capability; order here is the display order between Home and the tail.
_CAPABILITY_MENUS: tuple[tuple[Action, Resource, dict[str, str]], ...] = (
    (_A.READ, _R.DASHBOARD, {"key": "dashboard", "label": "Dashboard", "route": "/dashboard"}),
    (_A.LIST, _R.USER, {"key": "users", "label": "Users", "route": "/users"}),
    (_A.LIST, _R.PATIENT, {"key": "patients", "label": "Patients", "route": "/patients"}),
    (_A.LIST, _R.REFERRAL,
     {"key": "referral_letters", "label": "Referral Letters", "route": "/referrals"}),
    (_A.LIST, _R.LAB_RESULT,
     {"key": "medical_support", "label": "Medical Support", "route": "/medical-support"}),
    (_A.LIST, _R.TRANSACTION_ITEM,
     {"key": "transactions", "label": "Transactions", "route": "/transactions"}),
    (_A.LIST, _R.REFERENCE_ITEM,
     {"key": "reference", "label": "Reference", "route": "/references"}),
)


def menu_for(role: Role | None) -> list[dict[str, str]]:
    """The navigation menu a client should render, derived from the matrix.

    Anonymous visitors get exactly home, login, the guide, and the FAQ;
    authenticated menus grow with the role's list/read grants.
    """
    if role is None:
        return [dict(_MENU_HOME), dict(_MENU_LOGIN), dict(_MENU_GUIDE), dict(_MENU_FAQ)]
    items = [dict(_MENU_HOME)]
    for action, resource, entry in _CAPABILITY_MENUS:
        if matrix_lookup(role, action, resource) is not None:
            items.append(dict(entry))
    items.extend([dict(_MENU_GUIDE), dict(_MENU_FAQ), dict(_MENU_LOGOUT)])
    return items


def capabilities_for(role: Role | None) -> list[Capability]:
    if role is None:
        return []
    return [CAPABILITY_MATRIX[(role, a, r)] for a, r, _ in _MATRIX_ROWS[role]]


# ------------------------------------------------------------------ accounts

@dataclass(frozen=True)
class User:
    user_id: str
    username: str
    password_hash: str
    role: Role
    must_change_password: bool = False
    linked_mrn: str | None = None
    assigned_lab: LabPanelKind | None = None
    specialty: str | None = None
    active: bool = True

    def __post_init__(self) -> None:
        if (self.role is Role.PATIENT) != (self.linked_mrn is not None):
            raise ValidationError("patient accounts (and only they) link an MRN")
        if (self.role is Role.LABORANT) != (self.assigned_lab is not None):
            raise ValidationError("laborant accounts (and only they) name a lab")
        if self.specialty is not None and self.role is not Role.DOCTOR:
            raise ValidationError("only doctor accounts carry a specialty")

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "username": self.username,
            "password_hash": self.password_hash,
            "role": self.role.value,
            "must_change_password": self.must_change_password,
            "linked_mrn": self.linked_mrn,
            "assigned_lab": self.assigned_lab.value if self.assigned_lab else None,
            "specialty": self.specialty,
            "active": self.active,
        }

    def public_dict(self) -> dict:
        out = self.to_dict()
        del out["password_hash"]
        return out

    @classmethod
    def from_dict(cls, raw: Mapping) -> "User":
        return cls(
            user_id=raw["user_id"],
            username=raw["username"],
            password_hash=raw["password_hash"],
            role=Role(raw["role"]),
            must_change_password=raw.get("must_change_password", False),
            linked_mrn=raw.get("linked_mrn"),
            assigned_lab=LabPanelKind(raw["assigned_lab"]) if raw.get("assigned_lab") else None,
            specialty=raw.get("specialty"),
            active=raw.get("active", True),
        )


@dataclass
class Session:
    token: str
    user_id: str
    username: str
    role: Role
    issued_at: datetime
    expires_at: datetime
    restricted: bool = False
    linked_mrn: str | None = None
    assigned_lab: LabPanelKind | None = None


def hash_password(password: str, *, iterations: int = DEFAULT_PBKDF2_ITERATIONS) -> str:
    salt = secrets.token_bytes(16)
    digest = hashlib.pbkdf2_hmac("sha256", password.encode("utf-8"), salt, iterations)
    return f"pbkdf2_sha256${iterations}${salt.hex()}${digest.hex()}"


def verify_password(password: str, encoded: str) -> bool:
    try:
        scheme, iterations, salt_hex, digest_hex = encoded.split("$")
        if scheme != "pbkdf2_sha256":
            return False
        digest = hashlib.pbkdf2_hmac(
            "sha256", password.encode("utf-8"), bytes.fromhex(salt_hex), int(iterations)
        )
        return hmac.compare_digest(digest.hex(), digest_hex)
    except (ValueError, TypeError):
        return False


class AccessControl:
    """Account registry, session table, and the authorization facade.

    ``enforce`` exists for tests that prove the matrix sits on the request
    path: with it off, every decision is ALLOW and nothing else changes.
    """

    def __init__(
        self,
        store: RecordStore,
        *,
        session_ttl_hours: float = DEFAULT_SESSION_TTL_HOURS,
        password_iterations: int = DEFAULT_PBKDF2_ITERATIONS,
        clock: Callable[[], datetime] | None = None,
        enforce: bool = True,
    ) -> None:
        self.store = store
        self.session_ttl = timedelta(hours=session_ttl_hours)
        self.password_iterations = password_iterations
        self.clock = clock or (lambda: datetime.now(timezone.utc))
        self.enforce = enforce
        self._lock = threading.RLock()
        self._sessions: dict[str, Session] = {}
        self._username_index: dict[str, str] = {}
        self._next_user_serial = 1
        self._reindex()

    def _reindex(self) -> None:
        with self._lock:
            self._username_index.clear()
            top = 0
            for record in self.store.heads(USER_KIND):
                user = User.from_dict(record.payload_dict())
                serial_text = user.user_id[3:]
                if serial_text.isdigit():
                    top = max(top, int(serial_text))
                if user.active:
                    self._username_index[user.username] = user.user_id
            self._next_user_serial = top + 1

    # -------------------------------------------------------------- accounts

    def get_user(self, user_id: str) -> User:
        return User.from_dict(self.store.get_payload(USER_KIND, user_id))

    def find_by_username(self, username: str) -> User | None:
        with self._lock:
            user_id = self._username_index.get(username)
        if user_id is None:
            return None
        return self.get_user(user_id)

    def list_users(self, *, include_inactive: bool = False) -> list[User]:
        users = [User.from_dict(r.payload_dict()) for r in self.store.heads(USER_KIND)]
        if not include_inactive:
            users = [u for u in users if u.active]
        return users

    def create_user(
        self,
        username: str,
        password: str,
        role: Role,
        *,
        actor: str,
        linked_mrn: str | None = None,
        assigned_lab: LabPanelKind | None = None,
        specialty: str | None = None,
        must_change_password: bool = False,
        action: str = "create_user",
    ) -> User:
        if not username or not username.strip():
            raise ValidationError("username must be non-empty")
        if not password:
            raise ValidationError("password must be non-empty")
        with self._lock:
            if username in self._username_index:
                raise ValidationError(f"username {username!r} is taken")
            user = User(
                user_id=f"USR{self._next_user_serial:08d}",
                username=username,
                password_hash=hash_password(password, iterations=self.password_iterations),
                role=role,
                must_change_password=must_change_password,
                linked_mrn=linked_mrn,
                assigned_lab=assigned_lab,
                specialty=specialty,
            )
            self.store.put(USER_KIND, user.user_id, user.to_dict(), 0, actor, action)
            self._next_user_serial += 1
            self._username_index[username] = user.user_id
            return user

    def bootstrap_admin(self, username: str, *, actor: str = "system") -> tuple[User, str]:
        """Create the first admin with a generated one-time password.

        Only valid while no active user exists; later admins are created by
        an authenticated admin through the normal user endpoint.
        """
        with self._lock:
            if self._username_index:
                raise ValidationError(
                    "user directory already initialized; "
                    "create further accounts as an authenticated admin"
                )
        password = secrets.token_urlsafe(12)
        user = self.create_user(
            username, password, Role.ADMIN,
            actor=actor, must_change_password=True, action="bootstrap_admin",
        )
        return user, password

    def provision_patient_credential(self, mrn: Mrn, *, actor: str) -> tuple[User, str]:
        """Patient login provisioned at registration: username is the MRN,
        the generated password must be changed at first use."""
        password = secrets.token_urlsafe(9)
        user = self.create_user(
            mrn.value, password, Role.PATIENT,
            actor=actor, linked_mrn=mrn.value, must_change_password=True,
            action="provision_credential",
        )
        return user, password

    def delete_user(self, user_id: str, *, actor: str) -> None:
        user = self.get_user(user_id)
        if not user.active:
            raise NotFound(f"user {user_id!r} is already deleted")
        head = self.store.head_version(USER_KIND, user_id)
        payload = user.to_dict()
        payload["active"] = False
        with self._lock:
            self.store.put(USER_KIND, user_id, payload, head, actor, "delete_user")
            if self._username_index.get(user.username) == user_id:
                del self._username_index[user.username]
            self._drop_sessions_for(user_id)

    def set_password(self, user_id: str, new_password: str, *, actor: str) -> None:
        if not new_password:
            raise ValidationError("new password must be non-empty")
        user = self.get_user(user_id)
        if not user.active:
            raise NotFound(f"user {user_id!r} is deleted")
        head = self.store.head_version(USER_KIND, user_id)
        payload = user.to_dict()
        payload["password_hash"] = hash_password(
            new_password, iterations=self.password_iterations
        )
        payload["must_change_password"] = False
        with self._lock:
            self.store.put(USER_KIND, user_id, payload, head, actor, "set_password")
            # Every outstanding token for this account is now stale.
            self._drop_sessions_for(user_id)

    def _drop_sessions_for(self, user_id: str) -> None:
        for token in [t for t, s in self._sessions.items() if s.user_id == user_id]:
            del self._sessions[token]

    # -------------------------------------------------------------- sessions

    def authenticate(self, username: str, password: str) -> Session:
        """Exchange credentials for a session token. Unknown usernames and
        wrong passwords fail identically."""
        user = self.find_by_username(username)
        if user is None:
            # Burn a comparable amount of work so the two failure modes
            # look alike from outside.
            verify_password(password, hash_password("*", iterations=self.password_iterations))
            raise AuthFailure("invalid credentials")
        if not verify_password(password, user.password_hash):
            raise AuthFailure("invalid credentials")
        now = self.clock()
        session = Session(
            token=secrets.token_urlsafe(32),
            user_id=user.user_id,
            username=user.username,
            role=user.role,
            issued_at=now,
            expires_at=now + self.session_ttl,
            restricted=user.must_change_password,
            linked_mrn=user.linked_mrn,
            assigned_lab=user.assigned_lab,
        )
        with self._lock:
            self._sessions[session.token] = session
        return session

    def validate_token(self, token: str) -> Session:
        """Resolve a bearer token; touching a live session slides its expiry."""
        now = self.clock()
        with self._lock:
            session = self._sessions.get(token)
            if session is None:
                raise AuthFailure("invalid or expired session")
            if now >= session.expires_at:
                del self._sessions[token]
                raise AuthFailure("invalid or expired session")
            session.expires_at = now + self.session_ttl
            return session

    def session_count(self) -> int:
        with self._lock:
            return len(self._sessions)

    # --------------------------------------------------------- authorization

    def authorize(
        self,
        session: Session | None,
        action: Action,
        resource: Resource,
        owner_mrn: str | None = None,
    ) -> Decision:
        if not self.enforce:
            return Decision.ALLOW
        if session is None:
            return Decision.DENY
        if self.clock() >= session.expires_at:
            return Decision.DENY
        capability = matrix_lookup(session.role, action, resource)
        if capability is None:
            return Decision.DENY
        if capability.scope is Scope.OWN_ONLY:
            if owner_mrn is None or session.linked_mrn != owner_mrn:
                return Decision.DENY
        return Decision.ALLOW

    def require(
        self,
        session: Session | None,
        action: Action,
        resource: Resource,
        owner_mrn: str | None = None,
    ) -> None:
        if self.authorize(session, action, resource, owner_mrn) is Decision.DENY:
            who = session.role.value if session else "anonymous"
            raise AuthorizationDenied(
                f"{who} may not {action.value} {resource.value}"
            )

    def require_event_role(self, session: Session, event: CardEvent) -> None:
        if not self.enforce:
            return
        event = CardEvent(event)
        if session.role is not EVENT_ROLES[event]:
            raise AuthorizationDenied(
                f"{session.role.value} may not fire {event.value}; "
                f"that event belongs to {EVENT_ROLES[event].value}"
            )
