"""Users, roles, permissions, sessions, and the audit trail.

Users persist inside the encrypted store (system payload "users"); sessions
live in memory and die with the process. Credential checks are constant-time
and the failure message never distinguishes unknown users from wrong
passwords. Authorization denials are equally uniform at the API surface; the
audit log records the true cause.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import secrets
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

from .errors import AuthenticationError, AuthorizationError, RecordNotFoundError
from .vault.store import RecordStore

PERMISSIONS = frozenset(
    {"record.read", "record.write", "screening.run", "export.run", "sync.run", "admin.users"}
)

DEFAULT_ROLES: dict[str, frozenset[str]] = {
    "admin": PERMISSIONS,
    "clinician": frozenset({"record.read", "record.write", "screening.run", "export.run"}),
    "screener": frozenset({"record.read", "screening.run"}),
}

MIN_PASSWORD_LENGTH = 10
DEFAULT_SESSION_TTL_S = 8 * 3600

_USERS_PAYLOAD = "users"

_PW_SCRYPT = {"n": 2**14, "r": 8, "p": 1}

_UNIFORM_AUTH_FAILURE = "invalid credentials"
_UNIFORM_DENY = "access denied"


def _hash_password(password: str, salt: bytes) -> bytes:
    return hashlib.scrypt(password.encode("utf-8"), salt=salt, dklen=32, **_PW_SCRYPT)


@dataclass(frozen=True)
class User:
    user_id: str
    username: str
    salt: bytes
    password_hash: bytes
    roles: frozenset[str]

    def permissions(self) -> frozenset[str]:
        perms: set[str] = set()
        for role in self.roles:
            perms |= DEFAULT_ROLES.get(role, frozenset())
        return frozenset(perms)


@dataclass(frozen=True)
class Session:
    token: str
    user_id: str
    issued_at: float
    expires_at: float


@dataclass(frozen=True)
class AuthContext:
    user_id: str
    username: str
    roles: frozenset[str]
    permissions: frozenset[str]


class AccessControl:
    def __init__(
        self,
        store: RecordStore,
        audit_path: str | Path | None = None,
        session_ttl_s: float = DEFAULT_SESSION_TTL_S,
        clock: Callable[[], float] = time.time,
    ):
        self._store = store
        self._audit_path = Path(audit_path) if audit_path else store.path / "audit.log"
        self._ttl = session_ttl_s
        self._clock = clock
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self._users: dict[str, User] = {}
        self._load_users()

    # -- persistence ---------------------------------------------------------

    def _load_users(self):
        try:
            raw = self._store.get_system(_USERS_PAYLOAD)
        except RecordNotFoundError:
            return
        for d in json.loads(raw.decode()):
            user = User(
                d["user_id"],
                d["username"],
                bytes.fromhex(d["salt"]),
                bytes.fromhex(d["password_hash"]),
                frozenset(d["roles"]),
            )
            self._users[user.username] = user

    def _save_users(self):
        payload = json.dumps(
            [
                {
                    "user_id": u.user_id,
                    "username": u.username,
                    "salt": u.salt.hex(),
                    "password_hash": u.password_hash.hex(),
                    "roles": sorted(u.roles),
                }
                for u in self._users.values()
            ],
            sort_keys=True,
        ).encode()
        self._store.put_system(_USERS_PAYLOAD, payload)

    # -- audit -----------------------------------------------------------------

    def _audit(self, user: str, permission: str, outcome: str):
        line = f"{self._clock():.3f},{user},{permission},{outcome}\n"
        with open(self._audit_path, "a", encoding="utf-8") as fh:
            fh.write(line)

    # -- user management ---------------------------------------------------------

    @property
    def has_users(self) -> bool:
        return bool(self._users)

    def _validate_new_user(self, username: str, password: str, roles: Iterable[str]):
        if not username or not username.replace("_", "").replace("-", "").isalnum():
            raise ValueError(f"invalid username {username!r}")
        if username in self._users:
            raise ValueError(f"username {username!r} already exists")
        if len(password) < MIN_PASSWORD_LENGTH:
            raise ValueError(f"password must be at least {MIN_PASSWORD_LENGTH} characters")
        unknown = set(roles) - set(DEFAULT_ROLES)
        if unknown:
            raise ValueError(f"unknown roles: {sorted(unknown)}")

    def _add_user(self, username: str, password: str, roles: Iterable[str]) -> User:
        salt = secrets.token_bytes(16)
        user = User(
            uuid.uuid4().hex,
            username,
            salt,
            _hash_password(password, salt),
            frozenset(roles),
        )
        self._users[username] = user
        self._save_users()
        return user

    def bootstrap_admin(self, username: str, password: str) -> User:
        """First-user provisioning at store initialization; admin-only after."""
        if self._users:
            raise ValueError("store already has users; use create_user")
        self._validate_new_user(username, password, ["admin"])
        return self._add_user(username, password, ["admin"])

    def create_user(
        self, admin_token: str, username: str, password: str, roles: Iterable[str]
    ) -> User:
        self.authorize(admin_token, "admin.users")
        with self._lock:
            self._validate_new_user(username, password, roles)
            return self._add_user(username, password, roles)

    def set_roles(self, admin_token: str, username: str, roles: Iterable[str]) -> User:
        self.authorize(admin_token, "admin.users")
        with self._lock:
            user = self._users.get(username)
            if user is None:
                raise ValueError(f"unknown user {username!r}")
            unknown = set(roles) - set(DEFAULT_ROLES)
            if unknown:
                raise ValueError(f"unknown roles: {sorted(unknown)}")
            updated = User(
                user.user_id, user.username, user.salt, user.password_hash, frozenset(roles)
            )
            self._users[username] = updated
            self._save_users()
            return updated

    def remove_user(self, admin_token: str, username: str):
        self.authorize(admin_token, "admin.users")
        with self._lock:
            if username not in self._users:
                raise ValueError(f"unknown user {username!r}")
            del self._users[username]
            self._save_users()

    # -- authentication ----------------------------------------------------------

    def authenticate(self, username: str, password: str) -> Session:
        user = self._users.get(username)
        if user is None:
            # Equalize timing with a real hash computation before failing.
            _hash_password(password, b"\x00" * 16)
            self._audit(username or "-", "-", "deny:unknown_user")
            raise AuthenticationError(_UNIFORM_AUTH_FAILURE)
        candidate = _hash_password(password, user.salt)
        if not hmac.compare_digest(candidate, user.password_hash):
            self._audit(username, "-", "deny:bad_password")
            raise AuthenticationError(_UNIFORM_AUTH_FAILURE)
        now = self._clock()
        session = Session(secrets.token_urlsafe(32), user.user_id, now, now + self._ttl)
        with self._lock:
            self._sessions[session.token] = session
        self._audit(username, "-", "allow:login")
        return session

    def logout(self, token: str):
        with self._lock:
            self._sessions.pop(token, None)

    # -- authorization -------------------------------------------------------------

    def authorize(self, token: str | None, permission: str) -> AuthContext:
        """Allow iff the token is valid, unexpired, and the permission is in
        the union of the user's role permissions. Denials are uniform."""
        if permission not in PERMISSIONS:
            raise ValueError(f"unknown permission {permission!r}")
        session = self._sessions.get(token) if token else None
        if session is None:
            self._audit("-", permission, "deny:unknown_token")
            raise AuthorizationError(_UNIFORM_DENY)
        if self._clock() >= session.expires_at:
            self._audit("-", permission, "deny:expired")
            raise AuthorizationError(_UNIFORM_DENY)
        user = next((u for u in self._users.values() if u.user_id == session.user_id), None)
        if user is None:
            self._audit("-", permission, "deny:revoked_user")
            raise AuthorizationError(_UNIFORM_DENY)
        if permission not in user.permissions():
            self._audit(user.username, permission, "deny:missing_permission")
            raise AuthorizationError(_UNIFORM_DENY)
        self._audit(user.username, permission, "allow")
        return AuthContext(user.user_id, user.username, user.roles, user.permissions())
