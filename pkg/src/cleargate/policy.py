"""Clearance lattice, role hierarchy and access decisions.

Every authorization question in the package is answered here. Retrieval,
expert training/gating and the HTTP layer call into this module instead of
comparing clearances or role sets themselves.
"""

from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Mapping

from cleargate.errors import ConfigInvalid, PolicyInvalid, UnknownSubject


class ClearanceLevel(enum.IntEnum):
    NOT_CLASSIFIED = 0
    RESTRICTED = 1
    CONFIDENTIAL = 2
    SECRET = 3
    COSMIC_TOP_SECRET = 4

    @property
    def wire(self) -> str:
        """Name used in policy files, corpora and JSON payloads."""
        return self.name.lower()

    @property
    def title(self) -> str:
        """Title-case label used in expert names, e.g. ``Cosmic Top Secret``."""
        return self.name.replace("_", " ").title()

    @classmethod
    def from_wire(cls, name: str) -> ClearanceLevel:
        try:
            return cls[name.upper()]
        except (KeyError, AttributeError):
            raise ValueError(f"unknown clearance {name!r}") from None


CLEARANCE_NAMES = tuple(level.wire for level in ClearanceLevel)


def dominates(a: ClearanceLevel, b: ClearanceLevel) -> bool:
    """True when a subject cleared at ``a`` may read material marked ``b``."""
    return int(a) >= int(b)


@dataclass(frozen=True)
class Role:
    id: str
    contains: frozenset[str] = frozenset()


@dataclass(frozen=True)
class User:
    id: str
    clearance: ClearanceLevel
    direct_roles: frozenset[str]


@dataclass(frozen=True)
class DocumentMeta:
    id: str
    clearance: ClearanceLevel
    granted_roles: frozenset[str] = frozenset()


class Reason(str, enum.Enum):
    GRANTED = "Granted"
    CLEARANCE_INSUFFICIENT = "ClearanceInsufficient"
    NO_ROLE_GRANT = "NoRoleGrant"
    UNKNOWN_SUBJECT = "UnknownSubject"
    UNKNOWN_RESOURCE = "UnknownResource"


@dataclass(frozen=True)
class AccessDecision:
    allowed: bool
    reason: Reason

    def __post_init__(self) -> None:
        if self.allowed != (self.reason is Reason.GRANTED):
            raise ValueError("allowed must be true exactly when reason is Granted")

    def __bool__(self) -> bool:
        return self.allowed


GRANTED = AccessDecision(True, Reason.GRANTED)


def _deny(reason: Reason) -> AccessDecision:
    return AccessDecision(False, reason)


@dataclass(frozen=True, eq=False)
class PolicySnapshot:
    """Immutable view of users, roles, document metadata and API tokens.

    Collections are kept as tuples so that duplicate ids survive construction
    and can be reported by :func:`validate_policy`; lookups use the first
    occurrence.
    """

    version: int
    roles: tuple[Role, ...]
    users: tuple[User, ...]
    documents: tuple[DocumentMeta, ...] = ()
    tokens: Mapping[str, str] = field(default_factory=dict)
    admins: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", MappingProxyType(dict(self.tokens)))
        object.__setattr__(self, "_closure_cache", {})

    @cached_property
    def role_index(self) -> Mapping[str, Role]:
        index: dict[str, Role] = {}
        for role in self.roles:
            index.setdefault(role.id, role)
        return MappingProxyType(index)

    @cached_property
    def user_index(self) -> Mapping[str, User]:
        index: dict[str, User] = {}
        for user in self.users:
            index.setdefault(user.id, user)
        return MappingProxyType(index)

    @cached_property
    def document_index(self) -> Mapping[str, DocumentMeta]:
        index: dict[str, DocumentMeta] = {}
        for doc in self.documents:
            index.setdefault(doc.id, doc)
        return MappingProxyType(index)

    @property
    def role_ids(self) -> frozenset[str]:
        return frozenset(self.role_index)

    def get_user(self, user_id: str) -> User:
        try:
            return self.user_index[user_id]
        except KeyError:
            raise UnknownSubject(f"unknown user {user_id!r}") from None

    def user_for_token(self, token: str) -> str | None:
        return self.tokens.get(token)

    def is_admin(self, user_id: str) -> bool:
        return user_id in self.admins

    def replace(self, **changes: Any) -> PolicySnapshot:
        """Copy with ``changes`` applied and the version bumped by one."""
        fields = {
            "version": self.version + 1,
            "roles": self.roles,
            "users": self.users,
            "documents": self.documents,
            "tokens": dict(self.tokens),
            "admins": self.admins,
        }
        fields.update(changes)
        return PolicySnapshot(**fields)

    def _closure(self, role_ids: frozenset[str]) -> frozenset[str]:
        cache: dict[frozenset[str], frozenset[str]] = self._closure_cache  # type: ignore[attr-defined]
        hit = cache.get(role_ids)
        if hit is not None:
            return hit
        result: set[str] = set()
        for role_id in role_ids:
            result |= self._role_closure(role_id)
        frozen = frozenset(result)
        cache[role_ids] = frozen
        return frozen

    def _role_closure(self, root: str) -> frozenset[str]:
        # iterative DFS; a back edge onto the current path is a cycle
        seen = {root}
        on_path = {root}
        stack = [(root, iter(sorted(self._children(root))))]
        while stack:
            node, children = stack[-1]
            child = next(children, None)
            if child is None:
                stack.pop()
                on_path.discard(node)
                continue
            if child in on_path:
                raise PolicyInvalid(f"role containment cycle through {child!r}")
            if child in seen:
                continue
            seen.add(child)
            on_path.add(child)
            stack.append((child, iter(sorted(self._children(child)))))
        return frozenset(seen)

    def _children(self, role_id: str) -> frozenset[str]:
        role = self.role_index.get(role_id)
        return role.contains if role is not None else frozenset()


def effective_roles(user: User, snapshot: PolicySnapshot) -> frozenset[str]:
    """Transitive closure of the user's direct roles under containment."""
    if user.id not in snapshot.user_index:
        raise UnknownSubject(f"unknown user {user.id!r}")
    return snapshot._closure(frozenset(user.direct_roles))


def can_access_document(
    user: User, doc: DocumentMeta, snapshot: PolicySnapshot
) -> AccessDecision:
    if user.id not in snapshot.user_index:
        return _deny(Reason.UNKNOWN_SUBJECT)
    if not doc.granted_roles <= snapshot.role_ids:
        return _deny(Reason.UNKNOWN_RESOURCE)
    if not dominates(user.clearance, doc.clearance):
        return _deny(Reason.CLEARANCE_INSUFFICIENT)
    if effective_roles(user, snapshot).isdisjoint(doc.granted_roles):
        return _deny(Reason.NO_ROLE_GRANT)
    return GRANTED


def can_consult_expert(
    user: User,
    expert_role: str,
    expert_clearance: ClearanceLevel,
    snapshot: PolicySnapshot,
) -> AccessDecision:
    if user.id not in snapshot.user_index:
        return _deny(Reason.UNKNOWN_SUBJECT)
    if expert_role not in snapshot.role_index:
        return _deny(Reason.UNKNOWN_RESOURCE)
    if not dominates(user.clearance, expert_clearance):
        return _deny(Reason.CLEARANCE_INSUFFICIENT)
    if expert_role not in effective_roles(user, snapshot):
        return _deny(Reason.NO_ROLE_GRANT)
    return GRANTED


@dataclass(frozen=True)
class Violation:
    kind: str
    subject: str
    detail: str

    def __str__(self) -> str:
        return f"{self.kind}: {self.subject}: {self.detail}"


def validate_policy(snapshot: PolicySnapshot) -> list[Violation]:
    """List every structural problem in ``snapshot``; empty means well-formed."""
    report: list[Violation] = []

    for kind, items in (
        ("role", snapshot.roles),
        ("user", snapshot.users),
        ("document", snapshot.documents),
    ):
        counts = Counter(item.id for item in items)
        for item_id, n in sorted(counts.items()):
            if not item_id:
                report.append(Violation("EmptyId", kind, "id must be non-empty"))
            if n > 1:
                report.append(Violation("DuplicateId", f"{kind} {item_id}", f"defined {n} times"))

    known = snapshot.role_ids
    for role in snapshot.roles:
        for ref in sorted(role.contains - known):
            report.append(Violation("DanglingRoleRef", f"role {role.id}", f"contains unknown role {ref!r}"))
    for user in snapshot.users:
        if not user.direct_roles:
            report.append(Violation("EmptyRoleSet", f"user {user.id}", "user has no roles"))
        for ref in sorted(user.direct_roles - known):
            report.append(Violation("DanglingRoleRef", f"user {user.id}", f"references unknown role {ref!r}"))
    for doc in snapshot.documents:
        for ref in sorted(doc.granted_roles - known):
            report.append(Violation("DanglingRoleRef", f"document {doc.id}", f"granted to unknown role {ref!r}"))

    for cycle in _find_cycles(snapshot):
        report.append(Violation("RoleCycle", " -> ".join(cycle), "role containment must be acyclic"))

    users = snapshot.user_index
    for token, user_id in sorted(snapshot.tokens.items()):
        if user_id not in users:
            report.append(Violation("DanglingUserRef", "token", f"maps to unknown user {user_id!r}"))
    for user_id in sorted(snapshot.admins - set(users)):
        report.append(Violation("DanglingUserRef", "admins", f"unknown user {user_id!r}"))
    return report


def _find_cycles(snapshot: PolicySnapshot) -> list[list[str]]:
    """One representative cycle per strongly connected component (Tarjan)."""
    graph = {rid: sorted(r.contains & snapshot.role_ids) for rid, r in snapshot.role_index.items()}
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    stack: list[str] = []
    on_stack: set[str] = set()
    components: list[list[str]] = []
    counter = 0

    def visit(v: str) -> None:
        nonlocal counter
        index[v] = low[v] = counter
        counter += 1
        stack.append(v)
        on_stack.add(v)
        for w in graph[v]:
            if w not in index:
                visit(w)
                low[v] = min(low[v], low[w])
            elif w in on_stack:
                low[v] = min(low[v], index[w])
        if low[v] == index[v]:
            comp = []
            while True:
                w = stack.pop()
                on_stack.discard(w)
                comp.append(w)
                if w == v:
                    break
            if len(comp) > 1 or v in graph[v]:
                components.append(sorted(comp))

    for v in sorted(graph):
        if v not in index:
            visit(v)
    return sorted(components)


# -- policy file ------------------------------------------------------------


def parse_policy(data: Any, version: int = 1) -> PolicySnapshot:
    """Build a snapshot from decoded policy JSON, collecting field diagnostics.

    Only shape errors are raised here; semantic problems (cycles, dangling
    references) are left to :func:`validate_policy`.
    """
    problems: list[str] = []
    if not isinstance(data, dict):
        raise ConfigInvalid("policy must be a JSON object", ["$: expected object"])

    def str_list(value: Any, where: str) -> frozenset[str]:
        if value is None:
            return frozenset()
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            problems.append(f"{where}: expected list of strings")
            return frozenset()
        return frozenset(value)

    def entries(key: str) -> list[tuple[str, dict]]:
        value = data.get(key, [])
        if not isinstance(value, list):
            problems.append(f"{key}: expected list")
            return []
        out = []
        for i, item in enumerate(value):
            where = f"{key}[{i}]"
            if not isinstance(item, dict):
                problems.append(f"{where}: expected object")
            elif not isinstance(item.get("id"), str):
                problems.append(f"{where}.id: expected string")
            else:
                out.append((where, item))
        return out

    roles = [Role(item["id"], str_list(item.get("contains"), f"{where}.contains")) for where, item in entries("roles")]

    users = []
    for where, item in entries("users"):
        try:
            clearance = ClearanceLevel.from_wire(item.get("clearance"))
        except ValueError:
            problems.append(f"{where}.clearance: expected one of {', '.join(CLEARANCE_NAMES)}")
            continue
        users.append(User(item["id"], clearance, str_list(item.get("roles"), f"{where}.roles")))

    tokens = data.get("tokens", {})
    if not isinstance(tokens, dict) or not all(isinstance(v, str) for v in tokens.values()):
        problems.append("tokens: expected object mapping token to user id")
        tokens = {}
    admins = str_list(data.get("admins"), "admins")

    if problems:
        raise ConfigInvalid("invalid policy", problems)
    return PolicySnapshot(version, tuple(roles), tuple(users), tokens=tokens, admins=admins)


def load_policy(path: str | Path, version: int = 1, *, strict: bool = True) -> PolicySnapshot:
    """Read a policy file; with ``strict`` any validation violation is fatal."""
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigInvalid(f"cannot read policy {path}", [str(exc)]) from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(
            f"policy {path} is not valid JSON",
            [f"line {exc.lineno}, column {exc.colno}: {exc.msg}"],
        ) from exc
    snapshot = parse_policy(data, version)
    if strict:
        report = validate_policy(snapshot)
        if report:
            raise ConfigInvalid(f"policy {path} failed validation", [str(v) for v in report])
    return snapshot


def policy_to_json(snapshot: PolicySnapshot) -> dict[str, Any]:
    return {
        "roles": [{"id": r.id, "contains": sorted(r.contains)} for r in snapshot.roles],
        "users": [
            {"id": u.id, "clearance": u.clearance.wire, "roles": sorted(u.direct_roles)}
            for u in snapshot.users
        ],
        "tokens": dict(snapshot.tokens),
        "admins": sorted(snapshot.admins),
    }


def make_snapshot(
    roles: Mapping[str, Iterable[str]],
    users: Iterable[User] = (),
    documents: Iterable[DocumentMeta] = (),
    version: int = 1,
    **extra: Any,
) -> PolicySnapshot:
    """Convenience constructor from a ``{role: contained roles}`` mapping."""
    return PolicySnapshot(
        version,
        tuple(Role(rid, frozenset(contains)) for rid, contains in roles.items()),
        tuple(users),
        tuple(documents),
        **extra,
    )
