"""The three inference workflows (RAG, MoE, RAG+MoE) plus admin operations.

:class:`Engine` owns the active policy snapshot, the document store, the
trained experts and the audit log. Every public entry point writes exactly
one audit entry, whether it succeeds or fails.
"""

from __future__ import annotations

import enum
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol

from cleargate.audit import AuditEntry, AuditLog
from cleargate.embedding import tokenize
from cleargate.errors import (
    ClearGateError,
    EmptyPrompt,
    Forbidden,
    InvalidRequest,
    NotFoundOrDenied,
)
from cleargate.experts import (
    DEFAULT_TOP_K,
    Expert,
    ExpertId,
    build_expert_grid,
    consult,
    refit_incremental,
    refit_removed,
    train_experts,
)
from cleargate.policy import (
    DocumentMeta,
    PolicySnapshot,
    Reason,
    can_access_document,
    load_policy,
)
from cleargate.store import CorpusRecord, Document, DocumentStore, SearchHit, read_corpus

SNIPPET_TOKENS = 30
CONTEXT_HEADER = "CONTEXT:\n"
QUESTION_HEADER = "QUESTION:\n"


class Mode(str, enum.Enum):
    RAG_ONLY = "RagOnly"
    MOE_ONLY = "MoeOnly"
    RAG_MOE = "RagMoe"

    @classmethod
    def parse(cls, value: str | Mode) -> Mode:
        if isinstance(value, Mode):
            return value
        aliases = {"rag": cls.RAG_ONLY, "moe": cls.MOE_ONLY, "hybrid": cls.RAG_MOE}
        try:
            return aliases.get(value.lower()) or cls(value)
        except ValueError:
            raise InvalidRequest(f"unknown mode {value!r}") from None


@dataclass(frozen=True)
class InferenceRequest:
    user_id: str
    prompt: str
    mode: Mode = Mode.RAG_ONLY
    k: int = 3
    top_k_experts: int = DEFAULT_TOP_K


@dataclass(frozen=True)
class InferenceResponse:
    text: str
    retrieved_doc_ids: tuple[str, ...] = ()
    consulted_experts: tuple[tuple[str, float], ...] = ()
    policy_version: int = 0

    def to_json(self) -> dict:
        return {
            "text": self.text,
            "retrieved_doc_ids": list(self.retrieved_doc_ids),
            "consulted_experts": [{"name": n, "probability": p} for n, p in self.consulted_experts],
            "policy_version": self.policy_version,
        }


class Generator(Protocol):
    def __call__(self, augmented_prompt: str) -> str: ...


def build_augmented_prompt(hits: Iterable[SearchHit], texts: Mapping[str, str], prompt: str) -> str:
    context = "".join(f"[{hit.doc_id}] {texts[hit.doc_id]}\n" for hit in hits)
    return f"{CONTEXT_HEADER}{context}{QUESTION_HEADER}{prompt}"


_ENTRY_RE = re.compile(r"^\[([^\]\n]*)\] ", re.MULTILINE)


def split_augmented_prompt(augmented: str) -> tuple[list[tuple[str, str]], str]:
    """Recover ``[(doc_id, text), ...]`` and the question from an augmented prompt."""
    if not augmented.startswith(CONTEXT_HEADER):
        return [], augmented
    body = augmented[len(CONTEXT_HEADER):]
    if body.startswith(QUESTION_HEADER):
        return [], body[len(QUESTION_HEADER):]
    block, _, question = body.partition("\n" + QUESTION_HEADER)
    parts = _ENTRY_RE.split(block)
    # split yields [prefix, id1, text1, id2, text2, ...]
    entries = [(parts[i], parts[i + 1].rstrip("\n")) for i in range(1, len(parts) - 1, 2)]
    return entries, question


def mock_generator(augmented_prompt: str) -> str:
    """Deterministic stand-in for an LLM: quotes the best context document."""
    entries, question = split_augmented_prompt(augmented_prompt)
    source = entries[0][1] if entries else question
    snippet = " ".join(tokenize(source)[:SNIPPET_TOKENS])
    return f"ANSWER(ctx={len(entries)} docs): {snippet}"


@dataclass(frozen=True)
class _State:
    snapshot: PolicySnapshot
    experts: Mapping[ExpertId, Expert] = field(default_factory=dict)


class Engine:
    def __init__(
        self,
        snapshot: PolicySnapshot,
        store: DocumentStore | None = None,
        audit: AuditLog | None = None,
        generator: Generator | Callable[[str], str] = mock_generator,
        temperature: float = 1.0,
    ) -> None:
        self.store = store if store is not None else DocumentStore()
        self.audit = audit if audit is not None else AuditLog()
        self.generator = generator
        self.temperature = temperature
        self.policy_path: Path | None = None
        self._mutate = threading.Lock()
        self._state = _State(snapshot, self._train(snapshot))

    @classmethod
    def from_paths(
        cls,
        policy_path: str | Path,
        corpus_path: str | Path | None = None,
        audit_path: str | Path | None = None,
        **kwargs,
    ) -> Engine:
        snapshot = load_policy(policy_path)
        store = DocumentStore()
        if corpus_path is not None:
            for rec in read_corpus(corpus_path):
                store.ingest(rec.meta, rec.text, snapshot)
        engine = cls(snapshot, store, AuditLog(audit_path), **kwargs)
        engine.policy_path = Path(policy_path)
        return engine

    # -- state ------------------------------------------------------------

    @property
    def snapshot(self) -> PolicySnapshot:
        return self._state.snapshot

    @property
    def experts(self) -> Mapping[ExpertId, Expert]:
        return self._state.experts

    @property
    def policy_version(self) -> int:
        return self._state.snapshot.version

    def _train(self, snapshot: PolicySnapshot) -> dict[ExpertId, Expert]:
        if not snapshot.roles:
            return {}
        return train_experts(build_expert_grid(snapshot.role_ids, snapshot), self.store.documents())

    def retrain(self) -> Mapping[ExpertId, Expert]:
        with self._mutate:
            state = self._state
            self._state = _State(state.snapshot, self._train(state.snapshot))
        return self._state.experts

    def reload_policy(self, snapshot: PolicySnapshot | None = None, actor: str | None = None) -> int:
        """Swap in a new policy (re-read from disk when none is given)."""
        with self._audited(actor, "policy_reload") as rec:
            self._require_admin(actor)
            with self._mutate:
                current = self._state.snapshot
                if snapshot is None:
                    if self.policy_path is None:
                        raise InvalidRequest("no policy file to reload from")
                    snapshot = load_policy(self.policy_path, current.version + 1)
                elif snapshot.version <= current.version:
                    snapshot = snapshot.replace(version=current.version + 1)
                self._state = _State(snapshot, self._train(snapshot))
            rec.policy_version = snapshot.version
            return snapshot.version

    # -- audit plumbing ---------------------------------------------------

    def _audited(self, user_id: str | None, action: str, mode: Mode | None = None) -> _AuditScope:
        return _AuditScope(self, user_id, action, mode)

    def _require_admin(self, actor: str | None) -> None:
        if actor is not None and not self.snapshot.is_admin(actor):
            raise Forbidden(f"user {actor!r} is not an administrator")

    def record_denial(self, user_id: str | None, action: str, reason: str) -> None:
        self.audit.append(
            AuditEntry(user_id, action, "deny", deny_reasons=(reason,), policy_version=self.policy_version)
        )

    def record_unauthenticated(self, action: str) -> None:
        self.audit.append(
            AuditEntry(None, action, "deny", deny_reasons=("Unauthenticated",), policy_version=self.policy_version)
        )

    # -- inference --------------------------------------------------------

    def infer(self, request: InferenceRequest) -> InferenceResponse:
        mode = Mode.parse(request.mode)
        handler = {
            Mode.RAG_ONLY: self.infer_rag,
            Mode.MOE_ONLY: self.infer_moe,
            Mode.RAG_MOE: self.infer_hybrid,
        }[mode]
        return handler(request)

    def _begin(self, request: InferenceRequest, snapshot: PolicySnapshot):
        if request.k < 1 or request.top_k_experts < 1:
            raise InvalidRequest("k and top_k_experts must be >= 1")
        user = snapshot.get_user(request.user_id)
        if not tokenize(request.prompt):
            raise EmptyPrompt("prompt has no tokens")
        return user

    def _retrieve(self, user, request: InferenceRequest, snapshot: PolicySnapshot):
        hits = self.store.search_filtered(user, request.prompt, request.k, snapshot)
        texts = {}
        for hit in hits:
            doc = self.store.lookup(hit.doc_id)
            texts[hit.doc_id] = doc.text if doc is not None else ""
        return hits, build_augmented_prompt(hits, texts, request.prompt)

    def infer_rag(self, request: InferenceRequest) -> InferenceResponse:
        state = self._state
        with self._audited(request.user_id, "query", Mode.RAG_ONLY) as rec:
            rec.policy_version = state.snapshot.version
            user = self._begin(request, state.snapshot)
            hits, augmented = self._retrieve(user, request, state.snapshot)
            text = self.generator(augmented)
            response = InferenceResponse(
                text, tuple(h.doc_id for h in hits), (), state.snapshot.version
            )
            rec.resources = list(response.retrieved_doc_ids)
            return response

    def infer_moe(self, request: InferenceRequest) -> InferenceResponse:
        state = self._state
        with self._audited(request.user_id, "query", Mode.MOE_ONLY) as rec:
            rec.policy_version = state.snapshot.version
            user = self._begin(request, state.snapshot)
            _, mixed = consult(
                user, request.prompt, state.experts, state.snapshot,
                request.top_k_experts, self.temperature,
            )
            consulted = tuple((eid.name, p) for eid, p in mixed.provenance)
            rec.resources = [name for name, _ in consulted]
            return InferenceResponse(mixed.text, (), consulted, state.snapshot.version)

    def infer_hybrid(self, request: InferenceRequest) -> InferenceResponse:
        state = self._state
        with self._audited(request.user_id, "query", Mode.RAG_MOE) as rec:
            rec.policy_version = state.snapshot.version
            user = self._begin(request, state.snapshot)
            hits, augmented = self._retrieve(user, request, state.snapshot)
            # with nothing retrieved the scaffold would only add noise tokens
            routed = augmented if hits else request.prompt
            _, mixed = consult(
                user, routed, state.experts, state.snapshot,
                request.top_k_experts, self.temperature,
            )
            retrieved = tuple(h.doc_id for h in hits)
            consulted = tuple((eid.name, p) for eid, p in mixed.provenance)
            rec.resources = list(retrieved) + [name for name, _ in consulted]
            return InferenceResponse(mixed.text, retrieved, consulted, state.snapshot.version)

    # -- documents --------------------------------------------------------

    def get_document(self, user_id: str, doc_id: str) -> Document:
        snapshot = self.snapshot
        with self._audited(user_id, "fetch") as rec:
            rec.policy_version = snapshot.version
            rec.resources = [doc_id]
            user = snapshot.get_user(user_id)
            try:
                return self.store.get(user, doc_id, snapshot)
            except NotFoundOrDenied:
                doc = self.store.lookup(doc_id)
                if doc is None:
                    rec.reason = Reason.UNKNOWN_RESOURCE.value
                else:
                    rec.reason = can_access_document(user, doc.meta, snapshot).reason.value
                raise

    def ingest_document(self, meta: DocumentMeta, text: str, actor: str | None = None) -> str:
        with self._audited(actor, "ingest") as rec:
            rec.resources = [meta.id]
            self._require_admin(actor)
            with self._mutate:
                state = self._state
                rec.policy_version = state.snapshot.version
                doc = self.store.ingest(meta, text, state.snapshot)
                experts, _ = refit_incremental(doc, state.experts)
                self._state = _State(state.snapshot, experts)
            return doc.id

    def ingest_records(self, records: Iterable[CorpusRecord], actor: str | None = None) -> list[str]:
        return [self.ingest_document(rec.meta, rec.text, actor) for rec in records]

    def remove_document(self, doc_id: str, actor: str | None = None) -> str:
        with self._audited(actor, "remove") as rec:
            rec.resources = [doc_id]
            self._require_admin(actor)
            with self._mutate:
                state = self._state
                rec.policy_version = state.snapshot.version
                self.store.remove(doc_id)
                experts, _ = refit_removed(doc_id, state.experts)
                self._state = _State(state.snapshot, experts)
            return doc_id

    def read_audit(self, limit: int, actor: str | None = None) -> list[dict]:
        self._require_admin(actor)
        return self.audit.tail(limit)


class _AuditScope:
    """Context manager that writes one audit entry when the block exits."""

    def __init__(self, engine: Engine, user_id: str | None, action: str, mode: Mode | None) -> None:
        self.engine = engine
        self.user_id = user_id
        self.action = action
        self.mode = mode
        self.resources: list[str] = []
        self.reason: str | None = None
        self.policy_version: int | None = None

    def __enter__(self) -> _AuditScope:
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc is None:
            decision, reasons = "allow", ()
        elif isinstance(exc, ClearGateError):
            decision, reasons = "deny", (self.reason or exc.code,)
        else:
            decision, reasons = "error", (type(exc).__name__,)
        self.engine.audit.append(
            AuditEntry(
                user_id=self.user_id,
                action=self.action,
                decision=decision,
                mode=self.mode.value if self.mode else None,
                resource_ids=tuple(self.resources),
                deny_reasons=reasons,
                policy_version=self.policy_version,
            )
        )
        return False
