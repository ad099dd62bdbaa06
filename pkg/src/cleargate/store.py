"""Document store with role/clearance-trimmed similarity search."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from cleargate.embedding import Embedding, cosine_similarity, embed_tokens, tokenize
from cleargate.errors import (
    ConfigInvalid,
    DanglingRoleRef,
    DuplicateId,
    EmptyText,
    NotFound,
    NotFoundOrDenied,
)
from cleargate.policy import (
    ClearanceLevel,
    DocumentMeta,
    PolicySnapshot,
    User,
    can_access_document,
)


@dataclass(frozen=True, eq=False)
class Document:
    meta: DocumentMeta
    text: str
    embedding: Embedding

    @property
    def id(self) -> str:
        return self.meta.id

    @classmethod
    def build(cls, meta: DocumentMeta, text: str) -> Document:
        tokens = tokenize(text)
        if not tokens:
            raise EmptyText(f"document {meta.id!r} has no tokens")
        return cls(meta, text, embed_tokens(tokens))


@dataclass(frozen=True)
class SearchHit:
    doc_id: str
    score: float
    rank: int


def _rank(scored: Iterable[tuple[str, float]], k: int) -> list[SearchHit]:
    ordered = sorted(scored, key=lambda pair: (-pair[1], pair[0]))[:k]
    return [SearchHit(doc_id, score, i) for i, (doc_id, score) in enumerate(ordered, start=1)]


class DocumentStore:
    """Copy-on-write mapping of documents.

    Mutations take a lock and swap in a fresh dict, so a concurrent search
    sees either the old or the new corpus and never a half-applied change.
    """

    def __init__(self, documents: Iterable[Document] = ()) -> None:
        self._lock = threading.Lock()
        docs: dict[str, Document] = {}
        for doc in documents:
            if doc.id in docs:
                raise DuplicateId(f"document {doc.id!r} already exists")
            docs[doc.id] = doc
        self._docs = docs
        self.version = 0
        self.reads = 0

    def __len__(self) -> int:
        return len(self._docs)

    def __contains__(self, doc_id: object) -> bool:
        return doc_id in self._docs

    def __iter__(self) -> Iterator[Document]:
        docs = self._docs
        return iter([docs[k] for k in sorted(docs)])

    def documents(self) -> list[Document]:
        """All documents ordered by id."""
        return list(self)

    def metas(self) -> tuple[DocumentMeta, ...]:
        return tuple(doc.meta for doc in self)

    def ingest(self, meta: DocumentMeta, text: str, snapshot: PolicySnapshot) -> Document:
        dangling = sorted(meta.granted_roles - snapshot.role_ids)
        if dangling:
            raise DanglingRoleRef(f"document {meta.id!r} granted to unknown roles {dangling}")
        doc = Document.build(meta, text)
        with self._lock:
            if meta.id in self._docs:
                raise DuplicateId(f"document {meta.id!r} already exists")
            docs = dict(self._docs)
            docs[meta.id] = doc
            self._docs = docs
            self.version += 1
        return doc

    def remove(self, doc_id: str) -> Document:
        with self._lock:
            if doc_id not in self._docs:
                raise NotFound(f"document {doc_id!r} not found")
            docs = dict(self._docs)
            doc = docs.pop(doc_id)
            self._docs = docs
            self.version += 1
        return doc

    def get(self, user: User, doc_id: str, snapshot: PolicySnapshot) -> Document:
        self.reads += 1
        doc = self._docs.get(doc_id)
        if doc is None or not can_access_document(user, doc.meta, snapshot):
            raise NotFoundOrDenied()
        return doc

    def lookup(self, doc_id: str) -> Document | None:
        """Unchecked fetch for internal callers that already hold a decision."""
        return self._docs.get(doc_id)

    def search_filtered(
        self, user: User, query: str, k: int, snapshot: PolicySnapshot
    ) -> list[SearchHit]:
        """Top-``k`` documents the user may read, best first.

        Authorization is applied before scoring so unreadable documents are
        never ranked.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        snapshot.get_user(user.id)
        self.reads += 1
        docs = self._docs
        q = embed_tokens(tokenize(query))
        allowed = [d for d in docs.values() if can_access_document(user, d.meta, snapshot)]
        return _rank(((d.id, cosine_similarity(q, d.embedding)) for d in allowed), k)

    def search_oracle(
        self, user: User, query: str, k: int, snapshot: PolicySnapshot
    ) -> list[SearchHit]:
        """Brute-force reference: score everything, then trim, sort and cut."""
        if k < 1:
            raise ValueError("k must be >= 1")
        snapshot.get_user(user.id)
        q = embed_tokens(tokenize(query))
        scored = [(d.id, cosine_similarity(q, d.embedding), d.meta) for d in self._docs.values()]
        kept = [(doc_id, s) for doc_id, s, meta in scored if can_access_document(user, meta, snapshot).allowed]
        kept.sort(key=lambda pair: (-pair[1], pair[0]))
        return [SearchHit(doc_id, s, i + 1) for i, (doc_id, s) in enumerate(kept[:k])]


# -- corpus files -------------------------------------------------------------


@dataclass(frozen=True)
class CorpusRecord:
    meta: DocumentMeta
    text: str

    def to_json(self) -> dict:
        return {
            "id": self.meta.id,
            "clearance": self.meta.clearance.wire,
            "roles": sorted(self.meta.granted_roles),
            "text": self.text,
        }


def parse_record(obj: object, where: str = "record") -> CorpusRecord:
    if not isinstance(obj, dict):
        raise ConfigInvalid(f"{where}: expected object", [f"{where}: expected object"])
    problems = []
    doc_id, text, roles = obj.get("id"), obj.get("text"), obj.get("roles", [])
    if not isinstance(doc_id, str) or not doc_id:
        problems.append(f"{where}.id: expected non-empty string")
    if not isinstance(text, str):
        problems.append(f"{where}.text: expected string")
    if not isinstance(roles, list) or not all(isinstance(r, str) for r in roles):
        problems.append(f"{where}.roles: expected list of strings")
    try:
        clearance = ClearanceLevel.from_wire(obj.get("clearance"))
    except ValueError:
        problems.append(f"{where}.clearance: unknown clearance {obj.get('clearance')!r}")
    if problems:
        raise ConfigInvalid(f"{where}: invalid document", problems)
    return CorpusRecord(DocumentMeta(doc_id, clearance, frozenset(roles)), text)


def read_corpus(path: str | Path) -> list[CorpusRecord]:
    """Parse a JSONL corpus: one ``{id, clearance, roles, text}`` object per line."""
    path = Path(path)
    records = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read corpus {path}", [str(exc)]) from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(
                f"corpus {path} is not valid JSONL",
                [f"line {lineno}, column {exc.colno}: {exc.msg}"],
            ) from exc
        records.append(parse_record(obj, f"line {lineno}"))
    return records


def write_corpus(path: str | Path, records: Iterable[CorpusRecord], append: bool = False) -> None:
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")
