"""Role x clearance expert grid with an authorization-masked softmax router.

Experts are desk-scale stand-ins for fine-tuned models: each one keeps the
documents it is allowed to learn from, their centroid embedding and their
vocabulary, and answers by quoting its best-matching training document.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

from cleargate.embedding import (
    Embedding,
    cosine_similarity,
    embed_tokens,
    is_zero,
    normalize,
    tokenize,
    zero_vector,
)
from cleargate.errors import (
    DanglingRoleRef,
    EmptyPrompt,
    EmptyRoleSet,
    NoAuthorizedExperts,
    UntrainedExpert,
)
from cleargate.policy import (
    ClearanceLevel,
    DocumentMeta,
    PolicySnapshot,
    User,
    can_consult_expert,
    dominates,
)
from cleargate.store import Document

SNIPPET_TOKENS = 30
DEFAULT_TOP_K = 2


@dataclass(frozen=True, order=True)
class ExpertId:
    role: str
    clearance: ClearanceLevel

    @property
    def name(self) -> str:
        return f"{self.role} {self.clearance.title}"

    def __str__(self) -> str:
        return self.name


def _name_key(eid: ExpertId) -> str:
    return eid.name


@dataclass(frozen=True, eq=False)
class Expert:
    id: ExpertId
    centroid: Embedding
    vocabulary: frozenset[str]
    training_docs: tuple[Document, ...]

    @property
    def trained(self) -> bool:
        return bool(self.training_docs)

    @property
    def training_doc_ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self.training_docs)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Expert):
            return NotImplemented
        return (
            self.id == other.id
            and self.vocabulary == other.vocabulary
            and self.training_doc_ids == other.training_doc_ids
            and self.centroid.tobytes() == other.centroid.tobytes()
            and all(
                a.text == b.text and a.embedding.tobytes() == b.embedding.tobytes()
                for a, b in zip(self.training_docs, other.training_docs)
            )
        )

    __hash__ = None  # type: ignore[assignment]


def build_expert_grid(roles: Iterable[str], snapshot: PolicySnapshot | None = None) -> frozenset[ExpertId]:
    """One expert id per (role, clearance) cell."""
    roles = frozenset(roles)
    if not roles:
        raise EmptyRoleSet("expert grid needs at least one role")
    if snapshot is not None:
        dangling = sorted(roles - snapshot.role_ids)
        if dangling:
            raise DanglingRoleRef(f"unknown roles {dangling}")
    return frozenset(ExpertId(role, level) for role in roles for level in ClearanceLevel)


def may_train_on(eid: ExpertId, meta: DocumentMeta) -> bool:
    """Whether a document belongs in the training set of expert ``eid``."""
    return eid.role in meta.granted_roles and dominates(eid.clearance, meta.clearance)


def fit_expert(eid: ExpertId, docs: Iterable[Document]) -> Expert:
    """Build an expert from its (already authorized) training documents."""
    ordered = tuple(sorted(docs, key=lambda d: d.id))
    if not ordered:
        return Expert(eid, zero_vector(), frozenset(), ())
    centroid = normalize(np.mean(np.stack([d.embedding for d in ordered]), axis=0))
    vocabulary = frozenset(tok for d in ordered for tok in tokenize(d.text))
    return Expert(eid, centroid, vocabulary, ordered)


def train_experts(grid: Iterable[ExpertId], corpus: Iterable[Document]) -> dict[ExpertId, Expert]:
    docs = list(corpus)
    return {eid: fit_expert(eid, (d for d in docs if may_train_on(eid, d.meta))) for eid in grid}


def refit_incremental(
    new_doc: Document, experts: Mapping[ExpertId, Expert]
) -> tuple[dict[ExpertId, Expert], frozenset[ExpertId]]:
    """Retrain only the experts whose training predicate admits ``new_doc``.

    Returns the updated expert mapping and the ids that were retrained; all
    other experts are carried over as the same objects.
    """
    updated = dict(experts)
    retrained = set()
    for eid, expert in experts.items():
        if may_train_on(eid, new_doc.meta):
            kept = [d for d in expert.training_docs if d.id != new_doc.id]
            updated[eid] = fit_expert(eid, kept + [new_doc])
            retrained.add(eid)
    return updated, frozenset(retrained)


def refit_removed(
    doc_id: str, experts: Mapping[ExpertId, Expert]
) -> tuple[dict[ExpertId, Expert], frozenset[ExpertId]]:
    updated = dict(experts)
    retrained = set()
    for eid, expert in experts.items():
        if doc_id in expert.training_doc_ids:
            updated[eid] = fit_expert(eid, [d for d in expert.training_docs if d.id != doc_id])
            retrained.add(eid)
    return updated, frozenset(retrained)


@dataclass(frozen=True)
class GateDistribution:
    """Activation probabilities over authorized experts only."""

    entries: Mapping[ExpertId, float] = field(default_factory=dict)
    scores: Mapping[ExpertId, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", MappingProxyType(dict(self.entries)))
        object.__setattr__(self, "scores", MappingProxyType(dict(self.scores)))

    def ranked(self) -> list[tuple[ExpertId, float]]:
        """Experts by descending probability, ties by canonical name."""
        return sorted(self.entries.items(), key=lambda kv: (-kv[1], kv[0].name))

    def top(self, k: int) -> list[ExpertId]:
        return [eid for eid, _ in self.ranked()[:k]]


def softmax(logits: Mapping[ExpertId, float]) -> dict[ExpertId, float]:
    if not logits:
        return {}
    peak = max(logits.values())
    weights = {eid: math.exp(v - peak) for eid, v in logits.items()}
    total = math.fsum(weights.values())
    return {eid: w / total for eid, w in weights.items()}


def gate(
    user: User,
    prompt: str,
    experts: Mapping[ExpertId, Expert],
    snapshot: PolicySnapshot,
    temperature: float = 1.0,
) -> GateDistribution:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    tokens = tokenize(prompt)
    if not tokens:
        raise EmptyPrompt("prompt has no tokens")
    authorized = [
        expert
        for eid, expert in sorted(experts.items(), key=lambda kv: kv[0].name)
        if can_consult_expert(user, eid.role, eid.clearance, snapshot).allowed
        and not is_zero(expert.centroid)
    ]
    if not authorized:
        raise NoAuthorizedExperts(f"user {user.id!r} has no trained expert it may consult")
    q = embed_tokens(tokens)
    # scores are computed only for authorized experts
    scores = {e.id: cosine_similarity(q, e.centroid) for e in authorized}
    probs = softmax({eid: s / temperature for eid, s in scores.items()})
    return GateDistribution(probs, scores)


@dataclass(frozen=True)
class ExpertResponse:
    text: str
    source_doc_id: str


def expert_respond(expert: Expert, prompt: str) -> ExpertResponse:
    if not expert.training_docs:
        raise UntrainedExpert(f"expert {expert.id.name!r} has no training documents")
    q = embed_tokens(tokenize(prompt))
    best = min(expert.training_docs, key=lambda d: (-cosine_similarity(q, d.embedding), d.id))
    snippet = " ".join(tokenize(best.text)[:SNIPPET_TOKENS])
    return ExpertResponse(f"According to {best.id}: {snippet}", best.id)


@dataclass(frozen=True)
class MixedResponse:
    text: str
    expert: ExpertId
    source_doc_id: str
    provenance: tuple[tuple[ExpertId, float], ...]


def mix_responses(
    distribution: GateDistribution, responses: Mapping[ExpertId, ExpertResponse]
) -> MixedResponse:
    """Pick the highest-probability consulted expert's answer."""
    unknown = set(responses) - set(distribution.entries)
    if unknown:
        raise ValueError(f"responses from experts outside the distribution: {sorted(map(str, unknown))}")
    if not responses:
        raise ValueError("no expert responses to mix")
    provenance = tuple(
        sorted(
            ((eid, distribution.entries[eid]) for eid in responses),
            key=lambda kv: (-kv[1], kv[0].name),
        )
    )
    winner = provenance[0][0]
    chosen = responses[winner]
    return MixedResponse(chosen.text, winner, chosen.source_doc_id, provenance)


def consult(
    user: User,
    prompt: str,
    experts: Mapping[ExpertId, Expert],
    snapshot: PolicySnapshot,
    top_k: int = DEFAULT_TOP_K,
    temperature: float = 1.0,
) -> tuple[GateDistribution, MixedResponse]:
    """Gate, query the top-``top_k`` experts and mix their answers."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    distribution = gate(user, prompt, experts, snapshot, temperature)
    chosen = distribution.top(top_k)
    responses = {eid: expert_respond(experts[eid], prompt) for eid in chosen}
    return distribution, mix_responses(distribution, responses)


def registry_to_json(experts: Mapping[ExpertId, Expert]) -> list[dict]:
    return [
        {
            "role": eid.role,
            "clearance": eid.clearance.wire,
            "canonical_name": eid.name,
            "training_doc_ids": list(expert.training_doc_ids),
            "vocabulary_size": len(expert.vocabulary),
        }
        for eid, expert in sorted(experts.items(), key=lambda kv: kv[0].name)
    ]
