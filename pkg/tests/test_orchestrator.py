import json
import random

import pytest

from cleargate.audit import AuditLog
from cleargate.embedding import tokenize
from cleargate.errors import EmptyPrompt, Forbidden, NoAuthorizedExperts, NotFoundOrDenied, UnknownSubject
from cleargate.orchestrator import (
    Engine,
    InferenceRequest,
    Mode,
    build_augmented_prompt,
    mock_generator,
    split_augmented_prompt,
)
from cleargate.policy import ClearanceLevel as CL
from cleargate.policy import DocumentMeta, can_access_document, can_consult_expert
from cleargate.store import DocumentStore, SearchHit, parse_record

from conftest import CORPUS


class Recorder:
    def __init__(self):
        self.prompts = []

    def __call__(self, augmented):
        self.prompts.append(augmented)
        return mock_generator(augmented)


@pytest.fixture
def engine(fig2, tmp_path):
    store = DocumentStore()
    for obj in CORPUS:
        rec = parse_record(obj)
        store.ingest(rec.meta, rec.text, fig2)
    return Engine(fig2, store, AuditLog(tmp_path / "audit.jsonl"), generator=Recorder())


def req(user, prompt, mode=Mode.RAG_ONLY, **kw):
    return InferenceRequest(user, prompt, mode, **kw)


def test_augmented_prompt_format():
    hits = [SearchHit("a", 0.9, 1), SearchHit("b", 0.5, 2)]
    out = build_augmented_prompt(hits, {"a": "first text", "b": "second"}, "why?")
    assert out == "CONTEXT:\n[a] first text\n[b] second\nQUESTION:\nwhy?"
    assert split_augmented_prompt(out) == ([("a", "first text"), ("b", "second")], "why?")
    assert build_augmented_prompt([], {}, "why?") == "CONTEXT:\nQUESTION:\nwhy?"


def test_mock_generator():
    assert mock_generator("CONTEXT:\n[a] Alpha, beta.\nQUESTION:\nq") == "ANSWER(ctx=1 docs): alpha beta"
    assert mock_generator("CONTEXT:\nQUESTION:\nWhat is up?") == "ANSWER(ctx=0 docs): what is up"


def test_rag_hides_secret_from_confidential_user(engine):
    resp = engine.infer(req("alice", "personnel review zanzibar salary"))
    assert "hr-secret" not in resp.retrieved_doc_ids
    assert "hr-restricted" in resp.retrieved_doc_ids
    context, _ = split_augmented_prompt(engine.generator.prompts[-1])
    assert [doc_id for doc_id, _ in context] == list(resp.retrieved_doc_ids)
    assert all("zanzibar" not in text for _, text in context)
    assert resp.consulted_experts == ()
    assert resp.policy_version == 1


def test_rag_with_nothing_authorized(fig2):
    engine = Engine(fig2, generator=Recorder())
    resp = engine.infer(req("alice", "anything at all"))
    assert engine.generator.prompts == ["CONTEXT:\nQUESTION:\nanything at all"]
    assert resp.text == "ANSWER(ctx=0 docs): anything at all"
    assert resp.retrieved_doc_ids == ()


def test_rag_is_deterministic(engine):
    a = engine.infer(req("alice", "holiday leave"))
    b = engine.infer(req("alice", "holiday leave"))
    assert a == b


def test_moe_consults_only_authorized_experts(engine, fig2):
    alice = fig2.get_user("alice")
    resp = engine.infer(req("alice", "holiday leave personnel", Mode.MOE_ONLY))
    assert resp.retrieved_doc_ids == ()
    assert resp.consulted_experts
    by_name = {eid.name: eid for eid in engine.experts}
    for name, _ in resp.consulted_experts:
        eid = by_name[name]
        assert can_consult_expert(alice, eid.role, eid.clearance, fig2).allowed
    assert "zanzibar" not in tokenize(resp.text)


def test_moe_without_trained_experts(fig2):
    engine = Engine(fig2)
    with pytest.raises(NoAuthorizedExperts):
        engine.infer(req("alice", "hello", Mode.MOE_ONLY))
    assert json.loads(engine.audit.lines()[-1])["deny_reasons"] == ["NoAuthorizedExperts"]


def test_hybrid_populates_both_lists(engine):
    resp = engine.infer(req("root", "server patch firewall", Mode.RAG_MOE))
    assert resp.retrieved_doc_ids and resp.consulted_experts


def test_hybrid_degrades_to_moe_when_nothing_retrievable(fig2):
    store = DocumentStore()
    store.ingest(DocumentMeta("nu", CL.NOT_CLASSIFIED, frozenset({"NormalUser"})), "canteen menu parking", fig2)
    trained = Engine(fig2, store)
    # same trained experts, but an empty retrieval corpus
    empty = Engine(fig2, DocumentStore())
    empty._state = trained._state
    hybrid = empty.infer(InferenceRequest("alice", "parking", Mode.RAG_MOE))
    moe = trained.infer(InferenceRequest("alice", "parking", Mode.MOE_ONLY))
    assert hybrid.retrieved_doc_ids == ()
    assert (hybrid.text, hybrid.consulted_experts) == (moe.text, moe.consulted_experts)


def test_request_errors(engine):
    with pytest.raises(UnknownSubject):
        engine.infer(req("ghost", "hello"))
    with pytest.raises(EmptyPrompt):
        engine.infer(req("alice", "   "))
    assert len(engine.audit) == 2


def test_one_audit_line_per_call(engine):
    before = len(engine.audit)
    rng = random.Random(0)
    n = 0
    for mode in Mode:
        for user in ("alice", "bob", "carol", "dave", "root"):
            try:
                engine.infer(req(user, rng.choice(["leave", "budget", "server", "menu"]), mode))
            except NoAuthorizedExperts:
                pass
            n += 1
    assert len(engine.audit) == before + n


def test_fetch_audit_records_real_reason(engine):
    with pytest.raises(NotFoundOrDenied):
        engine.get_document("alice", "hr-secret")
    with pytest.raises(NotFoundOrDenied):
        engine.get_document("bob", "hr-restricted")
    with pytest.raises(NotFoundOrDenied):
        engine.get_document("alice", "nope")
    assert engine.get_document("alice", "hr-restricted").id == "hr-restricted"
    tail = engine.audit.tail(4)
    assert [e["deny_reasons"] for e in tail] == [
        ["ClearanceInsufficient"],
        ["NoRoleGrant"],
        ["UnknownResource"],
        [],
    ]
    assert [e["decision"] for e in tail] == ["deny", "deny", "deny", "allow"]


def test_ingest_refits_and_remove_retrains(engine, fig2):
    engine.ingest_document(DocumentMeta("hr-new", CL.SECRET, frozenset({"HR"})), "bonus scheme")
    names = {eid.name: e for eid, e in engine.experts.items()}
    assert "hr-new" in names["HR Secret"].training_doc_ids
    assert "hr-new" not in names["HR Confidential"].training_doc_ids
    engine.remove_document("hr-new")
    assert all("hr-new" not in e.training_doc_ids for e in engine.experts.values())
    assert engine.audit.tail(2)[0]["action"] == "ingest"


def test_admin_only_mutations(engine):
    with pytest.raises(Forbidden):
        engine.ingest_document(DocumentMeta("x", CL.SECRET, frozenset({"HR"})), "text", actor="alice")
    with pytest.raises(Forbidden):
        engine.remove_document("hr-secret", actor="alice")
    assert "hr-secret" in engine.store


def test_policy_reload_bumps_version(engine, fig2):
    assert engine.reload_policy(fig2) == 2
    assert engine.infer(req("alice", "leave")).policy_version == 2


def test_end_to_end_no_leakage_randomized():
    from randomized import random_text, random_world

    for seed in range(40):
        rng = random.Random(seed)
        world = random_world(rng, min_docs=1)
        snap = world.snapshot
        store = DocumentStore()
        for m, t in world.docs:
            store.ingest(m, t, snap)
        engine = Engine(snap, store)
        for user in snap.users:
            readable = set()
            for m, t in world.docs:
                if can_access_document(user, m, snap):
                    readable |= set(tokenize(t))
            for mode in Mode:
                prompt = random_text(rng, 1, 4)
                try:
                    resp = engine.infer(InferenceRequest(user.id, prompt, mode))
                except NoAuthorizedExperts:
                    continue
                for doc_id in resp.retrieved_doc_ids:
                    assert can_access_document(user, store.lookup(doc_id).meta, snap)
                allowed = readable | {"answer", "ctx", "docs", "according", "to"} | set(map(str, range(10)))
                allowed |= {tok for m, _ in world.docs for tok in tokenize(m.id)}
                # the prompt echo only repeats the caller's own words
                allowed |= set(tokenize(prompt))
                assert set(tokenize(resp.text)) <= allowed
