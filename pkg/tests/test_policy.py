import itertools
import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cleargate.errors import ConfigInvalid, PolicyInvalid, UnknownSubject
from cleargate.policy import (
    AccessDecision,
    ClearanceLevel as CL,
    DocumentMeta,
    Reason,
    User,
    can_access_document,
    can_consult_expert,
    dominates,
    effective_roles,
    load_policy,
    make_snapshot,
    parse_policy,
    validate_policy,
)

from randomized import naive_allows, naive_closure, random_world

levels = st.sampled_from(list(CL))


def test_five_levels_with_fixed_ordinals():
    assert [(lvl.wire, int(lvl)) for lvl in CL] == [
        ("not_classified", 0),
        ("restricted", 1),
        ("confidential", 2),
        ("secret", 3),
        ("cosmic_top_secret", 4),
    ]
    for lvl in CL:
        assert CL.from_wire(lvl.wire) is lvl


@pytest.mark.parametrize(
    "a, b, expected",
    [
        (CL.SECRET, CL.CONFIDENTIAL, True),
        (CL.CONFIDENTIAL, CL.SECRET, False),
        (CL.RESTRICTED, CL.RESTRICTED, True),
    ],
)
def test_dominates_examples(a, b, expected):
    assert dominates(a, b) is expected


@given(levels, levels)
def test_dominance_is_a_total_order(a, b):
    outcomes = [
        dominates(a, b) and not dominates(b, a),
        dominates(b, a) and not dominates(a, b),
        a == b,
    ]
    assert outcomes.count(True) == 1


def test_effective_roles_follow_containment(fig2):
    alice = fig2.get_user("alice")
    assert effective_roles(alice, fig2) == {"HR", "NormalUser"}
    assert effective_roles(fig2.get_user("dave"), fig2) == {"NormalUser"}
    assert effective_roles(alice, fig2) >= alice.direct_roles


def test_effective_roles_rejects_cycles():
    snap = make_snapshot({"A": ["B"], "B": ["A"]}, [User("u", CL.SECRET, frozenset({"A"}))])
    with pytest.raises(PolicyInvalid):
        effective_roles(snap.get_user("u"), snap)


def test_effective_roles_unknown_user(fig2):
    with pytest.raises(UnknownSubject):
        effective_roles(User("ghost", CL.SECRET, frozenset({"HR"})), fig2)


def test_document_decisions(fig2):
    alice = fig2.get_user("alice")
    secret_hr = DocumentMeta("d", CL.SECRET, frozenset({"HR"}))
    assert can_access_document(alice, secret_hr, fig2) == AccessDecision(False, Reason.CLEARANCE_INSUFFICIENT)

    root = fig2.get_user("root")
    public_hr = DocumentMeta("p", CL.NOT_CLASSIFIED, frozenset({"HR"}))
    assert can_access_document(root, public_hr, fig2) == AccessDecision(True, Reason.GRANTED)


def test_role_grant_is_independently_necessary(fig2):
    bob = fig2.get_user("bob")  # Secret, Accounting
    doc = DocumentMeta("d", CL.RESTRICTED, frozenset({"HR"}))
    # the two-conjunct rule, evaluated by hand: clearance passes, role closure misses HR
    assert dominates(bob.clearance, doc.clearance)
    assert not naive_allows(fig2, bob, doc.clearance, doc.granted_roles)
    assert can_access_document(bob, doc, fig2) == AccessDecision(False, Reason.NO_ROLE_GRANT)


def test_clearance_is_reported_before_role(fig2):
    dave = fig2.get_user("dave")  # Restricted, NormalUser
    doc = DocumentMeta("d", CL.SECRET, frozenset({"IT"}))
    assert can_access_document(dave, doc, fig2).reason is Reason.CLEARANCE_INSUFFICIENT


def test_document_with_unknown_subject_or_role(fig2):
    ghost = User("ghost", CL.SECRET, frozenset({"HR"}))
    doc = DocumentMeta("d", CL.RESTRICTED, frozenset({"HR"}))
    assert can_access_document(ghost, doc, fig2).reason is Reason.UNKNOWN_SUBJECT
    dangling = DocumentMeta("d", CL.RESTRICTED, frozenset({"Ops"}))
    assert can_access_document(fig2.get_user("root"), dangling, fig2).reason is Reason.UNKNOWN_RESOURCE


def test_access_decision_invariant():
    with pytest.raises(ValueError):
        AccessDecision(True, Reason.NO_ROLE_GRANT)
    with pytest.raises(ValueError):
        AccessDecision(False, Reason.GRANTED)


def test_consult_expert_examples(fig2):
    alice = fig2.get_user("alice")
    assert can_consult_expert(alice, "HR", CL.SECRET, fig2).reason is Reason.CLEARANCE_INSUFFICIENT
    assert can_consult_expert(alice, "HR", CL.CONFIDENTIAL, fig2).allowed


def test_consult_expert_grid_enumeration_flat_roles():
    snap = make_snapshot(
        {"HR": [], "Accounting": [], "NormalUser": [], "IT": []},
        [User("it", CL.COSMIC_TOP_SECRET, frozenset({"IT"}))],
    )
    user = snap.get_user("it")
    assert can_consult_expert(user, "HR", CL.NOT_CLASSIFIED, snap).reason is Reason.NO_ROLE_GRANT
    allowed = {
        (role, lvl)
        for role in snap.role_ids
        for lvl in CL
        if can_consult_expert(user, role, lvl, snap).allowed
    }
    assert allowed == {("IT", lvl) for lvl in CL}


def test_consult_expert_grid_with_fig2_hierarchy(fig2):
    carol = fig2.get_user("carol")  # CTS, IT (IT contains NormalUser)
    allowed = {(r, lvl) for r in fig2.role_ids for lvl in CL if can_consult_expert(carol, r, lvl, fig2).allowed}
    assert allowed == {(r, lvl) for r in ("IT", "NormalUser") for lvl in CL}
    assert can_consult_expert(carol, "Ops", CL.NOT_CLASSIFIED, fig2).reason is Reason.UNKNOWN_RESOURCE


# -- validation -----------------------------------------------------------------


def test_fig2_policy_is_valid(fig2):
    assert validate_policy(fig2) == []


def test_dangling_role_reported_once():
    snap = make_snapshot({"HR": []}, [User("u", CL.SECRET, frozenset({"Ops"}))])
    report = validate_policy(snap)
    assert [v.kind for v in report] == ["DanglingRoleRef"]


def test_document_without_grants_is_legal(fig2):
    snap = fig2.replace(documents=(DocumentMeta("d", CL.SECRET, frozenset()),))
    assert validate_policy(snap) == []


def test_validation_lists_every_violation():
    snap = make_snapshot(
        {"A": ["B"], "B": ["A"], "C": ["Nope"]},
        [User("u", CL.SECRET, frozenset()), User("u", CL.SECRET, frozenset({"A"}))],
        tokens={"t": "missing"},
    )
    kinds = sorted(v.kind for v in validate_policy(snap))
    assert kinds == ["DanglingRoleRef", "DanglingUserRef", "DuplicateId", "EmptyRoleSet", "RoleCycle"]


def test_policy_file_round_trip(policy_file, fig2):
    snap = load_policy(policy_file)
    assert snap.version == 1
    assert {u.id: (u.clearance, u.direct_roles) for u in snap.users} == {
        u.id: (u.clearance, u.direct_roles) for u in fig2.users
    }
    assert snap.user_for_token("tok-alice") == "alice"


def test_malformed_policy_reports_line(tmp_path):
    path = tmp_path / "p.json"
    path.write_text('{\n  "roles": [\n    {"id": "HR",}\n  ]\n}')
    with pytest.raises(ConfigInvalid) as info:
        load_policy(path)
    assert info.value.diagnostics[0].startswith("line 3")


def test_bad_field_reports_path():
    with pytest.raises(ConfigInvalid) as info:
        parse_policy({"roles": [{"id": "HR"}], "users": [{"id": "u", "clearance": "top", "roles": ["HR"]}]})
    assert info.value.diagnostics == [
        "users[0].clearance: expected one of not_classified, restricted, confidential, secret, cosmic_top_secret"
    ]


def test_strict_load_rejects_cycles(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps({"roles": [{"id": "A", "contains": ["A"]}], "users": []}))
    with pytest.raises(ConfigInvalid):
        load_policy(path)
    assert load_policy(path, strict=False).role_ids == {"A"}


# -- properties -----------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32))
def test_brute_force_equivalence(seed):
    rng = random.Random(seed)
    world = random_world(rng)
    snap = world.snapshot
    for user in snap.users:
        assert effective_roles(user, snap) == naive_closure(snap, user.direct_roles)
        for meta, _ in world.docs:
            decision = can_access_document(user, meta, snap)
            assert decision.allowed == naive_allows(snap, user, meta.clearance, meta.granted_roles)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32))
def test_monotone_under_clearance_elevation(seed):
    rng = random.Random(seed)
    world = random_world(rng)
    snap = world.snapshot
    for user in snap.users:
        for higher in CL:
            if not dominates(higher, user.clearance):
                continue
            elevated = User(user.id, higher, user.direct_roles)
            for meta, _ in world.docs:
                if can_access_document(user, meta, snap):
                    assert can_access_document(elevated, meta, snap)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.data())
def test_closure_never_shrinks_when_edge_added(seed, data):
    rng = random.Random(seed)
    snap = random_world(rng, max_docs=0).snapshot
    ids = sorted(snap.role_ids)
    # adding i -> j with j < i keeps the generator's acyclic ordering
    i = data.draw(st.integers(0, len(ids) - 1))
    j = data.draw(st.integers(0, len(ids) - 1))
    if j >= i:
        return
    roles = {r.id: set(r.contains) for r in snap.roles}
    roles[f"R{i}"].add(f"R{j}")
    grown = make_snapshot(roles, snap.users)
    for user in snap.users:
        assert effective_roles(user, snap) <= effective_roles(user, grown)


def test_decisions_are_pure(fig2):
    alice = fig2.get_user("alice")
    doc = DocumentMeta("d", CL.RESTRICTED, frozenset({"HR"}))
    first = can_access_document(alice, doc, fig2)
    assert all(can_access_document(alice, doc, fig2) == first for _ in range(50))


def test_all_pairs_exhaustive():
    pairs = list(itertools.product(CL, CL))
    assert len(pairs) == 25
    for a, b in pairs:
        assert dominates(a, b) == (int(a) >= int(b))
