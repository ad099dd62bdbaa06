from __future__ import annotations

import json

import pytest

from cleargate.policy import ClearanceLevel as CL
from cleargate.policy import User, make_snapshot

FIG2_ROLES = {
    "NormalUser": [],
    "HR": ["NormalUser"],
    "Accounting": ["NormalUser"],
    "IT": ["NormalUser"],
}

FIG2_USERS = [
    User("alice", CL.CONFIDENTIAL, frozenset({"HR"})),
    User("bob", CL.SECRET, frozenset({"Accounting"})),
    User("carol", CL.COSMIC_TOP_SECRET, frozenset({"IT"})),
    User("dave", CL.RESTRICTED, frozenset({"NormalUser"})),
    User("root", CL.COSMIC_TOP_SECRET, frozenset({"HR", "Accounting", "IT"})),
]

TOKENS = {
    "tok-alice": "alice",
    "tok-bob": "bob",
    "tok-carol": "carol",
    "tok-dave": "dave",
    "tok-root": "root",
}


@pytest.fixture
def fig2():
    return make_snapshot(FIG2_ROLES, FIG2_USERS, tokens=TOKENS, admins=frozenset({"root"}))


def policy_json() -> dict:
    return {
        "roles": [{"id": rid, "contains": contains} for rid, contains in FIG2_ROLES.items()],
        "users": [
            {"id": u.id, "clearance": u.clearance.wire, "roles": sorted(u.direct_roles)} for u in FIG2_USERS
        ],
        "tokens": TOKENS,
        "admins": ["root"],
    }


CORPUS = [
    {"id": "hr-secret", "clearance": "secret", "roles": ["HR"], "text": "personnel review zanzibar salary grades"},
    {"id": "hr-restricted", "clearance": "restricted", "roles": ["HR"], "text": "holiday leave policy for personnel"},
    {"id": "acct-conf", "clearance": "confidential", "roles": ["Accounting"], "text": "quarterly budget invoice totals"},
    {"id": "it-secret", "clearance": "secret", "roles": ["IT"], "text": "server patch schedule firewall"},
    {"id": "all-public", "clearance": "not_classified", "roles": ["NormalUser"], "text": "canteen menu and parking"},
]


@pytest.fixture
def policy_file(tmp_path):
    path = tmp_path / "policy.json"
    path.write_text(json.dumps(policy_json(), indent=2))
    return path


@pytest.fixture
def corpus_file(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text("".join(json.dumps(d) + "\n" for d in CORPUS))
    return path


_acceptance_results: list[tuple[str, str, float]] = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "acceptance" in report.keywords:
        _acceptance_results.append((report.head_line, report.outcome.upper(), report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, duration in _acceptance_results:
        terminalreporter.write_line(f"{outcome:<6} {name} ({duration:.2f}s)")
