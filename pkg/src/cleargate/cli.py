"""Operator command line.

Runs against an embedded engine built from the policy/corpus files, or
against a running gateway with ``--remote URL --token TOKEN``.

Exit codes: 0 success, 1 validation or authorization failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import httpx

from cleargate.api.schemas import QueryResponse
from cleargate.audit import AuditLog
from cleargate.errors import ClearGateError, ConfigInvalid, DuplicateId
from cleargate.experts import build_expert_grid, registry_to_json, train_experts
from cleargate.orchestrator import Engine, InferenceRequest, Mode
from cleargate.policy import ClearanceLevel, load_policy, validate_policy
from cleargate.store import DocumentStore, read_corpus, write_corpus

ENV_POLICY = "CLEARGATE_POLICY"
ENV_AUDIT = "CLEARGATE_AUDIT"
ENV_CORPUS = "CLEARGATE_CORPUS"

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class CommandFailed(Exception):
    """Validation/authorization failure reported with exit code 1."""

    def __init__(self, message: str, details: Sequence[str] = (), payload: Any = None) -> None:
        super().__init__(message)
        self.details = list(details)
        self.payload = payload


def _emit(args: argparse.Namespace, payload: Any, lines: Sequence[str]) -> None:
    if args.format == "json":
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        for line in lines:
            print(line)


def _require(value: str | None, flag: str, env: str | None = None) -> str:
    if not value:
        hint = f" (or set {env})" if env else ""
        raise CommandFailed(f"missing {flag}{hint}")
    return value


def _client(args: argparse.Namespace) -> httpx.Client:
    token = _require(args.token, "--token")
    return httpx.Client(base_url=args.remote, headers={"Authorization": f"Bearer {token}"}, timeout=30)


def _check_remote(response) -> Any:
    body = response.json() if response.content else {}
    if response.status_code >= 400:
        raise CommandFailed(f"HTTP {response.status_code}: {body.get('error', 'error')}", body.get("detail", []))
    return body


# -- subcommands --------------------------------------------------------------


def cmd_policy_validate(args: argparse.Namespace) -> int:
    snapshot = load_policy(args.file, strict=False)
    report = validate_policy(snapshot)
    payload = {
        "ok": not report,
        "roles": len(snapshot.role_index),
        "users": len(snapshot.user_index),
        "clearance_levels": len(ClearanceLevel),
        "violations": [{"kind": v.kind, "subject": v.subject, "detail": v.detail} for v in report],
    }
    if report:
        raise CommandFailed(f"{len(report)} violation(s)", [str(v) for v in report], payload)
    _emit(args, payload, [f"OK ({len(snapshot.role_index)} roles, {len(ClearanceLevel)} clearance levels)"])
    return EXIT_OK


def cmd_ingest(args: argparse.Namespace) -> int:
    records = read_corpus(args.jsonl)
    if args.remote:
        with _client(args) as client:
            ids = [_check_remote(client.post("/v1/documents", json=r.to_json()))["id"] for r in records]
    else:
        snapshot = load_policy(_require(args.policy, "--policy", ENV_POLICY))
        store = DocumentStore()
        if args.corpus and Path(args.corpus).exists():
            for rec in read_corpus(args.corpus):
                store.ingest(rec.meta, rec.text, snapshot)
        ids = []
        for rec in records:
            if rec.meta.id in store:
                raise DuplicateId(f"document {rec.meta.id!r} already exists")
            ids.append(store.ingest(rec.meta, rec.text, snapshot).id)
        if args.corpus:
            write_corpus(args.corpus, records, append=True)
    _emit(args, {"ingested": ids}, [f"ingested: {len(ids)}"])
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    snapshot = load_policy(_require(args.policy, "--policy", ENV_POLICY))
    store = DocumentStore()
    if args.corpus:
        for rec in read_corpus(args.corpus):
            store.ingest(rec.meta, rec.text, snapshot)
    experts = train_experts(build_expert_grid(snapshot.role_ids, snapshot), store.documents())
    registry = registry_to_json(experts)
    if args.export:
        Path(args.export).write_text(json.dumps(registry, indent=2) + "\n", encoding="utf-8")
    trained = sum(1 for e in registry if e["training_doc_ids"])
    lines = [f"experts: {len(registry)}", f"trained: {trained}", f"documents: {len(store)}"]
    lines += [
        f"  {e['canonical_name']}: {len(e['training_doc_ids'])} docs, {e['vocabulary_size']} tokens"
        for e in registry
    ]
    _emit(args, {"experts": len(registry), "trained": trained, "registry": registry}, lines)
    return EXIT_OK


def _format_response(body: dict) -> list[str]:
    lines = [f"text: {body['text']}"]
    if body["retrieved_doc_ids"]:
        lines.append("retrieved: " + ", ".join(body["retrieved_doc_ids"]))
    else:
        lines.append("retrieved: (empty context)")
    if body["consulted_experts"]:
        lines.append(
            "experts: " + ", ".join(f"{e['name']} ({e['probability']:.4f})" for e in body["consulted_experts"])
        )
    lines.append(f"policy_version: {body['policy_version']}")
    return lines


def cmd_query(args: argparse.Namespace) -> int:
    mode = Mode.parse(args.mode)
    if args.remote:
        payload = {"prompt": args.prompt, "mode": mode.value, "k": args.k, "top_k_experts": args.top_k_experts}
        with _client(args) as client:
            body = _check_remote(client.post("/v1/query", json=payload))
    else:
        user = _require(args.user, "--user")
        engine = Engine.from_paths(
            _require(args.policy, "--policy", ENV_POLICY), args.corpus or None, args.audit or None
        )
        response = engine.infer(InferenceRequest(user, args.prompt, mode, args.k, args.top_k_experts))
        body = QueryResponse.from_response(response).model_dump()
    _emit(args, body, _format_response(body))
    return EXIT_OK


def cmd_audit_tail(args: argparse.Namespace) -> int:
    if args.remote:
        with _client(args) as client:
            entries = _check_remote(client.get("/v1/audit", params={"limit": args.n}))
    else:
        entries = AuditLog(_require(args.audit, "--audit", ENV_AUDIT)).tail(args.n)
    _emit(args, entries, [json.dumps(e, sort_keys=True) for e in entries])
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    from cleargate.api.server import ServiceConfig, serve

    config = ServiceConfig(
        policy=Path(_require(args.policy, "--policy", ENV_POLICY)),
        corpus=Path(args.corpus) if args.corpus else None,
        audit=Path(args.audit) if args.audit else None,
        host=args.host,
        port=args.port,
    )
    serve(config)
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=["text", "json"], default="text")

    remote = argparse.ArgumentParser(add_help=False)
    remote.add_argument("--remote", metavar="URL", help="talk to a running gateway instead")
    remote.add_argument("--token", help="bearer token for --remote")

    env = os.environ
    policy = argparse.ArgumentParser(add_help=False)
    policy.add_argument("--policy", default=env.get(ENV_POLICY))

    parser = argparse.ArgumentParser(prog="cleargate", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_policy = sub.add_parser("policy", help="policy file operations")
    policy_sub = p_policy.add_subparsers(dest="policy_command", required=True)
    p = policy_sub.add_parser("validate", parents=[common], help="check a policy file")
    p.add_argument("file")
    p.set_defaults(func=cmd_policy_validate)

    p = sub.add_parser("ingest", parents=[common, remote, policy], help="validate and ingest a JSONL corpus")
    p.add_argument("jsonl")
    p.add_argument("--corpus", default=env.get(ENV_CORPUS), help="corpus file to append accepted documents to")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common, policy], help="train the expert grid and summarize it")
    p.add_argument("--corpus", default=env.get(ENV_CORPUS))
    p.add_argument("--export", help="write the expert registry JSON here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("query", parents=[common, remote, policy], help="run one inference request")
    p.add_argument("prompt")
    p.add_argument("--user")
    p.add_argument("--mode", choices=["rag", "moe", "hybrid"], default="rag")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--top-k-experts", type=int, default=2)
    p.add_argument("--corpus", default=env.get(ENV_CORPUS))
    p.add_argument("--audit", default=env.get(ENV_AUDIT))
    p.set_defaults(func=cmd_query)

    p_audit = sub.add_parser("audit", help="audit log inspection")
    audit_sub = p_audit.add_subparsers(dest="audit_command", required=True)
    p = audit_sub.add_parser("tail", parents=[common, remote], help="show the last N audit entries")
    p.add_argument("-n", type=int, default=10)
    p.add_argument("--audit", default=env.get(ENV_AUDIT))
    p.set_defaults(func=cmd_audit_tail)

    p = sub.add_parser("serve", parents=[common, policy], help="run the HTTP gateway")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--corpus", default=env.get(ENV_CORPUS))
    p.add_argument("--audit", default=env.get(ENV_AUDIT))
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if getattr(args, "k", 1) < 1 or getattr(args, "top_k_experts", 1) < 1 or getattr(args, "n", 0) < 0:
        parser.print_usage(sys.stderr)
        print("cleargate: error: counts must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except CommandFailed as exc:
        if args.format == "json" and exc.payload is not None:
            print(json.dumps(exc.payload, indent=2, sort_keys=True))
        print(f"error: {exc}", file=sys.stderr)
        for line in exc.details:
            print(f"  {line}", file=sys.stderr)
        return EXIT_FAIL
    except ConfigInvalid as exc:
        print(f"error: {exc.message}", file=sys.stderr)
        for line in exc.diagnostics:
            print(f"  {line}", file=sys.stderr)
        return EXIT_FAIL
    except ClearGateError as exc:
        print(f"error: {exc.code}: {exc.message}", file=sys.stderr)
        return EXIT_FAIL
    except httpx.HTTPError as exc:
        print(f"error: cannot reach gateway: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
