"""FastAPI front door for an :class:`~cleargate.orchestrator.Engine`."""

from __future__ import annotations

from dataclasses import dataclass

from fastapi import Depends, FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from cleargate import errors
from cleargate.api.schemas import (
    DocumentAck,
    DocumentIn,
    DocumentOut,
    Health,
    QueryRequest,
    QueryResponse,
    ReloadAck,
)
from cleargate.orchestrator import Engine, InferenceRequest, Mode
from cleargate.policy import ClearanceLevel, DocumentMeta

STATUS_CODES: dict[type[errors.ClearGateError], int] = {
    errors.InvalidRequest: 400,
    errors.EmptyPrompt: 400,
    errors.EmptyText: 400,
    errors.EmptyRoleSet: 400,
    errors.DanglingRoleRef: 400,
    errors.ConfigInvalid: 400,
    errors.PolicyInvalid: 400,
    errors.Forbidden: 403,
    errors.UnknownSubject: 403,
    errors.NoAuthorizedExperts: 403,
    errors.NotFoundOrDenied: 404,
    errors.NotFound: 404,
    errors.UnknownResource: 404,
    errors.DuplicateId: 409,
    errors.StorageFailure: 500,
    errors.UntrainedExpert: 500,
    errors.BindFailure: 500,
    errors.ClearGateError: 500,
}


def status_for(exc: errors.ClearGateError) -> int:
    for cls in type(exc).__mro__:
        if cls in STATUS_CODES:
            return STATUS_CODES[cls]
    return 500


@dataclass(frozen=True)
class ApiPrincipal:
    user_id: str


class Unauthenticated(Exception):
    pass


def _bearer(request: Request) -> str | None:
    header = request.headers.get("authorization", "")
    scheme, _, token = header.partition(" ")
    if scheme.lower() != "bearer" or not token.strip():
        return None
    return token.strip()


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="cleargate", version="0.1.0")
    app.state.engine = engine

    def principal(request: Request) -> ApiPrincipal:
        # resolved before the body is validated and before any store access
        token = _bearer(request)
        user_id = engine.snapshot.user_for_token(token) if token else None
        if user_id is None:
            engine.record_unauthenticated(f"{request.method} {request.url.path}")
            raise Unauthenticated()
        return ApiPrincipal(user_id)

    @app.exception_handler(Unauthenticated)
    async def _unauthenticated(request: Request, exc: Unauthenticated) -> JSONResponse:
        return JSONResponse({"error": "Unauthorized"}, status_code=401, headers={"WWW-Authenticate": "Bearer"})

    @app.exception_handler(errors.ClearGateError)
    async def _domain_error(request: Request, exc: errors.ClearGateError) -> JSONResponse:
        return JSONResponse({"error": exc.code}, status_code=status_for(exc))

    @app.exception_handler(RequestValidationError)
    async def _bad_body(request: Request, exc: RequestValidationError) -> JSONResponse:
        detail = [".".join(str(p) for p in e["loc"]) + ": " + e["msg"] for e in exc.errors()]
        return JSONResponse({"error": "InvalidRequest", "detail": detail}, status_code=400)

    @app.get("/v1/healthz", response_model=Health)
    def healthz() -> Health:
        return Health(
            policy_version=engine.policy_version,
            documents=len(engine.store),
            experts=len(engine.experts),
        )

    @app.post("/v1/query", response_model=QueryResponse)
    def query(body: QueryRequest, who: ApiPrincipal = Depends(principal)) -> QueryResponse:
        if body.user_id is not None and body.user_id != who.user_id:
            engine.record_denial(who.user_id, "query", errors.Forbidden.code)
            raise errors.Forbidden("user_id does not match the authenticated principal")
        request = InferenceRequest(who.user_id, body.prompt, Mode.parse(body.mode), body.k, body.top_k_experts)
        return QueryResponse.from_response(engine.infer(request))

    @app.get("/v1/documents/{doc_id}", response_model=DocumentOut)
    def get_document(doc_id: str, who: ApiPrincipal = Depends(principal)) -> DocumentOut:
        doc = engine.get_document(who.user_id, doc_id)
        return DocumentOut(
            id=doc.id,
            clearance=doc.meta.clearance.wire,
            roles=sorted(doc.meta.granted_roles),
            text=doc.text,
        )

    @app.post("/v1/documents", response_model=DocumentAck)
    def ingest(body: DocumentIn, who: ApiPrincipal = Depends(principal)) -> DocumentAck:
        meta = DocumentMeta(body.id, ClearanceLevel.from_wire(body.clearance), frozenset(body.roles))
        doc_id = engine.ingest_document(meta, body.text, actor=who.user_id)
        return DocumentAck(id=doc_id, status="ingested")

    @app.delete("/v1/documents/{doc_id}", response_model=DocumentAck)
    def remove(doc_id: str, who: ApiPrincipal = Depends(principal)) -> DocumentAck:
        engine.remove_document(doc_id, actor=who.user_id)
        return DocumentAck(id=doc_id, status="removed")

    @app.post("/v1/policy/reload", response_model=ReloadAck)
    def reload_policy(who: ApiPrincipal = Depends(principal)) -> ReloadAck:
        return ReloadAck(policy_version=engine.reload_policy(actor=who.user_id))

    @app.get("/v1/audit")
    def audit(limit: int = Query(50, ge=0), who: ApiPrincipal = Depends(principal)) -> list[dict]:
        return engine.read_audit(limit, actor=who.user_id)

    return app
