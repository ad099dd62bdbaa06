"""Request/response bodies for the HTTP gateway."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

from cleargate.orchestrator import InferenceResponse
from cleargate.policy import CLEARANCE_NAMES

ClearanceName = Literal[CLEARANCE_NAMES]  # type: ignore[valid-type]
ModeName = Literal["RagOnly", "MoeOnly", "RagMoe", "rag", "moe", "hybrid"]


class QueryRequest(BaseModel):
    prompt: str
    mode: ModeName = "RagOnly"
    k: int = Field(3, ge=1)
    top_k_experts: int = Field(2, ge=1)
    # optional; when given it must match the authenticated principal
    user_id: Optional[str] = None


class ConsultedExpert(BaseModel):
    name: str
    probability: float


class QueryResponse(BaseModel):
    text: str
    retrieved_doc_ids: list[str]
    consulted_experts: list[ConsultedExpert]
    policy_version: int

    @classmethod
    def from_response(cls, response: InferenceResponse) -> QueryResponse:
        return cls.model_validate(response.to_json())


class DocumentIn(BaseModel):
    id: str = Field(min_length=1)
    clearance: ClearanceName
    roles: list[str] = []
    text: str


class DocumentOut(BaseModel):
    id: str
    clearance: ClearanceName
    roles: list[str]
    text: str


class DocumentAck(BaseModel):
    id: str
    status: str


class Health(BaseModel):
    status: str = "ok"
    policy_version: int
    documents: int
    experts: int


class ReloadAck(BaseModel):
    policy_version: int


class ErrorBody(BaseModel):
    error: str
