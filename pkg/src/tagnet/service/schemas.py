"""Request/response bodies for the HTTP surface."""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field


class ViolationModel(BaseModel):
    code: str
    subject: str
    message: str


class TemplateValidateRequest(BaseModel):
    template: dict
    capacity: Optional[int] = 256  # null skips the fit check


class TemplateValidateResponse(BaseModel):
    valid: bool
    violations: list[ViolationModel] = Field(default_factory=list)


class EncodeRequest(BaseModel):
    template: dict
    record: dict
    uid: int
    block_size: int = 4
    block_count: int = 64


class EncodeResponse(BaseModel):
    image_hex: str
    payload_len: int
    capacity: int


class DecodeRequest(BaseModel):
    template: dict
    image_hex: str
    uid: int = 0
    block_size: int = 4


class DecodeResponse(BaseModel):
    record: dict


class GroupModel(BaseModel):
    id: int
    title: str
    rows: list[list[str]]  # [field name, rendered value]


class ShowRequest(BaseModel):
    template: dict
    record: dict


class ShowResponse(BaseModel):
    groups: list[GroupModel]


class TagDumpRequest(BaseModel):
    image_hex: str
    uid: int = 0
    block_size: int = 4
    templates: list[dict] = Field(default_factory=list)


class TagDumpResponse(BaseModel):
    header: dict
    blocks: list[str]
    template_name: Optional[str] = None
    record: Optional[dict] = None
    groups: Optional[list[GroupModel]] = None


class GateRunRequest(BaseModel):
    script: str
    tier: str = "MCCG"
    templates: list[dict] = Field(default_factory=list)


class GateRunResponse(BaseModel):
    tier: str
    rules: int
    status_register: int


class ScenarioRunRequest(BaseModel):
    scenario: dict
    seed: Optional[int] = None


class ScenarioRunResponse(BaseModel):
    summary: dict
    log: list[str]


class TraceStatelessRequest(BaseModel):
    records: list[dict]
    tag_id: int
    max_depth: int = 32


class TraceResponse(BaseModel):
    tag_id: int
    stats: dict
    tree: dict
    text: str


class ReportRowModel(BaseModel):
    enterprise: str
    state: str
    count: int
    period_start: int
    period_end: int


class ReportResponse(BaseModel):
    rows: list[ReportRowModel]
    csv: str


class ErrorDetail(BaseModel):
    kind: str  # parse | step_failure | error
    message: str
    extra: dict[str, Any] = Field(default_factory=dict)


class ErrorEnvelope(BaseModel):
    error: ErrorDetail
