"""HTTP face of the platform: stateless codec/gate/trace operations plus a
stateful scenario slot.

POST /scenario/run keeps the finished world in the application state, so
follow-up GET /trace/{tag_id} and GET /report queries work against it the
way an operator console would. Everything else is a pure function of the
request body.

Every failure is an `{"error": {"kind", "message", "extra"}}` envelope;
`kind` is `parse` for malformed inputs, `step_failure` for a scenario that
halted mid-run, `error` otherwise. Clients map kinds to exit codes.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..gate import Gate, GateTier, REG_STATUS, TIER_PROFILES
from ..gatescript import GateScriptError
from ..scenario import (RunResult, ScenarioError, StepFailure, parse_scenario,
                        run_scenario)
from ..tagcodec import (TagCodecError, TagImage, TemplateSyntaxError,
                        decode_record, encode_record, layout_groups,
                        parse_header, template_from_dict, validate_template)
from ..trace import (CycleDetected, TraceError, TraceRecord, TraceRegistry,
                     UnknownTag, render_tree, trace, tree_to_dict)
from ..enterprise import corporate_report, report_to_csv
from ..clock import SimClock
from . import schemas as S


class ApiError(Exception):
    def __init__(self, status: int, kind: str, message: str, **extra) -> None:
        super().__init__(message)
        self.status = status
        self.kind = kind
        self.message = message
        self.extra = extra


def _template(doc: dict, capacity=None):
    """Parse + validate a template document or raise a parse ApiError."""
    try:
        t = template_from_dict(doc)
    except TemplateSyntaxError as e:
        raise ApiError(422, "parse", f"bad template: {e}") from e
    violations = validate_template(t, capacity=capacity)
    if violations:
        raise ApiError(422, "parse", f"bad template: {violations[0].message}")
    return t


def _image(req) -> TagImage:
    try:
        data = bytearray.fromhex(req.image_hex)
    except ValueError as e:
        raise ApiError(422, "parse", f"image_hex is not hex: {e}") from e
    if req.block_size <= 0 or len(data) % req.block_size:
        raise ApiError(422, "parse", "image length must be whole blocks")
    return TagImage(uid=req.uid, block_size=req.block_size,
                    block_count=len(data) // req.block_size, data=data)


def _group_models(views) -> list[S.GroupModel]:
    return [S.GroupModel(id=v.group_id, title=v.title,
                         rows=[[n, val] for n, val in v.rows]) for v in views]


def create_app() -> FastAPI:
    app = FastAPI(title="tagnet", version=__version__)
    state: dict = {"run": None}

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError) -> JSONResponse:
        body = S.ErrorEnvelope(error=S.ErrorDetail(
            kind=exc.kind, message=exc.message, extra=exc.extra))
        return JSONResponse(status_code=exc.status, content=body.model_dump())

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/template/validate", response_model=S.TemplateValidateResponse)
    def template_validate(req: S.TemplateValidateRequest) -> S.TemplateValidateResponse:
        try:
            t = template_from_dict(req.template)
        except TemplateSyntaxError as e:
            raise ApiError(422, "parse", f"bad template: {e}") from e
        violations = validate_template(t, capacity=req.capacity)
        return S.TemplateValidateResponse(
            valid=not violations,
            violations=[S.ViolationModel(code=v.code, subject=v.subject,
                                         message=v.message) for v in violations])

    @app.post("/template/encode", response_model=S.EncodeResponse)
    def template_encode(req: S.EncodeRequest) -> S.EncodeResponse:
        t = _template(req.template, capacity=req.block_size * req.block_count)
        try:
            img = encode_record(t, req.record, req.uid,
                                block_size=req.block_size,
                                block_count=req.block_count)
        except (TagCodecError, ValueError) as e:
            raise ApiError(422, "parse", f"cannot encode: {e}") from e
        return S.EncodeResponse(image_hex=bytes(img.data).hex(),
                                payload_len=t.payload_size(),
                                capacity=img.capacity)

    @app.post("/template/decode", response_model=S.DecodeResponse)
    def template_decode(req: S.DecodeRequest) -> S.DecodeResponse:
        t = _template(req.template)
        img = _image(req)
        try:
            record = decode_record(t, img)
        except TagCodecError as e:
            raise ApiError(422, "parse", f"cannot decode: {e}") from e
        return S.DecodeResponse(record=record)

    @app.post("/template/show", response_model=S.ShowResponse)
    def template_show(req: S.ShowRequest) -> S.ShowResponse:
        t = _template(req.template)
        try:
            views = layout_groups(t, req.record)
        except TagCodecError as e:
            raise ApiError(422, "parse", f"record does not fit template: {e}") from e
        return S.ShowResponse(groups=_group_models(views))

    @app.post("/tag/dump", response_model=S.TagDumpResponse)
    def tag_dump(req: S.TagDumpRequest) -> S.TagDumpResponse:
        img = _image(req)
        blocks = [bytes(img.read_blocks(i, 1)).hex() for i in range(img.block_count)]
        try:
            template_id, version, payload_len = parse_header(bytes(img.data))
        except TagCodecError as e:
            raise ApiError(422, "parse", f"bad tag header: {e}") from e
        header = {"template_id": template_id, "version": version,
                  "payload_len": payload_len}
        resp = S.TagDumpResponse(header=header, blocks=blocks)
        for doc in req.templates:
            t = _template(doc)
            if t.template_id != template_id or t.version != version:
                continue
            try:
                record = decode_record(t, img)
            except TagCodecError as e:
                raise ApiError(422, "parse", f"cannot decode: {e}") from e
            resp.template_name = t.name
            resp.record = record
            resp.groups = _group_models(layout_groups(t, record))
            break
        return resp

    @app.post("/gate/run", response_model=S.GateRunResponse)
    def gate_run(req: S.GateRunRequest) -> S.GateRunResponse:
        if req.tier not in GateTier.__members__:
            raise ApiError(422, "parse", f"unknown tier {req.tier!r}")
        tier = GateTier[req.tier]
        templates = {}
        for doc in req.templates:
            t = _template(doc)
            templates[t.template_id] = t
        gate = Gate(gate_id="cli", tier=tier, slave_addr=1, clock=SimClock(),
                    templates=templates)
        try:
            rules = gate.load_script(req.script)
        except GateScriptError as e:
            raise ApiError(422, "parse", f"bad script: {e}") from e
        return S.GateRunResponse(tier=req.tier, rules=rules,
                                 status_register=gate.registers().read_register(REG_STATUS))

    @app.post("/scenario/run", response_model=S.ScenarioRunResponse)
    def scenario_run(req: S.ScenarioRunRequest) -> S.ScenarioRunResponse:
        try:
            scenario = parse_scenario(req.scenario)
        except ScenarioError as e:
            extra = {"step_index": e.step_index} if hasattr(e, "step_index") else {}
            raise ApiError(422, "parse", str(e), **extra) from e
        if req.seed is not None:
            scenario.seed = req.seed
        try:
            result = run_scenario(scenario)
        except StepFailure as e:
            raise ApiError(409, "step_failure", str(e),
                           step_index=e.step_index, op=e.op) from e
        state["run"] = result
        return S.ScenarioRunResponse(summary=result.summary,
                                     log=result.log.dump().splitlines())

    def _current_run() -> RunResult:
        if state["run"] is None:
            raise ApiError(409, "error", "no scenario has been run yet")
        return state["run"]

    def _trace_response(registry: TraceRegistry, tag_id: int, max_depth: int) -> S.TraceResponse:
        try:
            tree = trace(registry, tag_id, max_depth=max_depth)
        except UnknownTag as e:
            raise ApiError(404, "error", str(e)) from e
        except CycleDetected as e:
            raise ApiError(409, "error", f"component cycle: {e}",
                           path=list(e.path)) from e
        return S.TraceResponse(tag_id=tag_id, stats=tree.stats(),
                               tree=tree_to_dict(tree), text=render_tree(tree))

    @app.get("/trace/{tag_id}", response_model=S.TraceResponse)
    def trace_current(tag_id: int, max_depth: int = 32) -> S.TraceResponse:
        return _trace_response(_current_run().world.registry, tag_id, max_depth)

    @app.post("/trace", response_model=S.TraceResponse)
    def trace_stateless(req: S.TraceStatelessRequest) -> S.TraceResponse:
        registry = TraceRegistry()
        for i, r in enumerate(req.records):
            try:
                registry.register(TraceRecord(
                    tag_id=r["tag_id"], tag_type=r["tag_type"],
                    components=tuple(r.get("components", ())),
                    enterprise=r.get("enterprise")))
            except (KeyError, TypeError, TraceError) as e:
                raise ApiError(422, "parse", f"records[{i}]: {e}") from e
        return _trace_response(registry, req.tag_id, req.max_depth)

    @app.get("/report", response_model=S.ReportResponse)
    def report(start: int, end: int) -> S.ReportResponse:
        if end < start:
            raise ApiError(422, "parse", "period end before start")
        run = _current_run()
        rows = corporate_report(run.world.corp, (start, end))
        return S.ReportResponse(
            rows=[S.ReportRowModel(enterprise=r.enterprise, state=r.state,
                                   count=r.count, period_start=r.period_start,
                                   period_end=r.period_end) for r in rows],
            csv=report_to_csv(rows))

    return app
