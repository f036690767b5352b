"""Command-line client for the HTTP service.

By default every command spins up the service in-process and talks to it
through an ASGI test transport, so no server needs to be running; pass
--url (or set TAGNET_URL) to target a live one instead. State-dependent
commands (`trace`, `report`) accept --scenario to run a scenario first in
the same session.

Exit codes: 0 success, 1 a scenario step failed (or another runtime
error), 2 malformed input (templates, records, scripts, scenarios,
periods).
"""

from __future__ import annotations

import json
import sys
from typing import Optional

import click
import httpx

EXIT_CODES = {"parse": 2, "step_failure": 1, "error": 1}


class Api:
    """Thin JSON-over-HTTP client; in-process unless --url is given."""

    def __init__(self, url: Optional[str]) -> None:
        if url:
            self._client = httpx.Client(base_url=url, timeout=60.0)
        else:
            import warnings
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import create_app
            self._client = TestClient(create_app())

    def call(self, method: str, path: str, **kwargs) -> dict:
        try:
            resp = self._client.request(method, path, **kwargs)
        except httpx.HTTPError as e:
            _die("error", f"cannot reach service: {e}")
        try:
            body = resp.json()
        except ValueError:
            _die("error", f"service returned non-JSON ({resp.status_code})")
        if isinstance(body, dict) and "error" in body:
            err = body["error"]
            _die(err.get("kind", "error"), err.get("message", "request failed"))
        if resp.status_code >= 400:
            _die("error", f"service returned {resp.status_code}: {body}")
        return body


def _die(kind: str, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_CODES.get(kind, 1))


def _load_json(path: str, what: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as e:
        _die("error", f"cannot read {what} {path!r}: {e}")
    except json.JSONDecodeError as e:
        _die("parse", f"{what} {path!r} is not valid JSON: {e}")


def _load_bytes(path: str, what: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as e:
        _die("error", f"cannot read {what} {path!r}: {e}")


def _print_groups(groups: list) -> None:
    for g in groups:
        click.echo(g["title"])
        for name, value in g["rows"]:
            click.echo(f"  {name}: {value}")


def _hydrate(api: Api, scenario: Optional[str], seed: Optional[int]) -> None:
    """Run a scenario into the service state for trace/report queries."""
    if scenario is None:
        return
    payload = {"scenario": _load_json(scenario, "scenario")}
    if seed is not None:
        payload["seed"] = seed
    api.call("POST", "/scenario/run", json=payload)


@click.group()
@click.option("--url", envvar="TAGNET_URL", default=None,
              help="Use a running service instead of in-process.")
@click.pass_context
def main(ctx: click.Context, url: Optional[str]) -> None:
    """RFID supply-network platform tools."""
    ctx.obj = Api(url)


@main.group()
def template() -> None:
    """Tag template operations."""


@template.command("validate")
@click.argument("template_file", type=click.Path())
@click.option("--capacity", type=int, default=256, show_default=True,
              help="Tag capacity for the fit check; 0 skips it.")
@click.pass_obj
def template_validate(api: Api, template_file: str, capacity: int) -> None:
    """Check a template document against every invariant."""
    doc = _load_json(template_file, "template")
    body = api.call("POST", "/template/validate",
                    json={"template": doc, "capacity": capacity or None})
    if body["valid"]:
        click.echo("ok")
        return
    for v in body["violations"]:
        click.echo(f"{v['code']}: {v['message']}", err=True)
    sys.exit(2)


@template.command("encode")
@click.argument("template_file", type=click.Path())
@click.option("--record", "record_file", required=True, type=click.Path(),
              help="JSON file with the field values.")
@click.option("--uid", required=True, type=int, help="Tag UID (64-bit).")
@click.option("--out", type=click.Path(), default=None,
              help="Write the binary image here (default: stdout as hex).")
@click.option("--block-size", type=int, default=4, show_default=True)
@click.option("--block-count", type=int, default=64, show_default=True)
@click.pass_obj
def template_encode(api: Api, template_file: str, record_file: str, uid: int,
                    out: Optional[str], block_size: int, block_count: int) -> None:
    """Encode a record onto a fresh tag image."""
    body = api.call("POST", "/template/encode", json={
        "template": _load_json(template_file, "template"),
        "record": _load_json(record_file, "record"),
        "uid": uid, "block_size": block_size, "block_count": block_count})
    if out:
        with open(out, "wb") as fh:
            fh.write(bytes.fromhex(body["image_hex"]))
        click.echo(f"wrote {body['capacity']} bytes "
                   f"(payload {body['payload_len']}) to {out}")
    else:
        click.echo(body["image_hex"])


@template.command("decode")
@click.argument("template_file", type=click.Path())
@click.option("--image", "image_file", required=True, type=click.Path(),
              help="Binary tag image to decode.")
@click.option("--uid", type=int, default=0)
@click.option("--block-size", type=int, default=4, show_default=True)
@click.pass_obj
def template_decode(api: Api, template_file: str, image_file: str, uid: int,
                    block_size: int) -> None:
    """Decode a tag image back into field values (JSON on stdout)."""
    body = api.call("POST", "/template/decode", json={
        "template": _load_json(template_file, "template"),
        "image_hex": _load_bytes(image_file, "image").hex(),
        "uid": uid, "block_size": block_size})
    click.echo(json.dumps(body["record"], indent=2, sort_keys=True))


@template.command("show")
@click.argument("template_file", type=click.Path())
@click.option("--record", "record_file", required=True, type=click.Path())
@click.pass_obj
def template_show(api: Api, template_file: str, record_file: str) -> None:
    """Render a record under its visual groups."""
    body = api.call("POST", "/template/show", json={
        "template": _load_json(template_file, "template"),
        "record": _load_json(record_file, "record")})
    _print_groups(body["groups"])


@main.group()
def tag() -> None:
    """Raw tag image operations."""


@tag.command("dump")
@click.option("--image", "image_file", required=True, type=click.Path(),
              help="Binary tag image.")
@click.option("--template", "template_files", multiple=True, type=click.Path(),
              help="Candidate template documents (repeatable).")
@click.option("--uid", type=int, default=0)
@click.option("--block-size", type=int, default=4, show_default=True)
@click.pass_obj
def tag_dump(api: Api, image_file: str, template_files: tuple, uid: int,
             block_size: int) -> None:
    """Hex-dump a tag image; decode it if a matching template is given."""
    body = api.call("POST", "/tag/dump", json={
        "image_hex": _load_bytes(image_file, "image").hex(),
        "uid": uid, "block_size": block_size,
        "templates": [_load_json(p, "template") for p in template_files]})
    h = body["header"]
    click.echo(f"template_id={h['template_id']} version={h['version']} "
               f"payload_len={h['payload_len']}")
    for i, block in enumerate(body["blocks"]):
        click.echo(f"{i:4d}  {block}")
    if body.get("record") is not None:
        click.echo(f"decoded with {body['template_name']}:")
        _print_groups(body["groups"])


@main.group()
def gate() -> None:
    """Control gate operations."""


@gate.command("run")
@click.option("--script", "script_file", required=True, type=click.Path(),
              help="Rule script to load.")
@click.option("--tier", default="MCCG", show_default=True,
              type=click.Choice(["LCCG", "MCCG", "HCCG"]))
@click.option("--template", "template_files", multiple=True, type=click.Path(),
              help="Templates whose fields the script may reference.")
@click.pass_obj
def gate_run(api: Api, script_file: str, tier: str, template_files: tuple) -> None:
    """Boot a gate with a script and report it operational."""
    try:
        script = _load_bytes(script_file, "script").decode("utf-8")
    except UnicodeDecodeError as e:
        _die("parse", f"script {script_file!r} is not UTF-8: {e}")
    body = api.call("POST", "/gate/run", json={
        "script": script, "tier": tier,
        "templates": [_load_json(p, "template") for p in template_files]})
    click.echo(f"{body['tier']} gate up, {body['rules']} rule(s) loaded, "
               f"status=0x{body['status_register']:04X}")


@main.command("trace")
@click.argument("tag_id", type=int)
@click.option("--json", "as_json", is_flag=True, help="Emit the tree as JSON.")
@click.option("--max-depth", type=int, default=32, show_default=True)
@click.option("--scenario", "scenario_file", type=click.Path(), default=None,
              help="Run this scenario first and trace inside its world.")
@click.option("--seed", type=int, default=None)
@click.pass_obj
def trace_cmd(api: Api, tag_id: int, as_json: bool, max_depth: int,
              scenario_file: Optional[str], seed: Optional[int]) -> None:
    """Expand a tag id into its component tree."""
    _hydrate(api, scenario_file, seed)
    body = api.call("GET", f"/trace/{tag_id}", params={"max_depth": max_depth})
    if as_json:
        click.echo(json.dumps(body["tree"], indent=2, sort_keys=True))
    else:
        click.echo(body["text"])


@main.group()
def scenario() -> None:
    """Scenario operations."""


@scenario.command("run")
@click.argument("scenario_file", type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the file's seed.")
@click.option("--log", "log_file", type=click.Path(), default=None,
              help="Write the event log here (JSON lines).")
@click.pass_obj
def scenario_run(api: Api, scenario_file: str, seed: Optional[int],
                 log_file: Optional[str]) -> None:
    """Run a scenario file and print the summary."""
    payload = {"scenario": _load_json(scenario_file, "scenario")}
    if seed is not None:
        payload["seed"] = seed
    body = api.call("POST", "/scenario/run", json=payload)
    if log_file:
        with open(log_file, "w", encoding="utf-8") as fh:
            fh.write("".join(line + "\n" for line in body["log"]))
    for key in sorted(body["summary"]):
        click.echo(f"{key}: {body['summary'][key]}")


@main.command("report")
@click.option("--period", required=True,
              help="Epoch-second half-open interval, e.g. 1000..2000.")
@click.option("--scenario", "scenario_file", type=click.Path(), default=None,
              help="Run this scenario first and report on its world.")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None,
              help="Write the CSV here instead of stdout.")
@click.pass_obj
def report_cmd(api: Api, period: str, scenario_file: Optional[str],
               seed: Optional[int], out: Optional[str]) -> None:
    """Per-enterprise state and movement counts as CSV."""
    try:
        a, b = period.split("..", 1)
        start, end = int(a), int(b)
    except ValueError:
        _die("parse", f"period must look like A..B, got {period!r}")
    _hydrate(api, scenario_file, seed)
    body = api.call("GET", "/report", params={"start": start, "end": end})
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(body["csv"])
        click.echo(f"wrote {len(body['rows'])} rows to {out}")
    else:
        click.echo(body["csv"], nl=False)


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host: str, port: int) -> None:
    """Run the HTTP service (for --url / TAGNET_URL clients)."""
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
