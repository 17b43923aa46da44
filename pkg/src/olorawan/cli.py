"""Operator CLI: run scenarios, inspect fronthaul captures, manage policies.

Exit codes are a stable contract: 0 success, 1 runtime or audit failure,
2 usage or validation error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .a1 import A1Client, PolicyStore, PolicyNotFoundError, PolicyValidationError
from .e2 import KpiRecord
from .fronthaul import (
    FronthaulError,
    LORAWAN_SECTION_TYPE,
    decode_ecpri,
    decode_section,
    encode_frame,
    parse_ecpri_header,
    read_capture,
    section_from_dict,
    section_to_dict,
    write_capture,
    CAPTURE_MAGIC,
)
from .netsim import ScenarioError, load_scenario, run_scenario
from .report import load_report, render_report

EXIT_RUNTIME = 1
EXIT_USAGE = 2


@click.group()
@click.version_option(package_name="olorawan", prog_name="olrw")
def main():
    """O-LoRaWAN tools: simulator, fronthaul codec, A1 policies, reports."""


# ---------------------------------------------------------------------------
# sim
# ---------------------------------------------------------------------------


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(),
              help="Scenario JSON file.")
@click.option("--mode", type=click.Choice(["legacy", "modular"]), default=None,
              help="Override the scenario's deployment mode.")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Output directory for the report and logs.")
@click.option("--capture", is_flag=True, help="Write the fronthaul frame capture.")
def sim(scenario_path, mode, seed, out_dir, capture):
    """Run one scenario and write its metrics report."""
    path = Path(scenario_path)
    if not path.exists():
        raise click.UsageError(f"scenario file {path} does not exist")
    try:
        scenario = load_scenario(path)
    except (ScenarioError, json.JSONDecodeError) as exc:
        raise click.UsageError(f"invalid scenario: {exc}")
    if mode is not None:
        scenario = scenario.with_mode(mode)
    if seed is not None:
        scenario = scenario.with_seed(seed)

    result = run_scenario(scenario)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(result.report_json())
    _write_jsonl(out / "as_records.jsonl", result.as_records)
    _write_jsonl(out / "faults.jsonl", result.fault_log)
    _write_jsonl(
        out / "kpi_archive.jsonl",
        [
            {"node_id": k.node_id, "timestamp_ns": k.timestamp_ns, "metrics": k.metrics}
            for k in result.kpi_archive
        ],
    )
    if capture:
        write_capture(out / "capture.olrw", result.capture_frames)
    click.echo(f"report: {out / 'report.json'}")
    if not result.audit_ok:
        trace = out / "audit_trace.json"
        trace.write_text(json.dumps(result.report["audits"], indent=2, sort_keys=True) + "\n")
        click.echo(f"AUDIT FAILURE, trace: {trace}", err=True)
        sys.exit(EXIT_RUNTIME)


def _write_jsonl(path: Path, records) -> None:
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# codec
# ---------------------------------------------------------------------------


@main.group()
def codec():
    """Encode and decode eCPRI/LoRaWAN-section frames."""


def _render_frame(index: int, frame: bytes) -> str:
    header = parse_ecpri_header(frame)
    lines = [
        f"frame {index}: {len(frame)} octets, eCPRI rev {header.protocol_revision}, "
        f"type {header.message_type:#04x}, payload {header.payload_size} octets"
    ]
    msg_type, payload = decode_ecpri(frame)
    if msg_type == LORAWAN_SECTION_TYPE:
        section = decode_section(payload)
        doc = section_to_dict(section)
        direction = "DL" if doc.pop("direction") else "UL"
        lines.append(f"  LoRaWAN section ({direction})")
        for key in sorted(doc):
            value = doc[key]
            if isinstance(value, list) and len(value) > 8:
                value = f"[{len(value)} entries]"
            lines.append(f"    {key}: {value}")
    else:
        lines.append(f"  opaque payload: {payload.hex()}")
    return "\n".join(lines)


@codec.command("decode")
@click.argument("file", type=click.Path())
@click.option("--json", "as_json", is_flag=True, help="Emit JSON instead of text.")
def codec_decode(file, as_json):
    """Pretty-print the frames in a capture file or a single raw frame."""
    path = Path(file)
    if not path.exists():
        raise click.UsageError(f"input file {path} does not exist")
    blob = path.read_bytes()
    try:
        frames = read_capture(path) if blob.startswith(CAPTURE_MAGIC) else [blob]
    except FronthaulError as exc:
        raise click.ClickException(f"capture error: {exc}")
    docs = []
    for i, frame in enumerate(frames):
        try:
            if as_json:
                msg_type, payload = decode_ecpri(frame)
                entry = {"frame": i, "message_type": msg_type}
                if msg_type == LORAWAN_SECTION_TYPE:
                    entry["section"] = section_to_dict(decode_section(payload))
                else:
                    entry["payload_hex"] = payload.hex()
                docs.append(entry)
            else:
                click.echo(_render_frame(i, frame))
        except FronthaulError as exc:
            raise click.ClickException(f"frame {i}: decode error: {exc}")
    if as_json:
        click.echo(json.dumps(docs, indent=2, sort_keys=True))


@codec.command("encode")
@click.argument("jsonfile", type=click.Path())
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write binary output here (capture format for >1 section).")
def codec_encode(jsonfile, out_path):
    """Encode section JSON (one object or {"sections": [...]}) to octets."""
    path = Path(jsonfile)
    if not path.exists():
        raise click.UsageError(f"input file {path} does not exist")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise click.UsageError(f"not valid JSON: {exc}")
    sections = doc["sections"] if isinstance(doc, dict) and "sections" in doc else [doc]
    try:
        frames = [encode_frame(section_from_dict(s)) for s in sections]
    except FronthaulError as exc:
        raise click.UsageError(f"section validation failed: {exc}")
    if out_path is None:
        for frame in frames:
            click.echo(frame.hex())
    elif len(frames) == 1:
        Path(out_path).write_bytes(frames[0])
        click.echo(f"wrote {len(frames[0])} octets to {out_path}")
    else:
        write_capture(out_path, frames)
        click.echo(f"wrote {len(frames)} frames to {out_path}")


# ---------------------------------------------------------------------------
# policy
# ---------------------------------------------------------------------------


class _StoreBackend:
    def __init__(self, path: str):
        self.store = PolicyStore.load(path)

    def put(self, ptype, pid, body):
        policy, created = self.store.put(ptype, pid, body)
        return (201 if created else 200), policy.to_dict()

    def get(self, ptype, pid):
        return 200, self.store.get(ptype, pid).to_dict()

    def delete(self, ptype, pid):
        self.store.delete(ptype, pid)
        return 204, None

    def list_ids(self, ptype):
        return 200, self.store.list_ids(ptype)


class _HttpBackend:
    def __init__(self, url: str):
        self.client = A1Client(url)

    def _unwrap(self, response):
        body = None
        if response.content:
            body = response.json()
        return response.status_code, body

    def put(self, ptype, pid, body):
        return self._unwrap(self.client.put(ptype, pid, body))

    def get(self, ptype, pid):
        return self._unwrap(self.client.get(ptype, pid))

    def delete(self, ptype, pid):
        return self._unwrap(self.client.delete(ptype, pid))

    def list_ids(self, ptype):
        return self._unwrap(self.client.list_ids(ptype))


def _backend(url, store):
    if url and store:
        raise click.UsageError("give either --url or --store, not both")
    if store:
        return _StoreBackend(store)
    if url:
        return _HttpBackend(url)
    raise click.UsageError("need --url, --store, or OLRW_A1_URL in the environment")


def _policy_result(status: int, body) -> None:
    if body is not None:
        click.echo(json.dumps(body, indent=2, sort_keys=True))
    if status == 404:
        raise click.ClickException(f"not found (HTTP {status})")
    if status == 400:
        click.echo(f"validation error (HTTP {status})", err=True)
        sys.exit(EXIT_USAGE)
    if status >= 400:
        raise click.ClickException(f"HTTP {status}")


_policy_opts = [
    click.option("--url", envvar="OLRW_A1_URL", default=None,
                 help="A1 endpoint (default from OLRW_A1_URL)."),
    click.option("--store", "store_path", default=None, type=click.Path(),
                 help="Offline policy store file."),
]


def _with_policy_opts(fn):
    for opt in reversed(_policy_opts):
        fn = opt(fn)
    return fn


@main.group()
def policy():
    """CRUD against the A1 policy interface (HTTP endpoint or offline store)."""


@policy.command("put")
@click.argument("policy_type")
@click.argument("policy_id")
@click.option("--body", "body_text", default=None, help="Inline JSON body.")
@click.option("--body-file", type=click.Path(), default=None, help="JSON body file.")
@_with_policy_opts
def policy_put(policy_type, policy_id, body_text, body_file, url, store_path):
    """Create or replace a policy."""
    if (body_text is None) == (body_file is None):
        raise click.UsageError("give exactly one of --body or --body-file")
    try:
        body = json.loads(body_text if body_text else Path(body_file).read_text())
    except json.JSONDecodeError as exc:
        raise click.UsageError(f"body is not valid JSON: {exc}")
    backend = _backend(url, store_path)
    try:
        status, doc = backend.put(policy_type, policy_id, body)
    except PolicyValidationError as exc:
        click.echo("validation error: " + "; ".join(exc.violations), err=True)
        sys.exit(EXIT_USAGE)
    _policy_result(status, doc)


@policy.command("get")
@click.argument("policy_type")
@click.argument("policy_id")
@_with_policy_opts
def policy_get(policy_type, policy_id, url, store_path):
    backend = _backend(url, store_path)
    try:
        status, doc = backend.get(policy_type, policy_id)
    except PolicyNotFoundError:
        raise click.ClickException("not found")
    _policy_result(status, doc)


@policy.command("delete")
@click.argument("policy_type")
@click.argument("policy_id")
@_with_policy_opts
def policy_delete(policy_type, policy_id, url, store_path):
    backend = _backend(url, store_path)
    try:
        status, doc = backend.delete(policy_type, policy_id)
    except PolicyNotFoundError:
        raise click.ClickException("not found")
    _policy_result(status, doc)
    click.echo("deleted")


@policy.command("list")
@click.argument("policy_type")
@_with_policy_opts
def policy_list(policy_type, url, store_path):
    backend = _backend(url, store_path)
    status, doc = backend.list_ids(policy_type)
    _policy_result(status, doc)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@main.command("report")
@click.option("--report", "report_path", required=True, type=click.Path(),
              help="report.json from a sim run.")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Directory for tables and figures.")
def report_cmd(report_path, out_dir):
    """Render summary tables (CSV) and figures (PNG) from a run report."""
    path = Path(report_path)
    if not path.exists():
        raise click.UsageError(f"report file {path} does not exist")
    try:
        report = load_report(path)
    except json.JSONDecodeError as exc:
        raise click.UsageError(f"report is not valid JSON: {exc}")
    written = render_report(report, out_dir)
    for item in written:
        click.echo(str(item))


if __name__ == "__main__":
    main()
