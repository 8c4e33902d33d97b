"""Parse access-log and SSH-log files and merge them into the event store.

Access log: space-delimited 8-field lines,

    <time> <ip> <identity> <bucket> <op> <key|-> <status> "<request uri>"

with identity encoded `-` or `acct:<account-id>/<username>` and the object
key percent-encoded so it can never split the line. SSH log: one JSON object
per line with keys t, ip, user, pw.
"""

from __future__ import annotations

import json
import re
import urllib.parse
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .model import (
    AccessEvent,
    EventStore,
    Identity,
    OperationKind,
    Outcome,
    SshAttempt,
)


class MalformedLine(ValueError):
    """A log line that cannot be parsed; skipped and counted, never fatal."""

    def __init__(self, reason: str, position: int = 0):
        super().__init__(f"line {position}: {reason}")
        self.position = position
        self.reason = reason


_ACCESS_RE = re.compile(
    r"^(\d+) (\S+) (\S+) (\S+) (\S+) (\S+) (\S+) \"([^\"]*)\"$"
)


def format_access_line(event: AccessEvent) -> str:
    key = urllib.parse.quote(event.object_key, safe="/._-") if event.object_key else "-"
    return (
        f"{event.time} {event.ip} {event.identity.encode()} {event.bucket} "
        f"{event.operation.token} {key} {event.outcome.status} \"{event.request_uri}\""
    )


def parse_access_line(line: str, position: int = 0) -> AccessEvent:
    """Parse one access-log line.

    Unknown operation tokens still yield an event: the operation is preserved
    at the front of the request URI and the outcome becomes an ErrorOther
    carrying the original status.
    """
    line = line.rstrip("\n")
    if not line.strip():
        raise MalformedLine("empty line", position)
    m = _ACCESS_RE.match(line)
    if m is None:
        raise MalformedLine("does not match the 8-field access format", position)
    ts, ip, ident, bucket, op_token, key, status, uri = m.groups()
    try:
        identity = Identity.decode(ident)
    except ValueError as exc:
        raise MalformedLine(str(exc), position) from exc

    object_key = urllib.parse.unquote(key) if key != "-" else None
    try:
        operation = OperationKind.from_token(op_token)
    except KeyError:
        return AccessEvent(
            time=int(ts),
            ip=ip,
            identity=identity,
            bucket=bucket,
            operation=OperationKind.CHECK_EXISTS,
            object_key=None,
            outcome=Outcome.other(f"unknown-op-{status}"),
            request_uri=f"{op_token} {uri}",
        )
    try:
        return AccessEvent(
            time=int(ts),
            ip=ip,
            identity=identity,
            bucket=bucket,
            operation=operation,
            object_key=object_key,
            outcome=Outcome.from_status(status),
            request_uri=uri,
        )
    except ValueError as exc:
        raise MalformedLine(str(exc), position) from exc


def format_ssh_line(attempt: SshAttempt) -> str:
    return json.dumps(attempt.to_dict(), sort_keys=True)


def parse_ssh_line(line: str, position: int = 0) -> SshAttempt:
    line = line.strip()
    if not line:
        raise MalformedLine("empty line", position)
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedLine(f"bad json: {exc.msg}", position) from exc
    if not isinstance(doc, dict):
        raise MalformedLine("ssh record is not an object", position)
    missing = {"t", "ip", "user", "pw"} - doc.keys()
    if missing:
        raise MalformedLine(f"missing fields: {sorted(missing)}", position)
    try:
        return SshAttempt.from_dict(doc)
    except (ValueError, TypeError) as exc:
        raise MalformedLine(str(exc), position) from exc


@dataclass
class IngestReport:
    """Counters from one ingestion pass."""

    parsed: int = 0
    merged: int = 0
    duplicates: int = 0
    malformed: int = 0
    out_of_order_streams: int = 0
    malformed_positions: list[tuple[str, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "parsed": self.parsed,
            "merged": self.merged,
            "duplicates": self.duplicates,
            "malformed": self.malformed,
            "out_of_order_streams": self.out_of_order_streams,
        }


def _iter_lines(stream: str | Iterable[str]) -> Iterator[str]:
    if isinstance(stream, str):
        with open(stream, "r", encoding="utf-8") as fh:
            yield from fh
    else:
        yield from stream


def read_access_stream(
    stream: str | Iterable[str], report: IngestReport, label: str = "<stream>"
) -> list[AccessEvent]:
    """Parse one access log, tolerating and counting malformed lines."""
    events: list[AccessEvent] = []
    last_time: int | None = None
    ordered = True
    for lineno, line in enumerate(_iter_lines(stream), start=1):
        if not line.strip():
            continue
        try:
            event = parse_access_line(line, lineno)
        except MalformedLine as exc:
            report.malformed += 1
            report.malformed_positions.append((label, exc.position))
            continue
        report.parsed += 1
        if last_time is not None and event.time < last_time:
            ordered = False
        last_time = event.time
        events.append(event)
    if not ordered:
        report.out_of_order_streams += 1
    return events


def read_ssh_stream(
    stream: str | Iterable[str], report: IngestReport | None = None, label: str = "<ssh>"
) -> list[SshAttempt]:
    attempts: list[SshAttempt] = []
    for lineno, line in enumerate(_iter_lines(stream), start=1):
        if not line.strip():
            continue
        try:
            attempts.append(parse_ssh_line(line, lineno))
        except MalformedLine as exc:
            if report is not None:
                report.malformed += 1
                report.malformed_positions.append((label, exc.position))
    attempts.sort(key=lambda a: (a.time, a.ip, a.username, a.password))
    return attempts


def merge_streams(streams: Iterable[str | Iterable[str]]) -> tuple[EventStore, IngestReport]:
    """Merge several access logs into one time-sorted, deduplicated store.

    Ties break on (ip, bucket, operation); byte-identical records collapse to
    one with the duplicate counter incremented. Out-of-order input is
    re-sorted and counted rather than rejected.
    """
    report = IngestReport()
    merged: list[AccessEvent] = []
    for i, stream in enumerate(streams):
        label = stream if isinstance(stream, str) else f"<stream {i}>"
        merged.extend(read_access_stream(stream, report, label))
    merged.sort(key=lambda e: e.sort_key)
    deduped: list[AccessEvent] = []
    for event in merged:
        if deduped and deduped[-1] == event:
            report.duplicates += 1
            continue
        deduped.append(event)
    report.merged = len(deduped)
    return EventStore(deduped, presorted=True), report


def write_access_log(path: str, events: Iterable[AccessEvent]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(format_access_line(event) + "\n")


def write_ssh_log(path: str, attempts: Iterable[SshAttempt]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for attempt in attempts:
            fh.write(format_ssh_line(attempt) + "\n")
