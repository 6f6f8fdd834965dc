"""Append-only enforcement audit trail in the eight-column CSV schema."""

from __future__ import annotations

import csv
import io
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Iterable, Iterator

COLUMNS = (
    "timestamp",
    "agent_id",
    "rule_id",
    "violation_type",
    "severity",
    "trust_before",
    "trust_after",
    "decision",
)
VIOLATION_TYPES = frozenset({"coercive", "normative", "mimetic", "-"})
DECISIONS = frozenset({"allow", "warn", "block", "escalate"})
NO_RULE = "-"


class FormatError(ValueError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


class StorageError(OSError):
    pass


class SinkError(OSError):
    pass


def format_timestamp(ts: datetime) -> str:
    if ts.tzinfo is None:
        raise ValueError("audit timestamps must be timezone-aware")
    ts = ts.astimezone(timezone.utc)
    text = ts.strftime("%Y-%m-%dT%H:%M:%S")
    if ts.microsecond:
        text += f".{ts.microsecond:06d}"
    return text + "Z"


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        raise ValueError("timestamp lacks a UTC designator")
    return ts.astimezone(timezone.utc)


@dataclass(frozen=True)
class AuditRecord:
    timestamp: datetime
    agent_id: str
    rule_id: str
    violation_type: str
    severity: float
    trust_before: float
    trust_after: float
    decision: str

    def __post_init__(self) -> None:
        for name in ("agent_id", "rule_id"):
            value = getattr(self, name)
            # The reader strips padding, so padded or multi-line ids could not round-trip.
            if not value or value != value.strip() or any(c in value for c in "\r\n"):
                raise ValueError(f"{name} must be non-empty, unpadded and single-line: {value!r}")
        if self.violation_type not in VIOLATION_TYPES:
            raise ValueError(f"bad violation_type {self.violation_type!r}")
        if self.decision not in DECISIONS:
            raise ValueError(f"bad decision {self.decision!r}")

    @property
    def action_key(self) -> tuple[str, datetime]:
        """Rows of one action share agent and timestamp."""
        return (self.agent_id, self.timestamp)

    def row(self) -> list[str]:
        return [
            format_timestamp(self.timestamp),
            self.agent_id,
            self.rule_id,
            self.violation_type,
            repr(float(self.severity)),
            repr(float(self.trust_before)),
            repr(float(self.trust_after)),
            self.decision,
        ]


def _writer(sink: IO[str]):
    return csv.writer(sink, lineterminator="\n")


def write_csv(records: Iterable[AuditRecord], sink: IO[str]) -> None:
    """Header plus one row per record; floats use shortest round-trip repr."""
    try:
        w = _writer(sink)
        w.writerow(COLUMNS)
        for rec in records:
            w.writerow(rec.row())
    except OSError as exc:
        raise SinkError(str(exc)) from exc


def dumps(records: Iterable[AuditRecord]) -> str:
    buf = io.StringIO()
    write_csv(records, buf)
    return buf.getvalue()


def _parse_row(fields: list[str], line: int) -> AuditRecord:
    if len(fields) != len(COLUMNS):
        raise FormatError(f"expected {len(COLUMNS)} fields, got {len(fields)}", line)
    f = [x.strip() for x in fields]
    try:
        return AuditRecord(
            timestamp=parse_timestamp(f[0]),
            agent_id=f[1],
            rule_id=f[2],
            violation_type=f[3],
            severity=float(f[4]),
            trust_before=float(f[5]),
            trust_after=float(f[6]),
            decision=f[7],
        )
    except ValueError as exc:
        raise FormatError(str(exc), line) from None


def read_csv(source: IO[str]) -> list[AuditRecord]:
    """Parse a log written by :func:`write_csv` or hand-authored in the schema.

    Whitespace around fields is tolerated. A missing header is accepted.
    """
    out = []
    reader = csv.reader(source, skipinitialspace=True)
    for fields in reader:
        line = reader.line_num
        if not fields or (len(fields) == 1 and not fields[0].strip()):
            continue
        if line == 1 and [x.strip() for x in fields] == list(COLUMNS):
            continue
        out.append(_parse_row(fields, line))
    return out


def loads(text: str) -> list[AuditRecord]:
    return read_csv(io.StringIO(text, newline=""))


def read_path(path: str | Path) -> list[AuditRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return read_csv(fh)


@dataclass(frozen=True)
class AuditEntry:
    """A record plus in-process metadata that the CSV schema does not carry."""

    record: AuditRecord
    reason: str = ""
    ticket_id: str | None = None


class AuditStore:
    """Append-only store: optional CSV file plus an in-memory index."""

    def __init__(self, path: str | Path | None = None) -> None:
        self._entries: list[AuditEntry] = []
        self._lock = threading.Lock()
        self.path = Path(path) if path else None
        self._fh: IO[str] | None = None
        if self.path is not None:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._fh = self.path.open("w", newline="", encoding="utf-8")
                _writer(self._fh).writerow(COLUMNS)
                self._fh.flush()
            except OSError as exc:
                raise StorageError(f"cannot open audit log {self.path}: {exc}") from exc

    def append(self, record: AuditRecord, reason: str = "", ticket_id: str | None = None) -> None:
        self.extend([record], reason, ticket_id)

    def extend(self, records: Iterable[AuditRecord], reason: str = "", ticket_id: str | None = None) -> None:
        """Append the rows of one action under a single lock acquisition."""
        records = list(records)
        with self._lock:
            if self._fh is not None:
                try:
                    w = _writer(self._fh)
                    for rec in records:
                        w.writerow(rec.row())
                    self._fh.flush()
                except (OSError, ValueError) as exc:
                    raise StorageError(f"audit append failed: {exc}") from exc
            self._entries.extend(AuditEntry(r, reason, ticket_id) for r in records)

    @property
    def records(self) -> list[AuditRecord]:
        with self._lock:
            return [e.record for e in self._entries]

    @property
    def entries(self) -> list[AuditEntry]:
        with self._lock:
            return list(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[AuditRecord]:
        return iter(self.records)

    def query(
        self,
        agent_id: str | None = None,
        rule_id: str | None = None,
        verdict: str | None = None,
        start: datetime | None = None,
        end: datetime | None = None,
    ) -> list[AuditRecord]:
        """Matching records in append order; ``end`` is exclusive."""
        if verdict is not None:
            verdict = getattr(verdict, "value", verdict)
        out = []
        for rec in self.records:
            if agent_id is not None and rec.agent_id != agent_id:
                continue
            if rule_id is not None and rec.rule_id != rule_id:
                continue
            if verdict is not None and rec.decision != verdict:
                continue
            if start is not None and rec.timestamp < start:
                continue
            if end is not None and rec.timestamp >= end:
                continue
            out.append(rec)
        return out

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    def __enter__(self) -> "AuditStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def group_actions(records: Iterable[AuditRecord]) -> list[list[AuditRecord]]:
    """Group consecutive-or-not rows into actions keyed by (agent, timestamp), first-seen order."""
    groups: dict[tuple[str, datetime], list[AuditRecord]] = {}
    for rec in records:
        groups.setdefault(rec.action_key, []).append(rec)
    return list(groups.values())
