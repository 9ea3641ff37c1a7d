"""Job accounting logs: parsing, validation, outlier cleaning, per-queue split.

The on-disk format is a plain CSV with the header::

    job_id,queue,submit_ts,start_ts,end_ts,num_nodes,max_minutes

Timestamps are non-negative integer epoch seconds (UTC). Fields never
contain commas, so no quoting is used.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import IO, Iterable

LOG_FORMAT = "jobs-csv"
HEADER = ("job_id", "queue", "submit_ts", "start_ts", "end_ts", "num_nodes", "max_minutes")

# Two days; the longest wall time a production queue accepts.
DEFAULT_OUTLIER_MINUTES = 2880


class LogFormatError(ValueError):
    """The log cannot be read at all (bad header, unknown format, bad encoding)."""


@dataclass(frozen=True)
class JobRecord:
    job_id: str
    queue: str
    submit_time: int
    start_time: int
    end_time: int
    num_nodes: int
    max_minutes: int

    @property
    def queue_time_minutes(self) -> float:
        return (self.start_time - self.submit_time) / 60.0

    def validate(self) -> None:
        if not self.job_id:
            raise ValueError("empty job_id")
        if not self.queue:
            raise ValueError("empty queue")
        if self.submit_time < 0:
            raise ValueError("negative timestamp")
        if not self.submit_time <= self.start_time <= self.end_time:
            raise ValueError("time ordering: need submit_ts <= start_ts <= end_ts")
        if self.num_nodes < 1:
            raise ValueError("num_nodes must be >= 1")
        if self.max_minutes < 1:
            raise ValueError("max_minutes must be >= 1")


@dataclass(frozen=True)
class RowError:
    line: int
    message: str
    text: str = ""

    def __str__(self):
        return f"line {self.line}: {self.message}"


def _parse_int(field, name):
    try:
        return int(field)
    except ValueError:
        raise ValueError(f"{name}: not an integer: {field!r}") from None


def _parse_row(fields):
    if len(fields) != len(HEADER):
        raise ValueError(f"expected {len(HEADER)} fields, got {len(fields)}")
    job_id, queue = fields[0].strip(), fields[1].strip()
    submit, start, end, nodes, minutes = (
        _parse_int(f.strip(), name) for f, name in zip(fields[2:], HEADER[2:])
    )
    rec = JobRecord(job_id, queue, submit, start, end, nodes, minutes)
    rec.validate()
    return rec


def parse_log(source: bytes | str | IO, format: str = LOG_FORMAT) -> tuple[list[JobRecord], list[RowError]]:
    """Parse a job log.

    ``source`` may be raw bytes, a str, a text stream or a binary stream.
    Returns the well-formed records and one :class:`RowError` per rejected
    row (1-based line numbers, header is line 1). A missing or wrong header
    raises :class:`LogFormatError`.
    """
    if format != LOG_FORMAT:
        raise LogFormatError(f"unknown log format {format!r}")
    text = _read_text(source)
    lines = text.split("\n")
    if not lines or not lines[0].strip():
        raise LogFormatError("missing header")
    header = tuple(h.strip() for h in lines[0].rstrip("\r").split(","))
    if header != HEADER:
        raise LogFormatError(f"bad header {lines[0]!r}; expected {','.join(HEADER)}")

    records, errors = [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        try:
            records.append(_parse_row(line.split(",")))
        except ValueError as exc:
            errors.append(RowError(lineno, str(exc), line))
    return records, errors


def _read_text(source):
    if isinstance(source, str):
        return source
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = source.read()
        if isinstance(data, str):
            return data
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise LogFormatError(f"not UTF-8: {exc}") from None


def serialize_log(records: Iterable[JobRecord]) -> str:
    out = io.StringIO()
    out.write(",".join(HEADER) + "\n")
    for r in records:
        out.write(f"{r.job_id},{r.queue},{r.submit_time},{r.start_time},{r.end_time},"
                  f"{r.num_nodes},{r.max_minutes}\n")
    return out.getvalue()


def read_log(path) -> tuple[list[JobRecord], list[RowError]]:
    with open(path, "rb") as fh:
        return parse_log(fh)


def write_log(path, records: Iterable[JobRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_log(records))


def clean(records: list[JobRecord], outlier_threshold_minutes: float = DEFAULT_OUTLIER_MINUTES):
    """Drop jobs that waited strictly longer than the threshold.

    Returns ``(kept, removed_count)``; kept records keep their input order.
    """
    if not outlier_threshold_minutes >= 0:
        raise ValueError("outlier threshold must be >= 0")
    kept = [r for r in records if r.queue_time_minutes <= outlier_threshold_minutes]
    return kept, len(records) - len(kept)


def partition_by_queue(records: Iterable[JobRecord]) -> dict[str, list[JobRecord]]:
    parts: dict[str, list[JobRecord]] = {}
    for r in records:
        parts.setdefault(r.queue, []).append(r)
    return parts
