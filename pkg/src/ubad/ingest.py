"""Access-log ingestion: delimited 42-column lines -> LogRecords grouped by user.

The physical format is comma-separated text (quoted fields allowed) with a
column layout supplied alongside the data; only a handful of the 42 columns
are consumed. Timestamps are GMT in "mm/dd/yyyy H:M:S" or "mm/dd/yy H:M:S"
form. The browser is not a column of its own: it is recovered from the
device-signature column by ordered substring rules.
"""

from __future__ import annotations

import csv
import io
import json
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator

from .errors import (
    BadTimestampError,
    DataQualityError,
    InvalidInputError,
    InvalidRangeError,
    MalformedLineError,
)

__all__ = [
    "ColumnLayout",
    "DEFAULT_LAYOUT",
    "LogRecord",
    "UserStore",
    "IngestStats",
    "parse_timestamp",
    "format_timestamp",
    "parse_log_line",
    "extract_browser",
    "group_by_user",
    "select_users_by_frequency",
    "iter_log_lines",
    "ingest_paths",
    "save_user_store",
    "load_user_store",
    "UNKNOWN_BROWSER",
]

UNKNOWN_BROWSER = "UNKNOWN"

# Ordered substring rules over the device signature's user-agent portion.
# Order matters: Opera and SeaMonkey embed other browsers' tokens, Chrome
# embeds Safari's, Android stock embeds Safari's.
_BROWSER_RULES = (
    ("Opera", "Opera"),
    ("OPR/", "Opera"),
    ("SeaMonkey", "SeaMonkey"),
    ("PlayStation Portable", "PSP"),
    ("PSP", "PSP"),
    ("MSIE", "Internet Explorer"),
    ("Trident/", "Internet Explorer"),
    ("Firefox", "Firefox"),
    ("Chrome", "Chrome"),
    ("Android", "Android Browser"),
    ("Safari", "Safari"),
)


def extract_browser(device_signature: str) -> str:
    """Name the browser embedded in a device signature, or UNKNOWN."""
    for token, name in _BROWSER_RULES:
        if token in device_signature:
            return name
    return UNKNOWN_BROWSER


# --------------------------------------------------------------------------
# Timestamps
# --------------------------------------------------------------------------


def parse_timestamp(text: str) -> tuple[datetime, int, int]:
    """Parse "mm/dd/yyyy H:M:S" or "mm/dd/yy H:M:S" (GMT).

    Returns (instant, day_of_week with Monday=0, hour_of_day). Two-digit
    years map to 2000-2099.
    """
    text = text.strip()
    head, _, _ = text.partition(" ")
    date_bits = head.split("/")
    if len(date_bits) != 3:
        raise BadTimestampError(text)
    year_len = len(date_bits[2])
    if year_len == 4:
        fmt = "%m/%d/%Y %H:%M:%S"
    elif year_len == 2:
        fmt = "%m/%d/%y %H:%M:%S"
    else:
        raise BadTimestampError(text)
    try:
        dt = datetime.strptime(text, fmt)
    except ValueError:
        raise BadTimestampError(text) from None
    if year_len == 2 and dt.year < 2000:
        # strptime pivots %y at 1969; the dataset's convention is 2000-2099
        dt = dt.replace(year=dt.year + 100)
    dt = dt.replace(tzinfo=timezone.utc)
    return dt, dt.weekday(), dt.hour


def format_timestamp(dt: datetime) -> str:
    """Render an instant back to the 4-digit-year input form."""
    return dt.strftime("%m/%d/%Y %H:%M:%S")


# --------------------------------------------------------------------------
# Column layout (sidecar config)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ColumnLayout:
    """Positions of the consumed columns within the delimited line."""

    total_columns: int = 42
    log_id: int | None = 0
    user_id: int = 1
    datetime: int = 2
    match_rule: int = 3
    signature_check: int = 4
    device_check: int = 5
    device_signature: int = 6

    def to_dict(self) -> dict:
        fields = {
            "user_id": self.user_id,
            "datetime": self.datetime,
            "match_rule": self.match_rule,
            "signature_check": self.signature_check,
            "device_check": self.device_check,
            "device_signature": self.device_signature,
        }
        if self.log_id is not None:
            fields["log_id"] = self.log_id
        return {"columns": self.total_columns, "fields": fields}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnLayout":
        fields = d["fields"]
        required = ("user_id", "datetime", "match_rule", "signature_check",
                    "device_check", "device_signature")
        missing = [k for k in required if k not in fields]
        if missing:
            raise InvalidInputError(f"layout is missing field positions: {missing}")
        return cls(
            total_columns=int(d["columns"]),
            log_id=fields.get("log_id"),
            **{k: int(fields[k]) for k in required},
        )

    @classmethod
    def from_json(cls, text: str) -> "ColumnLayout":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ColumnLayout":
        return cls.from_json(Path(path).read_text())


DEFAULT_LAYOUT = ColumnLayout()


# --------------------------------------------------------------------------
# Records
# --------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class LogRecord:
    """One parsed access-log line.

    `consistency_violation` marks lines where the device check is YN or YY
    but the signature check is not Y; these are counted, not dropped. The
    full 42-column split is recoverable through `raw_fields`.
    """

    user_id: str
    timestamp: datetime
    day_of_week: int
    hour_of_day: int
    match_rule: str
    signature_check: str
    device_check: str
    browser: str
    raw_line: str
    ref: str
    consistency_violation: bool = False

    @property
    def raw_fields(self) -> tuple[str, ...]:
        return tuple(next(csv.reader([self.raw_line])))


def parse_log_line(line: str, layout: ColumnLayout = DEFAULT_LAYOUT,
                   line_number: int | None = None) -> LogRecord:
    """Parse one delimited line into a LogRecord."""
    line = line.rstrip("\r\n")
    fields = next(csv.reader([line]))
    if len(fields) != layout.total_columns:
        raise MalformedLineError(layout.total_columns, len(fields), line_number)
    try:
        ts, dow, hour = parse_timestamp(fields[layout.datetime])
    except BadTimestampError as e:
        raise BadTimestampError(e.text, line_number) from None
    signature = sys.intern(fields[layout.signature_check])
    device = sys.intern(fields[layout.device_check])
    if layout.log_id is not None:
        ref = fields[layout.log_id]
    else:
        ref = f"line{line_number}" if line_number is not None else ""
    return LogRecord(
        user_id=sys.intern(fields[layout.user_id]),
        timestamp=ts,
        day_of_week=dow,
        hour_of_day=hour,
        match_rule=sys.intern(fields[layout.match_rule]),
        signature_check=signature,
        device_check=device,
        browser=sys.intern(extract_browser(fields[layout.device_signature])),
        raw_line=line,
        ref=ref,
        consistency_violation=(device in ("YN", "YY") and signature != "Y"),
    )


# --------------------------------------------------------------------------
# Grouping and selection
# --------------------------------------------------------------------------


@dataclass
class UserStore:
    """Records grouped per user, each user's sequence timestamp-sorted."""

    users: dict[str, list[LogRecord]] = field(default_factory=dict)

    @property
    def total_record_count(self) -> int:
        return sum(len(v) for v in self.users.values())

    def counts(self) -> dict[str, int]:
        return {u: len(v) for u, v in self.users.items()}

    def user_ids(self) -> list[str]:
        return sorted(self.users)

    def records_for(self, user_id: str) -> list[LogRecord]:
        return self.users[user_id]

    def all_records(self) -> Iterator[LogRecord]:
        for user_id in self.user_ids():
            yield from self.users[user_id]


def group_by_user(records: Iterable[LogRecord]) -> UserStore:
    """Group a record stream by user; per-user sequences come out
    timestamp-sorted (stable for ties)."""
    users: dict[str, list[LogRecord]] = {}
    for rec in records:
        users.setdefault(rec.user_id, []).append(rec)
    for recs in users.values():
        recs.sort(key=lambda r: r.timestamp)
    return UserStore(users=users)


def select_users_by_frequency(store: UserStore, lo: int, hi: int) -> list[str]:
    """Users with lo <= record count <= hi, ordered by user id."""
    if lo > hi:
        raise InvalidRangeError(f"lo ({lo}) must be <= hi ({hi})")
    return sorted(u for u, recs in store.users.items() if lo <= len(recs) <= hi)


# --------------------------------------------------------------------------
# File ingestion
# --------------------------------------------------------------------------


@dataclass
class IngestStats:
    lines: int = 0
    parsed: int = 0
    malformed: int = 0
    bad_timestamp: int = 0
    consistency_violations: int = 0
    problems: list[str] = field(default_factory=list)

    _PROBLEM_CAP = 1000

    def note_problem(self, message: str) -> None:
        if len(self.problems) < self._PROBLEM_CAP:
            self.problems.append(message)

    @property
    def skipped(self) -> int:
        return self.malformed + self.bad_timestamp

    def summary(self) -> dict:
        return {
            "lines": self.lines,
            "parsed": self.parsed,
            "malformed": self.malformed,
            "bad_timestamp": self.bad_timestamp,
            "consistency_violations": self.consistency_violations,
        }


def iter_log_lines(paths: Iterable) -> Iterator[tuple[str, int, str]]:
    """Yield (path, line_number, line) over the given files, 1-based lines."""
    for path in paths:
        with open(path, "r", newline="") as fh:
            for i, line in enumerate(fh, start=1):
                if line.strip():
                    yield str(path), i, line


def ingest_paths(paths, layout: ColumnLayout = DEFAULT_LAYOUT,
                 mode: str = "lenient") -> tuple[UserStore, IngestStats]:
    """Parse the given log files and group records by user.

    Malformed lines and bad timestamps are counted and skipped in both modes;
    in strict mode the whole ingest is rejected (DataQualityError) when more
    than half of the lines fail to parse.
    """
    if mode not in ("lenient", "strict"):
        raise InvalidInputError(f"mode must be 'lenient' or 'strict', got {mode!r}")
    stats = IngestStats()

    def records() -> Iterator[LogRecord]:
        for path, line_number, line in iter_log_lines(paths):
            stats.lines += 1
            try:
                rec = parse_log_line(line, layout, line_number)
            except MalformedLineError as e:
                stats.malformed += 1
                stats.note_problem(f"{path}:{line_number}: {e}")
                continue
            except BadTimestampError as e:
                stats.bad_timestamp += 1
                stats.note_problem(f"{path}:{line_number}: {e}")
                continue
            stats.parsed += 1
            if rec.consistency_violation:
                stats.consistency_violations += 1
            yield rec

    store = group_by_user(records())
    if mode == "strict" and stats.lines > 0 and stats.skipped * 2 > stats.lines:
        raise DataQualityError(
            f"{stats.skipped} of {stats.lines} lines failed to parse"
        )
    return store, stats


# --------------------------------------------------------------------------
# Store persistence: one raw-line file per user plus a manifest
# --------------------------------------------------------------------------

_MANIFEST_NAME = "manifest.csv"
_LAYOUT_NAME = "layout.json"


def save_user_store(store: UserStore, directory,
                    layout: ColumnLayout = DEFAULT_LAYOUT) -> None:
    directory = Path(directory)
    (directory / "users").mkdir(parents=True, exist_ok=True)
    (directory / _LAYOUT_NAME).write_text(layout.to_json())
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["user_id", "file", "count", "first", "last"])
    for i, user_id in enumerate(store.user_ids()):
        recs = store.users[user_id]
        name = f"users/user_{i:05d}.log"
        with open(directory / name, "w", newline="") as fh:
            for rec in recs:
                fh.write(rec.raw_line + "\n")
        writer.writerow([
            user_id,
            name,
            len(recs),
            format_timestamp(recs[0].timestamp),
            format_timestamp(recs[-1].timestamp),
        ])
    (directory / _MANIFEST_NAME).write_text(buf.getvalue())


def load_user_store(directory) -> tuple[UserStore, IngestStats]:
    directory = Path(directory)
    layout = ColumnLayout.load(directory / _LAYOUT_NAME)
    with open(directory / _MANIFEST_NAME, newline="") as fh:
        rows = list(csv.DictReader(fh))
    paths = [directory / row["file"] for row in rows]
    return ingest_paths(paths, layout)
