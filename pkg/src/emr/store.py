"""Versioned record store with a hash-chained audit trail.

All state lives in one append-only JSONL journal under the data directory.
Every write is an optimistic-concurrency put (the caller names the version
it believes is current) and lands together with exactly one audit event;
a single process-wide lock serializes writers, so version sequences are
gapless and no write is ever lost or overwritten.

Each audit event is hashed as

    sha256(prev_hash_bytes + canonical_json(event_fields))

where ``prev_hash_bytes`` is the raw 32-byte digest of the previous event
(32 zero bytes for the first) and ``canonical_json`` sorts keys, uses
compact separators, and keeps non-ASCII text as-is. ``verify_audit``
re-reads the journal from disk and recomputes the chain, so flipping any
byte of any audit line is reported at that event's sequence number.

Snapshots are a portable line format (records ordered by kind, id, version;
then audit events by seq). Exporting, importing into an empty store, and
exporting again reproduces the first snapshot byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping

from .errors import NotFound, SnapshotImportError, StorageError, VersionConflict

GENESIS_HASH = bytes(32)
JOURNAL_NAME = "journal.jsonl"

_AUDIT_KEYS = {"t", "seq", "actor", "action", "subject", "at", "prev", "hash"}
_SUBJECT_KEYS = {"kind", "id"}
_HEX64_RE_OK = frozenset("0123456789abcdef")


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def _is_hex64(text: Any) -> bool:
    return isinstance(text, str) and len(text) == 64 and set(text) <= _HEX64_RE_OK


def event_hash(prev: bytes, seq: int, actor: str, action: str,
               subject_kind: str, subject_id: str, at: str) -> bytes:
    body = canonical_json({
        "action": action,
        "actor": actor,
        "at": at,
        "seq": seq,
        "subject": {"id": subject_id, "kind": subject_kind},
    })
    return hashlib.sha256(prev + body.encode("utf-8")).digest()


@dataclass(frozen=True)
class StoredRecord:
    record_kind: str
    record_id: str
    version: int
    payload: str  # canonical JSON text, immutable once written
    written_at: str
    written_by: str

    def payload_dict(self) -> dict:
        return json.loads(self.payload)


@dataclass(frozen=True)
class AuditEvent:
    seq: int
    actor: str
    action: str
    subject_kind: str
    subject_id: str
    at: str
    prev_hash: bytes
    hash: bytes

    def to_line_dict(self) -> dict:
        return {
            "t": "audit",
            "seq": self.seq,
            "actor": self.actor,
            "action": self.action,
            "subject": {"kind": self.subject_kind, "id": self.subject_id},
            "at": self.at,
            "prev": self.prev_hash.hex(),
            "hash": self.hash.hex(),
        }


@dataclass(frozen=True)
class AuditVerification:
    ok: bool
    first_bad_seq: int | None = None


class RecordStore:
    """Append-only versioned store over a single journal file."""

    def __init__(self, data_dir: str | Path, *, clock: Callable[[], str] | None = None) -> None:
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.journal_path = self.data_dir / JOURNAL_NAME
        self._clock = clock or utc_now_iso
        self._lock = threading.RLock()
        self._records: dict[tuple[str, str], list[StoredRecord]] = {}
        self._audit: list[AuditEvent] = []
        self._replay()

    # ------------------------------------------------------------------ load

    def _replay(self) -> None:
        if not self.journal_path.exists():
            return
        raw = self.journal_path.read_bytes()
        for line_no, line in enumerate(raw.split(b"\n"), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                # A damaged line must not make the store unreadable; the
                # chain verifier reports the damage with its position.
                continue
            if not isinstance(obj, dict):
                continue
            if obj.get("t") == "rec":
                try:
                    self._records.setdefault((obj["kind"], obj["id"]), []).append(
                        StoredRecord(
                            record_kind=obj["kind"],
                            record_id=obj["id"],
                            version=obj["v"],
                            payload=canonical_json(obj["payload"]),
                            written_at=obj["at"],
                            written_by=obj["by"],
                        )
                    )
                except KeyError as exc:
                    raise StorageError(
                        f"journal line {line_no} lacks record key {exc}"
                    ) from None
            elif obj.get("t") == "audit":
                event = self._parse_audit_dict(obj)
                if event is not None:
                    self._audit.append(event)
        for versions in self._records.values():
            versions.sort(key=lambda r: r.version)

    @staticmethod
    def _parse_audit_dict(obj: Mapping[str, Any]) -> AuditEvent | None:
        if set(obj.keys()) != _AUDIT_KEYS:
            return None
        subject = obj["subject"]
        if not isinstance(subject, dict) or set(subject.keys()) != _SUBJECT_KEYS:
            return None
        if not isinstance(obj["seq"], int) or isinstance(obj["seq"], bool):
            return None
        if not _is_hex64(obj["prev"]) or not _is_hex64(obj["hash"]):
            return None
        if not all(isinstance(obj[k], str) for k in ("actor", "action", "at")):
            return None
        if not all(isinstance(subject[k], str) for k in ("kind", "id")):
            return None
        return AuditEvent(
            seq=obj["seq"],
            actor=obj["actor"],
            action=obj["action"],
            subject_kind=subject["kind"],
            subject_id=subject["id"],
            at=obj["at"],
            prev_hash=bytes.fromhex(obj["prev"]),
            hash=bytes.fromhex(obj["hash"]),
        )

    # ----------------------------------------------------------------- write

    def _append_lines(self, lines: list[str]) -> None:
        data = "".join(line + "\n" for line in lines).encode("utf-8")
        with open(self.journal_path, "ab") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())

    def put(self, record_kind: str, record_id: str, payload: Mapping[str, Any] | str,
            expected_version: int, actor: str, action: str = "put") -> int:
        """Append a new version; returns it. The caller must name the head
        version it saw (0 to create); anything else is a VersionConflict."""
        if not record_kind or not record_id:
            raise StorageError("record kind and id must be non-empty")
        if isinstance(payload, str):
            try:
                payload_obj = json.loads(payload)
            except json.JSONDecodeError:
                raise StorageError("payload text must be valid JSON") from None
        else:
            payload_obj = dict(payload)
        payload_text = canonical_json(payload_obj)

        with self._lock:
            versions = self._records.get((record_kind, record_id), [])
            head = versions[-1].version if versions else 0
            if expected_version != head:
                raise VersionConflict(
                    f"{record_kind}/{record_id}: expected version {expected_version}, "
                    f"head is {head}"
                )
            version = head + 1
            at = self._clock()
            record = StoredRecord(
                record_kind=record_kind,
                record_id=record_id,
                version=version,
                payload=payload_text,
                written_at=at,
                written_by=actor,
            )
            prev = self._audit[-1].hash if self._audit else GENESIS_HASH
            seq = len(self._audit) + 1
            event = AuditEvent(
                seq=seq,
                actor=actor,
                action=action,
                subject_kind=record_kind,
                subject_id=record_id,
                at=at,
                prev_hash=prev,
                hash=event_hash(prev, seq, actor, action, record_kind, record_id, at),
            )
            rec_line = json.dumps(
                {"t": "rec", "kind": record_kind, "id": record_id, "v": version,
                 "payload": json.loads(payload_text), "at": at, "by": actor},
                separators=(",", ":"), ensure_ascii=False,
            )
            audit_line = json.dumps(event.to_line_dict(), separators=(",", ":"),
                                    ensure_ascii=False)
            self._append_lines([rec_line, audit_line])
            self._records.setdefault((record_kind, record_id), []).append(record)
            self._audit.append(event)
            return version

    # ------------------------------------------------------------------ read

    def get(self, record_kind: str, record_id: str, version: int | None = None) -> StoredRecord:
        with self._lock:
            versions = self._records.get((record_kind, record_id))
            if not versions:
                raise NotFound(f"no {record_kind} record {record_id!r}")
            if version is None:
                return versions[-1]
            if version < 1 or version > len(versions):
                raise NotFound(
                    f"{record_kind}/{record_id} has no version {version}"
                )
            return versions[version - 1]

    def get_payload(self, record_kind: str, record_id: str, version: int | None = None) -> dict:
        return self.get(record_kind, record_id, version).payload_dict()

    def head_version(self, record_kind: str, record_id: str) -> int:
        with self._lock:
            versions = self._records.get((record_kind, record_id))
            return versions[-1].version if versions else 0

    def exists(self, record_kind: str, record_id: str) -> bool:
        return self.head_version(record_kind, record_id) > 0

    def heads(self, record_kind: str) -> list[StoredRecord]:
        with self._lock:
            out = [
                versions[-1]
                for (kind, _), versions in self._records.items()
                if kind == record_kind and versions
            ]
        return sorted(out, key=lambda r: r.record_id)

    def list_ids(self, record_kind: str) -> list[str]:
        return [r.record_id for r in self.heads(record_kind)]

    def record_count(self) -> int:
        with self._lock:
            return sum(len(v) for v in self._records.values())

    def audit_count(self) -> int:
        with self._lock:
            return len(self._audit)

    def audit_events(self) -> list[AuditEvent]:
        with self._lock:
            return list(self._audit)

    def is_empty(self) -> bool:
        with self._lock:
            return not self._records and not self._audit

    # ---------------------------------------------------------------- verify

    def verify_audit(self) -> AuditVerification:
        """Re-read the journal from disk and recompute the whole chain.

        Any line that should be an audit event but does not parse, match
        its expected sequence number, chain to its predecessor, or hash to
        its stored digest marks the chain corrupt at that sequence number.
        """
        if not self.journal_path.exists():
            return AuditVerification(ok=True)
        prev = GENESIS_HASH
        expected_seq = 0
        raw = self.journal_path.read_bytes()
        for line in raw.split(b"\n"):
            if not line.strip():
                continue
            try:
                obj = json.loads(line.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                return AuditVerification(ok=False, first_bad_seq=expected_seq + 1)
            if not isinstance(obj, dict) or obj.get("t") not in ("rec", "audit"):
                return AuditVerification(ok=False, first_bad_seq=expected_seq + 1)
            if obj.get("t") == "rec":
                continue
            expected_seq += 1
            event = self._parse_audit_dict(obj)
            if event is None or event.seq != expected_seq:
                return AuditVerification(ok=False, first_bad_seq=expected_seq)
            if event.prev_hash != prev:
                return AuditVerification(ok=False, first_bad_seq=expected_seq)
            recomputed = event_hash(prev, event.seq, event.actor, event.action,
                                    event.subject_kind, event.subject_id, event.at)
            if recomputed != event.hash:
                return AuditVerification(ok=False, first_bad_seq=expected_seq)
            prev = event.hash
        return AuditVerification(ok=True)

    # -------------------------------------------------------------- snapshot

    def export_snapshot(self, dest: str | Path) -> tuple[int, int]:
        """Write the portable snapshot; returns (record, audit) counts."""
        with self._lock:
            records = sorted(
                (rec for versions in self._records.values() for rec in versions),
                key=lambda r: (r.record_kind, r.record_id, r.version),
            )
            events = list(self._audit)
        lines = []
        for rec in records:
            lines.append(json.dumps(
                {"t": "rec", "kind": rec.record_kind, "id": rec.record_id,
                 "v": rec.version, "payload": json.loads(rec.payload)},
                separators=(",", ":"), ensure_ascii=False,
            ))
        for event in events:
            lines.append(json.dumps(event.to_line_dict(), separators=(",", ":"),
                                    ensure_ascii=False))
        Path(dest).write_bytes("".join(line + "\n" for line in lines).encode("utf-8"))
        return len(records), len(events)

    def import_snapshot(self, source: str | Path) -> tuple[int, int]:
        """Load a snapshot into this (empty) store; returns counts loaded."""
        with self._lock:
            if not self.is_empty():
                raise SnapshotImportError("store is not empty")
            source = Path(source)
            if not source.exists():
                raise SnapshotImportError(f"no snapshot at {source}")

            recs: list[dict] = []
            events: list[AuditEvent] = []
            raw = source.read_bytes()
            for line_no, line in enumerate(raw.split(b"\n"), start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError):
                    raise SnapshotImportError("not valid JSON", line=line_no) from None
                if not isinstance(obj, dict):
                    raise SnapshotImportError("not a JSON object", line=line_no)
                tag = obj.get("t")
                if tag == "rec":
                    if set(obj.keys()) != {"t", "kind", "id", "v", "payload"}:
                        raise SnapshotImportError("malformed record line", line=line_no)
                    if not isinstance(obj["kind"], str) or not isinstance(obj["id"], str):
                        raise SnapshotImportError("malformed record line", line=line_no)
                    if not isinstance(obj["v"], int) or isinstance(obj["v"], bool) or obj["v"] < 1:
                        raise SnapshotImportError("malformed record version", line=line_no)
                    recs.append(obj)
                elif tag == "audit":
                    event = self._parse_audit_dict(obj)
                    if event is None:
                        raise SnapshotImportError("malformed audit line", line=line_no)
                    events.append(event)
                else:
                    raise SnapshotImportError(f"unknown line tag {tag!r}", line=line_no)

            # The chain must verify before anything is persisted.
            prev = GENESIS_HASH
            for expected_seq, event in enumerate(events, start=1):
                recomputed = event_hash(prev, event.seq, event.actor, event.action,
                                        event.subject_kind, event.subject_id, event.at)
                if (event.seq != expected_seq or event.prev_hash != prev
                        or recomputed != event.hash):
                    raise SnapshotImportError(f"audit chain mismatch at seq {expected_seq}")
                prev = event.hash

            # Versions per subject must be exactly 1..head, and every write
            # must line up with its audit event (the event supplies the
            # record's written_at / written_by).
            by_subject: dict[tuple[str, str], list[dict]] = {}
            for obj in recs:
                by_subject.setdefault((obj["kind"], obj["id"]), []).append(obj)
            writes_seen: dict[tuple[str, str], int] = {}
            attribution: dict[tuple[str, str, int], tuple[str, str]] = {}
            for event in events:
                key = (event.subject_kind, event.subject_id)
                version = writes_seen.get(key, 0) + 1
                writes_seen[key] = version
                attribution[(event.subject_kind, event.subject_id, version)] = (
                    event.at, event.actor,
                )
            for key, objs in by_subject.items():
                versions = sorted(o["v"] for o in objs)
                if versions != list(range(1, len(versions) + 1)):
                    raise SnapshotImportError(
                        f"record versions for {key[0]}/{key[1]} are not 1..head"
                    )
                if writes_seen.get(key, 0) != len(versions):
                    raise SnapshotImportError(
                        f"audit events for {key[0]}/{key[1]} do not match its versions"
                    )
            for key, count in writes_seen.items():
                if len(by_subject.get(key, ())) != count:
                    raise SnapshotImportError(
                        f"audit events for {key[0]}/{key[1]} do not match its versions"
                    )

            # Rebuild the journal in original write order: events are the
            # write log, so interleave each record version before its event.
            version_cursor: dict[tuple[str, str], int] = {}
            rec_index = {(o["kind"], o["id"], o["v"]): o for o in recs}
            lines: list[str] = []
            for event in events:
                key = (event.subject_kind, event.subject_id)
                version = version_cursor.get(key, 0) + 1
                version_cursor[key] = version
                obj = rec_index[(event.subject_kind, event.subject_id, version)]
                at, by = attribution[(event.subject_kind, event.subject_id, version)]
                lines.append(json.dumps(
                    {"t": "rec", "kind": obj["kind"], "id": obj["id"], "v": version,
                     "payload": obj["payload"], "at": at, "by": by},
                    separators=(",", ":"), ensure_ascii=False,
                ))
                lines.append(json.dumps(event.to_line_dict(), separators=(",", ":"),
                                        ensure_ascii=False))
            self._append_lines(lines)

            self._records.clear()
            self._audit = []
            self._replay()
            return len(recs), len(events)
