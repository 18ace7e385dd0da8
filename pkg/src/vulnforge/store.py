"""Manifest-backed design corpus.

Layout: one directory per lineage under ``designs/``, one ``.v`` file per
design stored byte-for-byte, spec documents under ``specs/``, and a single
``manifest.json`` tying everything together with content digests.

Single-writer, multi-reader: every mutation happens under a file lock and
lands via an atomic manifest replace. Readers never lock.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterator

from filelock import FileLock

from .errors import (
    DuplicateDesignError,
    IntegrityError,
    InvalidRecordError,
    StoreError,
    UnknownDesignError,
    UnknownLabelError,
)
from .sampling import SamplingParams
from .taxonomy import BUILTIN_TAXONOMY, CweLabel, validate_taxonomy

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
DIGEST_ALGORITHM = "sha256"
ORIGINS = ("benchmark", "replica", "secure_counterpart")

_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.\-]*$")


def content_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class DesignRecord:
    """One RTL design with its label, lineage, and provenance.

    A base benchmark design is its own lineage root. Replicas carry the
    coding-style name and the sampling params that produced them. Secure
    counterparts carry no label; labeled means vulnerable.
    """

    design_id: str
    lineage_id: str
    source_text: str
    label: CweLabel | None = None
    origin: str = "benchmark"  # benchmark | replica | secure_counterpart
    style: str | None = None
    sampling: SamplingParams | None = None

    def validate(self) -> None:
        for name, value in (("design_id", self.design_id), ("lineage_id", self.lineage_id)):
            if not _ID_RE.match(value or ""):
                raise InvalidRecordError(f"{name} {value!r} is not a safe identifier")
        if self.origin not in ORIGINS:
            raise InvalidRecordError(f"unknown origin {self.origin!r}")
        if not self.source_text.strip():
            raise InvalidRecordError(f"{self.design_id}: empty source")
        if self.origin == "benchmark":
            if self.lineage_id != self.design_id:
                raise InvalidRecordError(
                    f"{self.design_id}: base designs are their own lineage root"
                )
            if self.label is None:
                raise InvalidRecordError(f"{self.design_id}: base design needs a label")
        elif self.origin == "replica":
            if self.lineage_id == self.design_id:
                raise InvalidRecordError(f"{self.design_id}: replica cannot be its own root")
            if self.style is None or self.sampling is None:
                raise InvalidRecordError(
                    f"{self.design_id}: replicas record style and sampling"
                )
            if self.label is None:
                raise InvalidRecordError(f"{self.design_id}: replica needs a label")
        else:  # secure_counterpart
            if self.label is not None:
                raise InvalidRecordError(
                    f"{self.design_id}: secure counterparts are unlabeled"
                )

    def manifest_entry(self, rel_path: str, digest: str) -> dict:
        return {
            "design_id": self.design_id,
            "lineage_id": self.lineage_id,
            "label": self.label.to_dict() if self.label else None,
            "origin": self.origin,
            "style": self.style,
            "sampling": self.sampling.to_dict() if self.sampling else None,
            "path": rel_path,
            "digest": digest,
        }

    @classmethod
    def from_manifest_entry(cls, entry: dict, source_text: str) -> "DesignRecord":
        return cls(
            design_id=entry["design_id"],
            lineage_id=entry["lineage_id"],
            source_text=source_text,
            label=CweLabel.from_dict(entry["label"]) if entry.get("label") else None,
            origin=entry["origin"],
            style=entry.get("style"),
            sampling=SamplingParams.from_dict(entry["sampling"]) if entry.get("sampling") else None,
        )


@dataclass
class CorpusManifest:
    taxonomy: tuple[CweLabel, ...]
    created_at: str
    tool_version: str
    digest_algorithm: str = DIGEST_ALGORITHM
    entries: dict[str, dict] = field(default_factory=dict)  # design_id -> manifest entry

    def to_dict(self) -> dict:
        return {
            "digest_algorithm": self.digest_algorithm,
            "created_at": self.created_at,
            "tool_version": self.tool_version,
            "taxonomy": [lab.to_dict() for lab in self.taxonomy],
            "records": [self.entries[k] for k in sorted(self.entries)],
        }


def _default_clock() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class CorpusStore:
    """Persistent design corpus rooted at one directory."""

    def __init__(
        self,
        root: Path,
        manifest: CorpusManifest,
        records: dict[str, DesignRecord],
        clock: Callable[[], str] | None = None,
    ):
        self.root = Path(root)
        self.manifest = manifest
        self._records = records
        self._clock = clock or _default_clock
        self._lock = FileLock(str(self.root / ".corpus.lock"))

    # ---------------------------------------------------------------- setup

    @classmethod
    def create(
        cls,
        root: Path | str,
        taxonomy: tuple[CweLabel, ...] = BUILTIN_TAXONOMY,
        clock: Callable[[], str] | None = None,
        tool_version: str = "0.1.0",
    ) -> "CorpusStore":
        root = Path(root)
        if (root / MANIFEST_NAME).exists():
            raise StoreError(f"corpus already exists at {root}")
        validate_taxonomy(taxonomy)
        root.mkdir(parents=True, exist_ok=True)
        (root / "designs").mkdir(exist_ok=True)
        (root / "specs").mkdir(exist_ok=True)
        clock = clock or _default_clock
        manifest = CorpusManifest(
            taxonomy=tuple(taxonomy), created_at=clock(), tool_version=tool_version
        )
        store = cls(root, manifest, {}, clock)
        with store._lock:
            store._write_manifest()
        return store

    @classmethod
    def open(cls, root: Path | str, verify: bool = True) -> "CorpusStore":
        root = Path(root)
        manifest_path = root / MANIFEST_NAME
        if not manifest_path.exists():
            raise StoreError(f"no corpus manifest at {manifest_path}")
        try:
            raw = json.loads(manifest_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise StoreError(f"unreadable manifest: {exc}") from exc

        taxonomy = tuple(CweLabel.from_dict(d) for d in raw.get("taxonomy", []))
        validate_taxonomy(taxonomy)
        keys = {lab.key for lab in taxonomy}
        manifest = CorpusManifest(
            taxonomy=taxonomy,
            created_at=raw.get("created_at", ""),
            tool_version=raw.get("tool_version", ""),
            digest_algorithm=raw.get("digest_algorithm", DIGEST_ALGORITHM),
        )
        records: dict[str, DesignRecord] = {}
        for entry in raw.get("records", []):
            path = root / entry["path"]
            if not path.exists():
                raise IntegrityError(f"missing design file: {entry['path']}")
            source = path.read_text(encoding="utf-8")
            if verify and content_digest(source) != entry["digest"]:
                raise IntegrityError(
                    f"digest mismatch for {entry['path']}: file was modified"
                )
            record = DesignRecord.from_manifest_entry(entry, source)
            if record.label is not None and record.label.key not in keys:
                raise IntegrityError(
                    f"{record.design_id}: label {record.label.key} not in corpus taxonomy"
                )
            manifest.entries[record.design_id] = entry
            records[record.design_id] = record
        return cls(root, manifest, records)

    # ---------------------------------------------------------------- write

    def add_design(self, record: DesignRecord) -> str:
        record.validate()
        if record.design_id in self._records:
            raise DuplicateDesignError(f"design {record.design_id} already stored")
        if record.label is not None:
            if record.label.key not in {lab.key for lab in self.manifest.taxonomy}:
                raise UnknownLabelError(
                    f"label {record.label.key} not in corpus taxonomy"
                )
        if record.origin != "benchmark" and record.lineage_id not in self._records:
            raise UnknownDesignError(
                f"{record.design_id}: lineage root {record.lineage_id} not in corpus"
            )
        rel_path = f"designs/{record.lineage_id}/{record.design_id}.v"
        digest = content_digest(record.source_text)
        with self._lock:
            target = self.root / rel_path
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(record.source_text, encoding="utf-8")
            self.manifest.entries[record.design_id] = record.manifest_entry(rel_path, digest)
            self._records[record.design_id] = record
            self._write_manifest()
        return record.design_id

    def attach_spec(self, design_id: str, text: str) -> Path:
        if design_id not in self._records:
            raise UnknownDesignError(f"unknown design {design_id}")
        path = self.root / "specs" / f"{design_id}.spec.txt"
        with self._lock:
            path.parent.mkdir(exist_ok=True)
            path.write_text(text, encoding="utf-8")
        return path

    def load_spec(self, design_id: str) -> str | None:
        path = self.root / "specs" / f"{design_id}.spec.txt"
        return path.read_text(encoding="utf-8") if path.exists() else None

    def _write_manifest(self) -> None:
        payload = json.dumps(self.manifest.to_dict(), indent=2, sort_keys=True) + "\n"
        tmp = self.root / (MANIFEST_NAME + ".tmp")
        tmp.write_text(payload, encoding="utf-8")
        tmp.replace(self.root / MANIFEST_NAME)

    # ----------------------------------------------------------------- read

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, design_id: str) -> bool:
        return design_id in self._records

    def __iter__(self) -> Iterator[DesignRecord]:
        for design_id in sorted(self._records):
            yield self._records[design_id]

    @property
    def taxonomy(self) -> tuple[CweLabel, ...]:
        return self.manifest.taxonomy

    def get(self, design_id: str) -> DesignRecord:
        try:
            return self._records[design_id]
        except KeyError:
            raise UnknownDesignError(f"unknown design {design_id}") from None

    def list_by_cwe(self, label: CweLabel) -> list[DesignRecord]:
        if label.key not in {lab.key for lab in self.manifest.taxonomy}:
            raise UnknownLabelError(f"label {label.key} not in corpus taxonomy")
        return [
            rec for rec in self
            if rec.label is not None and rec.label.key == label.key
        ]

    def lineage_of(self, design_id: str) -> tuple[str, tuple[str, ...]]:
        """Lineage root id plus every member design id, sorted."""
        lineage_id = self.get(design_id).lineage_id
        members = tuple(sorted(
            rec.design_id for rec in self._records.values()
            if rec.lineage_id == lineage_id
        ))
        return lineage_id, members

    def lineage_ids(self) -> list[str]:
        return sorted({rec.lineage_id for rec in self._records.values()})

    def labeled_bases(self) -> list[DesignRecord]:
        """Base benchmark designs carrying a vulnerability label, the
        starting set for a replication campaign."""
        return [rec for rec in self if rec.origin == "benchmark" and rec.label]

    def secure_counterpart(self, lineage_id: str) -> DesignRecord | None:
        for rec in self:
            if rec.lineage_id == lineage_id and rec.origin == "secure_counterpart":
                return rec
        return None

    def replicas_of(self, lineage_id: str) -> list[DesignRecord]:
        return [rec for rec in self if rec.lineage_id == lineage_id and rec.origin == "replica"]

    # ------------------------------------------------------------ integrity

    def verify_integrity(self) -> None:
        """Re-hash every stored file against the manifest."""
        for design_id in sorted(self.manifest.entries):
            entry = self.manifest.entries[design_id]
            path = self.root / entry["path"]
            if not path.exists():
                raise IntegrityError(f"missing design file: {entry['path']}")
            if content_digest(path.read_text(encoding="utf-8")) != entry["digest"]:
                raise IntegrityError(
                    f"digest mismatch for {entry['path']}: file was modified"
                )


def with_source(record: DesignRecord, new_source: str) -> DesignRecord:
    """Copy a record with different source text (gate pipelines rewrite
    candidates without touching identity fields)."""
    return replace(record, source_text=new_source)
