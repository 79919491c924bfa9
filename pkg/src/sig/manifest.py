"""Durable per-image records: the dataset is whatever the manifest says.

JSON Lines, one record per line, stable field order, append-only during a
run. A rerun may append a newer record for the same (identity_id, pose);
consumers read the *latest* record per key. ``status`` is one of
planned / generated / failed, and generated records always carry the
image path plus its SHA-256.
"""

import hashlib
import json
import os
from dataclasses import dataclass, replace
from datetime import datetime, timezone

STATUS_PLANNED = "planned"
STATUS_GENERATED = "generated"
STATUS_FAILED = "failed"

_FIELDS = (
    "identity_id",
    "pose",
    "demographics",
    "triplet_key",
    "prompt_sha256",
    "generation_seed",
    "model_id",
    "image_path",
    "image_sha256",
    "status",
    "attempts",
    "created_at",
    "updated_at",
)


def utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def image_id(identity_id: str, pose: str) -> str:
    return f"{identity_id}_{pose}"


def prompt_fingerprint(positive_prompt: str, negative_prompt: str) -> str:
    """SHA-256 over 'positive 0x1F negative', UTF-8."""
    payload = positive_prompt.encode("utf-8") + b"\x1f" + negative_prompt.encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


@dataclass
class ManifestRecord:
    identity_id: str
    pose: str
    demographics: dict
    triplet_key: str
    prompt_sha256: str
    generation_seed: int
    model_id: str = ""
    image_path: str = ""
    image_sha256: str = ""
    status: str = STATUS_PLANNED
    attempts: int = 0
    created_at: str = ""
    updated_at: str = ""

    @property
    def key(self):
        return (self.identity_id, self.pose)

    @property
    def image_id(self) -> str:
        return image_id(self.identity_id, self.pose)

    @property
    def race(self) -> str:
        return self.demographics.get("race", "")

    def to_json_line(self) -> str:
        d = {name: getattr(self, name) for name in _FIELDS}
        return json.dumps(d, ensure_ascii=False)

    @classmethod
    def from_json_line(cls, line: str) -> "ManifestRecord":
        d = json.loads(line)
        return cls(**{name: d[name] for name in _FIELDS})

    def without_timestamps(self) -> "ManifestRecord":
        return replace(self, created_at="", updated_at="")


class DatasetManifest:
    """In-memory view over a manifest file's full record history."""

    def __init__(self, records=()):
        self.records = list(records)

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        records = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(ManifestRecord.from_json_line(line))
        return cls(records)

    def latest(self) -> dict:
        """Last record per (identity_id, pose), in first-seen key order."""
        out = {}
        for rec in self.records:
            out[rec.key] = rec
        return out

    def generated(self):
        return [r for r in self.latest().values() if r.status == STATUS_GENERATED]

    def __len__(self):
        return len(self.records)


class ManifestWriter:
    """Append-only writer; every record is flushed to disk immediately so
    an interrupted run leaves a valid prefix behind."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "a", encoding="utf-8")

    def append(self, record: ManifestRecord):
        self._fh.write(record.to_json_line() + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self):
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()
