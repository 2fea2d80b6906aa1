"""
Artifact store on Django's cache framework plus the run manifest.

Stage results are cached under sha256 keys built from the relevant
configuration section and the hashes of upstream artifacts, so reruns resume
from whatever is already computed. Only the pipeline process writes the
manifest.
"""

from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
import csv
import hashlib
import json
import logging
import time

from django.core.cache import caches

from semiclassical.exceptions import StageError

logger = logging.getLogger(__name__)

CACHE_ALIAS = "artifacts"
KEY_PREFIX = "scarbasis"


def artifact_cache():
    return caches[CACHE_ALIAS]


def artifact_key(stage, digest):
    return f"{KEY_PREFIX}:{stage}:{digest}"


def fetch(stage, digest):
    value = artifact_cache().get(artifact_key(stage, digest))
    logger.debug(f"artifact {stage}:{digest[:12]} {'hit' if value is not None else 'miss'}")
    return value


def store(stage, digest, value):
    artifact_cache().set(artifact_key(stage, digest), value, timeout=None)
    return artifact_key(stage, digest)


def fetch_key(key):
    return artifact_cache().get(key)


def store_key(key, value):
    artifact_cache().set(key, value, timeout=None)
    return key


def cached(stage, digest, compute):
    """Return the cached artifact for (stage, digest), computing and storing it on a miss."""
    value = fetch(stage, digest)
    if value is None:
        value = compute()
        store(stage, digest, value)
    return value


def digest_of(*parts):
    text = json.dumps(parts, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def file_sha256(path):
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_json(path, document):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, sort_keys=True, default=float))
    return path


def write_csv(path, rows, columns=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = list(rows)
    columns = columns or (list(rows[0]) if rows else [])
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row.get(k)) for k in columns})
    return path


def _cell(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ";".join(str(v) for v in value)
    return value


@dataclass
class StageRecord:
    name: str
    status: str = "running"
    digest: str = ""
    seconds: float = 0.0
    cached: bool = False
    files: list = field(default_factory=list)
    error: str = None

    def to_dict(self):
        return {
            "name": self.name,
            "status": self.status,
            "hash": self.digest,
            "seconds": round(self.seconds, 3),
            "cached": self.cached,
            "files": self.files,
            "error": self.error,
        }


class Manifest:
    def __init__(self, output_dir, run_id, config_document):
        self.output_dir = Path(output_dir)
        self.run_id = run_id
        self.config = config_document
        self.stages = []
        self.checks = {}
        self.started = datetime.now(timezone.utc).isoformat()

    @property
    def path(self):
        return self.output_dir / "manifest.json"

    @contextmanager
    def stage(self, name, digest=""):
        record = StageRecord(name, digest=digest)
        self.stages.append(record)
        start = time.perf_counter()
        logger.info(f"stage '{name}' started")
        try:
            yield record
        except Exception as exc:
            record.status = "failed"
            record.error = str(exc)
            record.seconds = time.perf_counter() - start
            self.write()
            logger.error(f"stage '{name}' failed after {record.seconds:.1f}s: {exc}")
            raise StageError(name, exc) from exc
        record.status = "done"
        record.seconds = time.perf_counter() - start
        self.write()
        logger.info(f"stage '{name}' done in {record.seconds:.1f}s{' (cached)' if record.cached else ''}")

    def add_file(self, record, path):
        path = Path(path)
        record.files.append({"path": str(path.relative_to(self.output_dir)), "sha256": file_sha256(path)})
        return path

    def files(self):
        return [f for s in self.stages for f in s.files]

    def to_dict(self):
        return {
            "run_id": self.run_id,
            "started": self.started,
            "config": self.config,
            "stages": [s.to_dict() for s in self.stages],
            "checks": self.checks,
        }

    def write(self):
        return write_json(self.path, self.to_dict())
