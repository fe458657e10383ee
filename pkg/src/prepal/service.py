"""HTTP session service.

Annotation mode lives here: register a dataset once, open a session, and
the server walks the label-retrain-score loop with whoever is on the
other end of the API. Benchmark runs use the same driver in-process, so
an oracle-driven HTTP session reproduces a CLI run index for index.

Sessions are written to disk after every state transition. A process
restart reloads them lazily; the loop model is refit on the next
transition, which reproduces it exactly, so nothing is lost.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from pathlib import Path

from fastapi import Body, FastAPI, HTTPException
from fastapi.responses import Response

from .dataset import (
    DatasetManifest,
    EmbeddingMatrix,
    atomic_write_bytes,
    load_embeddings,
    load_manifest,
)
from .errors import PrepalError, ValidationError
from .protocol import SKIP, SessionConfig, SessionDriver

DATA_ROOT_ENV = "PREPAL_DATA_ROOT"
DEFAULT_DATA_ROOT = ".prepal-data"


class DatasetEntry:
    def __init__(self, name, embeddings_path, manifest_path):
        start = time.perf_counter()
        self.embeddings = load_embeddings(embeddings_path)
        self.manifest = load_manifest(manifest_path)
        self.ingest_seconds = time.perf_counter() - start
        if self.embeddings.n != self.manifest.n:
            raise ValidationError(
                f"embeddings have {self.embeddings.n} rows, "
                f"manifest says {self.manifest.n}"
            )
        self.name = name
        self.embeddings_path = str(embeddings_path)
        self.manifest_path = str(manifest_path)


class SessionEntry:
    """One live session: driver, its partial-label buffer, and a writer lock.

    `busy` is the externally visible retraining flag; readers check it
    without taking the lock so polling stays cheap while a retrain runs.
    """

    def __init__(self, driver: SessionDriver, received: dict | None = None):
        self.driver = driver
        self.received = dict(received or {})
        self.lock = threading.Lock()
        self.busy = False

    def visible_status(self) -> str:
        if self.busy:
            return "retraining"
        return self.driver.status


class ServiceStore:
    """Datasets and sessions, mirrored to a directory tree."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.sessions_dir = self.root / "sessions"
        self.registry_path = self.root / "datasets.json"
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self.datasets: dict[str, DatasetEntry] = {}
        self.sessions: dict[str, SessionEntry] = {}
        self._registry_lock = threading.Lock()
        if self.registry_path.exists():
            registry = json.loads(self.registry_path.read_text(encoding="utf-8"))
            for name, paths in registry.items():
                self.datasets[name] = DatasetEntry(
                    name, paths["embeddings_path"], paths["manifest_path"]
                )

    def _write_registry(self):
        doc = {
            name: {
                "embeddings_path": entry.embeddings_path,
                "manifest_path": entry.manifest_path,
            }
            for name, entry in sorted(self.datasets.items())
        }
        atomic_write_bytes(
            self.registry_path,
            json.dumps(doc, sort_keys=True, indent=2).encode("utf-8"),
        )

    def register_dataset(self, name, embeddings_path, manifest_path) -> DatasetEntry:
        with self._registry_lock:
            if name in self.datasets:
                raise HTTPException(409, f"dataset {name!r} is already registered")
            entry = DatasetEntry(name, embeddings_path, manifest_path)
            self.datasets[name] = entry
            self._write_registry()
            return entry

    def dataset(self, name: str) -> DatasetEntry:
        entry = self.datasets.get(name)
        if entry is None:
            raise HTTPException(404, f"unknown dataset {name!r}")
        return entry

    def _session_path(self, session_id: str) -> Path:
        return self.sessions_dir / f"{session_id}.json"

    def persist_session(self, session_id: str, entry: SessionEntry):
        doc = {
            "session_id": session_id,
            "state": entry.driver.to_state(),
            "received": {str(k): v for k, v in entry.received.items()},
        }
        atomic_write_bytes(
            self._session_path(session_id),
            json.dumps(doc, sort_keys=True, indent=2).encode("utf-8"),
        )

    def create_session(self, dataset_name: str, config: SessionConfig) -> str:
        data = self.dataset(dataset_name)
        driver = SessionDriver(
            data.embeddings,
            data.manifest,
            config,
            ingest_seconds=data.ingest_seconds,
        )
        session_id = uuid.uuid4().hex[:12]
        entry = SessionEntry(driver)
        self.sessions[session_id] = entry
        self.persist_session(session_id, entry)
        return session_id

    def session(self, session_id: str) -> SessionEntry:
        entry = self.sessions.get(session_id)
        if entry is not None:
            return entry
        path = self._session_path(session_id)
        if not path.exists():
            raise HTTPException(404, f"unknown session {session_id!r}")
        doc = json.loads(path.read_text(encoding="utf-8"))
        data = self.dataset(doc["state"]["dataset"])
        driver = SessionDriver.from_state(data.embeddings, data.manifest, doc["state"])
        entry = SessionEntry(driver, received=_parse_received(doc["received"]))
        # a crash between recording a full batch and finishing the retrain
        # leaves the labels on disk; redo the transition, it is deterministic
        if (
            driver.status == "awaiting_labels"
            and driver.pending
            and set(entry.received) >= set(driver.pending)
        ):
            driver.provide_labels(
                {i: entry.received[i] for i in driver.pending}
            )
            entry.received = {}
            self.persist_session(session_id, entry)
        self.sessions[session_id] = entry
        return entry


def _parse_received(doc: dict) -> dict:
    return {int(k): v for k, v in doc.items()}


def _progress(driver: SessionDriver) -> dict:
    cfg = driver.config
    return {
        "labeled": len(driver.labels),
        "budget": cfg.n_init + cfg.T * cfg.b,
        "iteration": driver.t,
        "total_iterations": cfg.T,
    }


def _validate_submission(entry: SessionEntry, labels: dict) -> dict:
    driver = entry.driver
    pending = set(driver.pending)
    parsed = {}
    for key, value in labels.items():
        try:
            idx = int(key)
        except (TypeError, ValueError):
            raise HTTPException(400, f"index {key!r} is not an integer")
        if idx not in pending:
            raise HTTPException(400, f"index {idx} is not in the pending batch")
        if idx in entry.received or idx in parsed:
            raise HTTPException(400, f"index {idx} already has a label")
        if value == SKIP:
            if not driver.config.allow_skip:
                raise HTTPException(400, f"index {idx}: skip is not enabled")
        elif isinstance(value, bool) or not isinstance(value, int):
            raise HTTPException(400, f"index {idx}: label must be an int class id")
        elif not 0 <= value < driver.manifest.num_classes:
            raise HTTPException(
                400,
                f"index {idx}: class {value} outside "
                f"[0, {driver.manifest.num_classes})",
            )
        parsed[idx] = value
    if not parsed:
        raise HTTPException(400, "no labels in submission")
    return parsed


def create_app(data_root: str | os.PathLike | None = None) -> FastAPI:
    root = Path(
        data_root
        if data_root is not None
        else os.environ.get(DATA_ROOT_ENV, DEFAULT_DATA_ROOT)
    )
    app = FastAPI(title="prepal", version="0.1.0")
    store = ServiceStore(root)
    app.state.store = store

    @app.exception_handler(PrepalError)
    def _prepal_error(_, exc: PrepalError):
        return Response(
            content=json.dumps({"detail": str(exc)}),
            status_code=400,
            media_type="application/json",
        )

    @app.post("/datasets")
    def register_dataset(body: dict = Body(...)):
        for field in ("embeddings_path", "manifest_path"):
            if field not in body:
                raise HTTPException(400, f"missing field {field!r}")
        manifest_peek = load_manifest(body["manifest_path"])
        name = body.get("name", manifest_peek.name)
        entry = store.register_dataset(
            name, body["embeddings_path"], body["manifest_path"]
        )
        return {
            "name": entry.name,
            "n": entry.embeddings.n,
            "d": entry.embeddings.d,
            "num_classes": entry.manifest.num_classes,
            "has_texts": entry.manifest.texts is not None,
            "ingest_seconds": entry.ingest_seconds,
        }

    @app.post("/sessions")
    def create_session(body: dict = Body(...)):
        if "dataset" not in body:
            raise HTTPException(400, "missing field 'dataset'")
        config = SessionConfig.from_dict(body.get("config", {}))
        session_id = store.create_session(body["dataset"], config)
        entry = store.sessions[session_id]
        return {
            "session_id": session_id,
            "status": entry.visible_status(),
            "pending_count": len(entry.driver.pending),
            "progress": _progress(entry.driver),
        }

    @app.get("/sessions/{session_id}/query")
    def next_query(session_id: str):
        entry = store.session(session_id)
        driver = entry.driver
        status = entry.visible_status()
        if status == "retraining":
            return {"status": "retraining", "retry": True}
        if status == "complete":
            return {
                "status": "complete",
                "labeled_total": len(driver.labels),
                "final_accuracy": driver.record.final_accuracy,
                "last_step_seconds": driver.last_step_seconds,
            }
        texts = None
        if driver.manifest.texts is not None:
            texts = [driver.manifest.texts[i] for i in driver.pending]
        return {
            "status": status,
            "indices": list(driver.pending),
            "texts": texts,
            "is_seed_batch": driver.pending_is_seed,
            "num_classes": driver.manifest.num_classes,
            "allow_skip": driver.config.allow_skip,
            "already_received": sorted(entry.received),
            "progress": _progress(driver),
            "last_step_seconds": driver.last_step_seconds,
        }

    @app.post("/sessions/{session_id}/labels")
    def submit_labels(session_id: str, body: dict = Body(...)):
        if "labels" not in body or not isinstance(body["labels"], dict):
            raise HTTPException(400, "body must carry a 'labels' object")
        entry = store.session(session_id)
        with entry.lock:
            driver = entry.driver
            if driver.status != "awaiting_labels":
                raise HTTPException(
                    409, f"session is {driver.status}, not awaiting labels"
                )
            parsed = _validate_submission(entry, body["labels"])
            entry.received.update(parsed)
            remaining = [i for i in driver.pending if i not in entry.received]
            if remaining:
                # partial submission: record it durably, no retrain yet
                store.persist_session(session_id, entry)
                return {
                    "status": "awaiting_labels",
                    "accepted": sorted(parsed),
                    "pending_remaining": remaining,
                    "retrain_seconds": None,
                    "progress": _progress(driver),
                }
            # batch complete: persist the labels before computing, then
            # advance; pollers see "retraining" until scoring finishes
            store.persist_session(session_id, entry)
            entry.busy = True
            try:
                driver.provide_labels(dict(entry.received))
                entry.received = {}
                store.persist_session(session_id, entry)
            finally:
                entry.busy = False
            return {
                "status": driver.status,
                "accepted": sorted(parsed),
                "pending_remaining": [],
                "retrain_seconds": driver.last_step_seconds,
                "progress": _progress(driver),
            }

    @app.get("/sessions/{session_id}/status")
    def session_status(session_id: str):
        entry = store.session(session_id)
        driver = entry.driver
        return {
            "session_id": session_id,
            "dataset": driver.manifest.name,
            "status": entry.visible_status(),
            "scorer": driver.config.scorer,
            "protocol": driver.config.protocol,
            "pending_count": len(driver.pending),
            "received_count": len(entry.received),
            "progress": _progress(driver),
            "last_step_seconds": driver.last_step_seconds,
            "truncated": driver.record.truncated,
            "final_accuracy": driver.record.final_accuracy,
        }

    @app.get("/sessions/{session_id}/export")
    def export_session(session_id: str, partial: bool = False):
        entry = store.session(session_id)
        driver = entry.driver
        if driver.status != "complete" and not partial:
            raise HTTPException(
                409,
                f"session is {entry.visible_status()}; "
                "pass ?partial=true to export anyway",
            )
        record = driver.export_record()
        payload = {
            "partial": record.partial,
            "record": record.to_dict(),
            "index_csv": record.index_csv(),
        }
        return Response(
            content=json.dumps(payload, sort_keys=True, indent=2),
            media_type="application/json",
        )

    return app
