"""HTTP service: event ingestion, live lot counts, recommendations, feedback.

Every accepted detection event, issued recommendation and feedback record
is appended to a line-delimited JSON log before it is acknowledged::

    {"type": "detection", "data": {<wire event>}}
    {"type": "recommendation", "data": {"recommendation_id": ..., "best_lot_id": ..., ...}}
    {"type": "feedback", "data": {"recommendation_id": ..., "accepted": true, ...}}

Replaying the detection lines from the start rebuilds the tracker exactly.
Every ``snapshot_interval`` events the full tracker state is checkpointed
next to the log (``<log>.ckpt``) so restarts only replay the tail.
Rejected events go to ``<log>.quarantine`` with their rejection code.

Run with ``python -m parkrec.service --config service.json``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import threading
import time
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Query, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse

from parkrec.geo import GeoPoint
from parkrec.occupancy import (
    OccupancyState,
    OrderingError,
    Registry,
    RegistryError,
    TrackerConfig,
    default_registry,
    load_registry,
)
from parkrec.perception import DetectionEvent, WireFormatError, filter_by_confidence
from parkrec.recommender import NoAvailabilityError, RecommendationRequest, _IdSource, recommend

logger = logging.getLogger(__name__)


class LogCorruptError(Exception):
    def __init__(self, path, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.line_no = line_no


def _now_ms() -> int:
    return int(time.time() * 1000)


@dataclass(frozen=True)
class FeedbackRecord:
    recommendation_id: str
    accepted: bool
    chosen_lot_id: Optional[str] = None
    submitted_at: int = 0

    @classmethod
    def from_wire(cls, obj) -> "FeedbackRecord":
        if not isinstance(obj, dict):
            raise WireFormatError("feedback must be a JSON object")
        rid, accepted = obj.get("recommendation_id"), obj.get("accepted")
        if not isinstance(rid, str) or not isinstance(accepted, bool):
            raise WireFormatError("feedback needs recommendation_id (string) and accepted (boolean)")
        chosen = obj.get("chosen_lot_id")
        if chosen is not None and not isinstance(chosen, str):
            raise WireFormatError("chosen_lot_id must be a string")
        submitted = obj.get("submitted_at", _now_ms())
        if not isinstance(submitted, int) or isinstance(submitted, bool):
            raise WireFormatError("submitted_at must be integer milliseconds")
        return cls(rid, accepted, chosen, submitted)

    def to_wire(self) -> dict:
        return {"recommendation_id": self.recommendation_id, "accepted": self.accepted,
                "chosen_lot_id": self.chosen_lot_id, "submitted_at": self.submitted_at}


class EventLog:
    """Append-only JSON-lines file with a single serialized writer."""

    def __init__(self, path, fsync: bool = True):
        self.path = Path(path)
        self.fsync = fsync
        self._lock = threading.Lock()
        self._fh = open(self.path, "ab")

    def append(self, record_type: str, data: dict) -> int:
        """Write one record durably; returns the byte offset just past it."""
        line = json.dumps({"type": record_type, "data": data}, separators=(",", ":")) + "\n"
        with self._lock:
            self._fh.write(line.encode())
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())
            return self._fh.tell()

    def close(self):
        with self._lock:
            self._fh.close()


def iter_log(path, start_offset: int = 0, start_line: int = 0):
    """Yield ``(line_no, type, data, end_offset)`` for every complete record.

    Plain wire-format event lines (no envelope) are read as detections. A
    final line without its newline is an interrupted append and is skipped.
    """
    path = Path(path)
    if not path.exists():
        return
    with open(path, "rb") as fh:
        fh.seek(start_offset)
        offset, line_no = start_offset, start_line
        for raw in fh:
            line_no += 1
            offset += len(raw)
            if not raw.endswith(b"\n"):
                logger.warning("%s:%d: ignoring torn trailing record", path, line_no)
                return
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise LogCorruptError(path, line_no, f"invalid JSON ({exc})") from None
            if not isinstance(obj, dict):
                raise LogCorruptError(path, line_no, "record is not an object")
            if "type" in obj:
                if obj["type"] not in ("detection", "recommendation", "feedback") or not isinstance(obj.get("data"), dict):
                    raise LogCorruptError(path, line_no, f"unknown record {obj.get('type')!r}")
                yield line_no, obj["type"], obj["data"], offset
            else:
                yield line_no, "detection", obj, offset


@dataclass
class Recovery:
    state: OccupancyState
    recommendations: dict = field(default_factory=dict)
    feedback_counts: Counter = field(default_factory=Counter)
    events_applied: int = 0
    offset: int = 0
    line: int = 0
    issued: int = 0


def _checkpoint_path(log_path) -> Path:
    return Path(str(log_path) + ".ckpt")


def write_checkpoint(log_path, rec: Recovery) -> None:
    body = {
        "offset": rec.offset,
        "line": rec.line,
        "events_applied": rec.events_applied,
        "issued": rec.issued,
        "state": rec.state.to_dict(),
        "recommendations": rec.recommendations,
        "feedback_counts": dict(rec.feedback_counts),
    }
    target = _checkpoint_path(log_path)
    tmp = target.with_suffix(target.suffix + ".tmp")
    tmp.write_text(json.dumps(body, separators=(",", ":")))
    os.replace(tmp, target)


def _load_checkpoint(log_path, registry: Registry, config: TrackerConfig) -> Optional[Recovery]:
    path = _checkpoint_path(log_path)
    if not path.exists():
        return None
    try:
        body = json.loads(path.read_text())
        if body["state"]["config"] != config.to_dict():
            logger.info("checkpoint uses a different tracker config; replaying from genesis")
            return None
        if Path(log_path).stat().st_size < body["offset"]:
            logger.warning("checkpoint is ahead of the log; replaying from genesis")
            return None
        state = OccupancyState.from_dict(body["state"], registry)
    except (OSError, ValueError, KeyError) as exc:
        logger.warning("unusable checkpoint %s (%s); replaying from genesis", path, exc)
        return None
    return Recovery(state, body["recommendations"], Counter(body["feedback_counts"]),
                    body["events_applied"], body["offset"], body["line"], body["issued"])


def recover(log_path, registry: Registry, config: TrackerConfig = TrackerConfig(),
            use_checkpoint: bool = True) -> Recovery:
    """Rebuild tracker state and the recommendation index from a log.

    A snapshot is taken at genesis and after every applied event, the same
    cadence the live service publishes at, so snapshot versions line up.
    """
    rec = _load_checkpoint(log_path, registry, config) if use_checkpoint else None
    if rec is None:
        rec = Recovery(OccupancyState(registry, config))
        rec.state.snapshot()
    state = rec.state
    for line_no, kind, data, offset in iter_log(log_path, rec.offset, rec.line):
        if kind == "detection":
            try:
                event = DetectionEvent.from_wire(data)
                state.apply_event(filter_by_confidence(event, config.confidence_threshold))
            except (WireFormatError, RegistryError, OrderingError) as exc:
                raise LogCorruptError(log_path, line_no, str(exc)) from None
            state.snapshot()
            rec.events_applied += 1
        elif kind == "recommendation":
            rec.recommendations[data["recommendation_id"]] = data.get("best_lot_id")
            rec.issued += 1
        else:
            rec.feedback_counts[data["recommendation_id"]] += 1
        rec.offset, rec.line = offset, line_no
    return rec


def replay_log(log_path, registry: Registry, config: TrackerConfig = TrackerConfig(),
               use_checkpoint: bool = False) -> OccupancyState:
    return recover(log_path, registry, config, use_checkpoint).state


def read_feedback(log_path) -> list:
    return [FeedbackRecord.from_wire(data) for _, kind, data, _ in iter_log(log_path) if kind == "feedback"]


@dataclass
class IngestResult:
    accepted: bool
    code: Optional[str] = None
    detail: str = ""
    snapshot_version: Optional[int] = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        if self.accepted:
            return {"accepted": True, "snapshot_version": self.snapshot_version, "diagnostics": self.diagnostics}
        return {"rejected": True, "code": self.code, "detail": self.detail}


class ParkingService:
    """Transport-independent core of the HTTP service.

    Event application and log appends are serialized under one lock;
    readers only ever touch the published, immutable snapshot.
    """

    def __init__(self, registry: Registry, log_path, tracker: TrackerConfig = TrackerConfig(),
                 snapshot_interval: int = 1000, queue_depth: int = 1024, fsync: bool = True):
        self.registry = registry
        self.tracker = tracker
        self.snapshot_interval = snapshot_interval
        self.queue_depth = queue_depth
        self.log_path = Path(log_path)
        self.quarantine_path = Path(str(log_path) + ".quarantine")
        self._recovery = recover(self.log_path, registry, tracker)
        self.state = self._recovery.state
        self._snapshot = self.state.latest
        self._recommendations = dict(self._recovery.recommendations)
        self._feedback_counts = Counter(self._recovery.feedback_counts)
        self._ids = _IdSource(self._recovery.issued + 1)
        if self.log_path.exists() and self.log_path.stat().st_size > self._recovery.offset:
            logger.warning("truncating %s to %d bytes (interrupted append)", self.log_path, self._recovery.offset)
            os.truncate(self.log_path, self._recovery.offset)
        self._log = EventLog(self.log_path, fsync=fsync)
        self._write_lock = threading.Lock()
        self._pending = defaultdict(int)
        self._pending_lock = threading.Lock()
        self._quarantine_lock = threading.Lock()
        self._since_checkpoint = 0

    @property
    def snapshot(self):
        return self._snapshot

    def close(self):
        self._log.close()

    def _quarantine(self, raw, code: str, detail: str) -> IngestResult:
        if isinstance(raw, (bytes, bytearray)):
            raw = raw.decode("utf-8", errors="replace")
        if not isinstance(raw, str):
            raw = json.dumps(raw)
        line = json.dumps({"code": code, "detail": detail, "raw": raw, "at": _now_ms()}) + "\n"
        with self._quarantine_lock, open(self.quarantine_path, "a") as fh:
            fh.write(line)
        return IngestResult(False, code, detail)

    def ingest(self, raw) -> IngestResult:
        try:
            event = DetectionEvent.from_wire(raw) if isinstance(raw, dict) else DetectionEvent.from_json(raw)
        except WireFormatError as exc:
            return self._quarantine(raw, "schema", str(exc))
        if event.lot_id not in self.registry:
            return self._quarantine(raw, "registry-miss", f"unknown lot {event.lot_id!r}")
        if event.camera_id not in self.registry[event.lot_id].camera_ids:
            return self._quarantine(raw, "unknown-camera", f"camera {event.camera_id!r} not at lot {event.lot_id!r}")

        with self._pending_lock:
            if self._pending[event.camera_id] >= self.queue_depth:
                return IngestResult(False, "overloaded", "camera queue full, retry later")
            self._pending[event.camera_id] += 1
        try:
            with self._write_lock:
                try:
                    self.state.check_event(event)
                except OrderingError as exc:
                    return self._quarantine(raw, "stale-frame", str(exc))
                offset = self._log.append("detection", event.to_wire())
                result = self.state.apply_event(filter_by_confidence(event, self.tracker.confidence_threshold))
                self._snapshot = self.state.snapshot()
                rec = self._recovery
                rec.events_applied += 1
                rec.offset = offset
                rec.line += 1
                self._since_checkpoint += 1
                if self._since_checkpoint >= self.snapshot_interval:
                    self._checkpoint()
                return IngestResult(True, snapshot_version=self._snapshot.version, diagnostics=result.to_dict())
        finally:
            with self._pending_lock:
                self._pending[event.camera_id] -= 1

    def _checkpoint(self):
        rec = self._recovery
        rec.recommendations = dict(self._recommendations)
        rec.feedback_counts = Counter(self._feedback_counts)
        write_checkpoint(self.log_path, rec)
        self._since_checkpoint = 0

    def lots(self) -> dict:
        snap = self._snapshot
        updated = dict(self.state.lot_updated_ms)
        return {
            "snapshot_version": snap.version,
            "as_of": snap.as_of,
            "lots": [dict(lot.to_dict(), m=snap.counts.get(lot.lot_id, 0), last_update_ms=updated.get(lot.lot_id))
                     for lot in self.registry],
        }

    def recommend(self, lat: float, lon: float, alpha: float = 0.5, top_k: Optional[int] = None) -> dict:
        """Raises ``ValueError`` on bad parameters; full lots give a ``no-availability`` body."""
        request = RecommendationRequest(GeoPoint(lat, lon), alpha, top_k)
        snap = self._snapshot
        try:
            rec = recommend(snap, self.registry, request, recommendation_id=self._ids())
        except NoAvailabilityError:
            return {"status": "no-availability", "snapshot_version": snap.version, "request": request.to_dict()}
        body = dict(rec.to_dict(), status="ok")
        with self._write_lock:
            offset = self._log.append("recommendation", {
                "recommendation_id": rec.recommendation_id,
                "best_lot_id": rec.best.lot_id,
                "snapshot_version": snap.version,
                "request": request.to_dict(),
                "issued_at": _now_ms(),
            })
            self._recommendations[rec.recommendation_id] = rec.best.lot_id
            self._recovery.issued += 1
            self._recovery.offset = offset
            self._recovery.line += 1
        return body

    def feedback(self, raw) -> dict:
        try:
            record = FeedbackRecord.from_wire(json.loads(raw) if isinstance(raw, (str, bytes)) else raw)
        except (WireFormatError, json.JSONDecodeError) as exc:
            return {"rejected": True, "code": "schema", "detail": str(exc)}
        if record.recommendation_id not in self._recommendations:
            return {"rejected": True, "code": "unknown-recommendation", "detail": record.recommendation_id}
        best = self._recommendations[record.recommendation_id]
        if record.accepted and record.chosen_lot_id is not None and record.chosen_lot_id != best:
            return {"rejected": True, "code": "inconsistent",
                    "detail": f"accepted feedback names lot {record.chosen_lot_id!r}, recommended {best!r}"}
        with self._write_lock:
            duplicate = self._feedback_counts[record.recommendation_id] > 0
            offset = self._log.append("feedback", dict(record.to_wire(), duplicate=duplicate))
            self._feedback_counts[record.recommendation_id] += 1
            self._recovery.offset = offset
            self._recovery.line += 1
        return {"accepted": True, "duplicate": duplicate}


def create_app(service: ParkingService) -> FastAPI:
    app = FastAPI(title="parkrec")
    status_for = {"schema": 400, "registry-miss": 404, "unknown-camera": 404, "stale-frame": 409,
                  "overloaded": 503, "unknown-recommendation": 404, "inconsistent": 422}

    @app.post("/v1/events")
    async def post_event(request: Request):
        body = await request.body()
        result = await run_in_threadpool(service.ingest, body)
        return JSONResponse(result.to_dict(), status_code=200 if result.accepted else status_for[result.code])

    @app.get("/v1/lots")
    def get_lots():
        return service.lots()

    @app.get("/v1/recommend")
    def get_recommend(lat: float, lon: float, alpha: float = 0.5, k: Optional[int] = Query(None)):
        try:
            return service.recommend(lat, lon, alpha, k)
        except ValueError as exc:
            return JSONResponse({"error": "validation", "detail": str(exc)}, status_code=422)

    @app.post("/v1/feedback")
    async def post_feedback(request: Request):
        body = await request.body()
        result = await run_in_threadpool(service.feedback, body)
        code = 200 if result.get("accepted") else status_for[result["code"]]
        return JSONResponse(result, status_code=code)

    return app


@dataclass(frozen=True)
class ServiceConfig:
    listen: str = "127.0.0.1:8080"
    registry_path: Optional[str] = None
    log_path: str = "parkrec-events.log"
    tracker: TrackerConfig = TrackerConfig()
    snapshot_interval: int = 1000
    queue_depth: int = 1024

    @property
    def host_port(self) -> tuple:
        host, _, port = self.listen.rpartition(":")
        return host or "127.0.0.1", int(port)

    def build_service(self, fsync: bool = True) -> ParkingService:
        registry = load_registry(self.registry_path) if self.registry_path else default_registry()
        return ParkingService(registry, self.log_path, self.tracker, self.snapshot_interval,
                              self.queue_depth, fsync=fsync)


ENV_VARS = {"listen": "PARKREC_LISTEN", "registry_path": "PARKREC_REGISTRY", "log_path": "PARKREC_LOG"}


def load_config(path=None, env=None, **overrides) -> ServiceConfig:
    """Defaults, then config file, then environment, then explicit overrides."""
    env = os.environ if env is None else env
    cfg = ServiceConfig()
    if path:
        with open(path) as fh:
            doc = json.load(fh)
        tracker = TrackerConfig.from_dict(doc.pop("tracker", None))
        unknown = set(doc) - {"listen", "registry_path", "log_path", "snapshot_interval", "queue_depth"}
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        base = Path(path).parent
        for key in ("registry_path", "log_path"):
            if doc.get(key):
                doc[key] = str(base / doc[key])
        cfg = replace(cfg, tracker=tracker, **doc)
    cfg = replace(cfg, **{key: env[var] for key, var in ENV_VARS.items() if env.get(var)})
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


class ServerThread:
    """Run the HTTP app on a background thread; ``port=0`` picks a free port."""

    def __init__(self, service: ParkingService, host: str = "127.0.0.1", port: int = 0):
        import uvicorn

        config = uvicorn.Config(create_app(service), host=host, port=port, log_level="warning", access_log=False)
        self.server = uvicorn.Server(config)
        self._thread = threading.Thread(target=self.server.run, daemon=True)
        self.host = host

    def __enter__(self) -> "ServerThread":
        self._thread.start()
        deadline = time.monotonic() + 10
        while not self.server.started:
            if time.monotonic() > deadline or not self._thread.is_alive():
                raise RuntimeError("server failed to start")
            time.sleep(0.01)
        port = self.server.servers[0].sockets[0].getsockname()[1]
        self.url = f"http://{self.host}:{port}"
        return self

    def __exit__(self, *exc):
        self.server.should_exit = True
        self._thread.join(timeout=10)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="parkrec-service", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--listen", help="host:port")
    parser.add_argument("--registry", dest="registry_path", help="lot registry JSON")
    parser.add_argument("--log", dest="log_path", help="event log path")
    parser.add_argument("--snapshot-interval", type=int)
    parser.add_argument("--queue-depth", type=int)
    args = parser.parse_args(argv)
    cfg = load_config(args.config, listen=args.listen, registry_path=args.registry_path, log_path=args.log_path,
                      snapshot_interval=args.snapshot_interval, queue_depth=args.queue_depth)
    logging.basicConfig(level=logging.INFO)
    import uvicorn

    service = cfg.build_service()
    host, port = cfg.host_port
    try:
        uvicorn.run(create_app(service), host=host, port=port)
    finally:
        service.close()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
