"""Local HTTP + event-stream service: the web UI's view of the workbench.

All ML and protocol work happens in the core modules; this layer adapts it
to resource-style endpoints plus two server-sent-event streams (training
progress, heatmap frames). Device access rides the client's one-transaction
lock, so concurrent API calls cannot interleave wire traffic.
"""

import asyncio
import base64
import json
import logging
import queue
import threading
import time
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response, StreamingResponse

from . import codec, dataset as ds, model
from .client import DeviceClientError, DeviceLink, connect
from .codec import ConfigInvalid, TrainConfig
from .protocol import heatmap_to_rgb

log = logging.getLogger(__name__)

PROGRESS_EVERY = 10      # batches between routine training events


class ServiceError(Exception):
    def __init__(self, status: int, message: str, **extra):
        super().__init__(message)
        self.status = status
        self.payload = {"error": {"message": message, **extra}}


class Broadcast:
    """Fan-out of events to any number of subscriber queues."""

    def __init__(self):
        self._subs: list[queue.Queue] = []
        self._lock = threading.Lock()

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue()
        with self._lock:
            self._subs.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subs:
                self._subs.remove(q)

    def publish(self, item) -> None:
        with self._lock:
            subs = list(self._subs)
        for q in subs:
            q.put(item)

    def __len__(self):
        with self._lock:
            return len(self._subs)


class TrainingSession(threading.Thread):
    """Background training run emitting progress events.

    Events go out every PROGRESS_EVERY batches and on every state or status
    transition (started, paused, resumed, stopped, finished, label change).
    """

    def __init__(self, state: model.TrainState, train_set, *, target_epochs: int,
                 augment_enabled: bool, events: Broadcast):
        super().__init__(daemon=True, name="training-session")
        self.trainer = model.Trainer(state, train_set,
                                     augment_enabled=augment_enabled)
        self.target_epochs = target_epochs
        self.events = events
        self.run_state = "running"
        self.error: str | None = None
        self._go = threading.Event()
        self._go.set()
        self._paused_ack = threading.Event()
        self._stop_requested = threading.Event()
        self._last_status = None

    # -- controls (called from API threads) -------------------------------

    def pause(self) -> None:
        self.trainer.pause()
        self._go.clear()
        # wait for the in-flight batch so "paused" means the counter is frozen
        if self.is_alive():
            self._paused_ack.wait(timeout=10.0)
        self.run_state = "paused"
        self.emit("paused")

    def resume(self) -> None:
        self._paused_ack.clear()
        self.trainer.resume()
        self._go.set()
        self.run_state = "running"
        self.emit("resumed")

    def stop(self) -> None:
        self._stop_requested.set()
        self._go.set()          # unblock a paused run so it can exit
        self.trainer.resume()

    @property
    def state(self) -> model.TrainState:
        return self.trainer.state

    def snapshot(self) -> dict:
        st = self.state
        avg = st.avg_recent_loss()
        return {
            "state": self.run_state,
            "batch": st.batch_counter,
            "epoch": st.epoch_counter,
            "targetEpochs": self.target_epochs,
            "avgLoss": None if avg == float("inf") else round(avg, 6),
            "status": st.status().value,
            "error": self.error,
        }

    def emit(self, reason: str) -> None:
        event = self.snapshot()
        event["event"] = reason
        self.events.publish(event)

    # -- worker ------------------------------------------------------------

    def run(self) -> None:
        self.emit("started")
        self._last_status = self.state.status()
        try:
            while not self._stop_requested.is_set():
                if not self._go.wait(timeout=0.1):
                    self._paused_ack.set()
                    continue
                if self.state.epoch_counter >= self.target_epochs:
                    break
                result = self.trainer.step()
                if result is None:
                    continue
                status_changed = result.status is not self._last_status
                self._last_status = result.status
                if status_changed:
                    self.emit("status")
                elif result.batch % PROGRESS_EVERY == 0:
                    self.emit("progress")
        except Exception as exc:
            log.exception("training failed")
            self.error = str(exc)
            self.run_state = "error"
            self.emit("error")
            return
        self.run_state = ("stopped" if self._stop_requested.is_set()
                          else "finished")
        self.emit(self.run_state)


class Workbench:
    """Shared state behind the API: project folder, device link, training."""

    def __init__(self, project_root, endpoint: str | None = "sim",
                 camera_dir=None):
        self.root = Path(project_root)
        self.config = ds.load_project_config(self.root)
        self.link: DeviceLink | None = None
        self.endpoint_text = endpoint
        if endpoint is not None:
            sd_root = self.root if endpoint == "sim" else None
            self.link = connect(endpoint, sd_root=sd_root, camera_dir=camera_dir)
        self.session: TrainingSession | None = None
        self.train_events = Broadcast()
        self.heatmap_events = Broadcast()
        self._weights: model.ModelWeights | None = None
        self._lock = threading.Lock()
        self._heatmap_wired = False
        self._heatmap_refs = 0
        self._heatmap_lock = threading.Lock()

    # -- pieces ------------------------------------------------------------

    def reload_config(self) -> TrainConfig:
        self.config = ds.load_project_config(self.root)
        return self.config

    def client(self):
        if self.link is None:
            raise ServiceError(503, "no device endpoint configured")
        return self.link.client

    def current_weights(self) -> model.ModelWeights:
        """Live training weights, else the last exported ones, else fresh."""
        if self.session is not None:
            return self.session.state.weights
        if self._weights is not None:
            return self._weights
        bin_path = self.root / ds.HEADER_DIR / self.config.weights_file
        if bin_path.is_file():
            try:
                bundle = codec.decode_bin(bin_path.read_bytes())
                self._weights = codec.bundle_to_weights(bundle)
                return self._weights
            except codec.WeightCodecError as exc:
                log.warning("stored weights unreadable: %s", exc)
        self._weights = model.build_model(self.config.to_spec(), seed=0)
        return self._weights

    def start_training(self, *, epochs: int, batch_size: int, learning_rate: float,
                       mode: model.EpochMode, seed: int, augment: bool,
                       holdout: int) -> TrainingSession:
        with self._lock:
            if self.session is not None and self.session.is_alive():
                raise ServiceError(409, "training already running")
            images = ds.ingest(self.root, self.config)
            if holdout > 0:
                train_set, _ = ds.split(images, ds.SplitSpec.fixed(holdout, seed=seed))
            else:
                train_set = images
            weights = model.build_model(self.config.to_spec(), seed=seed)
            state = model.init_train_state(
                weights, learning_rate=learning_rate, batch_size=batch_size,
                mode=mode, seed=seed)
            session = TrainingSession(state, train_set, target_epochs=epochs,
                                      augment_enabled=augment,
                                      events=self.train_events)
            self.session = session
            session.start()
            return session

    def export_weights(self) -> dict:
        weights = self.current_weights()
        meta = self.config.to_header_meta()
        bundle = codec.weights_to_bundle(weights, meta)
        header_dir = self.root / ds.HEADER_DIR
        header_dir.mkdir(parents=True, exist_ok=True)
        bin_path = header_dir / self.config.weights_file
        blob = codec.encode_bin(bundle)
        bin_path.write_bytes(blob)
        h_path = header_dir / ds.WEIGHTS_H_NAME
        h_path.write_text(codec.emit_c_header(bundle))
        self._weights = weights.clone()
        return {"files": [str(bin_path), str(h_path)], "binBytes": len(blob)}

    def deploy(self) -> dict:
        """Copy header/ onto the card through the wire protocol."""
        client = self.client()
        header_dir = self.root / ds.HEADER_DIR
        if not header_dir.is_dir():
            raise ServiceError(400, "nothing exported yet: header/ is missing")
        sent = []
        for path in sorted(header_dir.iterdir()):
            if not path.is_file():
                continue
            client.sd_write(f"/{ds.HEADER_DIR}/{path.name}", path.read_bytes())
            sent.append(path.name)
        return {"deployed": sent}

    def reboot_device(self) -> list:
        if self.link is None or self.link.device is None:
            raise ServiceError(400, "reboot is only available on the simulator")
        lines = self.link.device.boot()
        # push the banner to anyone watching the raw log
        self.link.server._send(lines)
        return lines

    # -- heatmap stream ------------------------------------------------------

    def _on_heatmap(self, frame) -> None:
        rgb = heatmap_to_rgb(frame)
        self.heatmap_events.publish({
            "rows": frame.rows,
            "cols": frame.cols,
            "data": base64.b64encode(frame.data).decode("ascii"),
            "rgb": base64.b64encode(rgb).decode("ascii"),
        })

    def heatmap_acquire(self) -> queue.Queue:
        client = self.client()
        with self._heatmap_lock:
            if not self._heatmap_wired:
                client.add_heatmap_listener(self._on_heatmap)
                self._heatmap_wired = True
            q = self.heatmap_events.subscribe()
            self._heatmap_refs += 1
            if self._heatmap_refs == 1:
                try:
                    client.heatmap(True)
                except DeviceClientError as exc:
                    self._heatmap_refs -= 1
                    self.heatmap_events.unsubscribe(q)
                    raise ServiceError(502, f"device refused HEATMAP_ON: {exc}")
        return q

    def heatmap_release(self, q: queue.Queue) -> None:
        with self._heatmap_lock:
            self.heatmap_events.unsubscribe(q)
            self._heatmap_refs = max(0, self._heatmap_refs - 1)
            if self._heatmap_refs == 0 and self.link is not None:
                try:
                    self.link.client.heatmap(False)
                except DeviceClientError:
                    pass

    def close(self) -> None:
        if self.session is not None and self.session.is_alive():
            self.session.stop()
            self.session.join(timeout=5.0)
        if self.link is not None:
            self.link.close()


# ----------------------------------------------------------------------
# app wiring
# ----------------------------------------------------------------------

def _config_payload(config: TrainConfig) -> dict:
    return json.loads(codec.emit_config(config))


async def _sse(source: Broadcast, acquire=None, release=None, *,
               limit: int | None = None, heartbeat: float = 15.0):
    """Generator for one event-stream subscription; JSON per 'data:' line."""
    q = acquire() if acquire is not None else source.subscribe()
    try:
        sent = 0
        last_beat = time.monotonic()
        while limit is None or sent < limit:
            try:
                item = q.get_nowait()
            except queue.Empty:
                if time.monotonic() - last_beat > heartbeat:
                    last_beat = time.monotonic()
                    yield ": keep-alive\n\n"
                await asyncio.sleep(0.02)
                continue
            yield f"data: {json.dumps(item)}\n\n"
            sent += 1
    finally:
        if release is not None:
            release(q)
        else:
            source.unsubscribe(q)


def create_app(project_root, endpoint: str | None = "sim",
               camera_dir=None) -> FastAPI:
    bench = Workbench(project_root, endpoint, camera_dir)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        bench.close()

    app = FastAPI(title="tinyvision service", lifespan=lifespan)
    app.state.bench = bench
    # The web UI is typically opened straight from disk, so its origin never
    # matches ours. The service binds localhost; open CORS is fine here.
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(ServiceError)
    async def service_error(request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status, content=exc.payload)

    @app.exception_handler(DeviceClientError)
    async def device_error(request: Request, exc: DeviceClientError):
        payload = {"error": {"message": str(exc),
                             "retryable": bool(getattr(exc, "retryable", False))}}
        return JSONResponse(status_code=502, content=payload)

    # -- config ----------------------------------------------------------

    @app.get("/api/config")
    async def get_config():
        return _config_payload(bench.config)

    @app.put("/api/config")
    async def put_config(request: Request):
        body = await request.body()
        try:
            config = codec.parse_config(body.decode("utf-8"))
        except ConfigInvalid as exc:
            raise ServiceError(400, str(exc), field=exc.field)
        except (UnicodeDecodeError, ValueError) as exc:
            raise ServiceError(400, f"config is not valid JSON: {exc}")
        ds.save_project_config(bench.root, config)
        bench.config = config
        return _config_payload(config)

    # -- dataset -----------------------------------------------------------

    @app.get("/api/classes")
    async def get_classes():
        labels = bench.config.class_labels
        counts = ds.class_counts(bench.root, labels)
        return {"labels": labels, "counts": counts}

    @app.post("/api/capture")
    async def post_capture(label: str, request: Request):
        data = await request.body()
        if not data:
            raise ServiceError(400, "empty capture body")
        try:
            path = ds.save_capture(data, label, bench.root)
        except ds.UnknownLabel as exc:
            raise ServiceError(400, str(exc))
        except Exception as exc:
            raise ServiceError(400, f"capture not storable: {exc}")
        counts = ds.class_counts(bench.root, [label])
        return {"path": str(path), "label": label, "count": counts[label]}

    # -- SD browser ----------------------------------------------------------

    @app.get("/api/sd")
    async def sd_list(path: str = "/"):
        entries = bench.client().sd_list(path)
        return {"path": path,
                "entries": [{"name": e.name, "isDir": e.is_dir, "size": e.size}
                            for e in entries]}

    @app.get("/api/sd/file")
    async def sd_read(path: str):
        data = bench.client().sd_read_bytes(path)
        return Response(content=data, media_type="application/octet-stream")

    @app.put("/api/sd/file")
    async def sd_write(path: str, request: Request):
        data = await request.body()
        message = bench.client().sd_write(path, data)
        return {"message": message, "bytes": len(data)}

    @app.delete("/api/sd/file")
    async def sd_delete(path: str):
        bench.client().sd_delete(path)
        return {"deleted": path}

    @app.delete("/api/sd/dir")
    async def sd_rmdir(path: str):
        bench.client().sd_rmdir(path)
        return {"deleted": path}

    # -- training ------------------------------------------------------------

    @app.post("/api/train/start")
    async def train_start(request: Request):
        body = await request.body()
        try:
            opts = json.loads(body) if body else {}
        except ValueError as exc:
            raise ServiceError(400, f"request body is not valid JSON: {exc}")
        cfg = bench.config
        mode_text = opts.get("mode", "all")
        try:
            mode = (model.EpochMode.USE_ALL_DATA if mode_text == "all"
                    else model.EpochMode.RANDOM_BATCH if mode_text == "random"
                    else None)
            if mode is None:
                raise ServiceError(400, f"mode must be 'all' or 'random', "
                                        f"got {mode_text!r}")
            session = bench.start_training(
                epochs=int(opts.get("epochs", cfg.target_epochs)),
                batch_size=int(opts.get("batchSize", cfg.batch_size)),
                learning_rate=float(opts.get("learningRate", cfg.learning_rate)),
                mode=mode,
                seed=int(opts.get("seed", 0)),
                augment=bool(opts.get("augment", cfg.use_augmentation)),
                holdout=int(opts.get("holdout", cfg.validation_images)),
            )
        except ds.DatasetError as exc:
            raise ServiceError(400, str(exc))
        except ValueError as exc:
            raise ServiceError(400, str(exc))
        return session.snapshot()

    def _session_or_404(active_only: bool = True) -> TrainingSession:
        session = bench.session
        if session is None:
            raise ServiceError(404, "no training session")
        if active_only and not session.is_alive():
            raise ServiceError(409, f"training already {session.run_state}")
        return session

    @app.post("/api/train/pause")
    async def train_pause():
        session = _session_or_404()
        session.pause()
        return session.snapshot()

    @app.post("/api/train/resume")
    async def train_resume():
        session = _session_or_404()
        session.resume()
        return session.snapshot()

    @app.post("/api/train/stop")
    async def train_stop():
        session = _session_or_404()
        session.stop()
        session.join(timeout=10.0)
        return session.snapshot()

    @app.get("/api/train/status")
    async def train_status():
        if bench.session is None:
            return {"state": "idle", "batch": 0, "epoch": 0, "avgLoss": None,
                    "status": None, "targetEpochs": None, "error": None}
        return bench.session.snapshot()

    @app.get("/api/train/events")
    async def train_events(limit: int | None = None):
        return StreamingResponse(_sse(bench.train_events, limit=limit),
                                 media_type="text/event-stream")

    # -- evaluation ------------------------------------------------------------

    @app.get("/api/confusion")
    async def confusion():
        try:
            images = ds.ingest(bench.root, bench.config)
        except ds.IngestError as exc:
            raise ServiceError(400, str(exc))
        weights = bench.current_weights()
        matrix = model.confusion_matrix(weights, images)
        return {"labels": bench.config.class_labels,
                "matrix": matrix.tolist(),
                "total": int(matrix.sum())}

    # -- export / deploy ---------------------------------------------------------

    @app.post("/api/export")
    async def export():
        return bench.export_weights()

    @app.post("/api/deploy")
    async def deploy():
        return bench.deploy()

    @app.post("/api/device/reboot")
    async def reboot():
        return {"bootLog": bench.reboot_device()}

    @app.get("/api/device/status")
    async def device_status():
        connected = bench.link is not None
        info = {"connected": connected,
                "endpoint": bench.endpoint_text if connected else None}
        if connected and bench.link.device is not None:
            dev = bench.link.device
            info["simulated"] = True
            info["weightsLoaded"] = dev.weights is not None
            info["heatmapOn"] = dev.heatmap_on
        return info

    # -- heatmap stream -----------------------------------------------------------

    @app.get("/api/heatmap/events")
    async def heatmap_events(limit: int | None = None):
        return StreamingResponse(
            _sse(bench.heatmap_events, acquire=bench.heatmap_acquire,
                 release=bench.heatmap_release, limit=limit),
            media_type="text/event-stream")

    return app


def run_service(project_root, *, port: int = 8645, endpoint: str | None = "sim",
                camera_dir=None, host: str = "127.0.0.1") -> None:
    import uvicorn
    app = create_app(project_root, endpoint, camera_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
