"""Live steering service around one embedding run.

One driver thread advances the particle system; a WebSocket fan-out streams
decimated frames to any number of clients; control messages are validated on
receipt and applied atomically at iteration boundaries. Slow clients drop
frames rather than delaying the driver. A plain HTTP snapshot endpoint serves
the current full-resolution embedding as CSV.
"""

import asyncio
import io
import json
import queue
import threading
import time

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, PlainTextResponse

from .engine import run_embedding
from .errors import IvhdError
from .manifest import RunManifest
from .optim import OPTIMIZER_KINDS

_CONTROL_PARAMS = ("c", "b", "optimizer", "rn_resample_period")


class _RestartRequested(Exception):
    def __init__(self, seed):
        self.seed = seed


class SteerServer:
    """Owns the run, the frame fan-out and the control queue."""

    def __init__(self, config, dataset=None, graph=None, manifest=None,
                 frame_interval=10, frame_cap=50000, threads=1):
        if frame_interval < 1:
            raise IvhdError("frame_interval must be >= 1")
        self.config = config
        self.dataset = dataset
        self.graph = graph
        self.manifest = manifest or RunManifest(embedding=config.to_dict())
        self.frame_interval = frame_interval
        self.frame_cap = frame_cap
        self.threads = threads

        self._controls = queue.Queue()
        self._paused = threading.Event()
        self._lock = threading.Lock()
        self._latest_frame_json = None
        self._snapshot = None  # (positions copy, labels)
        self._seq = 0
        self._epoch = 0
        self._decimation = None
        self._labels = None if dataset is None else dataset.labels
        self._loop = None
        self._clients = set()
        self._done = threading.Event()
        self._driver = None
        self.result = None
        self.error = None

    # ------------------------------------------------------------- lifecycle

    def start_driver(self):
        self._driver = threading.Thread(target=self._drive, daemon=True)
        self._driver.start()

    def _drive(self):
        seed = self.config.seed
        while True:
            self.config.seed = seed
            try:
                self.result = run_embedding(
                    graph=self.graph,
                    config=self.config,
                    dataset=self.dataset,
                    observer=self._observer,
                    threads=self.threads,
                )
                break
            except _RestartRequested as req:
                seed = req.seed
                self._epoch += 1
                self.manifest.parameter_timeline.append(
                    {"iteration": None, "param": "restart", "value": seed}
                )
                continue
            except Exception as exc:  # surfaced via /manifest and logs
                self.error = exc
                break
        self._done.set()
        self._publish_final()

    def wait(self, timeout=None):
        self._done.wait(timeout)
        return self.result

    # ------------------------------------------------------------- observer

    def _observer(self, iteration, positions, stress, params):
        mutations = {}
        self._drain_controls(mutations, iteration)
        while self._paused.is_set():
            try:
                msg = self._controls.get(timeout=0.1)
            except queue.Empty:
                continue
            self._apply_control(msg, mutations, iteration)
        if iteration % self.frame_interval == 0 or mutations:
            self._publish(iteration, positions, stress, params, status="running")
        return mutations or None

    def _drain_controls(self, mutations, iteration):
        while True:
            try:
                msg = self._controls.get_nowait()
            except queue.Empty:
                return
            self._apply_control(msg, mutations, iteration)

    def _apply_control(self, msg, mutations, iteration):
        kind = msg["type"]
        if kind == "pause":
            self._paused.set()
        elif kind == "resume":
            self._paused.clear()
        elif kind == "restart":
            self._paused.clear()
            raise _RestartRequested(int(msg.get("seed", self.config.seed)))
        elif kind == "set_param":
            mutations[msg["name"]] = msg["value"]
            self.manifest.parameter_timeline.append(
                {"iteration": iteration, "param": msg["name"], "value": msg["value"]}
            )
        elif kind == "phase_trigger":
            mutations[msg["phase"]] = True
            self.manifest.parameter_timeline.append(
                {"iteration": iteration, "param": msg["phase"], "value": True}
            )

    # ------------------------------------------------------------ publishing

    def _decimate(self, positions):
        m = len(positions)
        if m <= self.frame_cap:
            return positions, self._labels
        if self._decimation is None:
            keep = np.random.default_rng(0).choice(m, size=self.frame_cap, replace=False)
            self._decimation = np.sort(keep)
        sel = self._decimation
        return positions[sel], None if self._labels is None else self._labels[sel]

    def _publish(self, iteration, positions, stress, params, status):
        pts, labels = self._decimate(positions)
        self._seq += 1
        frame = {
            "type": "frame",
            "seq": self._seq,
            "epoch": self._epoch,
            "iteration": int(iteration),
            "stress": float(stress),
            "phase": params.get("phase", "main"),
            "status": status,
            "params": {
                "c": params.get("c"),
                "b": params.get("b"),
                "optimizer": params.get("optimizer"),
            },
            "count": int(len(positions)),
            "points": np.round(pts, 5).tolist(),
            "labels": None if labels is None else labels.tolist(),
        }
        payload = (self._seq, json.dumps(frame))
        with self._lock:
            self._latest_frame_json = payload
            self._snapshot = (positions.copy(), self._labels)
        if self._loop is not None:
            self._loop.call_soon_threadsafe(self._fanout, payload)

    def _publish_final(self):
        if self.result is None:
            return
        state = self.result.state
        self._publish(
            state.iteration,
            state.positions,
            state.stress,
            {
                "c": self.config.c,
                "b": None,
                "optimizer": self.config.optimizer,
                "phase": "done",
            },
            status="done",
        )

    def _fanout(self, payload):
        for q in list(self._clients):
            try:
                q.put_nowait(payload)
            except asyncio.QueueFull:
                pass  # slow client: drop the frame, never stall the driver

    # -------------------------------------------------------------- control

    def handle_control(self, msg):
        """Validate a control message; enqueue iff valid. Returns the reply."""
        try:
            kind = msg.get("type")
            if kind == "set_param":
                name = msg.get("name")
                if name not in _CONTROL_PARAMS:
                    raise IvhdError(f"unknown parameter {name!r}")
                value = msg.get("value")
                if name == "c":
                    value = float(value)
                    if not (0.0 < value < 1.0):
                        raise IvhdError(f"c must be in (0, 1), got {value}")
                elif name == "b":
                    value = float(value)
                    if value <= 0:
                        raise IvhdError(f"b must be positive, got {value}")
                elif name == "optimizer":
                    if value not in OPTIMIZER_KINDS:
                        raise IvhdError(f"unknown optimizer {value!r}")
                elif name == "rn_resample_period":
                    value = int(value)
                    if value < 0:
                        raise IvhdError("rn_resample_period must be >= 0")
                msg = {"type": "set_param", "name": name, "value": value}
            elif kind == "phase_trigger":
                if msg.get("phase") not in ("start_l1", "start_rnn"):
                    raise IvhdError(f"unknown phase trigger {msg.get('phase')!r}")
                msg = {"type": "phase_trigger", "phase": msg["phase"]}
            elif kind == "pause":
                msg = {"type": "pause"}
            elif kind == "resume":
                msg = {"type": "resume"}
            elif kind == "restart":
                msg = {"type": "restart", "seed": int(msg.get("seed", 0))}
            else:
                raise IvhdError(f"unknown control type {kind!r}")
        except (TypeError, ValueError) as exc:
            return {"type": "error", "message": str(exc)}
        except IvhdError as exc:
            return {"type": "error", "message": str(exc)}
        self._controls.put(msg)
        return {"type": "accepted", "control": msg}

    # ------------------------------------------------------------------ app

    def app(self):
        from contextlib import asynccontextmanager

        server = self

        @asynccontextmanager
        async def lifespan(app):
            server._loop = asyncio.get_running_loop()
            if server._driver is None:
                server.start_driver()
            yield

        app = FastAPI(lifespan=lifespan)

        @app.get("/snapshot", response_class=PlainTextResponse)
        async def snapshot():
            with server._lock:
                snap = server._snapshot
            if snap is None:
                return PlainTextResponse("", status_code=503)
            positions, labels = snap
            buf = io.StringIO()
            for i, row in enumerate(positions):
                cols = [repr(float(v)) for v in row]
                if labels is not None:
                    cols.append(str(int(labels[i])))
                buf.write(",".join(cols))
                buf.write("\n")
            return PlainTextResponse(buf.getvalue(), media_type="text/csv")

        @app.get("/manifest")
        async def manifest():
            import dataclasses

            return JSONResponse(dataclasses.asdict(server.manifest))

        @app.websocket("/ws")
        async def ws(websocket: WebSocket):
            await websocket.accept()
            q = asyncio.Queue(maxsize=4)
            server._clients.add(q)
            last_sent = 0
            try:
                with server._lock:
                    latest = server._latest_frame_json
                if latest is not None:
                    last_sent = latest[0]
                    await websocket.send_text(latest[1])

                async def sender():
                    nonlocal last_sent
                    while True:
                        seq, payload = await q.get()
                        if seq <= last_sent:
                            continue  # already replayed on connect
                        last_sent = seq
                        await websocket.send_text(payload)

                async def receiver():
                    while True:
                        msg = await websocket.receive_json()
                        await websocket.send_text(json.dumps(server.handle_control(msg)))

                send_task = asyncio.create_task(sender())
                recv_task = asyncio.create_task(receiver())
                done, pending = await asyncio.wait(
                    {send_task, recv_task}, return_when=asyncio.FIRST_COMPLETED
                )
                for task in pending:
                    task.cancel()
                for task in done:
                    exc = task.exception()
                    if exc is not None and not isinstance(
                        exc, (WebSocketDisconnect, asyncio.CancelledError)
                    ):
                        raise exc
            except WebSocketDisconnect:
                pass
            finally:
                server._clients.discard(q)

        return app

    def run_blocking(self, host="127.0.0.1", port=8765):
        import uvicorn

        uvicorn.run(self.app(), host=host, port=port, log_level="warning")

    def start_background(self, host="127.0.0.1", port=0):
        """Start uvicorn in a thread; returns (server, thread, bound port)."""
        import uvicorn

        config = uvicorn.Config(self.app(), host=host, port=port, log_level="warning")
        http = uvicorn.Server(config)
        thread = threading.Thread(target=http.run, daemon=True)
        thread.start()
        deadline = time.time() + 10
        while not http.started:
            if time.time() > deadline:
                raise IvhdError("server failed to start within 10 s")
            if not thread.is_alive():
                raise IvhdError("server thread exited during startup (port busy?)")
            time.sleep(0.02)
        bound = http.servers[0].sockets[0].getsockname()[1]
        return http, thread, bound
