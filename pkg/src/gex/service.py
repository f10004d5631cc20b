"""Live teleoperation service: the control loop on a thread, a WebSocket
endpoint for operator consoles, and state broadcasting.

The control loop owns the session and never blocks on clients: snapshots
go into the session's bounded deque (oldest dropped), and client
commands land in a bounded mailbox applied at tick boundaries. Each
connection gets its own broadcaster task at the configured rate.
"""

from __future__ import annotations

import asyncio
import contextlib
import json
import logging
import queue
import threading
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .config import GatewayConfig, default_config
from .errors import ConfigError, GexError, ModelError
from .gestures import read_gesture_file, targets_by_tick
from .kinematics import HandModel
from .rig import build_rig
from .teleop import ContactDetector, ImpedanceParams, SceneObject, TeleopSession

log = logging.getLogger("gex.service")


class ControlLoop(threading.Thread):
    """Ticks a TeleopSession at a fixed wall-clock rate."""

    def __init__(self, config: GatewayConfig):
        super().__init__(name="gex-control", daemon=True)
        rig = build_rig(
            hand_model=config.hand_model,
            glove_model=config.glove_model,
            hand_profile=config.hand_profile,
            glove_profile=config.glove_profile,
        )
        self.session = TeleopSession.bringup(
            rig=rig,
            scene=config.scene,
            retarget_config=config.retarget,
            detector=config.detector,
            impedance=config.impedance,
            rate_hz=config.rate_hz,
            substeps=config.substeps,
        )
        self.mailbox: queue.Queue[dict] = queue.Queue(maxsize=256)
        self.current_target = np.array(
            [j.home_deg for j in config.glove_model.joints]
        )
        self._halt = threading.Event()
        self._recording: tuple[Path, object, int] | None = None
        self._replay: list[np.ndarray] | None = None
        self._replay_pos = 0
        self.ticks = 0
        self.last_error: str | None = None

    # ------------------------------------------------------------ commands

    def submit(self, command: dict) -> None:
        try:
            self.mailbox.put_nowait(command)
        except queue.Full as e:
            raise GexError("command mailbox is full") from e

    @property
    def replaying(self) -> bool:
        return self._replay is not None

    @property
    def recording(self) -> bool:
        return self._recording is not None

    def latest(self):
        snaps = self.session.snapshots
        return snaps[-1] if snaps else None

    def _apply(self, cmd: dict) -> None:
        kind = cmd["type"]
        if kind == "set_glove_q":
            if self._replay is None:
                self.current_target = np.asarray(cmd["q"], dtype=float)
        elif kind == "replay":
            self._replay = cmd["targets"]
            self._replay_pos = 0
        elif kind == "record":
            if cmd["on"] and self._recording is None:
                path = Path(cmd["path"])
                self._recording = (path, path.open("w", encoding="utf-8"), self.ticks)
            elif not cmd["on"] and self._recording is not None:
                self._recording[1].close()
                self._recording = None
        elif kind == "set_scene":
            self.session.scene = cmd["scene"]
        elif kind == "set_params":
            detector = cmd.get("detector")
            impedance = cmd.get("impedance")
            if impedance is not None:
                self.session.impedance = impedance
            if detector is not None:
                self.session.detector = detector
                for fsm in self.session.fsms.values():
                    fsm.detector = detector
        elif kind == "stop":
            self._halt.set()

    def _drain(self) -> None:
        while True:
            try:
                cmd = self.mailbox.get_nowait()
            except queue.Empty:
                return
            try:
                self._apply(cmd)
            except Exception as e:  # a bad command must never kill the loop
                log.warning("command %s failed: %s", cmd.get("type"), e)

    # ------------------------------------------------------------ the loop

    def run(self) -> None:
        period = self.session.dt
        next_t = time.perf_counter()
        while not self._halt.is_set():
            self._drain()
            if self._replay is not None:
                self.current_target = self._replay[self._replay_pos]
                self._replay_pos += 1
                if self._replay_pos >= len(self._replay):
                    self._replay = None
            try:
                self.session.set_glove_target(self.current_target)
                self.session.tick()
            except GexError as e:
                self.last_error = str(e)
                log.error("control loop stopped: %s", e)
                break
            if self._recording is not None:
                path, fh, t0 = self._recording
                rec = {
                    "t": round((self.ticks - t0) * period, 9),
                    "q_glove": np.asarray(self.current_target, dtype=float).tolist(),
                }
                fh.write(json.dumps(rec) + "\n")
            self.ticks += 1
            next_t += period
            delay = next_t - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
            else:
                next_t = time.perf_counter()  # behind schedule: no sleep debt
        if self._recording is not None:
            self._recording[1].close()
            self._recording = None

    def shutdown(self) -> None:
        self._halt.set()
        self.join(timeout=5.0)
        self.session.rig.close()


def _model_summary(model: HandModel) -> dict:
    return {
        "name": model.name,
        "fingers": [
            {
                "name": f.name,
                "joints": [
                    {
                        "name": j.name,
                        "limit_lo_deg": float(np.degrees(j.limit_lo)),
                        "limit_hi_deg": float(np.degrees(j.limit_hi)),
                        "home_deg": j.home_deg,
                    }
                    for j in f.joints
                ],
            }
            for f in model.fingers
        ],
    }


def _skeleton(model: HandModel, q_deg) -> dict:
    q = np.radians(np.asarray(q_deg, dtype=float))
    fk = model.fk(q)
    out = {}
    for f in model.fingers:
        pts = [model.palm.translation.tolist()]
        pts += [fr.translation.tolist() for fr in fk.frames[f.name]]
        pts.append(fk.tips[f.name].tolist())
        out[f.name] = pts
    return out


def _scene_payload(scene: SceneObject | None):
    if scene is None:
        return None
    return {
        "shape": scene.shape,
        "center": scene.center.tolist(),
        "radius": scene.radius,
        "height": scene.height,
        "stiffness": scene.stiffness,
    }


def _parse_client_message(raw: str, loop: ControlLoop) -> dict:
    try:
        msg = json.loads(raw)
    except json.JSONDecodeError as e:
        raise GexError(f"not valid JSON: {e}") from e
    if not isinstance(msg, dict) or "type" not in msg or "seq" not in msg:
        raise GexError("messages need 'type' and 'seq' fields")
    kind = msg["type"]
    if kind == "set_glove_q":
        q = msg.get("q")
        n = loop.session.rig.glove.model.n_joints
        if not isinstance(q, list) or len(q) != n:
            raise GexError(f"set_glove_q needs a list 'q' of {n} degrees")
        if loop.replaying:
            raise GexError("replay in progress; sliders are ignored")
        return {"type": "set_glove_q", "q": [float(x) for x in q]}
    if kind == "replay":
        if loop.recording:
            raise GexError("cannot replay while recording")
        records = read_gesture_file(msg.get("path"), loop.session.rig.glove.model.n_joints)
        targets = targets_by_tick(records, loop.session.dt, loop.current_target)
        return {"type": "replay", "targets": targets, "path": msg.get("path")}
    if kind == "record":
        on = msg.get("on")
        if not isinstance(on, bool):
            raise GexError("record needs a boolean 'on'")
        if on and not msg.get("path"):
            raise GexError("record on needs a 'path'")
        if on and loop.replaying:
            raise GexError("cannot record while replaying")
        return {"type": "record", "on": on, "path": msg.get("path", "")}
    if kind == "set_scene":
        obj = msg.get("object")
        if obj is None:
            return {"type": "set_scene", "scene": None}
        try:
            scene = SceneObject(
                center=np.asarray(obj["center"], dtype=float),
                radius=float(obj["radius"]),
                height=float(obj["height"]),
                stiffness=float(obj["stiffness"]),
            )
        except (KeyError, TypeError, ValueError, ModelError) as e:
            raise GexError(f"bad scene object: {e}") from e
        return {"type": "set_scene", "scene": scene}
    if kind == "set_params":
        out = {"type": "set_params"}
        try:
            if "detector" in msg:
                out["detector"] = ContactDetector(**msg["detector"])
            if "impedance" in msg:
                out["impedance"] = ImpedanceParams(**msg["impedance"])
        except (TypeError, ModelError) as e:
            raise GexError(f"bad parameters: {e}") from e
        return out
    raise GexError(f"unknown message type {kind!r}")


def create_app(config: GatewayConfig | None = None, ui_dir: str | None = None) -> FastAPI:
    config = config or default_config()
    loop = ControlLoop(config)

    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        loop.start()
        yield
        loop.shutdown()

    app = FastAPI(lifespan=lifespan)
    app.state.control = loop
    app.state.config = config

    @app.get("/healthz")
    async def healthz():
        return {"ok": loop.is_alive(), "ticks": loop.ticks, "error": loop.last_error}

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        out_seq = 0

        async def send(payload: dict) -> None:
            nonlocal out_seq
            payload["seq"] = out_seq
            out_seq += 1
            await ws.send_text(json.dumps(payload))

        await send({
            "type": "model",
            "glove": _model_summary(config.glove_model),
            "hand": _model_summary(config.hand_model),
        })
        await send({"type": "scene", "object": _scene_payload(loop.session.scene)})

        async def broadcaster():
            period = 1.0 / config.broadcast_hz
            while True:
                report = loop.latest()
                if report is not None:
                    state = report.to_dict()
                    state["type"] = "state"
                    state["recording"] = loop.recording
                    state["replaying"] = loop.replaying
                    state["skeletons"] = {
                        "glove": _skeleton(config.glove_model, report.q_glove),
                        "hand": _skeleton(config.hand_model, report.q_hand_meas),
                    }
                    await send(state)
                await asyncio.sleep(period)

        sender = asyncio.create_task(broadcaster())
        try:
            while True:
                raw = await ws.receive_text()
                seq = None
                try:
                    with contextlib.suppress(Exception):
                        seq = json.loads(raw).get("seq")
                    cmd = _parse_client_message(raw, loop)
                    ack = {"type": "ack", "ack_seq": seq, "cmd": cmd["type"]}
                    if "path" in cmd:
                        ack["path"] = cmd["path"]
                    loop.submit({k: v for k, v in cmd.items()})
                    await send(ack)
                except GexError as e:
                    await send({"type": "error", "ack_seq": seq, "message": str(e)})
        except WebSocketDisconnect:
            pass
        finally:
            sender.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await sender

    if ui_dir and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app


def run_serve(config: GatewayConfig, host: str = "127.0.0.1",
              port: int | None = None, ui_dir: str | None = None) -> None:
    import uvicorn

    app = create_app(config, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port if port is not None else config.port,
                log_level="info")
