"""Live session server: trained agent on one plank end, a human on the other.

Protocol (JSON text frames over WebSocket, protocol version 1):

    client -> server
        {"type": "hand", "vx": float, "vz": float, "seq": int}
        {"type": "mode", "value": "agent" | "frozen"}
        {"type": "reset"}
    server -> client (one per control tick, 4 Hz by default)
        {"type": "state", "t": float, "state": [7 floats],
         "action": [3 floats], "cost": float, "tau": float,
         "ucb": float, "seq": int}
        {"type": "error", "msg": str}

HTTP: GET /sessions lists live sessions, POST /sessions creates one from a
checkpoint directory.  The control loop never blocks on the socket: frames
flow through a latest-wins queue of depth one, and incoming hand commands
replace each other by sequence number.  A command older than one control
period decays toward zero with a 0.5 s time constant.
"""

from __future__ import annotations

import asyncio
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect

from . import action_opt, checkpoint, csvio, sim
from .domain import ActionBounds
from .errors import CheckpointError, OptimizationFailedError
from .forward_model import ForwardModel
from .qlearner import QModel
from .sim import Scenario, SimWorld

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
COMMAND_DECAY_TAU = 0.5
HAND_COMMAND_LIMIT = 0.2
# Passive arm compliance: the live hand drifts toward the plank end at this
# gain (1/s) on top of the commanded velocity, so grasp forces bleed off
# instead of winding up when the client goes quiet.
PASSIVE_YIELD_GAIN = 1.5
MODES = ("agent", "frozen", "replay")

FRAME_LOG_SCHEMA = ["t", "x", "z", "theta", "delta_d", "d", "d_dot", "tau",
                    "a_x_dot", "a_z_dot", "a_theta_dot", "cost", "ucb", "seq"]


@dataclass
class SessionMetrics:
    frames: int = 0
    cost_sum: float = 0.0
    tau_sum: float = 0.0


class Session:
    """One simulated joint-control session with a frozen policy checkpoint."""

    def __init__(
        self,
        session_id: str,
        q: QModel,
        fm: ForwardModel,
        delta: float,
        scenario: Scenario,
        mode: str = "agent",
        replay_actions: np.ndarray | None = None,
        ucb_restarts: int = 3,
        ucb_max_iters: int = 40,
    ):
        if mode not in MODES:
            raise CheckpointError(f"unknown session mode {mode!r}")
        self.id = session_id
        self.q = q
        self.fm = fm
        self.scenario = scenario
        self.mode = mode
        self.replay_actions = replay_actions
        self.ucb_cfg = action_opt.UcbConfig(delta=delta, restarts=ucb_restarts, max_iters=ucb_max_iters)
        self.world = SimWorld(scenario)
        self.connected = False
        self.metrics = SessionMetrics()
        self.seq = 0
        self.command = (0.0, 0.0)
        self.command_seq = -1
        self.command_time = -math.inf
        self.frame_rows: list[list] = []
        self.first_frame = self._emit_frame(np.zeros(3), ucb=0.0, degraded=False)

    def reset(self) -> None:
        self.world = SimWorld(self.scenario)
        self.command = (0.0, 0.0)
        self.command_time = -math.inf

    def receive_hand(self, vx: float, vz: float, seq: int) -> None:
        """Latest-wins by sequence number; clamped to the protocol limit."""
        if seq <= self.command_seq:
            return
        self.command_seq = seq
        self.command = (
            float(np.clip(vx, -HAND_COMMAND_LIMIT, HAND_COMMAND_LIMIT)),
            float(np.clip(vz, -HAND_COMMAND_LIMIT, HAND_COMMAND_LIMIT)),
        )
        self.command_time = self.world.time

    def _decayed_command(self) -> tuple[float, float]:
        age = self.world.time - self.command_time
        period = self.scenario.control_period
        if age <= period:
            return self.command
        decay = math.exp(-(age - period) / COMMAND_DECAY_TAU)
        return self.command[0] * decay, self.command[1] * decay

    def _effective_command(self) -> tuple[float, float]:
        vx, vz = self._decayed_command()
        vx += PASSIVE_YIELD_GAIN * (self.world.x_h - self.world.hand_x)
        vz += PASSIVE_YIELD_GAIN * (self.world.z_h - self.world.hand_z)
        return vx, vz

    def _choose_action(self, s) -> tuple[np.ndarray, float, bool]:
        if self.mode == "frozen":
            return np.zeros(3), 0.0, False
        if self.mode == "replay":
            if self.replay_actions is None or self.seq >= len(self.replay_actions):
                return np.zeros(3), 0.0, False
            a = self.replay_actions[self.seq]
            return a, action_opt.q_ucb(self.q, s.as_array(), a, self.ucb_cfg.delta), False
        try:
            a = action_opt.optimize_action(
                self.q, s.as_array(), self.ucb_cfg, self.scenario.bounds, seed=self.seq
            ).as_array()
            return a, action_opt.q_ucb(self.q, s.as_array(), a, self.ucb_cfg.delta), False
        except OptimizationFailedError as err:
            logger.warning("session %s: optimizer failed (%s); applying zero action", self.id, err)
            return np.zeros(3), 0.0, True

    def tick(self) -> dict:
        """Advance one control period and build the outgoing frame."""
        s = sim.observe(self.world, self.scenario.ball_goal)
        a, ucb, degraded = self._choose_action(s)
        command = self._effective_command()
        for _ in range(self.scenario.substeps_per_control):
            sim.step(self.world, a, command, self.scenario.physics_dt)
        return self._emit_frame(a, ucb, degraded)

    def _emit_frame(self, a: np.ndarray, ucb: float, degraded: bool) -> dict:
        s = sim.observe(self.world, self.scenario.ball_goal)
        c = sim.cost(s, self.q.cost)
        frame = {
            "type": "state",
            "t": self.world.time,
            "state": [float(v) for v in s.as_array()],
            "action": [float(v) for v in a],
            "cost": c,
            "tau": s.tau,
            "ucb": float(ucb),
            "seq": self.seq,
        }
        if degraded:
            frame["degraded"] = True
        self.metrics.frames += 1
        self.metrics.cost_sum += c
        self.metrics.tau_sum += s.tau
        self.frame_rows.append([frame["t"], *frame["state"], *frame["action"], c, float(ucb), self.seq])
        self.seq += 1
        return frame

    def write_frame_log(self, path: str | Path) -> None:
        csvio.write_csv(path, FRAME_LOG_SCHEMA, self.frame_rows)


def open_session(
    checkpoint_dir: str | Path,
    scenario: Scenario | None = None,
    session_id: str = "s0",
    mode: str = "agent",
    replay_actions: np.ndarray | None = None,
) -> Session:
    """Load a checkpoint and initialize a session at the scenario start state."""
    q, fm, delta, ckpt_scenario = checkpoint.load(checkpoint_dir)
    return Session(
        session_id,
        q,
        fm,
        delta,
        scenario if scenario is not None else ckpt_scenario,
        mode=mode,
        replay_actions=replay_actions,
    )


def build_app(
    default_checkpoint: str | Path | None = None,
    tick_interval: float | None = None,
    log_dir: str | Path | None = None,
) -> FastAPI:
    """Assemble the HTTP + WebSocket app.

    tick_interval overrides the wall-clock pacing of the control loop (the
    session's simulated time always advances one control period per frame);
    tests use a tiny interval to run sessions faster than real time.
    """
    app = FastAPI(title="plankrl interaction service")
    sessions: dict[str, Session] = {}
    counter = itertools.count()

    @app.get("/sessions")
    def list_sessions():
        return {
            "protocol": PROTOCOL_VERSION,
            "sessions": [
                {
                    "id": s.id,
                    "mode": s.mode,
                    "t": s.world.time,
                    "frames": s.metrics.frames,
                    "connected": s.connected,
                }
                for s in sessions.values()
            ],
        }

    @app.post("/sessions", status_code=201)
    def create_session(body: dict):
        ckpt = body.get("checkpoint", default_checkpoint)
        if ckpt is None:
            raise HTTPException(status_code=400, detail="no checkpoint given and no default configured")
        scenario = None
        if "scenario" in body:
            scenario = Scenario.from_json(body["scenario"])
        mode = body.get("mode", "agent")
        sid = f"s{next(counter)}"
        try:
            session = open_session(ckpt, scenario=scenario, session_id=sid, mode=mode)
        except CheckpointError as err:
            raise HTTPException(status_code=400, detail=str(err))
        sessions[sid] = session
        return {"id": sid, "protocol": PROTOCOL_VERSION}

    def handle_message(session: Session, msg: dict) -> None:
        kind = msg.get("type")
        if kind == "hand":
            try:
                session.receive_hand(float(msg["vx"]), float(msg["vz"]), int(msg["seq"]))
            except (KeyError, TypeError, ValueError):
                logger.warning("session %s: malformed hand command %r", session.id, msg)
        elif kind == "mode":
            value = msg.get("value")
            if value in ("agent", "frozen"):
                session.mode = value
            else:
                logger.warning("session %s: unknown mode %r", session.id, value)
        elif kind == "reset":
            session.reset()
        else:
            logger.warning("session %s: ignoring unknown message type %r", session.id, kind)

    @app.websocket("/sessions/{sid}/ws")
    async def session_socket(ws: WebSocket, sid: str):
        await ws.accept()
        session = sessions.get(sid)
        if session is None:
            await ws.send_text(json.dumps({"type": "error", "msg": f"no session {sid}"}))
            await ws.close()
            return
        if session.connected:
            await ws.send_text(json.dumps({"type": "error", "msg": "session already has a live connection"}))
            await ws.close()
            return
        session.connected = True
        interval = tick_interval if tick_interval is not None else session.scenario.control_period
        frames: asyncio.Queue = asyncio.Queue(maxsize=1)

        async def ticker():
            # Produces frames on cadence; drops the stale frame if the
            # sender lags instead of waiting for it.
            await _offer(frames, session.first_frame)
            while True:
                await asyncio.sleep(interval)
                await _offer(frames, session.tick())

        async def receiver():
            while True:
                text = await ws.receive_text()
                try:
                    msg = json.loads(text)
                except json.JSONDecodeError:
                    logger.warning("session %s: non-JSON message ignored", session.id)
                    continue
                handle_message(session, msg)

        ticker_task = asyncio.create_task(ticker())
        receiver_task = asyncio.create_task(receiver())
        try:
            while True:
                frame = await frames.get()
                await ws.send_text(json.dumps(frame))
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            ticker_task.cancel()
            receiver_task.cancel()
            session.connected = False
            if log_dir is not None:
                session.write_frame_log(Path(log_dir) / f"session_{session.id}.csv")

    return app


async def _offer(queue: asyncio.Queue, item) -> None:
    if queue.full():
        try:
            queue.get_nowait()
        except asyncio.QueueEmpty:
            pass
    queue.put_nowait(item)
