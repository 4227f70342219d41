"""WebSocket bridge between a live simulation and human operators.

The simulation thread is the single owner of world state.  Sessions talk
to it through thread-safe structures only: commands land in a control
table the sim drains at the top of every tick, and state frames go out
through per-session bounded queues that drop their oldest entry rather
than ever blocking the tick loop.

Wire protocol (JSON text frames, one message per frame, `proto: 1`):

  server -> client  {type: "state", proto, tick, sim_time, agents: [...]}
                    {type: "ack", proto, agent_id, client_seq, tick}
                    {type: "error", proto, error, detail}
  client -> server  {type: "command", agent_id, preferred_vel: [x,y,z],
                     client_seq}

Per-agent command semantics: last writer wins, a client_seq lower than
the last applied one is ignored (with an error frame as notice), and the
preferred speed is clamped to the solver's max_speed before the sim ever
sees it.  When the controlling session disconnects, the agent's preferred
velocity ramps to zero over DECAY_SECONDS instead of freezing at the last
command.
"""
from __future__ import annotations

import asyncio
import json
import math
import socket
import threading
import time
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .engine import Engine, External, Scenario, scenario_to_dict

PROTO = 1
DECAY_SECONDS = 0.5
SESSION_QUEUE_FRAMES = 8


@dataclass
class _Control:
    """Latest accepted command for one agent, plus decay bookkeeping."""
    session: int
    last_seq: int
    vel: np.ndarray
    decay_from: int | None = None  # tick the controlling session vanished


class LiveSim:
    """Free-running simulation thread plus the shared tables sessions use.

    `speed` scales wall-clock pacing (1.0 = real time); `realtime=False`
    runs flat out, for tests that step the loop body directly instead.
    """

    def __init__(self, engine: Engine, *, broadcast_hz: float = 30.0,
                 realtime: bool = True, speed: float = 1.0):
        self.engine = engine
        self.realtime = realtime
        self.speed = speed
        tick_hz = 1.0 / engine.scenario.tick_dt
        self.broadcast_every = max(1, int(round(tick_hz / broadcast_hz)))
        self.decay_ticks = max(1, int(round(DECAY_SECONDS / engine.scenario.tick_dt)))
        self.lock = threading.Lock()
        self.controls: dict[str, _Control] = {}
        self.subscribers: dict[int, tuple[asyncio.AbstractEventLoop,
                                          asyncio.Queue]] = {}
        self._next_session = 1
        self.status = "running"
        self.abort_reason: str | None = None
        # Tick currently being computed; commands accepted now take effect
        # on the tick after it.
        self.draining_tick = engine.tick_count
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        # agent id -> command channel, External agents only
        self.channels = {a.agent_id: a.policy.channel or a.agent_id
                         for a in engine.scenario.agents
                         if isinstance(a.policy, External)}
        self.max_speed = engine.scenario.solver.max_speed

    # -- session side (runs on the event loop thread) ---------------------

    def attach(self, loop: asyncio.AbstractEventLoop,
               queue: asyncio.Queue) -> int:
        with self.lock:
            sid = self._next_session
            self._next_session += 1
            self.subscribers[sid] = (loop, queue)
            return sid

    def detach(self, session: int) -> None:
        with self.lock:
            self.subscribers.pop(session, None)
            for ctl in self.controls.values():
                if ctl.session == session and ctl.decay_from is None:
                    ctl.decay_from = self.engine.tick_count + 1

    def command(self, session: int, agent_id: str, vel: list,
                client_seq: int) -> dict:
        """Validate and stage one command; returns the reply frame."""
        channel = self.channels.get(agent_id)
        if channel is None:
            detail = (f"unknown agent {agent_id!r}"
                      if agent_id not in {a.agent_id
                                          for a in self.engine.scenario.agents}
                      else f"agent {agent_id!r} is not externally steerable")
            return _error("unknown_agent", detail)
        v = np.asarray(vel, dtype=float)
        speed = float(np.linalg.norm(v))
        if speed > self.max_speed:
            v = v * (self.max_speed / speed)
        with self.lock:
            ctl = self.controls.get(agent_id)
            if (ctl is not None and ctl.session == session
                    and client_seq < ctl.last_seq):
                return _error("stale_seq",
                              f"client_seq {client_seq} < last applied "
                              f"{ctl.last_seq}; ignored")
            self.controls[agent_id] = _Control(session, client_seq, v)
            effect = self.draining_tick + 1
        return {"type": "ack", "proto": PROTO, "agent_id": agent_id,
                "client_seq": client_seq, "tick": effect}

    # -- sim side ----------------------------------------------------------

    def _apply_controls(self, tick: int) -> None:
        engine = self.engine
        with self.lock:
            self.draining_tick = tick
            done = []
            for aid, ctl in self.controls.items():
                v = ctl.vel
                if ctl.decay_from is not None:
                    frac = 1.0 - (tick - ctl.decay_from) / self.decay_ticks
                    if frac <= 0.0:
                        engine.set_command(self.channels[aid], np.zeros(3))
                        done.append(aid)
                        continue
                    v = v * frac
                engine.set_command(self.channels[aid], v)
            for aid in done:
                del self.controls[aid]

    def step_once(self) -> dict:
        """One tick of the loop body: drain commands, advance, broadcast."""
        self._apply_controls(self.engine.tick_count + 1)
        rec = self.engine.tick()
        if rec.get("kind") == "abort":
            self.status = "aborted"
            self.abort_reason = rec.get("reason")
            self._broadcast(_error("aborted",
                                   f"simulation aborted at tick {rec['tick']}: "
                                   f"{rec.get('reason')}"))
            return rec
        if rec["tick"] % self.broadcast_every == 0:
            self._broadcast(self.frame(rec))
        return rec

    def frame(self, rec: dict) -> dict:
        """StateFrame for one tick record."""
        av = {aid: {e["neighbor"]: e for e in a["avoidance"]}
              for aid, a in rec["agents"].items()}
        agents = []
        for aid, a in rec["agents"].items():
            dance = False
            for nid, e in av[aid].items():
                back = av.get(nid, {}).get(aid)
                if (e["active"] and back is not None and back["active"]
                        and float(np.dot(e["u"], back["u"])) > 0.0):
                    dance = True
                    break
            belief = a["belief"]
            agents.append({
                "id": aid,
                "pos": a["pos"],
                "vel": a["vel"],
                "commanded": a["commanded"],
                "tracks": [] if belief is None else belief["tracks"],
                "planes": a["planes"],
                "dance_flag": dance,
            })
        return {"type": "state", "proto": PROTO, "tick": rec["tick"],
                "sim_time": rec["time"], "agents": agents}

    def _broadcast(self, frame: dict) -> None:
        text = json.dumps(frame)
        with self.lock:
            targets = list(self.subscribers.values())
        for loop, queue in targets:
            loop.call_soon_threadsafe(_offer, queue, text)

    def _run(self) -> None:
        period = self.engine.scenario.tick_dt / self.speed
        t0 = time.monotonic()
        n = 0
        while not self._stop.is_set():
            rec = self.step_once()
            if rec.get("kind") == "abort":
                return
            n += 1
            if self.realtime:
                lag = t0 + n * period - time.monotonic()
                if lag > 0:
                    time.sleep(lag)

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name="orcasim-live")
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None
        if self.status == "running":
            self.status = "stopped"


def _offer(queue: asyncio.Queue, item: str) -> None:
    """Enqueue, dropping the oldest frame when the session is behind."""
    while True:
        try:
            queue.put_nowait(item)
            return
        except asyncio.QueueFull:
            try:
                queue.get_nowait()
            except asyncio.QueueEmpty:
                pass


def _error(code: str, detail: str) -> dict:
    return {"type": "error", "proto": PROTO, "error": code, "detail": detail}


def _parse_command(text: str) -> tuple[dict | None, dict | None]:
    """(command, error_frame): exactly one is set."""
    try:
        msg = json.loads(text)
    except json.JSONDecodeError as e:
        return None, _error("bad_message", f"not valid JSON: {e}")
    if not isinstance(msg, dict):
        return None, _error("bad_message", "expected a JSON object")
    if msg.get("proto", PROTO) != PROTO:
        return None, _error("bad_message",
                            f"unsupported proto {msg.get('proto')!r}")
    if msg.get("type") != "command":
        return None, _error("bad_message",
                            f"unsupported message type {msg.get('type')!r}")
    agent_id = msg.get("agent_id")
    if not isinstance(agent_id, str):
        return None, _error("bad_message", "agent_id must be a string")
    vel = msg.get("preferred_vel")
    ok = (isinstance(vel, list) and len(vel) == 3
          and all(isinstance(c, (int, float)) and math.isfinite(c)
                  for c in vel))
    if not ok:
        return None, _error("bad_message",
                            "preferred_vel must be three finite numbers")
    seq = msg.get("client_seq")
    if not isinstance(seq, int):
        return None, _error("bad_message", "client_seq must be an integer")
    return msg, None


def build_app(sim: LiveSim) -> FastAPI:
    app = FastAPI()
    app.state.sim = sim

    @app.get("/healthz")
    def healthz() -> dict:
        engine = sim.engine
        with sim.lock:
            clients = len(sim.subscribers)
        return {"status": sim.status, "proto": PROTO,
                "tick": engine.tick_count,
                "sim_time": engine.tick_count * engine.scenario.tick_dt,
                "clients": clients,
                "abort_reason": sim.abort_reason}

    @app.get("/scenario")
    def scenario() -> dict:
        return scenario_to_dict(sim.engine.scenario)

    @app.websocket("/ws")
    async def ws(websocket: WebSocket) -> None:
        await websocket.accept()
        queue: asyncio.Queue = asyncio.Queue(maxsize=SESSION_QUEUE_FRAMES)
        session = sim.attach(asyncio.get_running_loop(), queue)

        async def pump() -> None:
            while True:
                await websocket.send_text(await queue.get())

        sender = asyncio.create_task(pump())
        try:
            while True:
                text = await websocket.receive_text()
                msg, err = _parse_command(text)
                if err is not None:
                    await websocket.send_text(json.dumps(err))
                    continue
                reply = sim.command(session, msg["agent_id"],
                                    msg["preferred_vel"], msg["client_seq"])
                await websocket.send_text(json.dumps(reply))
        except WebSocketDisconnect:
            pass
        finally:
            sender.cancel()
            try:
                await sender
            except asyncio.CancelledError:
                pass
            sim.detach(session)

    return app


def serve(scenario: Scenario, *, host: str = "127.0.0.1", port: int = 8701,
          broadcast_hz: float = 30.0, speed: float = 1.0) -> None:
    """Run the bridge until interrupted.  Raises OSError if the port is
    taken (probed up front; uvicorn would swallow the bind failure)."""
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((host, port))
    finally:
        probe.close()
    import uvicorn

    sim = LiveSim(Engine(scenario), broadcast_hz=broadcast_hz, speed=speed)
    app = build_app(sim)
    sim.start()
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        sim.stop()
