import asyncio
import json
import math

import numpy as np
import pytest
from fastapi.testclient import TestClient

from orcasim.bridge import LiveSim, _offer, _parse_command, build_app
from orcasim.engine import (AgentSpec, CameraModel, Engine, HeadOn, Scenario,
                            head_on_scenario, scenario_to_dict,
                            steering_scenario)
from orcasim.sensing import NoiseModel

ZERO = NoiseModel(sigma_pixel=0.0, sigma_dist_0=0.0, sigma_selfvel=0.0,
                  dist_bias_coeff=0.0)


def quiet_sim() -> LiveSim:
    return LiveSim(Engine(steering_scenario(0, noise=ZERO)), realtime=False)


# -- command staging (no thread, deterministic) -------------------------------

def test_command_ack_and_clamp():
    sim = quiet_sim()
    ack = sim.command(1, "a", [10.0, 0.0, 0.0], 1)
    assert ack["type"] == "ack"
    assert ack["client_seq"] == 1
    assert ack["tick"] == 1  # takes effect on the first tick computed
    rec = sim.step_once()
    pref = rec["agents"]["a"]["preferred"]
    assert pref == pytest.approx([2.0, 0.0, 0.0])  # clamped to max_speed


def test_second_command_in_one_tick_gap_wins():
    sim = quiet_sim()
    a1 = sim.command(1, "a", [1.0, 0.0, 0.0], 1)
    a2 = sim.command(1, "a", [0.0, 1.0, 0.0], 2)
    assert a1["tick"] == a2["tick"]
    rec = sim.step_once()
    assert rec["agents"]["a"]["preferred"] == pytest.approx([0.0, 1.0, 0.0])


def test_stale_seq_ignored_with_notice():
    sim = quiet_sim()
    sim.command(1, "a", [1.0, 0.0, 0.0], 5)
    notice = sim.command(1, "a", [0.0, 1.0, 0.0], 3)
    assert notice["type"] == "error"
    assert notice["error"] == "stale_seq"
    rec = sim.step_once()
    assert rec["agents"]["a"]["preferred"] == pytest.approx([1.0, 0.0, 0.0])


def test_new_session_takes_over_with_fresh_seq():
    sim = quiet_sim()
    sim.command(1, "a", [1.0, 0.0, 0.0], 99)
    ack = sim.command(2, "a", [0.0, 0.5, 0.0], 1)  # last writer wins
    assert ack["type"] == "ack"
    rec = sim.step_once()
    assert rec["agents"]["a"]["preferred"] == pytest.approx([0.0, 0.5, 0.0])


def test_unknown_and_unsteerable_agents_rejected():
    sim = quiet_sim()
    err = sim.command(1, "zz", [1.0, 0.0, 0.0], 1)
    assert err["type"] == "error" and err["error"] == "unknown_agent"
    scripted = LiveSim(Engine(head_on_scenario(0, noise=ZERO)), realtime=False)
    err = scripted.command(1, "a", [1.0, 0.0, 0.0], 1)
    assert err["error"] == "unknown_agent"
    assert "not externally steerable" in err["detail"]


def test_disconnect_decays_preferred_to_zero():
    sim = quiet_sim()
    sim.command(7, "a", [2.0, 0.0, 0.0], 1)
    sim.step_once()
    sim.detach(7)
    norms = []
    for _ in range(sim.decay_ticks + 3):
        rec = sim.step_once()
        norms.append(float(np.linalg.norm(rec["agents"]["a"]["preferred"])))
    assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))
    assert norms[0] > 0.0
    assert norms[-1] == 0.0
    assert "a" not in sim.controls  # released, agent hovers


def test_abort_flips_status():
    import dataclasses
    sc = steering_scenario(0)
    sc = dataclasses.replace(
        sc, filter_cfg=dataclasses.replace(sc.filter_cfg, own_gain=1e9))
    sim = LiveSim(Engine(sc), realtime=False)
    sim.command(1, "a", [1.0, 0.0, 0.0], 1)
    for _ in range(600):
        rec = sim.step_once()
        if rec.get("kind") == "abort":
            break
    assert sim.status == "aborted"
    assert sim.abort_reason


# -- frame construction --------------------------------------------------------

def test_state_frame_fields_and_size_bound():
    # Eight agents converging on the origin: worst case for tracks/planes.
    n = 8
    agents = []
    for i in range(n):
        th = 2.0 * math.pi * i / n
        pos = (3.0 * math.cos(th), 3.0 * math.sin(th), 2.0)
        goal = (-pos[0], -pos[1], 2.0)
        agents.append(AgentSpec(agent_id=f"r{i}", pos=pos,
                                policy=HeadOn(goal=goal, speed=1.0)))
    sc = Scenario(agents=tuple(agents), duration=5.0,
                  camera=CameraModel(hfov=math.radians(140.0),
                                     vfov=math.radians(70.0)))
    engine = Engine(sc)
    sim = LiveSim(engine, realtime=False)
    for _ in range(90):
        rec = sim.step_once()
    frame = sim.frame(rec)
    assert frame["type"] == "state" and frame["proto"] == 1
    assert frame["tick"] == rec["tick"]
    assert len(frame["agents"]) == n
    total_tracks = sum(len(a["tracks"]) for a in frame["agents"])
    assert total_tracks > n  # beliefs actually populated
    assert len(json.dumps(frame).encode()) < 65536


def test_dance_flag_requires_mutual_same_side_push():
    sim = quiet_sim()
    rec = {
        "tick": 3, "time": 0.05,
        "agents": {
            "a": {"pos": [0, 0, 2], "vel": [0, 0, 0], "commanded": [0, 0, 0],
                  "belief": None, "planes": [],
                  "avoidance": [{"neighbor": "b", "active": True,
                                 "emergency": False, "stale": False,
                                 "u": [0.0, 1.0, 0.0]}]},
            "b": {"pos": [2, 0, 2], "vel": [0, 0, 0], "commanded": [0, 0, 0],
                  "belief": None, "planes": [],
                  "avoidance": [{"neighbor": "a", "active": True,
                                 "emergency": False, "stale": False,
                                 "u": [0.1, 0.9, 0.0]}]},
        },
    }
    frame = sim.frame(rec)
    assert all(a["dance_flag"] for a in frame["agents"])
    rec["agents"]["b"]["avoidance"][0]["u"] = [0.0, -1.0, 0.0]  # opposed
    frame = sim.frame(rec)
    assert not any(a["dance_flag"] for a in frame["agents"])
    rec["agents"]["b"]["avoidance"][0]["active"] = False
    rec["agents"]["b"]["avoidance"][0]["u"] = [0.0, 1.0, 0.0]
    frame = sim.frame(rec)
    assert not any(a["dance_flag"] for a in frame["agents"])


def test_offer_drops_oldest_never_blocks():
    q: asyncio.Queue = asyncio.Queue(maxsize=2)
    for item in ("f1", "f2", "f3"):
        _offer(q, item)
    assert q.get_nowait() == "f2"
    assert q.get_nowait() == "f3"


# -- inbound message validation -------------------------------------------------

@pytest.mark.parametrize("raw", [
    "{not json",
    "[1, 2, 3]",
    '{"type": "state", "agent_id": "a", "preferred_vel": [0,0,0], "client_seq": 1}',
    '{"type": "command", "agent_id": 7, "preferred_vel": [0,0,0], "client_seq": 1}',
    '{"type": "command", "agent_id": "a", "preferred_vel": [0,0], "client_seq": 1}',
    '{"type": "command", "agent_id": "a", "preferred_vel": [NaN,0,0], "client_seq": 1}',
    '{"type": "command", "agent_id": "a", "preferred_vel": [0,0,0], "client_seq": 1.5}',
    '{"type": "command", "proto": 2, "agent_id": "a", "preferred_vel": [0,0,0], "client_seq": 1}',
])
def test_parse_command_rejections(raw):
    msg, err = _parse_command(raw)
    assert msg is None
    assert err["type"] == "error" and err["error"] == "bad_message"


def test_parse_command_accepts_spec_shape():
    msg, err = _parse_command(
        '{"type": "command", "proto": 1, "agent_id": "a",'
        ' "preferred_vel": [1, 0.5, 0], "client_seq": 4}')
    assert err is None
    assert msg["agent_id"] == "a" and msg["client_seq"] == 4


# -- HTTP + WebSocket endpoints ---------------------------------------------------

def test_http_endpoints():
    sc = steering_scenario(0, noise=ZERO)
    sim = LiveSim(Engine(sc), realtime=False)
    client = TestClient(build_app(sim))
    health = client.get("/healthz").json()
    assert health["status"] == "running" and health["proto"] == 1
    assert client.get("/scenario").json() == scenario_to_dict(sc)


def test_ws_stream_commands_and_recovery():
    sc = steering_scenario(0, noise=ZERO)
    sim = LiveSim(Engine(sc), realtime=True, speed=10.0)
    app = build_app(sim)
    sim.start()
    try:
        with TestClient(app) as client:
            with client.websocket_connect("/ws") as ws:
                f1 = ws.receive_json()
                assert f1["type"] == "state" and f1["proto"] == 1
                # idle client: agents hover at their starting posts
                a0 = next(a for a in f1["agents"] if a["id"] == "a")
                assert a0["pos"] == pytest.approx([-4.0, 0.0, 2.0])
                f2 = ws.receive_json()
                assert f2["tick"] > f1["tick"]  # ordering preserved

                # malformed message: error frame, connection stays open
                ws.send_text("{broken")
                msg = ws.receive_json()
                while msg["type"] == "state":
                    msg = ws.receive_json()
                assert msg["type"] == "error" and msg["error"] == "bad_message"

                ws.send_text(json.dumps({
                    "type": "command", "proto": 1, "agent_id": "a",
                    "preferred_vel": [1.0, 0.0, 0.0], "client_seq": 1}))
                msg = ws.receive_json()
                while msg["type"] == "state":
                    msg = ws.receive_json()
                assert msg["type"] == "ack" and msg["client_seq"] == 1

                # the command shows up as the agent's commanded velocity
                deadline = msg["tick"]
                for _ in range(400):
                    frame = ws.receive_json()
                    if frame["type"] != "state" or frame["tick"] < deadline:
                        continue
                    ax = next(a for a in frame["agents"] if a["id"] == "a")
                    if ax["commanded"][0] > 0.5:
                        break
                else:
                    pytest.fail("command never reflected in state frames")
    finally:
        sim.stop()


def test_two_clients_control_only_their_own_agents():
    sc = steering_scenario(0, noise=ZERO)
    sim = LiveSim(Engine(sc), realtime=True, speed=10.0)
    app = build_app(sim)
    sim.start()
    try:
        with TestClient(app) as client:
            with client.websocket_connect("/ws") as wa, \
                 client.websocket_connect("/ws") as wb:
                wa.send_text(json.dumps({
                    "type": "command", "agent_id": "a",
                    "preferred_vel": [0.5, 0.0, 0.0], "client_seq": 1}))
                wb.send_text(json.dumps({
                    "type": "command", "agent_id": "b",
                    "preferred_vel": [0.0, 0.0, 0.5], "client_seq": 1}))
                acks = 0
                prefs = {}
                for _ in range(600):
                    msg = wa.receive_json()
                    if msg["type"] == "ack":
                        acks += 1
                    if msg["type"] != "state":
                        continue
                    prefs = {a["id"]: a["commanded"] for a in msg["agents"]}
                    if (prefs.get("a", [0])[0] > 0.3
                            and prefs.get("b", [0, 0, 0])[2] > 0.3):
                        break
                else:
                    pytest.fail(f"commands not reflected: {prefs}")
                assert acks == 1
                assert abs(prefs["a"][2]) < 1e-6  # a got no vertical command
    finally:
        sim.stop()
