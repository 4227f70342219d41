"""Fixed-step world loop.

Each tick, in fixed agent-id order: policies produce preferred
velocities, sensing emits camera-rate measurements, each per-agent EKF
predicts and fuses, avoidance planes are built from beliefs only, a
single LP per agent picks the commanded velocity, and dynamics advance.
Ground truth exists for dynamics, collision detection, and logging; it
never reaches an agent's planes.

Scenario files are strict JSON: unknown keys are rejected with a JSON
pointer to the offending entry. Run logs are line-delimited JSON with a
header (scenario hash + echo), one record per tick, and a trailing
summary (or abort diagnostic). Identical scenario + seed gives byte
identical logs.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Union

import numpy as np

from .agents import (FIRST_ORDER, INSTANTANEOUS, AgentState, Dynamics,
                     heading_from_yaw, step)
from .estimation import (Belief, FilterConfig, manage_tracks,
                         own_velocity_update, predict, update)
from .linalg import Mat3, Vec3, make_rng, vec3
from .sensing import CameraModel, Measurement, NoiseModel, measure
from .solver import (OrcaPlane, SolverConfig, apply_head_on_bias, build_plane,
                     solve, unscale_plane)
from .vo import (AgentShape, AlreadyColliding, VelocityObstacle,
                 compute_avoidance, emergency_avoidance)

LOG_FORMAT = "orcasim-runlog"
LOG_VERSION = 1

# Goal-seeking policies slow down inside this many seconds of travel so
# runs end with agents parked instead of orbiting their goals.
GOAL_SLOWDOWN_TIME = 1.0


# -- policies ----------------------------------------------------------------


@dataclass(frozen=True)
class HeadOn:
    """Fly straight at a fixed goal point, braking near it."""
    goal: tuple[float, float, float]
    speed: float = 1.0


@dataclass(frozen=True)
class Stationary:
    pass


@dataclass(frozen=True)
class ConstantVel:
    vel: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Waypoint:
    points: tuple[tuple[float, float, float], ...] = ()
    speed: float = 1.0
    tolerance: float = 0.2


@dataclass(frozen=True)
class External:
    """Preferred velocity read from a named command channel (bridge/UI).
    An empty channel means the agent's own id."""
    channel: str = ""


Policy = Union[HeadOn, Stationary, ConstantVel, Waypoint, External]

_POLICY_KINDS = {
    "head_on": HeadOn,
    "stationary": Stationary,
    "constant_vel": ConstantVel,
    "waypoint": Waypoint,
    "external": External,
}


# -- scenario ----------------------------------------------------------------


@dataclass(frozen=True)
class AgentSpec:
    agent_id: str
    pos: tuple[float, float, float]
    vel: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw: float | None = None  # None: face initial velocity, else the policy goal
    shape: AgentShape = field(default_factory=AgentShape)
    dynamics: Dynamics = field(default_factory=Dynamics)
    cooperative: bool = True
    # Multiplies the combined radii this agent plans with (not its
    # physical shape); >1 buys margin against non-cooperative neighbors.
    radius_inflation: float = 1.0
    policy: Policy = field(default_factory=Stationary)


@dataclass(frozen=True)
class Scenario:
    agents: tuple[AgentSpec, ...]
    duration: float
    tick_dt: float = 1.0 / 60.0
    tau: float = 3.0
    seed: int = 0
    camera: CameraModel = field(default_factory=CameraModel)
    noise: NoiseModel = field(default_factory=NoiseModel)
    filter_cfg: FilterConfig = field(default_factory=FilterConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration / self.tick_dt))

    def validate(self) -> None:
        if self.tick_dt <= 0:
            raise ScenarioError("/tick_dt", "must be > 0")
        if self.duration < self.tick_dt:
            raise ScenarioError("/duration", "must be >= tick_dt")
        if self.tau <= 0:
            raise ScenarioError("/tau", "must be > 0")
        ids = [a.agent_id for a in self.agents]
        if len(ids) != len(set(ids)):
            raise ScenarioError("/agents", "agent ids must be distinct")
        if not ids:
            raise ScenarioError("/agents", "at least one agent required")
        for i, a in enumerate(self.agents):
            if a.shape.r_xy <= 0 or a.shape.r_z <= 0:
                raise ScenarioError(f"/agents/{i}/shape", "radii must be > 0")
            if a.radius_inflation <= 0:
                raise ScenarioError(f"/agents/{i}/radius_inflation", "must be > 0")


class ScenarioError(ValueError):
    """Scenario validation failure; `pointer` is a JSON pointer to the
    offending document location."""

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


# Strict parsing helpers. Every unknown key is an error so typos never
# silently fall back to defaults.

def _check_keys(d: Any, pointer: str, allowed: set[str], required: set[str] = frozenset()) -> None:
    if not isinstance(d, dict):
        raise ScenarioError(pointer, f"expected an object, got {type(d).__name__}")
    for k in d:
        if k not in allowed:
            raise ScenarioError(f"{pointer}/{k}", "unknown key")
    for k in required:
        if k not in d:
            raise ScenarioError(pointer, f"missing required key '{k}'")


def _num(d: dict, key: str, pointer: str, default: float | None = None) -> float:
    if key not in d:
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{pointer}/{key}", "expected a number")
    if not math.isfinite(v):
        raise ScenarioError(f"{pointer}/{key}", "must be finite")
    return float(v)


def _integer(d: dict, key: str, pointer: str, default: int) -> int:
    if key not in d:
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ScenarioError(f"{pointer}/{key}", "expected an integer")
    return v


def _boolean(d: dict, key: str, pointer: str, default: bool) -> bool:
    if key not in d:
        return default
    if not isinstance(d[key], bool):
        raise ScenarioError(f"{pointer}/{key}", "expected a boolean")
    return d[key]


def _triple(v: Any, pointer: str) -> tuple[float, float, float]:
    if (not isinstance(v, (list, tuple)) or len(v) != 3
            or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v)):
        raise ScenarioError(pointer, "expected [x, y, z] numbers")
    if not all(math.isfinite(x) for x in v):
        raise ScenarioError(pointer, "components must be finite")
    return (float(v[0]), float(v[1]), float(v[2]))


def _parse_policy(d: Any, pointer: str) -> Policy:
    _check_keys(d, pointer, {"kind", "goal", "speed", "vel", "points", "tolerance", "channel"},
                {"kind"})
    kind = d["kind"]
    if kind not in _POLICY_KINDS:
        raise ScenarioError(f"{pointer}/kind",
                            f"unknown policy kind {kind!r}; expected one of {sorted(_POLICY_KINDS)}")
    extra = {k for k in d if k != "kind"}
    if kind == "head_on":
        if extra - {"goal", "speed"}:
            raise ScenarioError(f"{pointer}/{sorted(extra - {'goal', 'speed'})[0]}",
                                "key not valid for head_on policy")
        if "goal" not in d:
            raise ScenarioError(pointer, "missing required key 'goal'")
        return HeadOn(goal=_triple(d["goal"], f"{pointer}/goal"),
                      speed=_num(d, "speed", pointer, 1.0))
    if kind == "stationary":
        if extra:
            raise ScenarioError(f"{pointer}/{sorted(extra)[0]}", "key not valid for stationary policy")
        return Stationary()
    if kind == "constant_vel":
        if extra - {"vel"}:
            raise ScenarioError(f"{pointer}/{sorted(extra - {'vel'})[0]}",
                                "key not valid for constant_vel policy")
        return ConstantVel(vel=_triple(d.get("vel", (0, 0, 0)), f"{pointer}/vel"))
    if kind == "waypoint":
        if extra - {"points", "speed", "tolerance"}:
            raise ScenarioError(f"{pointer}/{sorted(extra - {'points', 'speed', 'tolerance'})[0]}",
                                "key not valid for waypoint policy")
        pts = d.get("points", [])
        if not isinstance(pts, list) or not pts:
            raise ScenarioError(f"{pointer}/points", "expected a non-empty list of [x, y, z]")
        points = tuple(_triple(p, f"{pointer}/points/{i}") for i, p in enumerate(pts))
        return Waypoint(points=points, speed=_num(d, "speed", pointer, 1.0),
                        tolerance=_num(d, "tolerance", pointer, 0.2))
    # external
    if extra - {"channel"}:
        raise ScenarioError(f"{pointer}/{sorted(extra - {'channel'})[0]}",
                            "key not valid for external policy")
    channel = d.get("channel", "")
    if not isinstance(channel, str):
        raise ScenarioError(f"{pointer}/channel", "expected a string")
    return External(channel=channel)


def _parse_agent(d: Any, pointer: str) -> AgentSpec:
    _check_keys(d, pointer,
                {"id", "pos", "vel", "yaw", "shape", "dynamics", "cooperative",
                 "radius_inflation", "policy"},
                {"id", "pos"})
    if not isinstance(d["id"], str) or not d["id"]:
        raise ScenarioError(f"{pointer}/id", "expected a non-empty string")
    shape = AgentShape()
    if "shape" in d:
        _check_keys(d["shape"], f"{pointer}/shape", {"r_xy", "r_z"})
        shape = AgentShape(r_xy=_num(d["shape"], "r_xy", f"{pointer}/shape", 0.3),
                           r_z=_num(d["shape"], "r_z", f"{pointer}/shape", 0.5))
    dyn = Dynamics()
    if "dynamics" in d:
        _check_keys(d["dynamics"], f"{pointer}/dynamics", {"mode", "gain"})
        mode = d["dynamics"].get("mode", FIRST_ORDER)
        if mode not in (INSTANTANEOUS, FIRST_ORDER):
            raise ScenarioError(f"{pointer}/dynamics/mode",
                                f"expected '{INSTANTANEOUS}' or '{FIRST_ORDER}'")
        dyn = Dynamics(mode=mode, gain=_num(d["dynamics"], "gain", f"{pointer}/dynamics", 2.0))
    policy = _parse_policy(d["policy"], f"{pointer}/policy") if "policy" in d else Stationary()
    return AgentSpec(
        agent_id=d["id"],
        pos=_triple(d["pos"], f"{pointer}/pos"),
        vel=_triple(d.get("vel", (0, 0, 0)), f"{pointer}/vel"),
        yaw=_num(d, "yaw", pointer, None),
        shape=shape,
        dynamics=dyn,
        cooperative=_boolean(d, "cooperative", pointer, True),
        radius_inflation=_num(d, "radius_inflation", pointer, 1.0),
        policy=policy,
    )


def scenario_from_dict(d: Any) -> Scenario:
    _check_keys(d, "", {"duration", "tick_dt", "tau", "seed", "agents",
                        "camera", "noise", "filter", "solver"},
                {"duration", "agents"})
    if not isinstance(d["agents"], list):
        raise ScenarioError("/agents", "expected a list")
    agents = tuple(_parse_agent(a, f"/agents/{i}") for i, a in enumerate(d["agents"]))

    cam = CameraModel()
    if "camera" in d:
        p = "/camera"
        _check_keys(d["camera"], p, {"hfov_deg", "vfov_deg", "rate_hz", "focal", "max_range"})
        cam = CameraModel(
            hfov=math.radians(_num(d["camera"], "hfov_deg", p, math.degrees(cam.hfov))),
            vfov=math.radians(_num(d["camera"], "vfov_deg", p, math.degrees(cam.vfov))),
            rate_hz=_num(d["camera"], "rate_hz", p, cam.rate_hz),
            focal=_num(d["camera"], "focal", p, cam.focal),
            max_range=_num(d["camera"], "max_range", p, cam.max_range),
        )
    noise = NoiseModel()
    if "noise" in d:
        p = "/noise"
        _check_keys(d["noise"], p, {"sigma_pixel", "sigma_dist_0", "dist_ref",
                                    "sigma_selfvel", "dist_bias_coeff"})
        noise = NoiseModel(
            sigma_pixel=_num(d["noise"], "sigma_pixel", p, noise.sigma_pixel),
            sigma_dist_0=_num(d["noise"], "sigma_dist_0", p, noise.sigma_dist_0),
            dist_ref=_num(d["noise"], "dist_ref", p, noise.dist_ref),
            sigma_selfvel=_num(d["noise"], "sigma_selfvel", p, noise.sigma_selfvel),
            dist_bias_coeff=_num(d["noise"], "dist_bias_coeff", p, noise.dist_bias_coeff),
        )
    fcfg = FilterConfig()
    if "filter" in d:
        p = "/filter"
        _check_keys(d["filter"], p, {"own_gain", "process_noise_var", "init_vel_var",
                                     "init_pos_inflation", "coast_ticks", "drop_ticks",
                                     "meas_noise"})
        assumed = fcfg.meas_noise
        if "meas_noise" in d["filter"]:
            mp = "/filter/meas_noise"
            _check_keys(d["filter"]["meas_noise"], mp,
                        {"sigma_pixel", "sigma_dist_0", "dist_ref",
                         "sigma_selfvel", "dist_bias_coeff"})
            mn = d["filter"]["meas_noise"]
            assumed = NoiseModel(
                sigma_pixel=_num(mn, "sigma_pixel", mp, assumed.sigma_pixel),
                sigma_dist_0=_num(mn, "sigma_dist_0", mp, assumed.sigma_dist_0),
                dist_ref=_num(mn, "dist_ref", mp, assumed.dist_ref),
                sigma_selfvel=_num(mn, "sigma_selfvel", mp, assumed.sigma_selfvel),
                dist_bias_coeff=_num(mn, "dist_bias_coeff", mp, assumed.dist_bias_coeff),
            )
        fcfg = FilterConfig(
            own_gain=_num(d["filter"], "own_gain", p, fcfg.own_gain),
            process_noise=np.eye(3) * _num(d["filter"], "process_noise_var", p, 1.0),
            meas_noise=assumed,
            init_vel_var=_num(d["filter"], "init_vel_var", p, fcfg.init_vel_var),
            init_pos_inflation=_num(d["filter"], "init_pos_inflation", p, fcfg.init_pos_inflation),
            coast_ticks=_integer(d["filter"], "coast_ticks", p, fcfg.coast_ticks),
            drop_ticks=_integer(d["filter"], "drop_ticks", p, fcfg.drop_ticks),
        )
        if fcfg.drop_ticks <= fcfg.coast_ticks:
            raise ScenarioError("/filter/drop_ticks", "must be > coast_ticks")
    scfg = SolverConfig()
    if "solver" in d:
        p = "/solver"
        _check_keys(d["solver"], p, {"share", "max_speed", "tie_break_bias"})
        scfg = SolverConfig(
            share=_num(d["solver"], "share", p, scfg.share),
            max_speed=_num(d["solver"], "max_speed", p, scfg.max_speed),
            tie_break_bias=_num(d["solver"], "tie_break_bias", p, scfg.tie_break_bias),
        )
        if not 0 < scfg.share <= 1:
            raise ScenarioError("/solver/share", "must be in (0, 1]")
        if scfg.max_speed <= 0:
            raise ScenarioError("/solver/max_speed", "must be > 0")

    scenario = Scenario(
        agents=agents,
        duration=_num(d, "duration", "", 0.0),
        tick_dt=_num(d, "tick_dt", "", 1.0 / 60.0),
        tau=_num(d, "tau", "", 3.0),
        seed=_integer(d, "seed", "", 0),
        camera=cam, noise=noise, filter_cfg=fcfg, solver=scfg,
    )
    scenario.validate()
    return scenario


def _policy_to_dict(p: Policy) -> dict:
    if isinstance(p, HeadOn):
        return {"kind": "head_on", "goal": list(p.goal), "speed": p.speed}
    if isinstance(p, Stationary):
        return {"kind": "stationary"}
    if isinstance(p, ConstantVel):
        return {"kind": "constant_vel", "vel": list(p.vel)}
    if isinstance(p, Waypoint):
        return {"kind": "waypoint", "points": [list(q) for q in p.points],
                "speed": p.speed, "tolerance": p.tolerance}
    return {"kind": "external", "channel": p.channel}


def scenario_to_dict(s: Scenario) -> dict:
    """Normalized echo with every default materialized; hashing and the
    service's GET /scenario both use this form."""
    out: dict[str, Any] = {
        "duration": s.duration,
        "tick_dt": s.tick_dt,
        "tau": s.tau,
        "seed": s.seed,
        "agents": [],
        "camera": {"hfov_deg": math.degrees(s.camera.hfov),
                   "vfov_deg": math.degrees(s.camera.vfov),
                   "rate_hz": s.camera.rate_hz,
                   "focal": s.camera.focal,
                   "max_range": s.camera.max_range},
        "noise": {"sigma_pixel": s.noise.sigma_pixel,
                  "sigma_dist_0": s.noise.sigma_dist_0,
                  "dist_ref": s.noise.dist_ref,
                  "sigma_selfvel": s.noise.sigma_selfvel,
                  "dist_bias_coeff": s.noise.dist_bias_coeff},
        "filter": {"own_gain": s.filter_cfg.own_gain,
                   "process_noise_var": float(s.filter_cfg.process_noise[0, 0]),
                   "meas_noise": {
                       "sigma_pixel": s.filter_cfg.meas_noise.sigma_pixel,
                       "sigma_dist_0": s.filter_cfg.meas_noise.sigma_dist_0,
                       "dist_ref": s.filter_cfg.meas_noise.dist_ref,
                       "sigma_selfvel": s.filter_cfg.meas_noise.sigma_selfvel,
                       "dist_bias_coeff": s.filter_cfg.meas_noise.dist_bias_coeff},
                   "init_vel_var": s.filter_cfg.init_vel_var,
                   "init_pos_inflation": s.filter_cfg.init_pos_inflation,
                   "coast_ticks": s.filter_cfg.coast_ticks,
                   "drop_ticks": s.filter_cfg.drop_ticks},
        "solver": {"share": s.solver.share,
                   "max_speed": s.solver.max_speed,
                   "tie_break_bias": s.solver.tie_break_bias},
    }
    for a in s.agents:
        entry: dict[str, Any] = {
            "id": a.agent_id,
            "pos": list(a.pos),
            "vel": list(a.vel),
            "shape": {"r_xy": a.shape.r_xy, "r_z": a.shape.r_z},
            "dynamics": {"mode": a.dynamics.mode, "gain": a.dynamics.gain},
            "cooperative": a.cooperative,
            "radius_inflation": a.radius_inflation,
            "policy": _policy_to_dict(a.policy),
        }
        if a.yaw is not None:
            entry["yaw"] = a.yaw
        out["agents"].append(entry)
    return out


def load_scenario(path: str) -> Scenario:
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ScenarioError("", f"not valid JSON: {e}") from None
    return scenario_from_dict(doc)


# -- canonical serialization --------------------------------------------------


def canonical_json(obj: Any) -> str:
    """Key-sorted, separator-free JSON; floats keep full repr precision so
    equal runs serialize to equal bytes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def scenario_hash(s: Scenario) -> str:
    return hashlib.sha256(canonical_json(scenario_to_dict(s)).encode()).hexdigest()


def _listify(v: np.ndarray) -> list[float]:
    return [float(x) for x in v]


# -- run log -------------------------------------------------------------------


@dataclass
class RunLog:
    header: dict
    records: list[dict]
    end: dict | None = None

    @property
    def aborted(self) -> bool:
        return self.end is not None and self.end.get("kind") == "abort"

    def lines(self):
        yield canonical_json(self.header)
        for r in self.records:
            yield canonical_json(r)
        if self.end is not None:
            yield canonical_json(self.end)

    def dumps(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for line in self.lines():
                f.write(line)
                f.write("\n")

    @staticmethod
    def read(path: str) -> "RunLog":
        header = None
        records = []
        end = None
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                kind = rec.get("kind")
                if kind == "header":
                    header = rec
                elif kind == "tick":
                    records.append(rec)
                elif kind in ("end", "abort"):
                    end = rec
        if header is None:
            raise ValueError(f"{path}: no header record")
        return RunLog(header, records, end)


# -- engine --------------------------------------------------------------------


def _initial_yaw(spec: AgentSpec) -> float:
    if spec.yaw is not None:
        return spec.yaw
    vx, vy = spec.vel[0], spec.vel[1]
    if vx * vx + vy * vy > 1e-12:
        return math.atan2(vy, vx)
    # At rest: face where the policy will push, so the camera starts
    # pointed at whatever matters.
    target = None
    if isinstance(spec.policy, HeadOn):
        target = spec.policy.goal
    elif isinstance(spec.policy, Waypoint) and spec.policy.points:
        target = spec.policy.points[0]
    elif isinstance(spec.policy, ConstantVel):
        cx, cy = spec.policy.vel[0], spec.policy.vel[1]
        if cx * cx + cy * cy > 1e-12:
            return math.atan2(cy, cx)
    if target is not None:
        dx, dy = target[0] - spec.pos[0], target[1] - spec.pos[1]
        if dx * dx + dy * dy > 1e-12:
            return math.atan2(dy, dx)
    return 0.0


# Believed neighbor distance (scaled by combined radius) under which the
# camera stares at the threat instead of following the flight path. An
# avoidance slide is tangential, and letting the lens swing with it points
# away from the neighbor exactly when reacquisition matters most.
GAZE_SCALED_DIST = 2.5


class Engine:
    """One simulation run, steppable tick by tick.

    `tick()` returns the tick's record, or an abort diagnostic if any
    state went non-finite (the engine then refuses further ticks).
    External policies read their channel from `set_command`.
    """

    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.scenario = scenario
        self.order = sorted(a.agent_id for a in scenario.agents)
        self.specs = {a.agent_id: a for a in scenario.agents}
        self.states: dict[str, AgentState] = {}
        self.beliefs: dict[str, Belief] = {}
        self.rngs: dict[str, np.random.Generator] = {}
        self.commanded_prev: dict[str, Vec3] = {}
        self.commands: dict[str, Vec3] = {}
        self.waypoint_index: dict[str, int] = {}
        # (self, neighbor) -> last fresh evaluation was already colliding;
        # such constraints survive the stale-track gate (see _planes_for).
        self.emergency_latch: dict[tuple[str, str], bool] = {}
        for idx, aid in enumerate(self.order):
            spec = self.specs[aid]
            self.states[aid] = AgentState(
                agent_id=aid,
                pos=np.array(spec.pos, dtype=float),
                vel=np.array(spec.vel, dtype=float),
                shape=spec.shape,
                dynamics=spec.dynamics,
                cooperative=spec.cooperative,
                heading=heading_from_yaw(_initial_yaw(spec)),
            )
            if spec.cooperative:
                self.beliefs[aid] = Belief(aid, np.array(spec.vel, dtype=float))
            # Stream index is the agent's rank in id order, so adding an
            # agent never shifts another agent's draws.
            self.rngs[aid] = make_rng(scenario.seed, 1, idx)
            self.commanded_prev[aid] = np.array(spec.vel, dtype=float)
            self.waypoint_index[aid] = 0
        cam_interval = 1.0 / (scenario.camera.rate_hz * scenario.tick_dt)
        self.sense_every = max(1, int(round(cam_interval)))
        self.tick_count = 0
        self.aborted = False
        self.min_separation_overall = math.inf
        self._pair_scale = {}
        for i, a in enumerate(self.order):
            for b in self.order[i + 1:]:
                sa, sb = self.specs[a].shape, self.specs[b].shape
                rr = sa.r_xy + sb.r_xy
                rz = sa.r_z + sb.r_z
                self._pair_scale[(a, b)] = np.array([1.0 / rr, 1.0 / rr, 1.0 / rz])

    # Bridge entry point: last writer wins until the next tick reads it.
    def set_command(self, channel: str, vel: Vec3) -> None:
        self.commands[channel] = np.asarray(vel, dtype=float)

    def _preferred(self, aid: str) -> Vec3:
        spec = self.specs[aid]
        state = self.states[aid]
        pol = spec.policy
        if isinstance(pol, Stationary):
            return np.zeros(3)
        if isinstance(pol, ConstantVel):
            return np.array(pol.vel, dtype=float)
        if isinstance(pol, External):
            cmd = self.commands.get(pol.channel or aid)
            return np.zeros(3) if cmd is None else cmd.copy()
        if isinstance(pol, HeadOn):
            return self._toward(state.pos, np.array(pol.goal), pol.speed, brake=True)
        # Waypoint: advance past reached points, brake only at the last.
        idx = self.waypoint_index[aid]
        pts = pol.points
        while idx < len(pts) and float(np.linalg.norm(np.array(pts[idx]) - state.pos)) <= pol.tolerance:
            idx += 1
        self.waypoint_index[aid] = idx
        if idx >= len(pts):
            return np.zeros(3)
        return self._toward(state.pos, np.array(pts[idx]), pol.speed,
                            brake=(idx == len(pts) - 1))

    @staticmethod
    def _toward(pos: Vec3, goal: np.ndarray, speed: float, brake: bool) -> Vec3:
        to_goal = goal - pos
        dist = float(np.linalg.norm(to_goal))
        if dist < 1e-9:
            return np.zeros(3)
        v = speed
        if brake:
            v = min(speed, dist / GOAL_SLOWDOWN_TIME)
        return to_goal * (v / dist)

    def _scaled_clearance(self) -> float | None:
        """Min over pairs of scaled separation with physical radii;
        < 1 means the ellipsoids overlap."""
        if len(self.order) < 2:
            return None
        best = math.inf
        for (a, b), s in self._pair_scale.items():
            d = (self.states[b].pos - self.states[a].pos) * s
            best = min(best, float(np.linalg.norm(d)))
        return best

    def _planes_for(self, aid: str, tick: int) -> tuple[list[OrcaPlane], list[dict]]:
        spec = self.specs[aid]
        belief = self.beliefs[aid]
        cfg = self.scenario.solver
        tau = self.scenario.tau
        planes: list[OrcaPlane] = []
        avoidance: list[dict] = []
        # Both the relative velocity and the half-space anchor come from
        # the filter. Anchoring at the commanded velocity instead would be
        # legitimate self-knowledge and it damps the avoidance loop hard,
        # but it also deadens it: the believed anchor lags the vehicle's
        # jumps, and that lag interacting with sensing noise is precisely
        # what produces the mutual-feint episodes this simulator exists to
        # study. Safety is recovered elsewhere (envelope growth with track
        # age, stale-track gating), not by sanitizing the loop.
        own_vel = belief.own_vel
        anchor_vel = own_vel
        # Coasting tracks (unseen <= coast_ticks) still feed planning; a
        # stale one is only kept for re-association and produces no plane.
        # Its predicted position is stale dead reckoning, and a constraint
        # built from it points somewhere arbitrary, so acting on it is as
        # likely to steer into the neighbor as away. One exception: a track
        # whose last evaluation was already inside the combined radius
        # keeps its emergency constraint however stale it gets. Escaping an
        # overlap usually means turning the camera away from the intruder,
        # and dropping the push the moment it leaves the image would strand
        # the pair interpenetrating and blind.
        for idx, track in enumerate(belief.tracks):
            tid = track.target_id
            other = self.specs.get(tid)
            if other is None:
                continue
            fresh = belief.is_fresh(tid, tick, self.scenario.filter_cfg)
            if not fresh and not self.emergency_latch.get((aid, tid), False):
                avoidance.append({
                    "neighbor": tid,
                    "active": False,
                    "emergency": False,
                    "stale": True,
                    "u": _listify(np.zeros(3)),
                })
                continue
            # Grow the envelope by the track's own stated uncertainty.
            # Velocity uncertainty turns into position uncertainty over the
            # time since the last fix, capped at the avoidance horizon: a
            # freshly sighted track adds almost nothing, while a coasting
            # one otherwise extrapolates its stale velocity into a phantom
            # all-clear right when caution matters most. Projecting over
            # the full horizon regardless of age would double-count what
            # the cone geometry already covers and buy absurdly wide
            # berths whenever the velocity estimate is merely noisy.
            diag = np.diag(belief.cov)
            pos_var = float(np.mean(diag[belief.pos_slice(idx)]))
            vel_var = float(np.mean(diag[belief.vel_slice(idx)]))
            age = max(tick - track.last_seen_tick, 0) * self.scenario.tick_dt
            lead = (math.sqrt(max(pos_var, 0.0))
                    + math.sqrt(max(vel_var, 0.0)) * min(age, tau))
            rr = (spec.shape.r_xy + other.shape.r_xy) * spec.radius_inflation + lead
            rz = (spec.shape.r_z + other.shape.r_z) * spec.radius_inflation + lead
            s = np.array([1.0 / rr, 1.0 / rr, 1.0 / rz])
            p_s = belief.rel_pos(tid) * s
            v_s = (own_vel - belief.neighbor_vel(tid)) * s
            vo = VelocityObstacle(p_s, 1.0, tau)
            emergency = False
            try:
                res = compute_avoidance(vo, v_s)
            except AlreadyColliding:
                res = emergency_avoidance(vo, v_s)
                emergency = True
            if fresh:
                self.emergency_latch[(aid, tid)] = emergency
            elif not emergency:
                # Dead reckoning says the overlap is resolved: release the
                # latch and fall back to the ordinary stale rule.
                self.emergency_latch[(aid, tid)] = False
                avoidance.append({
                    "neighbor": tid,
                    "active": False,
                    "emergency": False,
                    "stale": True,
                    "u": _listify(np.zeros(3)),
                })
                continue
            if res.in_obstacle:
                res = apply_head_on_bias(res, p_s, cfg)
                # Emergency planes anchor at the velocity actually flown,
                # not the believed one: the filter's own-velocity estimate
                # lags command changes, and a floor anchored behind the
                # vehicle re-admits the closing rate it was meant to stop.
                # Anchored at the true velocity the demanded opening rate
                # can only ratchet up while the overlap lasts.
                anchor = self.states[aid].vel if emergency else anchor_vel
                plane_s = build_plane(anchor * s, res, cfg, neighbor=tid)
                planes.append(unscale_plane(plane_s, np.diag(s)))
            avoidance.append({
                "neighbor": tid,
                "active": bool(res.in_obstacle),
                "emergency": emergency,
                "stale": not fresh,
                # u lives in this pair's scaled velocity space, where the
                # same-side predicate u_i . u_j is meaningful.
                "u": _listify(res.u),
            })
        return planes, avoidance

    def _gaze_heading(self, aid: str) -> Mat3 | None:
        """Heading override toward the nearest close believed neighbor."""
        belief = self.beliefs.get(aid)
        if belief is None:
            return None
        spec = self.specs[aid]
        best = None
        best_d = GAZE_SCALED_DIST
        for track in belief.tracks:
            other = self.specs.get(track.target_id)
            if other is None:
                continue
            rr = spec.shape.r_xy + other.shape.r_xy
            rz = spec.shape.r_z + other.shape.r_z
            rel = belief.rel_pos(track.target_id)
            d = float(math.sqrt((rel[0] / rr) ** 2 + (rel[1] / rr) ** 2
                                + (rel[2] / rz) ** 2))
            if d < best_d:
                best_d = d
                best = rel
        if best is None or math.hypot(best[0], best[1]) < 1e-9:
            return None
        return heading_from_yaw(math.atan2(best[1], best[0]))

    def _belief_snapshot(self, aid: str, tick: int) -> dict:
        belief = self.beliefs[aid]
        fcfg = self.scenario.filter_cfg
        tracks = []
        for i, tr in enumerate(belief.tracks):
            pos_var = np.diag(belief.cov)[belief.pos_slice(i)]
            tracks.append({
                "target": tr.target_id,
                "rel_pos": _listify(belief.mean[belief.pos_slice(i)]),
                "vel": _listify(belief.mean[belief.vel_slice(i)]),
                "pos_sigma": float(math.sqrt(max(float(np.mean(pos_var)), 0.0))),
                "fresh": belief.is_fresh(tr.target_id, tick, fcfg),
            })
        return {"own_vel": _listify(belief.own_vel), "tracks": tracks}

    def _check_finite(self, tick: int) -> dict | None:
        bad: list[str] = []
        for aid in self.order:
            st = self.states[aid]
            if not (np.isfinite(st.pos).all() and np.isfinite(st.vel).all()):
                bad.append(f"{aid}.state")
            b = self.beliefs.get(aid)
            if b is not None and not (np.isfinite(b.mean).all()
                                      and np.isfinite(np.diag(b.cov)).all()):
                bad.append(f"{aid}.belief")
        if not bad:
            return None
        self.aborted = True
        return {"kind": "abort", "tick": tick, "reason": "non-finite state",
                "where": bad}

    def tick(self) -> dict:
        if self.aborted:
            raise RuntimeError("run aborted; engine cannot continue")
        self.tick_count += 1
        t = self.tick_count
        sensing = (t - 1) % self.sense_every == 0

        # Numerical pathologies (deliberately unstable configs) must end in
        # a clean abort record, not a warning storm or a LAPACK traceback.
        try:
            return self._tick_body(t, sensing)
        except (np.linalg.LinAlgError, FloatingPointError, ValueError,
                OverflowError) as exc:
            self.aborted = True
            abort = self._check_finite(t)
            if abort is None:
                abort = {"kind": "abort", "tick": t,
                         "reason": f"numerical failure: {exc}", "where": []}
            return abort

    def _tick_body(self, t: int, sensing: bool) -> dict:
        sc = self.scenario
        dt = sc.tick_dt
        with np.errstate(all="ignore"):
            preferred = {aid: self._preferred(aid) for aid in self.order}

            observations: dict[str, list[Measurement]] = {aid: [] for aid in self.order}
            if sensing:
                for aid in self.order:
                    if not self.specs[aid].cooperative:
                        continue  # scripted agents do not sense
                    obs = self.states[aid]
                    rng = self.rngs[aid]
                    for tid in self.order:
                        if tid == aid:
                            continue
                        m = measure(sc.camera, sc.noise, rng, obs, self.states[tid], t)
                        if m is not None:
                            observations[aid].append(m)

            for aid in self.order:
                belief = self.beliefs.get(aid)
                if belief is None:
                    continue
                predict(belief, sc.filter_cfg, dt, self.commanded_prev[aid])
                if sensing:
                    for m in observations[aid]:
                        update(belief, sc.filter_cfg, sc.camera,
                               self.states[aid].heading, m)
                    if not observations[aid]:
                        # Self-velocity still arrives when nothing is visible.
                        v_meas = (self.states[aid].vel
                                  + sc.noise.sigma_selfvel * self.rngs[aid].standard_normal(3))
                        own_velocity_update(belief, sc.filter_cfg, v_meas)
                    manage_tracks(belief, sc.filter_cfg, t)

            commanded: dict[str, Vec3] = {}
            planes_log: dict[str, list[dict]] = {}
            avoid_log: dict[str, list[dict]] = {}
            for aid in self.order:
                if not self.specs[aid].cooperative:
                    commanded[aid] = preferred[aid]
                    planes_log[aid] = []
                    avoid_log[aid] = []
                    continue
                planes, avoidance = self._planes_for(aid, t)
                commanded[aid] = solve(preferred[aid], planes, sc.solver, seed=sc.seed)
                planes_log[aid] = [{"point": _listify(p.point), "normal": _listify(p.normal),
                                    "neighbor": p.neighbor} for p in planes]
                avoid_log[aid] = avoidance

            for aid in self.order:
                st = self.states[aid]
                st.commanded_vel = commanded[aid]
                step(st, dt)
                gaze = self._gaze_heading(aid)
                if gaze is not None:
                    st.heading = gaze
                self.commanded_prev[aid] = commanded[aid]

        abort = self._check_finite(t)
        if abort is not None:
            return abort

        clearance = self._scaled_clearance()
        if clearance is not None:
            self.min_separation_overall = min(self.min_separation_overall, clearance)

        agents = {}
        for aid in self.order:
            st = self.states[aid]
            z_cam = st.heading[:, 2]
            agents[aid] = {
                "pos": _listify(st.pos),
                "vel": _listify(st.vel),
                "commanded": _listify(commanded[aid]),
                "preferred": _listify(preferred[aid]),
                "yaw": float(math.atan2(z_cam[1], z_cam[0])),
                "belief": (self._belief_snapshot(aid, t) if aid in self.beliefs else None),
                "planes": planes_log[aid],
                "avoidance": avoid_log[aid],
            }
        return {
            "kind": "tick",
            "tick": t,
            "time": t * dt,
            "min_separation": clearance,
            "agents": agents,
        }

    def run(self) -> RunLog:
        sc = self.scenario
        header = {
            "kind": "header",
            "format": LOG_FORMAT,
            "version": LOG_VERSION,
            "scenario_sha256": scenario_hash(sc),
            "scenario": scenario_to_dict(sc),
            "n_ticks": sc.n_ticks,
        }
        records: list[dict] = []
        end: dict
        for _ in range(sc.n_ticks):
            rec = self.tick()
            if rec.get("kind") == "abort":
                end = rec
                return RunLog(header, records, end)
            records.append(rec)
        ms = self.min_separation_overall
        end = {
            "kind": "end",
            "ticks": self.tick_count,
            "min_separation": None if math.isinf(ms) else ms,
            "collided": bool(ms < 1.0),
        }
        return RunLog(header, records, end)


def run_scenario(scenario: Scenario) -> RunLog:
    return Engine(scenario).run()


def detect_collision(record: dict) -> bool:
    """True iff the tick's true scaled clearance is below 1 (open
    condition: exactly 1.0 is contact-free)."""
    ms = record.get("min_separation")
    return ms is not None and ms < 1.0


# -- frozen-geometry harness ---------------------------------------------------
#
# Isolates the per-tick velocity update from the world loop: the obstacle
# is held fixed while one side repeatedly applies its share of u against a
# constant-velocity opponent. Because the obstacle is convex, every
# iterate projects onto the same boundary point, so the residual contracts
# by exactly (1 - share) per application with instantaneous dynamics and
# by the matching exponential factor with first-order dynamics.


def frozen_vo_run(vo: VelocityObstacle, rel_vel0: Vec3, steps: int, dt: float,
                  dynamics: Dynamics, share: float = 0.5) -> dict:
    """Iterate the share update against a frozen obstacle.

    Returns times, residuals ||v_rel - v*||, and the limit v* (the
    boundary projection of the initial relative velocity).
    """
    v = np.asarray(rel_vel0, dtype=float).copy()
    first = compute_avoidance(vo, v)
    if not first.in_obstacle:
        raise ValueError("initial relative velocity must be inside the obstacle")
    v_star = v + first.u
    times = [0.0]
    residuals = [float(np.linalg.norm(v - v_star))]
    for n in range(1, steps + 1):
        res = compute_avoidance(vo, v)
        commanded = v + share * res.u
        if dynamics.mode == INSTANTANEOUS:
            v = commanded
        else:
            decay = math.exp(-dynamics.gain * dt)
            v = commanded + (v - commanded) * decay
        times.append(n * dt)
        residuals.append(float(np.linalg.norm(v - v_star)))
    return {"times": times, "residuals": residuals, "v_star": v_star}


# -- scenario builders -----------------------------------------------------------


def _jitter(seed: int, stream: int, scale: float) -> np.ndarray:
    """Two deterministic N(0, scale) draws for seeded scenario families."""
    if scale == 0.0:
        return np.zeros(2)
    return make_rng(seed, 9, stream).normal(0.0, scale, 2)


def head_on_scenario(seed: int = 0, *, separation: float = 6.0, speed: float = 1.0,
                     altitude: float = 2.0, jitter: float = 0.1,
                     duration: float | None = None,
                     dynamics: Dynamics | None = None,
                     noise: NoiseModel | None = None,
                     camera: CameraModel | None = None,
                     inflation: float = 1.15,
                     cooperative_b: bool = True) -> Scenario:
    """Two agents flown straight at each other along x, exactly co-linear.

    Seeds wobble each agent's start offset and cruise speed along the flight
    axis only. The lateral geometry stays exactly degenerate on purpose: the
    passing side must come from the solver's shared tie-break convention
    (deterministic runs) or from belief asymmetry (noisy runs), never from
    the starting positions. Lateral start offsets would hand both agents the
    same geometric side hint and mask the asymmetry this family exists to
    expose.

    Noisy degenerate encounters commit to a passing side late, and the late
    dodge can be steep. The family therefore flies a wide lens, so the
    camera keeps the neighbor in frame through its own dodge, and plans with
    slightly inflated radii, so the escape hold triggered near contact bites
    before the physical envelopes touch. Clearance is still judged against
    physical radii.

    With cooperative_b False, agent b becomes a scripted constant-velocity
    intruder and only a carries responsibility.
    """
    dyn = dynamics if dynamics is not None else Dynamics(mode=INSTANTANEOUS)
    nz = noise if noise is not None else NoiseModel()
    cam = camera if camera is not None else CameraModel(hfov=math.radians(140.0),
                                                        vfov=math.radians(70.0))
    half = separation / 2.0
    ja = _jitter(seed, 0, jitter)
    jb = _jitter(seed, 1, jitter)
    # draw 0: along-axis start offset; draw 1: fractional speed wobble,
    # kept small so closing speed stays near 2*speed.
    speed_a = speed * (1.0 + 0.5 * float(ja[1]))
    speed_b = speed * (1.0 + 0.5 * float(jb[1]))
    pos_a = (-half + float(ja[0]), 0.0, altitude)
    pos_b = (half + float(jb[0]), 0.0, altitude)
    goal_a = (pos_a[0] + separation, 0.0, altitude)
    goal_b = (pos_b[0] - separation, 0.0, altitude)
    if cooperative_b:
        policy_b: Policy = HeadOn(goal=goal_b, speed=speed_b)
        vel_b = (0.0, 0.0, 0.0)
    else:
        policy_b = ConstantVel(vel=(-speed_b, 0.0, 0.0))
        vel_b = (-speed_b, 0.0, 0.0)
    agents = (
        AgentSpec(agent_id="a", pos=pos_a, dynamics=dyn,
                  radius_inflation=inflation, policy=HeadOn(goal=goal_a, speed=speed_a)),
        AgentSpec(agent_id="b", pos=pos_b, vel=vel_b, dynamics=dyn,
                  cooperative=cooperative_b,
                  radius_inflation=inflation if cooperative_b else 1.0,
                  policy=policy_b),
    )
    if duration is None:
        duration = 2.0 * separation / speed
    return Scenario(agents=agents, duration=duration, seed=seed, noise=nz,
                    camera=cam)


def crossing_scenario(seed: int = 0, *, separation: float = 6.0, speed: float = 1.0,
                      altitude: float = 2.0, jitter: float = 0.1,
                      duration: float | None = None,
                      dynamics: Dynamics | None = None,
                      noise: NoiseModel | None = None,
                      camera: CameraModel | None = None,
                      inflation: float = 1.15) -> Scenario:
    """Perpendicular paths meeting at the origin at the same time.

    Uses a wide camera by default: two agents converging at 90 degrees hold
    each other at a constant 45 degree bearing, which sits exactly on the
    edge of the narrow default horizontal field of view, so start jitter
    decides whether they ever see each other.  Crossing traffic is meant to
    exercise avoidance, not sensor dropout, so this family models a
    wider-lens platform.

    Planning uses mildly inflated radii.  The optimal avoidance outcome is
    an exact graze, and at a crossing the goal pull keeps re-steering into
    conflict while neighbor-velocity estimates lag by a sensing period, so
    a graze planned at the physical radius lands slightly inside it.  The
    margin keeps physical clearance on the safe side of 1.
    """
    dyn = dynamics if dynamics is not None else Dynamics(mode=INSTANTANEOUS)
    nz = noise if noise is not None else NoiseModel()
    cam = camera if camera is not None else CameraModel(hfov=math.radians(140.0),
                                                        vfov=math.radians(70.0))
    half = separation / 2.0
    ja = _jitter(seed, 0, jitter)
    jb = _jitter(seed, 1, jitter)
    agents = (
        AgentSpec(agent_id="a", pos=(-half, float(ja[0]), altitude + float(ja[1])),
                  dynamics=dyn, radius_inflation=inflation,
                  policy=HeadOn(goal=(half, float(ja[0]), altitude + float(ja[1])),
                                speed=speed)),
        AgentSpec(agent_id="b", pos=(float(jb[0]), -half, altitude + float(jb[1])),
                  dynamics=dyn, radius_inflation=inflation,
                  policy=HeadOn(goal=(float(jb[0]), half, altitude + float(jb[1])),
                                speed=speed)),
    )
    if duration is None:
        duration = 2.0 * separation / speed
    return Scenario(agents=agents, duration=duration, seed=seed, noise=nz, camera=cam)


def noncooperative_scenario(seed: int = 0, *, inflation: float = 1.3,
                            separation: float = 6.0, speed: float = 1.0,
                            jitter: float = 0.1,
                            noise: NoiseModel | None = None) -> Scenario:
    """One scripted straight-line intruder; the cooperative agent keeps its
    half share but plans with inflated radii."""
    return head_on_scenario(seed, separation=separation, speed=speed, jitter=jitter,
                            noise=noise, inflation=inflation, cooperative_b=False)


def steering_scenario(seed: int = 0, *, separation: float = 8.0,
                      altitude: float = 2.0, duration: float = 60.0,
                      noise: NoiseModel | None = None,
                      camera: CameraModel | None = None,
                      inflation: float = 1.3) -> Scenario:
    """Two externally steered agents facing each other, hovering until a
    command arrives.  Meant for live sessions over the bridge, where the
    operator supplies each preferred velocity; run standalone, both agents
    simply hold position.

    First-order dynamics are load-bearing here, not flavor: a pilot can
    reverse the stick instantly, and only the vehicle's own response lag
    keeps the commanded velocity within what a 30 Hz camera filter can
    track.  Pilot inputs are as untrusted as a non-cooperative neighbor,
    so the default berth matches that setting too."""
    nz = noise if noise is not None else NoiseModel()
    cam = camera if camera is not None else CameraModel(hfov=math.radians(140.0),
                                                        vfov=math.radians(70.0))
    half = separation / 2.0
    agents = (
        AgentSpec(agent_id="a", pos=(-half, 0.0, altitude), yaw=0.0,
                  dynamics=Dynamics(),
                  radius_inflation=inflation, policy=External()),
        AgentSpec(agent_id="b", pos=(half, 0.0, altitude), yaw=math.pi,
                  dynamics=Dynamics(),
                  radius_inflation=inflation, policy=External()),
    )
    return Scenario(agents=agents, duration=duration, seed=seed, noise=nz,
                    camera=cam)
