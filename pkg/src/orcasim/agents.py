"""Agent state and velocity-command dynamics.

Two response models: Instantaneous (commanded velocity adopted at once)
and FirstOrder (exponential approach with gain k, integrated exactly per
tick, which keeps the update stable for any k * dt). Position integrates
semi-implicitly with the post-update velocity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import Mat3, Vec3
from .vo import AgentShape

INSTANTANEOUS = "instantaneous"
FIRST_ORDER = "first_order"

# Below this speed the camera keeps its last orientation instead of
# following the (noisy, ill-defined) velocity direction.
HEADING_SPEED_FLOOR = 0.05


@dataclass(frozen=True)
class Dynamics:
    mode: str = FIRST_ORDER
    gain: float = 2.0  # 1/s, first-order response rate

    def __post_init__(self):
        if self.mode not in (INSTANTANEOUS, FIRST_ORDER):
            raise ValueError(f"unknown dynamics mode: {self.mode!r}")


def heading_from_yaw(yaw: float) -> Mat3:
    """Camera-to-world rotation for a level camera facing along yaw.

    Camera axes: x right, y down, z forward (optical axis, horizontal).
    """
    c, s = math.cos(yaw), math.sin(yaw)
    x_cam = np.array([s, -c, 0.0])
    y_cam = np.array([0.0, 0.0, -1.0])
    z_cam = np.array([c, s, 0.0])
    return np.column_stack([x_cam, y_cam, z_cam])


@dataclass
class AgentState:
    agent_id: str
    pos: Vec3
    vel: Vec3
    shape: AgentShape = field(default_factory=AgentShape)
    dynamics: Dynamics = field(default_factory=Dynamics)
    cooperative: bool = True
    heading: Mat3 = field(default_factory=lambda: heading_from_yaw(0.0))
    commanded_vel: Vec3 = None

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=float)
        self.vel = np.asarray(self.vel, dtype=float)
        if self.commanded_vel is None:
            self.commanded_vel = self.vel.copy()
        else:
            self.commanded_vel = np.asarray(self.commanded_vel, dtype=float)


def propagate_velocity(vel: Vec3, commanded: Vec3, dynamics: Dynamics,
                       dt: float) -> Vec3:
    """Velocity after one tick of tracking the command."""
    if dynamics.mode == INSTANTANEOUS:
        return np.asarray(commanded, dtype=float).copy()
    decay = math.exp(-dynamics.gain * dt)
    return commanded + (vel - commanded) * decay


def step(state: AgentState, dt: float) -> None:
    """Advance one tick in place. Non-cooperative agents ignore commands."""
    if state.cooperative:
        state.vel = propagate_velocity(state.vel, state.commanded_vel,
                                       state.dynamics, dt)
    state.pos = state.pos + state.vel * dt
    speed = float(np.linalg.norm(state.vel))
    horizontal = math.hypot(state.vel[0], state.vel[1])
    if speed >= HEADING_SPEED_FLOOR and horizontal > 1e-12:
        state.heading = heading_from_yaw(math.atan2(state.vel[1], state.vel[0]))
