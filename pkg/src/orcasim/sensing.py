"""Pinhole camera sensing with field-of-view limits and range-dependent
noise on the distance channel.

The camera measures, per visible target: the pixel projection b, the
Euclidean distance d, and the observer's own velocity. Distance error has
a standard deviation growing quadratically with range and a (default
negative) multiplicative bias growing linearly with range, so far targets
read slightly near and very noisy; both shrink on approach.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .agents import AgentState
from .linalg import Mat3, Vec3


@dataclass(frozen=True)
class CameraModel:
    hfov: float = math.radians(92.0)
    vfov: float = math.radians(51.0)
    rate_hz: float = 30.0
    focal: float = 1.0
    max_range: float = 8.0


@dataclass(frozen=True)
class NoiseModel:
    sigma_pixel: float = 0.005
    sigma_dist_0: float = 0.05
    dist_ref: float = 2.0
    sigma_selfvel: float = 0.05
    # Multiplicative distance bias is dist_bias_coeff * (d / dist_ref);
    # negative means far targets are underestimated.
    dist_bias_coeff: float = -0.02

    def sigma_dist(self, d: float) -> float:
        return self.sigma_dist_0 * (1.0 + (d / self.dist_ref) ** 2)

    def dist_bias(self, d: float) -> float:
        return self.dist_bias_coeff * (d / self.dist_ref)


ZERO_NOISE = NoiseModel(sigma_pixel=0.0, sigma_dist_0=0.0, sigma_selfvel=0.0,
                        dist_bias_coeff=0.0)


@dataclass(frozen=True)
class Measurement:
    observer_id: str
    target_id: str
    pixel: np.ndarray  # (2,)
    distance: float
    self_vel: Vec3
    tick: int


def project(cam: CameraModel, heading: Mat3, rel_pos: Vec3) -> tuple[np.ndarray, bool]:
    """Pixel coordinates of rel_pos and whether it is inside the frustum.

    heading is the camera-to-world rotation, so q = heading.T @ rel_pos is
    the point in camera coordinates (z = optical axis). Targets at or
    behind the image plane are never visible and project to (0, 0).
    """
    q = heading.T @ np.asarray(rel_pos, dtype=float)
    if q[2] <= 0.0:
        return np.zeros(2), False
    pixel = np.array([q[0], q[1]]) * (cam.focal / q[2])
    visible = (
        abs(math.atan2(q[0], q[2])) <= 0.5 * cam.hfov
        and abs(math.atan2(q[1], q[2])) <= 0.5 * cam.vfov
        and float(np.linalg.norm(rel_pos)) <= cam.max_range
    )
    return pixel, visible


def measure(cam: CameraModel, noise: NoiseModel, rng: np.random.Generator,
            observer: AgentState, target: AgentState, tick: int) -> Measurement | None:
    """One noisy observation of target from observer, or None if not visible.

    Always consumes the same number of random draws per visible target so
    noise settings do not shift the stream.
    """
    rel_pos = target.pos - observer.pos
    pixel, visible = project(cam, observer.heading, rel_pos)
    if not visible:
        return None
    z = rng.standard_normal(6)
    d_true = float(np.linalg.norm(rel_pos))
    d = d_true * (1.0 + noise.dist_bias(d_true)) + noise.sigma_dist(d_true) * z[2]
    return Measurement(
        observer_id=observer.agent_id,
        target_id=target.agent_id,
        pixel=pixel + noise.sigma_pixel * z[:2],
        distance=max(d, 1e-6),
        self_vel=observer.vel + noise.sigma_selfvel * z[3:],
        tick=tick,
    )
