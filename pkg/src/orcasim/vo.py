"""Velocity obstacle geometry for ellipsoidal agents.

Conventions fixed throughout the package:
  rel_pos = p_other - p_self        (where the neighbor is, seen from self)
  rel_vel = v_self - v_other        (closing velocity)
so the neighbor's position evolves as p(t) = rel_pos - rel_vel * t.

Ellipsoids (horizontal radius r_xy, vertical radius r_z, axis-aligned,
vertical symmetry axis) are handled by scaling the world so the combined
shape becomes the unit sphere; all VO math then runs in that scaled space
with combined_radius = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import EPSILON, Mat3, Vec3, normalize


@dataclass(frozen=True)
class AgentShape:
    """Axis-aligned ellipsoid: horizontal semi-axis r_xy, vertical r_z."""

    r_xy: float = 0.3
    r_z: float = 0.5


@dataclass(frozen=True)
class VelocityObstacle:
    """Truncated-cone obstacle in relative-velocity space.

    The set of closing velocities rel_vel for which the forward motion
    p(t) = rel_pos - rel_vel * t passes within combined_radius of the
    origin for some t in (0, tau].
    """

    rel_pos: Vec3
    combined_radius: float
    tau: float


@dataclass(frozen=True)
class AvoidanceResult:
    in_obstacle: bool
    u: Vec3               # minimum-norm change taking rel_vel to the boundary; zero outside
    plane_normal: Vec3    # unit vector out of the obstacle at rel_vel + u; zero outside


class AlreadyColliding(Exception):
    """Raised when the scaled separation is below the combined radius."""


def scaling_matrix(shape_i: AgentShape, shape_j: AgentShape) -> Mat3:
    """Diagonal map sending the combined ellipsoid to the unit sphere."""
    rr = shape_i.r_xy + shape_j.r_xy
    rz = shape_i.r_z + shape_j.r_z
    return np.diag([1.0 / rr, 1.0 / rr, 1.0 / rz])


def scale_to_sphere_space(rel_pos: Vec3, shape_i: AgentShape, shape_j: AgentShape) -> Vec3:
    return scaling_matrix(shape_i, shape_j) @ rel_pos


def vo_membership_oracle(vo: VelocityObstacle, rel_vel: Vec3, dt: float) -> bool:
    """Brute-force membership: sample t over {0, dt, ..., tau}.

    Independent of the analytic machinery below; used to cross-check it.
    Resolution caveat: points within ~dt * |rel_vel| of the boundary may
    be misclassified.
    """
    ts = np.arange(0.0, vo.tau + 0.5 * dt, dt)
    ts = ts[ts <= vo.tau]
    traj = vo.rel_pos[None, :] - ts[:, None] * np.asarray(rel_vel)[None, :]
    return bool(np.min(np.linalg.norm(traj, axis=1)) < vo.combined_radius)


def in_obstacle_analytic(vo: VelocityObstacle, rel_vel: Vec3) -> bool:
    """Exact membership via the quadratic |rel_pos - rel_vel t|^2 < r^2."""
    p = vo.rel_pos
    v = np.asarray(rel_vel, dtype=float)
    a = float(np.dot(v, v))
    if a < EPSILON * EPSILON:
        return False
    b = float(np.dot(p, v))
    if b <= 0.0:
        return False  # not closing
    c = float(np.dot(p, p)) - vo.combined_radius**2
    disc = b * b - a * c
    if disc <= 0.0:
        return False  # misses (tangency is not inside: open set)
    t_enter = (b - math.sqrt(disc)) / a
    return t_enter < vo.tau


def _lateral_unit(p: Vec3) -> Vec3:
    """Deterministic unit vector perpendicular to p (z-cross convention)."""
    lat = np.cross(p, np.array([0.0, 0.0, 1.0]))
    if np.dot(lat, lat) < 1e-12 * np.dot(p, p):
        lat = np.cross(p, np.array([1.0, 0.0, 0.0]))
    return normalize(lat)


def compute_avoidance(vo: VelocityObstacle, rel_vel: Vec3) -> AvoidanceResult:
    """Minimum change u taking rel_vel onto the VO boundary.

    Raises AlreadyColliding when the current separation is already below
    the combined radius; the caller is expected to switch to
    emergency_avoidance then.
    """
    p = np.asarray(vo.rel_pos, dtype=float)
    v = np.asarray(rel_vel, dtype=float)
    r = vo.combined_radius
    tau = vo.tau
    dist_sq = float(np.dot(p, p))
    if dist_sq <= r * r:
        raise AlreadyColliding(f"separation {math.sqrt(dist_sq):.4f} <= combined radius {r:.4f}")

    zero = np.zeros(3)
    if not in_obstacle_analytic(vo, v):
        return AvoidanceResult(False, zero, zero)

    cutoff_center = p / tau
    cutoff_radius = r / tau
    w = v - cutoff_center
    w_len_sq = float(np.dot(w, w))
    dot = float(np.dot(w, p))

    # Closest boundary point is on the cutoff sphere when w points backward
    # past the tangency circle; ties resolve to the sphere.
    if dot < 0.0 and dot * dot >= r * r * w_len_sq:
        w_len = math.sqrt(w_len_sq)
        if w_len < EPSILON:
            # Exactly at the cutoff center: every direction ties; exit toward the origin.
            n = -normalize(p)
            return AvoidanceResult(True, cutoff_radius * n, n)
        n = w / w_len
        return AvoidanceResult(True, (cutoff_radius - w_len) * n, n)

    # Cone lateral surface: project onto the generator cone.
    a = dist_sq
    b = float(np.dot(p, v))
    c = float(np.dot(v, v)) - float(np.dot(np.cross(p, v), np.cross(p, v))) / (dist_sq - r * r)
    t = (b + math.sqrt(max(b * b - a * c, 0.0))) / a
    wc = v - t * p
    wc_len = float(np.linalg.norm(wc))
    if wc_len < EPSILON:
        # rel_vel exactly on the cone axis: any lateral direction ties.
        sin_phi = r / math.sqrt(dist_sq)
        cos_phi = math.sqrt(1.0 - sin_phi * sin_phi)
        n = cos_phi * _lateral_unit(p) - sin_phi * normalize(p)
        return AvoidanceResult(True, (r * t) * n, n)
    n = wc / wc_len
    return AvoidanceResult(True, (r * t - wc_len) * n, n)


def emergency_avoidance(vo: VelocityObstacle, rel_vel: Vec3) -> AvoidanceResult:
    """Fallback when already interpenetrating: demand direct separation.

    The constraint is on the radial rate, not the endpoint: the gap must
    open at no less than (r - |p|)/tau, the speed that clears the combined
    radius within one horizon. Testing the endpoint position instead would
    accept trajectories that pass straight through the other agent and come
    out the far side before tau.
    """
    p = np.asarray(vo.rel_pos, dtype=float)
    v = np.asarray(rel_vel, dtype=float)
    p_len = float(np.linalg.norm(p))
    if p_len < EPSILON:  # coincident centers: arbitrary but fixed
        p_hat = np.array([0.0, 0.0, 1.0])
        p_len = 0.0
    else:
        p_hat = p / p_len
    # rel_vel is self minus other, so the gap opens at -p_hat . rel_vel.
    required = (vo.combined_radius - p_len) / vo.tau
    deficit = required + float(np.dot(p_hat, v))
    n = -p_hat
    # Already separating fast enough: pin the current rate (u = 0 puts the
    # plane through the current velocity) rather than admit slowing down.
    return AvoidanceResult(True, max(deficit, 0.0) * n, n)


def boundary_distance(vo: VelocityObstacle, rel_vel: Vec3) -> float:
    """Signed distance from rel_vel to the VO boundary (negative inside).

    The VO is the union of balls B(rel_pos * s, r * s) over s >= 1/tau, so
    the signed distance is min over s of |v - p s| - r s, a convex 1-D
    problem solved in closed form. Independent of compute_avoidance; used
    as an oracle for minimality.
    """
    p = np.asarray(vo.rel_pos, dtype=float)
    v = np.asarray(rel_vel, dtype=float)
    r = vo.combined_radius
    A = float(np.dot(p, p))
    B = float(np.dot(p, v))
    C = float(np.dot(v, v))
    s_min = 1.0 / vo.tau

    def g(s: float) -> float:
        return math.sqrt(max(C - 2.0 * B * s + A * s * s, 0.0)) - r * s

    # Interior stationary point of g: (sA - B) = r |v - p s|, squared gives
    # a quadratic; the physical root has sA - B >= 0.
    disc = B * B - A * (B * B - r * r * C) / (A - r * r)
    cands = [s_min]
    if disc >= 0.0:
        s_star = (B + math.sqrt(disc)) / A
        if s_star > s_min:
            cands.append(s_star)
    return min(g(s) for s in cands)
