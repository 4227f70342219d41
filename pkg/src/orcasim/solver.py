"""Reciprocal collision avoidance: half-plane construction and the 3-D
low-dimensional linear program that picks the new velocity.

Each neighbor contributes one half-space constraint on the agent's own
velocity: the agent takes its share of the minimum change u that moves the
*relative* velocity out of the velocity obstacle. The program then returns
the feasible velocity closest to the preferred one inside the max_speed
ball, falling back to minimizing the worst constraint violation when the
constraints admit no common point.

The incremental solver processes constraints in a seeded shuffled order
(expected linear time); the feasible optimum is unique, so the shuffle
seed only matters for the infeasible fallback and for tie cases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .linalg import Vec3, make_rng, normalize
from .vo import AvoidanceResult

# Squared-length threshold below which directions count as parallel.
_LP_EPSILON = 1e-12

# Angular window (radians) around the rel_pos line inside which the
# head-on tie-break bias is applied.
HEAD_ON_ANGLE = 1e-3

_Z = np.array([0.0, 0.0, 1.0])
_X = np.array([1.0, 0.0, 0.0])


@dataclass(frozen=True)
class OrcaPlane:
    """Half-space constraint (v - point) . normal >= 0 on own velocity."""

    point: Vec3
    normal: Vec3
    neighbor: str | None = None


@dataclass(frozen=True)
class SolverConfig:
    share: float = 0.5
    max_speed: float = 2.0
    tie_break_bias: float = 0.001


def build_plane(self_vel: Vec3, avoidance: AvoidanceResult, cfg: SolverConfig,
                neighbor: str | None = None) -> OrcaPlane:
    """Half-space through self_vel + share * u with normal along u."""
    point = np.asarray(self_vel, dtype=float) + cfg.share * avoidance.u
    return OrcaPlane(point, np.asarray(avoidance.plane_normal, dtype=float), neighbor)


def apply_head_on_bias(avoidance: AvoidanceResult, rel_pos: Vec3,
                       cfg: SolverConfig) -> AvoidanceResult:
    """Break the head-on degeneracy with a shared lateral convention.

    When u lies within HEAD_ON_ANGLE of the line through rel_pos (pure
    acceleration/deceleration, no side preference), both agents of a
    mirrored pair would dither between sides under noise. Adding a small
    bias along normalize(rel_pos x z) picks the same passing side for
    both (the mirrored agent computes the exactly opposite bias, so
    u_i = -u_j is preserved).
    """
    if not avoidance.in_obstacle:
        return avoidance
    u = avoidance.u
    u_norm = float(np.linalg.norm(u))
    p = np.asarray(rel_pos, dtype=float)
    p_norm = float(np.linalg.norm(p))
    if u_norm == 0.0 or p_norm == 0.0:
        return avoidance
    sin_angle = float(np.linalg.norm(np.cross(u / u_norm, p / p_norm)))
    if sin_angle >= math.sin(HEAD_ON_ANGLE):
        return avoidance
    lateral = np.cross(p, _Z)
    if float(np.dot(lateral, lateral)) < 1e-12 * p_norm * p_norm:
        lateral = np.cross(p, _X)
    u_biased = u + cfg.tie_break_bias * normalize(lateral)
    return replace(avoidance, u=u_biased, plane_normal=normalize(u_biased))


def unscale_plane(plane: OrcaPlane, scale: np.ndarray) -> OrcaPlane:
    """Map a half-space from scaled velocity space to world velocity space.

    With v_s = S v, the constraint (v_s - q) . n >= 0 becomes
    (v - S^-1 q) . (S n) >= 0; S is diagonal positive so the image is
    again a half-space and the normal renormalizes cleanly.
    """
    s_diag = np.diag(scale)
    point = plane.point / s_diag
    normal = normalize(plane.normal * s_diag)
    return OrcaPlane(point, normal, plane.neighbor)


# -- low-dimensional linear program ----------------------------------------
#
# The standard incremental construction: optimize inside the radius ball;
# whenever constraint i is violated, re-optimize on the boundary plane of i
# subject to constraints 0..i-1 (a 2-D problem on a disk, which itself
# falls back to 1-D problems on chord lines).


def _lp1(planes, count, line_point, line_dir, radius, opt_v, direction_opt):
    """Optimize on a line inside the ball, subject to planes[:count]."""
    dot = float(np.dot(line_point, line_dir))
    disc = dot * dot + radius * radius - float(np.dot(line_point, line_point))
    if disc < 0.0:
        return None
    sq = math.sqrt(disc)
    t_left, t_right = -dot - sq, -dot + sq
    for k in range(count):
        den = float(np.dot(line_dir, planes[k].normal))
        num = float(np.dot(planes[k].point - line_point, planes[k].normal))
        if den * den <= _LP_EPSILON:
            if num > 0.0:
                return None
            continue
        t = num / den
        if den >= 0.0:
            t_left = max(t_left, t)
        else:
            t_right = min(t_right, t)
        if t_left > t_right:
            return None
    if direction_opt:
        t = t_right if float(np.dot(opt_v, line_dir)) > 0.0 else t_left
    else:
        t = float(np.dot(line_dir, opt_v - line_point))
        t = min(max(t, t_left), t_right)
    return line_point + t * line_dir


def _lp2(planes, index, radius, opt_v, direction_opt):
    """Optimize on the boundary plane of planes[index] inside the ball."""
    plane = planes[index]
    plane_dist = float(np.dot(plane.point, plane.normal))
    disc = radius * radius - plane_dist * plane_dist
    if disc < 0.0:
        return None  # plane does not intersect the ball
    plane_center = plane_dist * plane.normal
    plane_radius = math.sqrt(disc)

    if direction_opt:
        in_plane = opt_v - float(np.dot(opt_v, plane.normal)) * plane.normal
        len_sq = float(np.dot(in_plane, in_plane))
        if len_sq <= _LP_EPSILON:
            result = plane_center
        else:
            result = plane_center + plane_radius * (in_plane / math.sqrt(len_sq))
    else:
        result = opt_v - float(np.dot(opt_v - plane.point, plane.normal)) * plane.normal
        if float(np.dot(result, result)) > radius * radius:
            offset = result - plane_center
            result = plane_center + plane_radius * normalize(offset)

    for j in range(index):
        if float(np.dot(planes[j].normal, planes[j].point - result)) > 0.0:
            cross = np.cross(planes[j].normal, plane.normal)
            if float(np.dot(cross, cross)) <= _LP_EPSILON:
                return None  # parallel and currently violated: no overlap
            line_dir = normalize(cross)
            line_normal = np.cross(line_dir, plane.normal)
            num = float(np.dot(planes[j].point - plane.point, planes[j].normal))
            den = float(np.dot(line_normal, planes[j].normal))
            line_point = plane.point + (num / den) * line_normal
            result = _lp1(planes, j, line_point, line_dir, radius, opt_v, direction_opt)
            if result is None:
                return None
    return result


def _lp3(planes, radius, opt_v, direction_opt, start=None):
    """Incremental pass; returns (first failing index or len(planes), result)."""
    if start is not None:
        result = start
    elif direction_opt:
        result = normalize(opt_v) * radius
    elif float(np.dot(opt_v, opt_v)) > radius * radius:
        result = normalize(opt_v) * radius
    else:
        result = np.asarray(opt_v, dtype=float)
    for i, plane in enumerate(planes):
        if float(np.dot(plane.normal, plane.point - result)) > 0.0:
            attempt = _lp2(planes, i, radius, opt_v, direction_opt)
            if attempt is None:
                return i, result
            result = attempt
    return len(planes), result


def _lp4(planes, begin, radius, result):
    """Infeasible fallback: progressively minimize the worst violation.

    For each still-violated plane i, optimize in the direction of its
    normal subject to planes that cap how much the earlier constraints may
    be traded against it (planes of equal violation).
    """
    distance = 0.0
    for i in range(begin, len(planes)):
        if float(np.dot(planes[i].normal, planes[i].point - result)) > distance:
            proj = []
            for j in range(i):
                cross = np.cross(planes[j].normal, planes[i].normal)
                if float(np.dot(cross, cross)) <= _LP_EPSILON:
                    if float(np.dot(planes[i].normal, planes[j].normal)) > 0.0:
                        continue  # same direction: j cannot bind against i
                    point = 0.5 * (planes[i].point + planes[j].point)
                else:
                    line_normal = np.cross(cross, planes[i].normal)
                    num = float(np.dot(planes[j].point - planes[i].point, planes[j].normal))
                    den = float(np.dot(line_normal, planes[j].normal))
                    point = planes[i].point + (num / den) * line_normal
                proj.append(OrcaPlane(point, normalize(planes[j].normal - planes[i].normal)))
            fail, attempt = _lp3(proj, radius, planes[i].normal, True)
            if fail == len(proj):
                result = attempt
            # else: keep previous result; it already satisfies i up to `distance`
            distance = float(np.dot(planes[i].normal, planes[i].point - result))
    return result


def solve(preferred: Vec3, planes: list[OrcaPlane], cfg: SolverConfig,
          seed: int = 0) -> Vec3:
    """Velocity in the max_speed ball closest to `preferred` that satisfies
    every plane; minimizes the maximum violation if none exists."""
    preferred = np.asarray(preferred, dtype=float)
    if len(planes) > 1:
        order = make_rng(seed, len(planes)).permutation(len(planes))
        planes = [planes[int(k)] for k in order]
    fail, result = _lp3(planes, cfg.max_speed, preferred, False)
    if fail < len(planes):
        result = _lp4(planes, fail, cfg.max_speed, result)
    return result


# -- brute-force oracle ------------------------------------------------------

_GRID_CACHE: dict[tuple[float, float], tuple[np.ndarray, np.ndarray]] = {}


def _ball_grid(max_speed: float, grid_step: float):
    key = (max_speed, grid_step)
    if key not in _GRID_CACHE:
        n = int(round(2.0 * max_speed / grid_step)) + 1
        axis = np.linspace(-max_speed, max_speed, n)
        pts = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
        pts = pts[np.einsum("ij,ij->i", pts, pts) <= max_speed * max_speed]
        _GRID_CACHE[key] = (pts, None)
    return _GRID_CACHE[key][0]


def solve_oracle(preferred: Vec3, planes: list[OrcaPlane], cfg: SolverConfig,
                 grid_step: float) -> Vec3:
    """Exhaustive grid search over the max_speed ball.

    Returns the feasible grid point closest to preferred, or the grid point
    minimizing the maximum constraint violation when none is feasible.
    Deliberately independent of the LP machinery.
    """
    pts = _ball_grid(cfg.max_speed, grid_step)
    if planes:
        viol = np.full(pts.shape[0], -np.inf)
        for pl in planes:
            viol = np.maximum(viol, (pl.point - pts) @ pl.normal)
        feasible = viol <= 0.0
    else:
        feasible = np.ones(pts.shape[0], dtype=bool)
    if feasible.any():
        cand = pts[feasible]
        d = np.einsum("ij,ij->i", cand - preferred, cand - preferred)
        return cand[int(np.argmin(d))]
    return pts[int(np.argmin(viol))]


def max_violation(v: Vec3, planes: list[OrcaPlane]) -> float:
    """Worst constraint violation at v (<= 0 means all satisfied)."""
    if not planes:
        return 0.0
    return max(float(np.dot(pl.point - v, pl.normal)) for pl in planes)
