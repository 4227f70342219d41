"""Velocity obstacle geometry, step by step.

A velocity obstacle is the set of relative velocities that lead to a
collision within the horizon tau: a cone from the origin around rel_pos,
truncated near the apex by a sphere. The minimal escape vector u moves
the current relative velocity onto the boundary by the shortest path,
and each cooperative agent applies half of it.
"""

import numpy as np

from orcasim import (OrcaPlane, SolverConfig, VelocityObstacle, build_plane,
                     boundary_distance, compute_avoidance, solve)

# Neighbor 4 m ahead, combined radius 1 m, horizon 3 s.
vo = VelocityObstacle(rel_pos=np.array([4.0, 0.0, 0.0]),
                      combined_radius=1.0, tau=3.0)

rel_vel = np.array([1.5, 0.1, 0.0])  # closing fast, nearly head-on
res = compute_avoidance(vo, rel_vel)
print("inside obstacle:", res.in_obstacle)
print("u:", np.round(res.u, 4).tolist())
print("|u|:", round(float(np.linalg.norm(res.u)), 4))

# u lands the relative velocity exactly on the boundary, and no shorter
# change does (depth equals |u|).
v_new = rel_vel + res.u
print("signed boundary distance after applying full u:",
      f"{boundary_distance(vo, v_new):.2e}")
print("depth before:", round(-boundary_distance(vo, rel_vel), 4))

# The half-space an agent actually plans with passes through its own
# velocity plus share * u.
cfg = SolverConfig()
own_vel = np.array([1.5, 0.0, 0.0])
plane = build_plane(own_vel, res, cfg)
print("plane point:", np.round(plane.point, 4).tolist())
print("plane normal:", np.round(plane.normal, 4).tolist())

# Feed the plane to the velocity solver: closest allowed velocity to the
# preferred one, inside the speed ball.
preferred = np.array([1.5, 0.0, 0.0])
allowed = solve(preferred, [plane], cfg)
print("preferred:", preferred.tolist())
print("allowed:  ", np.round(allowed, 4).tolist())

# Mirrored pair: the neighbor computes the exact opposite u, so the
# pair shares the avoidance effort symmetrically.
mirror = VelocityObstacle(-vo.rel_pos, vo.combined_radius, vo.tau)
res_j = compute_avoidance(mirror, -rel_vel)
print("u_i + u_j:", np.round(res.u + res_j.u, 12).tolist())
