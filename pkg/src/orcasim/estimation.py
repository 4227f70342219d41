"""Per-agent EKF over own velocity and one (rel_pos, velocity) block per
tracked neighbor.

State layout: x = [v_self(3), then per track in target-id order:
rel_pos(3), v_neighbor(3)]. Process model per tick (Euler):

    v_self   <- v_self + k (v_cmd - v_self) dt     (known command input)
    rel_pos  <- rel_pos + (v_neighbor - v_self) dt
    v_neighbor: random walk, covariance M dt

Measurements per visible neighbor: pixel projection (2), distance (1),
own velocity (3). Updates use the exact Jacobian of the measurement
function and the Joseph-form covariance update. Pixel rows are skipped
when the predicted target sits at or behind the image plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import Mat3, Vec3, normalize
from .sensing import CameraModel, Measurement, NoiseModel


@dataclass(frozen=True)
class FilterConfig:
    own_gain: float = 2.0
    process_noise: Mat3 = field(default_factory=lambda: np.eye(3) * 1.0)
    # Noise model the filter assumes when weighing measurements. This is a
    # property of the deployed estimator, not of the world: a run may
    # simulate sensors better or worse than the filter was tuned for, and
    # the filter's covariance must reflect its own assumptions.
    meas_noise: NoiseModel = field(default_factory=NoiseModel)
    init_vel_var: float = 1.0
    init_pos_inflation: float = 4.0
    coast_ticks: int = 18   # unseen track still trusted for avoidance
    drop_ticks: int = 120   # unseen track removed entirely
    # coast_ticks bounds how long dead reckoning counts as knowledge: an
    # agile neighbor can reverse course in well under a second, so 0.3 s
    # of extrapolation is the most the avoidance layer should act on.
    # Between coast_ticks and drop_ticks the track is only a placeholder
    # for re-association; steering away from its predicted position would
    # mean dodging a ghost, which is as likely to cause an encounter as
    # to prevent one.
    var_floor: float = 1e-12  # keeps the innovation covariance invertible at zero noise
    # Posterior variances never drop below this. Without it the covariance
    # collapses onto the measurement floor after a few exact measurements
    # and the gain decays, stalling convergence in the zero-noise limit;
    # any honest uncertainty in this system sits orders of magnitude above it.
    cov_floor: float = 1e-8


@dataclass
class Track:
    target_id: str
    last_seen_tick: int


class Belief:
    """EKF state for one agent. Tracks stay sorted by target id so the
    state layout is deterministic."""

    def __init__(self, agent_id: str, own_vel: Vec3, own_vel_var: float = 0.25):
        self.agent_id = agent_id
        self.tracks: list[Track] = []
        self.mean = np.asarray(own_vel, dtype=float).copy()
        self.cov = np.eye(3) * own_vel_var

    @property
    def dim(self) -> int:
        return 3 + 6 * len(self.tracks)

    @property
    def own_vel(self) -> Vec3:
        return self.mean[:3]

    def track_index(self, target_id: str) -> int | None:
        for i, t in enumerate(self.tracks):
            if t.target_id == target_id:
                return i
        return None

    def pos_slice(self, i: int) -> slice:
        return slice(3 + 6 * i, 6 + 6 * i)

    def vel_slice(self, i: int) -> slice:
        return slice(6 + 6 * i, 9 + 6 * i)

    def rel_pos(self, target_id: str) -> Vec3 | None:
        i = self.track_index(target_id)
        return None if i is None else self.mean[self.pos_slice(i)]

    def neighbor_vel(self, target_id: str) -> Vec3 | None:
        i = self.track_index(target_id)
        return None if i is None else self.mean[self.vel_slice(i)]

    def is_fresh(self, target_id: str, tick: int, cfg: FilterConfig) -> bool:
        i = self.track_index(target_id)
        return i is not None and tick - self.tracks[i].last_seen_tick <= cfg.coast_ticks


def predict(belief: Belief, cfg: FilterConfig, dt: float, commanded: Vec3) -> None:
    """Advance mean and covariance one tick using the known command."""
    n = len(belief.tracks)
    d = belief.dim
    k = cfg.own_gain
    x = belief.mean
    v_self = x[:3].copy()

    F = np.eye(d)
    F[0:3, 0:3] = (1.0 - k * dt) * np.eye(3)
    x[:3] = v_self + k * dt * (np.asarray(commanded, dtype=float) - v_self)
    Q = np.zeros((d, d))
    for i in range(n):
        ps, vs = belief.pos_slice(i), belief.vel_slice(i)
        x[ps] = x[ps] + (x[vs] - v_self) * dt
        F[ps, 0:3] = -dt * np.eye(3)
        F[ps, vs] = dt * np.eye(3)
        Q[vs, vs] = cfg.process_noise * dt
    belief.cov = F @ belief.cov @ F.T + Q
    belief.cov = 0.5 * (belief.cov + belief.cov.T)


def back_project(cam: CameraModel, heading: Mat3, pixel: np.ndarray, distance: float) -> Vec3:
    """World-frame relative position consistent with (pixel, distance)."""
    ray_cam = normalize(np.array([pixel[0] / cam.focal, pixel[1] / cam.focal, 1.0]))
    return heading @ (ray_cam * distance)


def spawn_track(belief: Belief, cfg: FilterConfig, cam: CameraModel,
                heading: Mat3, meas: Measurement) -> None:
    """Insert a new track initialized from a first measurement.

    Position comes from back-projection; its covariance is the assumed
    measurement covariance mapped along/across the ray, inflated by
    init_pos_inflation. Neighbor velocity starts at zero with
    init_vel_var variance.
    """
    rel = back_project(cam, heading, meas.pixel, meas.distance)
    ray = normalize(rel)
    d = max(meas.distance, 1e-6)
    noise = cfg.meas_noise
    radial_var = max(noise.sigma_dist(d) ** 2, cfg.cov_floor)
    lateral_var = max((noise.sigma_pixel * d / cam.focal) ** 2, cfg.cov_floor)
    outer = np.outer(ray, ray)
    pos_cov = cfg.init_pos_inflation * (radial_var * outer + lateral_var * (np.eye(3) - outer))

    # Insert keeping tracks sorted by id: deterministic state layout.
    idx = 0
    while idx < len(belief.tracks) and belief.tracks[idx].target_id < meas.target_id:
        idx += 1
    at = 3 + 6 * idx
    belief.tracks.insert(idx, Track(meas.target_id, meas.tick))
    belief.mean = np.concatenate([belief.mean[:at], rel, np.zeros(3), belief.mean[at:]])
    d_new = belief.dim
    cov = np.zeros((d_new, d_new))
    old = np.delete(np.arange(d_new), np.arange(at, at + 6))
    cov[np.ix_(old, old)] = belief.cov
    cov[at:at + 3, at:at + 3] = pos_cov
    cov[at + 3:at + 6, at + 3:at + 6] = np.eye(3) * cfg.init_vel_var
    belief.cov = cov


def drop_track(belief: Belief, target_id: str) -> None:
    i = belief.track_index(target_id)
    if i is None:
        return
    at = 3 + 6 * i
    keep = np.delete(np.arange(belief.dim), np.arange(at, at + 6))
    belief.mean = belief.mean[keep]
    belief.cov = belief.cov[np.ix_(keep, keep)]
    belief.tracks.pop(i)


def manage_tracks(belief: Belief, cfg: FilterConfig, tick: int) -> None:
    """Drop tracks unseen for longer than drop_ticks."""
    for t in list(belief.tracks):
        if tick - t.last_seen_tick >= cfg.drop_ticks:
            drop_track(belief, t.target_id)


def measurement_model(cam: CameraModel, heading: Mat3, mean: np.ndarray,
                      pos_sl: slice, dim: int, include_pixel: bool):
    """Predicted measurement and its Jacobian for one track.

    Rows: [pixel_x, pixel_y]? + [distance] + [own_vel x3]. The pixel rows
    are present only when include_pixel.
    """
    p = mean[pos_sl]
    rows = (2 if include_pixel else 0) + 4
    z_hat = np.zeros(rows)
    H = np.zeros((rows, dim))
    r = 0
    if include_pixel:
        q = heading.T @ p
        z_hat[0] = cam.focal * q[0] / q[2]
        z_hat[1] = cam.focal * q[1] / q[2]
        db_dq = (cam.focal / q[2]) * np.array([
            [1.0, 0.0, -q[0] / q[2]],
            [0.0, 1.0, -q[1] / q[2]],
        ])
        H[0:2, pos_sl] = db_dq @ heading.T
        r = 2
    dist = float(np.linalg.norm(p))
    z_hat[r] = dist
    H[r, pos_sl] = p / max(dist, 1e-9)
    z_hat[r + 1:r + 4] = mean[0:3]
    H[r + 1:r + 4, 0:3] = np.eye(3)
    return z_hat, H


def _joseph_update(belief: Belief, H: np.ndarray, R: np.ndarray, innovation: np.ndarray,
                   cov_floor: float) -> None:
    P = belief.cov
    S = H @ P @ H.T + R
    S = 0.5 * (S + S.T)
    K = np.linalg.solve(S, H @ P).T
    belief.mean = belief.mean + K @ innovation
    I_KH = np.eye(belief.dim) - K @ H
    cov = I_KH @ P @ I_KH.T + K @ R @ K.T
    cov = 0.5 * (cov + cov.T)
    # Lifting only the diagonal keeps the matrix PSD.
    np.fill_diagonal(cov, np.maximum(cov.diagonal(), cov_floor))
    belief.cov = cov


# Predicted targets at or behind the image plane get no pixel rows.
PIXEL_GUARD_DEPTH = 0.01


def update(belief: Belief, cfg: FilterConfig, cam: CameraModel,
           heading: Mat3, meas: Measurement) -> None:
    """Fuse one measurement, weighted by cfg.meas_noise. First sight of a
    target spawns its track (consuming the measurement); later sightings
    run the EKF update."""
    i = belief.track_index(meas.target_id)
    if i is None:
        spawn_track(belief, cfg, cam, heading, meas)
        return
    belief.tracks[i].last_seen_tick = meas.tick

    pos_sl = belief.pos_slice(i)
    depth = float((heading.T @ belief.mean[pos_sl])[2])
    include_pixel = depth > PIXEL_GUARD_DEPTH
    z_hat, H = measurement_model(cam, heading, belief.mean, pos_sl, belief.dim, include_pixel)

    d_pred = float(np.linalg.norm(belief.mean[pos_sl]))
    noise = cfg.meas_noise
    var = []
    z = []
    if include_pixel:
        var += [noise.sigma_pixel**2] * 2
        z += [meas.pixel[0], meas.pixel[1]]
    var += [noise.sigma_dist(d_pred) ** 2]
    z += [meas.distance]
    var += [noise.sigma_selfvel**2] * 3
    z += list(meas.self_vel)
    R = np.diag(np.maximum(var, cfg.var_floor))
    _joseph_update(belief, H, R, np.asarray(z) - z_hat, cfg.cov_floor)


def own_velocity_update(belief: Belief, cfg: FilterConfig, vel_meas: Vec3) -> None:
    """Self-velocity-only update (the linear sub-problem); same machinery."""
    H = np.zeros((3, belief.dim))
    H[:, 0:3] = np.eye(3)
    R = np.eye(3) * max(cfg.meas_noise.sigma_selfvel**2, cfg.var_floor)
    _joseph_update(belief, H, R, np.asarray(vel_meas, dtype=float) - belief.mean[0:3],
                   cfg.cov_floor)
