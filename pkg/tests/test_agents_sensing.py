import math

import numpy as np
import pytest

from orcasim.agents import (
    FIRST_ORDER,
    INSTANTANEOUS,
    AgentState,
    Dynamics,
    heading_from_yaw,
    step,
)
from orcasim.linalg import make_rng, vec3
from orcasim.sensing import ZERO_NOISE, CameraModel, NoiseModel, measure, project


def make_agent(**kw):
    defaults = dict(agent_id="a", pos=vec3(0, 0, 0), vel=vec3(0, 0, 0))
    defaults.update(kw)
    return AgentState(**defaults)


# -- dynamics ----------------------------------------------------------------

def test_first_order_frozen_example():
    a = make_agent(dynamics=Dynamics(FIRST_ORDER, gain=2.0))
    a.commanded_vel = vec3(1.0, 0, 0)
    step(a, 0.5)
    assert abs(a.vel[0] - (1.0 - math.exp(-1.0))) < 1e-12
    assert abs(a.vel[0] - 0.6321) < 1e-4


def test_first_order_matches_closed_form_over_many_steps():
    a = make_agent(vel=vec3(0.3, -0.2, 0.1), dynamics=Dynamics(FIRST_ORDER, gain=1.7))
    c = vec3(1.0, 0.5, -0.4)
    a.commanded_vel = c
    v0 = a.vel.copy()
    dt, n = 1 / 60, 120
    for _ in range(n):
        a.commanded_vel = c
        step(a, dt)
    expected = c + (v0 - c) * math.exp(-1.7 * n * dt)
    assert np.allclose(a.vel, expected, atol=1e-12)


def test_instantaneous_adopts_command():
    a = make_agent(dynamics=Dynamics(INSTANTANEOUS))
    a.commanded_vel = vec3(0.7, 0.1, 0)
    step(a, 1 / 60)
    assert np.all(a.vel == vec3(0.7, 0.1, 0))
    assert np.allclose(a.pos, vec3(0.7, 0.1, 0) / 60)


def test_non_cooperative_ignores_command_but_moves():
    a = make_agent(vel=vec3(1.0, 0, 0), cooperative=False)
    a.commanded_vel = vec3(0, 5.0, 0)
    step(a, 0.5)
    assert np.all(a.vel == vec3(1.0, 0, 0))
    assert np.allclose(a.pos, [0.5, 0, 0])


def test_heading_follows_yaw_and_freezes_at_low_speed():
    a = make_agent(vel=vec3(0, 1.0, 0), dynamics=Dynamics(INSTANTANEOUS))
    a.commanded_vel = vec3(0, 1.0, 0)
    step(a, 0.1)
    # Optical axis now along +y.
    assert np.allclose(a.heading[:, 2], [0, 1, 0], atol=1e-12)
    frozen = a.heading.copy()
    a.commanded_vel = vec3(0.01, 0, 0)  # below the heading floor
    step(a, 0.1)
    assert np.all(a.heading == frozen)


def test_dynamics_rejects_unknown_mode():
    with pytest.raises(ValueError):
        Dynamics("teleport")


def test_heading_matrix_is_rotation():
    for yaw in (0.0, 0.5, -2.0, math.pi):
        R = heading_from_yaw(yaw)
        assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
        assert abs(np.linalg.det(R) - 1.0) < 1e-12


# -- sensing -----------------------------------------------------------------

def test_projection_frozen_example():
    cam = CameraModel(focal=2.0)
    pixel, _ = project(cam, np.eye(3), vec3(1.0, 2.0, 4.0))
    assert np.allclose(pixel, [0.5, 1.0], atol=1e-12)


def test_visibility_frustum_and_range():
    cam = CameraModel()
    # Straight ahead, in range.
    assert project(cam, np.eye(3), vec3(0, 0, 5.0))[1]
    # Behind the camera.
    assert not project(cam, np.eye(3), vec3(0, 0, -5.0))[1]
    # Outside horizontal FOV (92 deg total -> 46 deg half).
    edge = math.tan(math.radians(47.0)) * 4.0
    assert not project(cam, np.eye(3), vec3(edge, 0, 4.0))[1]
    inside = math.tan(math.radians(45.0)) * 4.0
    assert project(cam, np.eye(3), vec3(inside, 0, 4.0))[1]
    # Beyond max range.
    assert not project(cam, np.eye(3), vec3(0, 0, 8.5))[1]


def test_heading_rotates_frustum():
    cam = CameraModel()
    observer = AgentState("a", vec3(0, 0, 0), vec3(0, 1.0, 0),
                          heading=None, dynamics=Dynamics(INSTANTANEOUS))
    observer.heading = heading_from_yaw(math.pi / 2)  # facing +y
    target = AgentState("b", vec3(0, 4.0, 0), vec3(0, 0, 0))
    m = measure(cam, ZERO_NOISE, make_rng(0), observer, target, tick=0)
    assert m is not None
    assert np.allclose(m.pixel, [0, 0], atol=1e-12)
    assert abs(m.distance - 4.0) < 1e-12


def test_zero_noise_measurement_is_exact():
    cam = CameraModel()
    observer = make_agent(vel=vec3(0.4, 0, 0.1))
    target = make_agent(agent_id="b", pos=vec3(3.0, 1.0, 0.5))
    m = measure(cam, ZERO_NOISE, make_rng(1), observer, target, tick=7)
    q = observer.heading.T @ (target.pos - observer.pos)
    assert np.allclose(m.pixel, [q[0] / q[2], q[1] / q[2]], atol=1e-12)
    assert abs(m.distance - np.linalg.norm(target.pos - observer.pos)) < 1e-12
    assert np.all(m.self_vel == observer.vel)
    assert m.tick == 7


def test_distance_noise_scale_frozen_values():
    noise = NoiseModel(sigma_dist_0=0.05, dist_ref=2.0)
    assert abs(noise.sigma_dist(6.0) - 0.5) < 1e-12
    assert abs(noise.sigma_dist(2.0) - 0.1) < 1e-12


def test_distance_noise_empirical_std_and_bias():
    cam = CameraModel()
    noise = NoiseModel(sigma_pixel=0.0, sigma_dist_0=0.05, dist_ref=2.0,
                       sigma_selfvel=0.0, dist_bias_coeff=-0.02)
    rng = make_rng(2)
    observer = make_agent()
    for d_true, sigma in ((6.0, 0.5), (2.0, 0.1)):
        target = make_agent(agent_id="b", pos=vec3(0.0, 0.0, 0.0) + vec3(d_true, 0, 0))
        samples = np.array([
            measure(cam, noise, rng, observer, target, 0).distance for _ in range(10000)
        ])
        assert abs(samples.std() - sigma) / sigma < 0.05
        expected_mean = d_true * (1.0 - 0.02 * d_true / 2.0)
        assert abs(samples.mean() - expected_mean) < 4.0 * sigma / math.sqrt(10000)


def test_bias_underestimates_more_at_range():
    noise = NoiseModel()
    assert noise.dist_bias(6.0) < noise.dist_bias(2.0) < 0.0


def test_measurement_stream_alignment():
    # Turning noise off must not change how many draws are consumed.
    cam = CameraModel()
    observer = make_agent()
    target = make_agent(agent_id="b", pos=vec3(4.0, 0, 0))
    r1, r2 = make_rng(3), make_rng(3)
    measure(cam, ZERO_NOISE, r1, observer, target, 0)
    measure(cam, NoiseModel(), r2, observer, target, 0)
    assert np.all(r1.standard_normal(3) == r2.standard_normal(3))
