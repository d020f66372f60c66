import math

import pytest
from hypothesis import given, strategies as st

from gridswarm.motion import (
    KinematicParams,
    PIState,
    corrected_setpoint,
    desired_heading,
    pi_heading_command,
    speed_command,
    step_kinematics,
    wrap_angle,
)
from gridswarm.world import ArenaConfig, Robot


@given(st.floats(-50, 50))
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    # same angle modulo 2*pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)
    assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-9)


def test_desired_heading_cardinals():
    assert desired_heading((0, 0), (1, 0)) == pytest.approx(0.0)
    assert desired_heading((0, 0), (0, 1)) == pytest.approx(math.pi / 2)
    assert desired_heading((0, 0), (-1, 0)) == pytest.approx(math.pi)
    assert desired_heading((0, 0), (0, -1)) == pytest.approx(-math.pi / 2)


def test_pi_command_saturates():
    pi = PIState(kp=10.0, ki=0.0)
    cmd, _ = pi_heading_command(0.0, math.pi, pi, 0.1, omega_max=2.0)
    assert cmd == pytest.approx(2.0)


def test_pi_integral_accumulates():
    pi = PIState(kp=0.0, ki=1.0)
    cmd1, pi = pi_heading_command(0.0, 1.0, pi, 0.5, omega_max=10.0)
    cmd2, pi = pi_heading_command(0.0, 1.0, pi, 0.5, omega_max=10.0)
    assert cmd2 > cmd1 > 0
    assert pi.integral_error == pytest.approx(1.0)


def test_pi_anti_windup():
    pi = PIState(kp=0.0, ki=0.5)
    for _ in range(10_000):
        _, pi = pi_heading_command(0.0, math.pi, pi, 0.1, omega_max=2.0)
    assert pi.integral_error <= 2.0 / 0.5 + 1e-9


def test_step_kinematics_straight_line():
    params = KinematicParams(v_max=10.0, dt=0.1)
    r = Robot(id=0, position=(0.0, 0.0), heading=0.0)
    r2 = step_kinematics(r, 0.0, 10.0, params)
    assert r2.position == pytest.approx((1.0, 0.0))
    assert r2.heading == pytest.approx(0.0)


def test_step_kinematics_turn_rate_limit():
    params = KinematicParams(v_max=10.0, heading_gain=100.0, omega_max=2.0, dt=0.1)
    r = Robot(id=0, position=(0.0, 0.0), heading=0.0)
    r2 = step_kinematics(r, math.pi, 0.0, params)
    assert r2.heading == pytest.approx(0.2)  # omega_max * dt


def test_step_kinematics_clips_to_arena():
    params = KinematicParams(v_max=15.0, dt=0.1)
    arena = ArenaConfig()
    r = Robot(id=0, position=(89.5, 45.0), heading=0.0)
    r2 = step_kinematics(r, 0.0, 15.0, params, arena)
    assert r2.position[0] == pytest.approx(90.0)


def test_speed_command_profile():
    params = KinematicParams(v_max=15.0, dt=0.1)
    assert speed_command(100.0, params, 0.5) == pytest.approx(15.0)
    # lands exactly on the waypoint in one step
    assert speed_command(0.8, params, 0.5) == pytest.approx(8.0)
    assert speed_command(0.4, params, 0.5) == 0.0


@given(st.floats(0.0, 200.0))
def test_speed_command_never_exceeds_vmax(d):
    params = KinematicParams()
    v = speed_command(d, params, 0.5)
    assert 0.0 <= v <= params.v_max


def test_waypoint_convergence():
    """PI-tracked unicycle reaches a waypoint from an adverse heading."""
    params = KinematicParams()
    r = Robot(id=0, position=(10.0, 10.0), heading=math.pi)  # facing away
    pi = PIState()
    wp = (25.0, 20.0)
    for _ in range(200):
        d = math.hypot(wp[0] - r.position[0], wp[1] - r.position[1])
        if d <= 0.5:
            break
        psi_d = desired_heading(r.position, wp)
        cmd, pi = pi_heading_command(r.heading, psi_d, pi, params.dt, params.omega_max)
        v = speed_command(d, params, 0.5, heading_error=psi_d - r.heading)
        r = step_kinematics(r, corrected_setpoint(r.heading, psi_d, cmd), v, params)
    assert math.hypot(wp[0] - r.position[0], wp[1] - r.position[1]) <= 0.5
