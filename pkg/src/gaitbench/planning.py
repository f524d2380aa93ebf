"""Hierarchical walking reference planners.

Five layers, each feeding the next: footstep placement from per-step
commands, a piecewise ZMP reference over each step, a cubic swing-foot
spline, global sinusoidal profiles (COM height, torso pitch, arms), and the
hip trajectory solved per step as a boundary value problem of the pendulum
dynamics.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .backend import jit_kernel
from .dynamics import ModelParams, com_height_kernel

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@jit_kernel
def footstep_kernel(sup_x, sup_y, sup_yaw, step_len, step_lat, step_yaw,
                    feet_distance, side):
    """Landing pose of the swing foot.

    side is +1 when the left foot swings, -1 for the right. The landing sits
    step_len ahead of the support foot along the new heading, offset by the
    nominal foot spacing toward the swing side plus the lateral command.
    """
    yaw = sup_yaw + step_yaw
    ux = math.cos(yaw)
    uy = math.sin(yaw)
    lat = step_lat + side * feet_distance
    lx = sup_x + step_len * ux - lat * uy
    ly = sup_y + step_len * uy + lat * ux
    return lx, ly, yaw


@jit_kernel
def clamped_footstep_kernel(sup_x, sup_y, sup_yaw, step_len, step_lat,
                            step_yaw, r_max, sigma_max, lateral_max,
                            min_separation, feet_distance, side):
    """footstep_kernel with the action clamped to the constraint box first."""
    r = min(max(step_len, -r_max), r_max)
    sig = min(max(step_yaw, -sigma_max), sigma_max)
    if side > 0.0:
        lat_lo = min_separation - feet_distance
        lat_hi = lateral_max
    else:
        lat_lo = -lateral_max
        lat_hi = feet_distance - min_separation
    lat = min(max(step_lat, lat_lo), lat_hi)
    return footstep_kernel(sup_x, sup_y, sup_yaw, r, lat, sig,
                           feet_distance, side)


@jit_kernel
def zmp_ref_kernel(t, f_x, f_y, ls_x, ls_y, t_ss, t_ds):
    if t < t_ss or t_ds <= 0.0:
        return f_x, f_y
    r = (t - t_ss) / t_ds
    return f_x + ls_x * r, f_y + ls_y * r


@jit_kernel
def hip_kernel(t, t_0, t_f, x_0, x_f, g_x, mu):
    """Position and velocity of the boundary-value hip trajectory."""
    s = math.sqrt(mu)
    den = math.sinh(s * (t_0 - t_f))
    a = g_x - x_f
    b = x_0 - g_x
    x = g_x + (a * math.sinh(s * (t - t_0)) + b * math.sinh(s * (t - t_f))) / den
    xd = s * (a * math.cosh(s * (t - t_0)) + b * math.cosh(s * (t - t_f))) / den
    return x, xd


@jit_kernel
def compute_gx_kernel(r_zmp, theta_to, thetadd_to, alpha, beta, l, mu):
    c1 = alpha * l / (1.0 + alpha)
    c2 = alpha * beta * l / (mu * (1.0 + alpha * beta))
    return r_zmp - c1 * theta_to + c2 * thetadd_to


@jit_kernel
def _bump(u):
    # cubic Hermite step with zero end slopes
    return u * u * (3.0 - 2.0 * u)


@jit_kernel
def swing_kernel(s, x0, y0, z0, x1, y1, z1, z_swing):
    """Swing-foot point at normalized phase s in [0, 1].

    Horizontal: one clamped cubic from start to target. Vertical: two clamped
    cubics joined at the apex (height z_swing at s = 0.5) with zero apex
    velocity.
    """
    w = _bump(s)
    x = x0 + (x1 - x0) * w
    y = y0 + (y1 - y0) * w
    if s < 0.5:
        z = z0 + (z_swing - z0) * _bump(2.0 * s)
    else:
        z = z1 + (z_swing - z1) * _bump(2.0 * (1.0 - s))
    return x, y, z


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass
class FeetState:
    """Planar pose of both feet plus swing/support role flags (+1 swing)."""

    x_l: float
    y_l: float
    theta_l: float
    phi_l: int
    x_r: float
    y_r: float
    theta_r: float
    phi_r: int

    def __post_init__(self):
        if self.phi_l != -self.phi_r or self.phi_l not in (-1, 1):
            raise ValueError("exactly one foot must be the swing foot")

    @staticmethod
    def standing(feet_distance: float = 0.1, swing_left: bool = True) -> "FeetState":
        half = feet_distance / 2.0
        s = 1 if swing_left else -1
        return FeetState(0.0, half, 0.0, s, 0.0, -half, 0.0, -s)

    def swing_is_left(self) -> bool:
        return self.phi_l == 1

    def swing_pose(self):
        if self.swing_is_left():
            return self.x_l, self.y_l, self.theta_l
        return self.x_r, self.y_r, self.theta_r

    def support_pose(self):
        if self.swing_is_left():
            return self.x_r, self.y_r, self.theta_r
        return self.x_l, self.y_l, self.theta_l


@dataclass(frozen=True)
class StepAction:
    """One step command: length along the new heading and heading change."""

    R: float
    sigma: float
    lateral: float = 0.0


@dataclass(frozen=True)
class Footstep:
    f_x: float
    f_y: float
    yaw: float
    index: int


@dataclass(frozen=True)
class GaitTiming:
    T_ss: float
    T_ds: float = 0.0

    def __post_init__(self):
        if self.T_ss <= 0 or self.T_ds < 0:
            raise ValueError("T_ss must be positive, T_ds non-negative")

    @property
    def step_time(self) -> float:
        return self.T_ss + self.T_ds


@dataclass(frozen=True)
class StepConstraints:
    R_max: float = 0.15
    sigma_max: float = math.radians(15.0)
    lateral_max: float = 0.08
    feet_distance: float = 0.10
    min_separation: float = 0.04

    def __post_init__(self):
        if self.feet_distance < self.min_separation:
            raise ValueError("feet_distance below minimum separation")


@dataclass
class ReferenceFrame:
    """All per-tick planner outputs at time t within the current step."""

    t: float
    r_zmp: np.ndarray
    hip_pos: np.ndarray
    hip_vel: np.ndarray
    swing_foot: np.ndarray
    z_com: float
    theta_to_ref: float
    arm_ref: float


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def plan_footstep(s: FeetState, a: StepAction,
                  constraints: StepConstraints = StepConstraints(),
                  index: int = 0):
    """Advance the feet state by one step action; returns (s', footstep).

    The action is clamped to the constraint box first, so the produced step
    is always feasible; overlapping feet indicate an inconsistent constraint
    set and raise instead.
    """
    c = constraints
    side = 1.0 if s.swing_is_left() else -1.0
    sup_x, sup_y, sup_yaw = s.support_pose()
    lx, ly, yaw = clamped_footstep_kernel(
        sup_x, sup_y, sup_yaw, a.R, a.lateral, a.sigma,
        c.R_max, c.sigma_max, c.lateral_max, c.min_separation,
        c.feet_distance, side)
    if math.hypot(lx - sup_x, ly - sup_y) < c.min_separation:
        raise ValueError("infeasible-step: feet overlap")

    if s.swing_is_left():
        s2 = FeetState(lx, ly, yaw, -1, s.x_r, s.y_r, s.theta_r, 1)
    else:
        s2 = FeetState(s.x_l, s.y_l, s.theta_l, 1, lx, ly, yaw, -1)
    return s2, Footstep(f_x=lx, f_y=ly, yaw=yaw, index=index)


def zmp_reference(f_i: Footstep, L_sx: float, L_sy: float,
                  timing: GaitTiming, t: float):
    """ZMP reference at time t within a step: constant on the support foot
    during single support, linear ramp toward the next foot during double
    support."""
    if t < 0 or t >= timing.step_time:
        raise ValueError("time-out-of-step")
    rx, ry = zmp_ref_kernel(t, f_i.f_x, f_i.f_y, L_sx, L_sy,
                            timing.T_ss, timing.T_ds)
    return rx, ry


def swing_trajectory(p_start, p_target, Z_swing: float, s: float) -> np.ndarray:
    if not 0.0 <= s <= 1.0:
        raise ValueError("swing phase must lie in [0, 1]")
    if Z_swing <= 0:
        raise ValueError("Z_swing must be positive")
    p_start = np.asarray(p_start, dtype=np.float64)
    p_target = np.asarray(p_target, dtype=np.float64)
    x, y, z = swing_kernel(s, p_start[0], p_start[1], p_start[2],
                           p_target[0], p_target[1], p_target[2], Z_swing)
    return np.array([x, y, z])


def sinusoidal_profiles(t: float, gait):
    """COM-height, torso-pitch and arm references at time t in the step.

    `gait` supplies z_0/A_z/phi_z for the vertical profile and the torso/arm
    bias-plus-sine parameters; angles are radians here.
    """
    period = gait.step_time
    z = com_height_kernel(t, gait.z_0, gait.A_z, gait.phi_z, period)
    phase = math.sin(TWO_PI * t / period)
    theta = gait.TI_to + gait.A_to * phase
    arm = gait.arm_bias + gait.arm_amp * phase
    return z, theta, arm


def hip_trajectory(x_0: float, x_f: float, t_0: float, t_f: float,
                   g_x: float, mu: float, t: float):
    """Boundary-value hip trajectory and its analytic velocity at time t."""
    if t_0 >= t_f:
        raise ValueError("t_0 must precede t_f")
    if mu <= 0:
        raise ValueError("mu must be positive")
    if t < t_0 or t > t_f:
        raise ValueError("time-out-of-step")
    return hip_kernel(t, t_0, t_f, x_0, x_f, g_x, mu)


def compute_gx(r_zmp_x: float, theta_to: float, thetadd_to: float,
               params: ModelParams) -> float:
    """Shifted equilibrium point of the hip boundary-value dynamics."""
    return compute_gx_kernel(r_zmp_x, theta_to, thetadd_to,
                             params.alpha, params.beta, params.l, params.mu)


def step_endpoint(f_i: Footstep, f_next: Footstep) -> np.ndarray:
    """Hip target at step end: midpoint of consecutive support feet."""
    return np.array([(f_i.f_x + f_next.f_x) / 2.0,
                     (f_i.f_y + f_next.f_y) / 2.0])


def export_reference_csv(frames, path):
    """Write planner frames using the reference trace column contract."""
    cols = ("t,r_zmp_x,r_zmp_y,hip_x,hip_y,swing_x,swing_y,swing_z,"
            "z_com,theta_ref")
    with open(path, "w") as fh:
        fh.write(cols + "\n")
        for f in frames:
            row = [f.t, f.r_zmp[0], f.r_zmp[1], f.hip_pos[0], f.hip_pos[1],
                   f.swing_foot[0], f.swing_foot[1], f.swing_foot[2],
                   f.z_com, f.theta_to_ref]
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
