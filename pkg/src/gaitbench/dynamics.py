"""Two-mass pendulum walking dynamics.

Three nested models share one code path: a point-mass inverted pendulum
(torso mass set to zero), the same with a sinusoidal vertical COM profile,
and the full variant with a small-angle torso mass. Each horizontal axis is
an independent instance of the same linear system, so everything here is
written for a single axis and instantiated twice by the walk engine.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .backend import jit_kernel

TWO_PI = 2.0 * math.pi

# |theta_to| beyond this invalidates sin(theta) ~ theta; non-fatal, see
# two_mass_accel.
DEFAULT_THETA_GUARD = 0.35


# ---------------------------------------------------------------------------
# kernels (numba-compatible numpy subset; shared by the episode hot loop)
# ---------------------------------------------------------------------------

@jit_kernel
def derived_constants(m_c, m_to, l, z_c, z_to, g):
    """Mass/geometry ratios and pendulum frequencies for one COM height."""
    alpha = m_to / m_c
    beta = z_to / z_c
    omega_sq = g / z_c
    mu = (1.0 + alpha) / (1.0 + alpha * beta) * omega_sq
    return alpha, beta, omega_sq, mu


@jit_kernel
def two_mass_accel_kernel(x_c, theta_to, p_x, thetadd_to, alpha, beta, l, mu):
    c1 = alpha * l / (1.0 + alpha)
    c2 = alpha * beta * l / (1.0 + alpha * beta)
    return mu * (x_c + c1 * theta_to - p_x) - c2 * thetadd_to


@jit_kernel
def com_height_kernel(t, z_0, a_z, phi, period):
    return z_0 + a_z * math.cos(TWO_PI * t / period + phi)


@jit_kernel
def continuous_ss_kernel(alpha, beta, l, mu):
    """System/input matrices of the per-axis 4-state model."""
    A = np.zeros((4, 4))
    A[0, 1] = 1.0
    A[1, 0] = mu
    A[1, 2] = mu * alpha * l / (1.0 + alpha)
    A[2, 3] = 1.0
    B = np.zeros((4, 2))
    B[1, 0] = -mu
    B[1, 1] = -alpha * beta * l / (1.0 + alpha * beta)
    B[3, 1] = 1.0
    return A, B


@jit_kernel
def expm_kernel(M):
    """Matrix exponential by scaling-and-squaring of a Taylor evaluation.

    Scaled so the series argument has infinity norm <= 0.5; 20 Taylor terms
    then leave a truncation error far below float64 resolution. Deterministic
    and dependency-free so it can run inside the episode kernel.
    """
    n = M.shape[0]
    nrm = 0.0
    for i in range(n):
        row = 0.0
        for j in range(n):
            row += abs(M[i, j])
        if row > nrm:
            nrm = row
    squarings = 0
    while nrm > 0.5:
        nrm *= 0.5
        squarings += 1
    A = M / (2.0 ** squarings)
    E = np.eye(n)
    term = np.eye(n)
    for k in range(1, 21):
        term = (term @ A) / k
        E = E + term
    for _ in range(squarings):
        E = E @ E
    return E


@jit_kernel
def zoh_kernel(A, B, dt):
    """Exact zero-order-hold discretization via the augmented [[A,B],[0,0]] block."""
    n = A.shape[0]
    m = B.shape[1]
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A * dt
    M[:n, n:] = B * dt
    E = expm_kernel(M)
    return E[:n, :n].copy(), E[:n, n:].copy()


@jit_kernel
def step_kernel(A_d, B_d, x, u):
    n = A_d.shape[0]
    m = B_d.shape[1]
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += A_d[i, j] * x[j]
        for j in range(m):
            acc += B_d[i, j] * u[j]
        out[i] = acc
    return out


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    """Physical constants of the two-mass pendulum (one axis)."""

    m_c: float          # lower-body mass (kg)
    m_to: float         # torso mass (kg); 0 degenerates to the point-mass model
    l: float            # torso length (m)
    z_c: float          # COM height (m)
    z_to: float         # torso height (m)
    g: float = 9.81

    def __post_init__(self):
        if not (self.m_c > 0 and self.m_to >= 0 and self.l > 0
                and self.z_c > 0 and self.z_to > 0 and self.g > 0):
            raise ValueError("invalid model params: masses/lengths must be positive")

    @property
    def alpha(self) -> float:
        return self.m_to / self.m_c

    @property
    def beta(self) -> float:
        return self.z_to / self.z_c

    @property
    def omega_sq(self) -> float:
        return self.g / self.z_c

    @property
    def mu(self) -> float:
        return (1.0 + self.alpha) / (1.0 + self.alpha * self.beta) * self.omega_sq

    def with_com_height(self, z_c: float) -> "ModelParams":
        """Same body, re-linearized about a different COM height."""
        return ModelParams(self.m_c, self.m_to, self.l, z_c, self.z_to, self.g)


@dataclass
class PendulumState:
    """Per-axis state [x_c, xd_c, theta_to, thetad_to]."""

    x_c: float = 0.0
    xd_c: float = 0.0
    theta_to: float = 0.0
    thetad_to: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x_c, self.xd_c, self.theta_to, self.thetad_to])

    @staticmethod
    def from_array(x) -> "PendulumState":
        return PendulumState(float(x[0]), float(x[1]), float(x[2]), float(x[3]))


@dataclass
class ControlInput:
    """Per-axis input [p_x, thetadd_to]: ZMP command and torso acceleration."""

    p_x: float = 0.0
    thetadd_to: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.p_x, self.thetadd_to])


@dataclass
class ContinuousSS:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray


@dataclass
class DiscreteSS:
    A_d: np.ndarray
    B_d: np.ndarray
    C_d: np.ndarray
    dt: float


@dataclass(frozen=True)
class VerticalComProfile:
    """Sinusoidal COM height, phase-locked to the step cycle."""

    z_0: float
    A_z: float = 0.0
    phi: float = 0.0
    step_time: float = 0.2

    def __post_init__(self):
        if self.step_time <= 0:
            raise ValueError("step_time must be positive")
        if self.z_0 - abs(self.A_z) <= 0:
            raise ValueError("COM height profile reaches the ground")


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def zmp_multibody(masses, g: float = 9.81) -> float:
    """Multi-body ZMP from (m, x, z, xdd, zdd) tuples.

    Raises ValueError("zmp-undefined") in the free-fall degenerate case.
    """
    if len(masses) < 1:
        raise ValueError("zmp-undefined: no masses")
    num = 0.0
    den = 0.0
    for (m, x, z, xdd, zdd) in masses:
        num += m * x * (zdd + g) - m * z * xdd
        den += m * (zdd + g)
    if abs(den) < 1e-12:
        raise ValueError("zmp-undefined: free-fall denominator")
    return num / den


def lipm_accel(x_c: float, p_x: float, params: ModelParams) -> float:
    """Point-mass pendulum acceleration omega^2 (x_c - p_x)."""
    return params.omega_sq * (x_c - p_x)


def com_height(t: float, profile: VerticalComProfile) -> float:
    return com_height_kernel(t, profile.z_0, profile.A_z, profile.phi,
                             profile.step_time)


def two_mass_accel(state: PendulumState, u: ControlInput, params: ModelParams,
                   theta_guard: float = DEFAULT_THETA_GUARD) -> float:
    """COM acceleration of the two-mass model.

    Exceeding the small-angle guard is flagged with a RuntimeWarning but
    evaluation proceeds (the linearization simply degrades).
    """
    if abs(state.theta_to) > theta_guard:
        warnings.warn("torso angle exceeds small-angle linearization bound",
                      RuntimeWarning, stacklevel=2)
    return two_mass_accel_kernel(state.x_c, state.theta_to, u.p_x, u.thetadd_to,
                                 params.alpha, params.beta, params.l, params.mu)


def build_continuous_ss(params: ModelParams) -> ContinuousSS:
    A, B = continuous_ss_kernel(params.alpha, params.beta, params.l, params.mu)
    return ContinuousSS(A=A, B=B, C=np.eye(4))


def discretize(ss: ContinuousSS, dt: float) -> DiscreteSS:
    """Exact zero-order-hold discretization of a continuous system."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    A_d, B_d = zoh_kernel(np.ascontiguousarray(ss.A, dtype=np.float64),
                          np.ascontiguousarray(ss.B, dtype=np.float64), dt)
    return DiscreteSS(A_d=A_d, B_d=B_d, C_d=ss.C.copy(), dt=dt)


def step_discrete(ss: DiscreteSS, state: PendulumState,
                  u: ControlInput) -> PendulumState:
    x_next = step_kernel(ss.A_d, ss.B_d, state.as_array(), u.as_array())
    return PendulumState.from_array(x_next)


def equilibrium_zmp(state: PendulumState, params: ModelParams) -> float:
    """ZMP command that zeroes the COM acceleration for the given state."""
    c1 = params.alpha * params.l / (1.0 + params.alpha)
    return state.x_c + c1 * state.theta_to
