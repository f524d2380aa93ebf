"""Walk engine: four-phase state machine driving the planners and controller.

Engine state is packed into flat arrays with named index constants so the
per-tick update can run inside the jitted episode loop; the WalkEngine class
wraps the same kernels for step-by-step use in tests and tools.

Controller stacks of increasing model fidelity are selectable: "lipm"
(point mass, flat COM), "lipm_z" (adds the vertical COM profile) and
"two_mass" (adds the torso mass and its sinusoidal reference).
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .backend import jit_kernel
from .control import LqrWeights, lqg_law_kernel, synthesize_tracking_gain
from .dynamics import (DiscreteSS, com_height_kernel, continuous_ss_kernel,
                       derived_constants, zoh_kernel)
from .planning import (ReferenceFrame, StepConstraints, TWO_PI,
                       clamped_footstep_kernel, compute_gx_kernel, hip_kernel,
                       swing_kernel, zmp_ref_kernel)

PHASE_IDLE, PHASE_INITIALIZE, PHASE_SS, PHASE_DS = 0, 1, 2, 3
PHASE_NAMES = ("idle", "initialize", "single_support", "double_support")

# --- config pack indices -----------------------------------------------------
CF_DT, CF_T_SS, CF_T_DS, CF_STEP_TIME, CF_INIT_DUR = 0, 1, 2, 3, 4
CF_Z0, CF_AZ, CF_PHI_Z, CF_Z_SW = 5, 6, 7, 8
CF_TI_TO, CF_A_TO, CF_ARM_BIAS, CF_ARM_AMP = 9, 10, 11, 12
CF_FEET_DIST, CF_R_MAX, CF_SIGMA_MAX, CF_LAT_MAX, CF_MIN_SEP = 13, 14, 15, 16, 17
CF_TAU_CMD, CF_WALK_START, CF_USE_TORSO = 18, 19, 20
CF_M_C, CF_M_TO, CF_L, CF_ZC0, CF_Z_TO, CF_G = 21, 22, 23, 24, 25, 26
CF_FOOT_HALF_X, CF_FOOT_HALF_Y = 27, 28
CF_EMERG_SHRINK, CF_EMERG_ERR, CF_EMERG_ENABLE = 29, 30, 31
CF_RES_DZ_MAX, CF_RES_DDTH_MAX = 32, 33
CF_XI_CLAMP, CF_U2_MAX, CF_THETA_GUARD, CF_KAL_FIXED = 34, 35, 36, 37
CF_EMERG_TICKS = 38
CF_SIZE = 39

# --- engine float state indices ----------------------------------------------
EF_T, EF_PHASE_TIMER, EF_Z0_EFF, EF_PENDING_DZ = 0, 1, 2, 3
EF_MU_C, EF_ZC_STEP = 4, 5
EF_LX, EF_LY, EF_LTH, EF_LPHI = 6, 7, 8, 9
EF_RX, EF_RY, EF_RTH, EF_RPHI = 10, 11, 12, 13
EF_FCUR_X, EF_FCUR_Y, EF_FCUR_YAW = 14, 15, 16
EF_FNEXT_X, EF_FNEXT_Y, EF_FNEXT_YAW = 17, 18, 19
EF_HIP_X0, EF_HIP_Y0, EF_HIP_XF, EF_HIP_YF = 20, 21, 22, 23
EF_G_X, EF_G_Y = 24, 25
EF_SW_SX, EF_SW_SY, EF_SW_SZ = 26, 27, 28
EF_SW_TX, EF_SW_TY, EF_SW_TZ = 29, 30, 31
EF_CMDF_X, EF_CMDF_Y, EF_CMDF_A = 32, 33, 34
EF_CMDR_X, EF_CMDR_Y, EF_CMDR_A = 35, 36, 37
EF_XI_XP, EF_XI_XT, EF_XI_YP, EF_XI_YT = 38, 39, 40, 41
EF_EMERG_LATCH, EF_HEADING, EF_STAND_X, EF_STAND_Y = 42, 43, 44, 45
EF_LAST_DZ = 46
EF_HREF_X, EF_HREF_Y = 47, 48      # last emitted hip reference (continuity)
EF_V0X, EF_V0Y = 49, 50            # gait-cycle entry velocity (init blend)
EF_SAT_COUNT = 51                  # consecutive saturated-ZMP ticks
EF_GAIT_PHASE = 52                 # free-running profile clock in [0, 1)
EF_HREFV_X, EF_HREFV_Y = 53, 54    # last emitted hip velocity reference
EF_DVX, EF_DVY = 55, 56            # entry-velocity mismatch of current step
EF_SIZE = 57

# --- engine int state indices ------------------------------------------------
EI_PHASE, EI_STEP_INDEX, EI_TICKS = 0, 1, 2
EI_SIZE = 3

# --- tick output indices -----------------------------------------------------
TICK_RZMP_X, TICK_RZMP_Y = 0, 1
TICK_HIP_X, TICK_HIP_Y, TICK_HIPV_X, TICK_HIPV_Y = 2, 3, 4, 5
TICK_SW_X, TICK_SW_Y, TICK_SW_Z = 6, 7, 8
TICK_ZCOM, TICK_THETA_REF, TICK_ARM = 9, 10, 11
TICK_U_PX, TICK_U_PY, TICK_U_AX, TICK_U_AY = 12, 13, 14, 15
TICK_EMERG, TICK_PHASE = 16, 17
TICK_THREF_X, TICK_THREF_Y, TICK_THDREF_X, TICK_THDREF_Y = 18, 19, 20, 21
TICK_SIZE = 22


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@jit_kernel
def _smooth(u):
    return u * u * (3.0 - 2.0 * u)


@jit_kernel
def begin_step_kernel(cf, ef, ei, Ad_c, Bd_c, first, from_emergency):
    """Per-step replanning at a single/double-support boundary.

    Plants the swing foot, advances the footstep pair, replans the hip
    boundary-value problem and swing spline, applies the pending COM-height
    residual and relinearizes the controller model about the new step height.
    An emergency restart terminates the step early: the swing foot is dropped
    onto its planned footstep (the abstract plant is kinematic in foot
    placement) and the hip plan re-anchors on the last emitted reference to
    stay continuous.
    """
    step_time = cf[CF_STEP_TIME]

    if not first:
        # land the swing foot on the planned footstep and swap roles
        if ef[EF_LPHI] > 0.0:
            ef[EF_LX] = ef[EF_FNEXT_X]
            ef[EF_LY] = ef[EF_FNEXT_Y]
            ef[EF_LTH] = ef[EF_FNEXT_YAW]
        else:
            ef[EF_RX] = ef[EF_FNEXT_X]
            ef[EF_RY] = ef[EF_FNEXT_Y]
            ef[EF_RTH] = ef[EF_FNEXT_YAW]
        ef[EF_LPHI] = -ef[EF_LPHI]
        ef[EF_RPHI] = -ef[EF_RPHI]
        ef[EF_FCUR_X] = ef[EF_FNEXT_X]
        ef[EF_FCUR_Y] = ef[EF_FNEXT_Y]
        ef[EF_FCUR_YAW] = ef[EF_FNEXT_YAW]
        if from_emergency:
            ef[EF_HIP_X0] = ef[EF_HREF_X]
            ef[EF_HIP_Y0] = ef[EF_HREF_Y]
        else:
            ef[EF_HIP_X0] = ef[EF_HIP_XF]
            ef[EF_HIP_Y0] = ef[EF_HIP_YF]
    else:
        # entering the first step: current support anchors the plan
        if ef[EF_LPHI] > 0.0:
            ef[EF_FCUR_X] = ef[EF_RX]
            ef[EF_FCUR_Y] = ef[EF_RY]
            ef[EF_FCUR_YAW] = ef[EF_RTH]
        else:
            ef[EF_FCUR_X] = ef[EF_LX]
            ef[EF_FCUR_Y] = ef[EF_LY]
            ef[EF_FCUR_YAW] = ef[EF_LTH]
        ef[EF_HIP_X0] = ef[EF_STAND_X]
        ef[EF_HIP_Y0] = ef[EF_STAND_Y]

    # consume the COM-height residual commanded during the previous step
    dz = ef[EF_PENDING_DZ]
    cap = cf[CF_RES_DZ_MAX]
    dz = min(max(dz, -cap), cap)
    ef[EF_Z0_EFF] = cf[CF_Z0] + dz
    ef[EF_LAST_DZ] = dz

    # plan the upcoming footstep from the filtered command
    side = 1.0 if ef[EF_LPHI] > 0.0 else -1.0
    sigma = ef[EF_CMDF_A] * step_time
    nx, ny, nyaw = clamped_footstep_kernel(
        ef[EF_FCUR_X], ef[EF_FCUR_Y], ef[EF_FCUR_YAW],
        ef[EF_CMDF_X], ef[EF_CMDF_Y], sigma,
        cf[CF_R_MAX], cf[CF_SIGMA_MAX], cf[CF_LAT_MAX], cf[CF_MIN_SEP],
        cf[CF_FEET_DIST], side)
    ef[EF_FNEXT_X] = nx
    ef[EF_FNEXT_Y] = ny
    ef[EF_FNEXT_YAW] = nyaw
    ef[EF_HEADING] = ef[EF_FCUR_YAW]

    # hip endpoint: midpoint of the two support feet
    ef[EF_HIP_XF] = 0.5 * (ef[EF_FCUR_X] + nx)
    ef[EF_HIP_YF] = 0.5 * (ef[EF_FCUR_Y] + ny)

    # swing spline endpoints
    if ef[EF_LPHI] > 0.0:
        ef[EF_SW_SX] = ef[EF_LX]
        ef[EF_SW_SY] = ef[EF_LY]
    else:
        ef[EF_SW_SX] = ef[EF_RX]
        ef[EF_SW_SY] = ef[EF_RY]
    ef[EF_SW_SZ] = 0.0
    ef[EF_SW_TX] = nx
    ef[EF_SW_TY] = ny
    ef[EF_SW_TZ] = 0.0

    # relinearize controller model about the step-boundary COM height
    z_step = com_height_kernel(0.0, ef[EF_Z0_EFF], cf[CF_AZ], cf[CF_PHI_Z],
                               step_time)
    ef[EF_ZC_STEP] = z_step
    m_to = cf[CF_M_TO] if cf[CF_USE_TORSO] > 0.0 else 0.0
    alpha, beta, omega_sq, mu = derived_constants(
        cf[CF_M_C], m_to, cf[CF_L], z_step, cf[CF_Z_TO], cf[CF_G])
    ef[EF_MU_C] = mu
    A, B = continuous_ss_kernel(alpha, beta, cf[CF_L], mu)
    Ad, Bd = zoh_kernel(A, B, cf[CF_DT])
    Ad_c[:, :] = Ad
    Bd_c[:, :] = Bd

    # shifted hip equilibrium per axis, frozen at step start
    ti = cf[CF_TI_TO]
    hx = math.cos(ef[EF_HEADING])
    hy = math.sin(ef[EF_HEADING])
    ef[EF_G_X] = compute_gx_kernel(ef[EF_FCUR_X], ti * hx, 0.0,
                                   alpha, beta, cf[CF_L], mu)
    ef[EF_G_Y] = compute_gx_kernel(ef[EF_FCUR_Y], ti * hy, 0.0,
                                   alpha, beta, cf[CF_L], mu)

    ef[EF_EMERG_LATCH] = 0.0
    ef[EF_SAT_COUNT] = 0.0
    ei[EI_STEP_INDEX] += 1


@jit_kernel
def _first_step_preview(cf, ef):
    """Entry velocity of the first step's hip trajectory.

    The Initialize phase blends the hip reference from rest to this velocity
    so single support starts on the gait's periodic orbit (this is what
    shifts the COM toward the first support foot before stepping).
    """
    if ef[EF_LPHI] > 0.0:
        fx, fy, fyaw = ef[EF_RX], ef[EF_RY], ef[EF_RTH]
        side = 1.0
    else:
        fx, fy, fyaw = ef[EF_LX], ef[EF_LY], ef[EF_LTH]
        side = -1.0
    # commands as the lag filter will have shaped them by the end of Initialize
    n_init = round(cf[CF_INIT_DUR] / cf[CF_DT])
    decay = (1.0 - cf[CF_DT] / cf[CF_TAU_CMD]) ** n_init
    cmd_x = ef[EF_CMDR_X] + (ef[EF_CMDF_X] - ef[EF_CMDR_X]) * decay
    cmd_y = ef[EF_CMDR_Y] + (ef[EF_CMDF_Y] - ef[EF_CMDR_Y]) * decay
    cmd_a = ef[EF_CMDR_A] + (ef[EF_CMDF_A] - ef[EF_CMDR_A]) * decay
    sigma = cmd_a * cf[CF_STEP_TIME]
    nx, ny, _ = clamped_footstep_kernel(
        fx, fy, fyaw, cmd_x, cmd_y, sigma,
        cf[CF_R_MAX], cf[CF_SIGMA_MAX], cf[CF_LAT_MAX], cf[CF_MIN_SEP],
        cf[CF_FEET_DIST], side)
    xfx = 0.5 * (fx + nx)
    xfy = 0.5 * (fy + ny)
    z_step = com_height_kernel(0.0, ef[EF_Z0_EFF], cf[CF_AZ], cf[CF_PHI_Z],
                               cf[CF_STEP_TIME])
    m_to = cf[CF_M_TO] if cf[CF_USE_TORSO] > 0.0 else 0.0
    alpha, beta, omega_sq, mu = derived_constants(
        cf[CF_M_C], m_to, cf[CF_L], z_step, cf[CF_Z_TO], cf[CF_G])
    ti = cf[CF_TI_TO]
    hx = math.cos(fyaw)
    hy = math.sin(fyaw)
    gx = compute_gx_kernel(fx, ti * hx, 0.0, alpha, beta, cf[CF_L], mu)
    gy = compute_gx_kernel(fy, ti * hy, 0.0, alpha, beta, cf[CF_L], mu)
    s = math.sqrt(mu)
    T = cf[CF_STEP_TIME]
    den = -math.sinh(s * T)
    ch = math.cosh(s * T)
    ef[EF_V0X] = s * ((gx - xfx) + (ef[EF_STAND_X] - gx) * ch) / den
    ef[EF_V0Y] = s * ((gy - xfy) + (ef[EF_STAND_Y] - gy) * ch) / den


@jit_kernel
def engine_tick_kernel(cf, ef, ei, Ad_c, Bd_c, K, xh, out):
    """One engine tick: phase machine, references and feedback control.

    Consumes the state estimate xh (2 axes x 4 states); emits references and
    the pre-residual control into `out`. Mutates the packed engine state.
    """
    dt = cf[CF_DT]
    t_ss = cf[CF_T_SS]
    t_ds = cf[CF_T_DS]
    step_time = cf[CF_STEP_TIME]
    phase = ei[EI_PHASE]
    timer = ef[EF_PHASE_TIMER]

    # --- command shaping -----------------------------------------------------
    tau = cf[CF_TAU_CMD]
    for i in range(3):
        raw = ef[EF_CMDR_X + i]
        ef[EF_CMDF_X + i] += (dt / tau) * (raw - ef[EF_CMDF_X + i])

    # --- phase transitions ---------------------------------------------------
    eps = 1e-9
    if phase == PHASE_IDLE:
        start = cf[CF_WALK_START]
        if start >= 0.0 and ef[EF_T] >= start - eps:
            _first_step_preview(cf, ef)
            phase = PHASE_INITIALIZE
            timer = 0.0
    elif phase == PHASE_INITIALIZE:
        if timer >= cf[CF_INIT_DUR] - eps:
            begin_step_kernel(cf, ef, ei, Ad_c, Bd_c, True, False)
            phase = PHASE_SS
            timer = 0.0
            ef[EF_GAIT_PHASE] = 0.0
    elif phase == PHASE_SS:
        if timer >= t_ss - eps or ef[EF_EMERG_LATCH] > 0.0:
            if t_ds > 0.0 and ef[EF_EMERG_LATCH] == 0.0:
                phase = PHASE_DS
            else:
                begin_step_kernel(cf, ef, ei, Ad_c, Bd_c, False,
                                  ef[EF_EMERG_LATCH] > 0.0)
                phase = PHASE_SS
                timer = 0.0
    else:  # PHASE_DS
        if timer >= step_time - eps:
            begin_step_kernel(cf, ef, ei, Ad_c, Bd_c, False, False)
            phase = PHASE_SS
            timer = 0.0
    ei[EI_PHASE] = phase

    # --- references ----------------------------------------------------------
    hx = math.cos(ef[EF_HEADING])
    hy = math.sin(ef[EF_HEADING])
    if phase == PHASE_IDLE or phase == PHASE_INITIALIZE:
        hip_ax = 0.0
        hip_ay = 0.0
        if phase == PHASE_INITIALIZE:
            ti_dur = cf[CF_INIT_DUR]
            u01 = min(timer / ti_dur, 1.0)
            w = _smooth(u01)
            # blend b(u) = u^2 (u - 1) has b(0)=b(1)=0, b'(0)=0, b'(1)=1:
            # ramps position-neutral onto a target entry velocity
            b = u01 * u01 * (u01 - 1.0)
            bd = 3.0 * u01 * u01 - 2.0 * u01
            bdd = (6.0 * u01 - 2.0) / ti_dur
            # torso blends to the sinusoid's inclination and entry rate
            v_th = cf[CF_A_TO] * TWO_PI / step_time
            theta_h = w * cf[CF_TI_TO] + v_th * ti_dur * b
            thetad_h = cf[CF_TI_TO] * 6.0 * u01 * (1.0 - u01) / ti_dur \
                + v_th * bd
            thetadd_h = cf[CF_TI_TO] * (6.0 - 12.0 * u01) / (ti_dur * ti_dur) \
                + v_th * bdd
            z_goal = com_height_kernel(0.0, ef[EF_Z0_EFF], cf[CF_AZ],
                                       cf[CF_PHI_Z], step_time)
            z_com = cf[CF_Z0] + w * (z_goal - cf[CF_Z0])
            # hip blends from rest onto the first step's entry velocity
            hip_x = ef[EF_STAND_X] + ef[EF_V0X] * ti_dur * b
            hip_y = ef[EF_STAND_Y] + ef[EF_V0Y] * ti_dur * b
            hipv_x = ef[EF_V0X] * bd
            hipv_y = ef[EF_V0Y] * bd
            hip_ax = ef[EF_V0X] * bdd
            hip_ay = ef[EF_V0Y] * bdd
        else:
            theta_h = 0.0
            thetad_h = 0.0
            thetadd_h = 0.0
            z_com = cf[CF_Z0]
            hip_x = ef[EF_STAND_X]
            hip_y = ef[EF_STAND_Y]
            hipv_x = 0.0
            hipv_y = 0.0
        arm = cf[CF_ARM_BIAS]
        # model-consistent ZMP for the blend: p = x + c1 th - (xdd + c2 thdd)/mu
        m_to_c = cf[CF_M_TO] if cf[CF_USE_TORSO] > 0.0 else 0.0
        alpha = m_to_c / cf[CF_M_C]
        beta = cf[CF_Z_TO] / ef[EF_ZC_STEP]
        c1 = alpha * cf[CF_L] / (1.0 + alpha)
        c2 = alpha * beta * cf[CF_L] / (1.0 + alpha * beta)
        mu = ef[EF_MU_C]
        rz_x = hip_x + c1 * theta_h * hx - (hip_ax + c2 * thetadd_h * hx) / mu
        rz_y = hip_y + c1 * theta_h * hy - (hip_ay + c2 * thetadd_h * hy) / mu
        sw_x = ef[EF_LX] if ef[EF_LPHI] > 0.0 else ef[EF_RX]
        sw_y = ef[EF_LY] if ef[EF_LPHI] > 0.0 else ef[EF_RY]
        sw_z = 0.0
        box_cx = ef[EF_STAND_X]
        box_cy = ef[EF_STAND_Y]
        box_hx = cf[CF_FOOT_HALF_X]
        box_hy = cf[CF_FEET_DIST] * 0.5 + cf[CF_FOOT_HALF_Y]
        box_yaw = ef[EF_HEADING]
    else:
        t_s = timer
        # profiles run on the free-running gait clock so they stay continuous
        # across emergency-shortened steps (equal to per-step time otherwise)
        t_g = ef[EF_GAIT_PHASE] * step_time
        z_com = com_height_kernel(t_g, ef[EF_Z0_EFF], cf[CF_AZ], cf[CF_PHI_Z],
                                  step_time)
        ws = TWO_PI / step_time
        sphase = math.sin(ws * t_g)
        cphase = math.cos(ws * t_g)
        theta_h = cf[CF_TI_TO] + cf[CF_A_TO] * sphase
        thetad_h = cf[CF_A_TO] * ws * cphase
        thetadd_h = -cf[CF_A_TO] * ws * ws * sphase
        arm = cf[CF_ARM_BIAS] + cf[CF_ARM_AMP] * sphase
        rz_x, rz_y = zmp_ref_kernel(t_s, ef[EF_FCUR_X], ef[EF_FCUR_Y],
                                    ef[EF_FNEXT_X] - ef[EF_FCUR_X],
                                    ef[EF_FNEXT_Y] - ef[EF_FCUR_Y],
                                    t_ss, t_ds)
        hip_x, hipv_x = hip_kernel(t_s, 0.0, step_time, ef[EF_HIP_X0],
                                   ef[EF_HIP_XF], ef[EF_G_X], ef[EF_MU_C])
        hip_y, hipv_y = hip_kernel(t_s, 0.0, step_time, ef[EF_HIP_Y0],
                                   ef[EF_HIP_YF], ef[EF_G_Y], ef[EF_MU_C])
        s_norm = min(t_s / t_ss, 1.0)
        sw_x, sw_y, sw_z = swing_kernel(s_norm, ef[EF_SW_SX], ef[EF_SW_SY],
                                        ef[EF_SW_SZ], ef[EF_SW_TX],
                                        ef[EF_SW_TY], ef[EF_SW_TZ],
                                        cf[CF_Z_SW])
        box_cx = rz_x
        box_cy = rz_y
        box_hx = cf[CF_FOOT_HALF_X]
        box_hy = cf[CF_FOOT_HALF_Y]
        box_yaw = ef[EF_FCUR_YAW]

    th_ref_x = theta_h * hx
    th_ref_y = theta_h * hy
    thd_ref_x = thetad_h * hx
    thd_ref_y = thetad_h * hy

    # --- LQG feedback per world axis ------------------------------------------
    x_err = np.empty(4)
    xi = np.empty(2)
    u = np.empty((2, 2))
    for axis in range(2):
        if axis == 0:
            hip, hipv, thr, thdr = hip_x, hipv_x, th_ref_x, thd_ref_x
            ff0 = rz_x
        else:
            hip, hipv, thr, thdr = hip_y, hipv_y, th_ref_y, thd_ref_y
            ff0 = rz_y
        x_err[0] = xh[axis, 0] - hip
        x_err[1] = xh[axis, 1] - hipv
        x_err[2] = xh[axis, 2] - thr
        x_err[3] = xh[axis, 3] - thdr
        cap = cf[CF_XI_CLAMP]
        i0 = EF_XI_XP + 2 * axis
        ef[i0] = min(max(ef[i0] + dt * x_err[0], -cap), cap)
        ef[i0 + 1] = min(max(ef[i0 + 1] + dt * x_err[2], -cap), cap)
        xi[0] = ef[i0]
        xi[1] = ef[i0 + 1]
        u_fb = lqg_law_kernel(K, x_err, xi)
        u[axis, 0] = ff0 + u_fb[0]
        u[axis, 1] = thetadd_h * (hx if axis == 0 else hy) + u_fb[1]

    # --- ZMP support-polygon clamp and emergency check ------------------------
    cyaw = math.cos(box_yaw)
    syaw = math.sin(box_yaw)
    dx = u[0, 0] - box_cx
    dy = u[1, 0] - box_cy
    lx = min(max(cyaw * dx + syaw * dy, -box_hx), box_hx)
    ly = min(max(-syaw * dx + cyaw * dy, -box_hy), box_hy)
    u[0, 0] = box_cx + cyaw * lx - syaw * ly
    u[1, 0] = box_cy + syaw * lx + cyaw * ly
    cap2 = cf[CF_U2_MAX]
    u[0, 1] = min(max(u[0, 1], -cap2), cap2)
    u[1, 1] = min(max(u[1, 1], -cap2), cap2)

    # emergency: the applied ZMP pinned in the shrunk-margin band for several
    # consecutive ticks (sustained saturation) or a gross position error
    emergency = 0.0
    if cf[CF_EMERG_ENABLE] > 0.0 and phase == PHASE_SS:
        shrink = cf[CF_EMERG_SHRINK]
        if abs(lx) > shrink * box_hx or abs(ly) > shrink * box_hy:
            ef[EF_SAT_COUNT] += 1.0
        else:
            ef[EF_SAT_COUNT] = 0.0
        pos_err = math.hypot(xh[0, 0] - hip_x, xh[1, 0] - hip_y)
        if (ef[EF_SAT_COUNT] >= cf[CF_EMERG_TICKS]
                or pos_err > cf[CF_EMERG_ERR]):
            emergency = 1.0
            ef[EF_EMERG_LATCH] = 1.0
    else:
        ef[EF_SAT_COUNT] = 0.0

    # --- outputs and time advance ---------------------------------------------
    out[TICK_RZMP_X] = rz_x
    out[TICK_RZMP_Y] = rz_y
    out[TICK_HIP_X] = hip_x
    out[TICK_HIP_Y] = hip_y
    out[TICK_HIPV_X] = hipv_x
    out[TICK_HIPV_Y] = hipv_y
    out[TICK_SW_X] = sw_x
    out[TICK_SW_Y] = sw_y
    out[TICK_SW_Z] = sw_z
    out[TICK_ZCOM] = z_com
    out[TICK_THETA_REF] = theta_h
    out[TICK_ARM] = arm
    out[TICK_U_PX] = u[0, 0]
    out[TICK_U_PY] = u[1, 0]
    out[TICK_U_AX] = u[0, 1]
    out[TICK_U_AY] = u[1, 1]
    out[TICK_EMERG] = emergency
    out[TICK_PHASE] = float(phase)
    out[TICK_THREF_X] = th_ref_x
    out[TICK_THREF_Y] = th_ref_y
    out[TICK_THDREF_X] = thd_ref_x
    out[TICK_THDREF_Y] = thd_ref_y

    ef[EF_HREF_X] = hip_x
    ef[EF_HREF_Y] = hip_y
    if phase == PHASE_SS or phase == PHASE_DS:
        gp = ef[EF_GAIT_PHASE] + dt / step_time
        if gp >= 1.0 - 1e-12:
            gp -= 1.0
        ef[EF_GAIT_PHASE] = gp
    ef[EF_PHASE_TIMER] = timer + dt
    ef[EF_T] += dt
    ei[EI_TICKS] += 1


@jit_kernel
def apply_residual_kernel(u, dz_cmd, ddth_x, ddth_y, res_ddth_max, u2_max,
                          res_dz_max):
    """Clamp and add policy residuals to the torso channel; clamp the height
    setpoint change for the next step."""
    rx = min(max(ddth_x, -res_ddth_max), res_ddth_max)
    ry = min(max(ddth_y, -res_ddth_max), res_ddth_max)
    u[0, 1] = min(max(u[0, 1] + rx, -u2_max), u2_max)
    u[1, 1] = min(max(u[1, 1] + ry, -u2_max), u2_max)
    return min(max(dz_cmd, -res_dz_max), res_dz_max)


# ---------------------------------------------------------------------------
# configuration types
# ---------------------------------------------------------------------------

@dataclass
class GaitParams:
    """Walking parameters; angles in degrees as usually reported."""

    T_ss: float = 0.2
    x: float = 0.0              # step length command (m)
    y: float = 0.0              # lateral step command (m)
    alpha_deg: float = 0.0      # turn rate command (deg/s)
    z_sw: float = 0.038
    TI_to_deg: float = 5.601
    A_z: float = -0.004
    A_to_deg: float = -1.9195
    z_0: float = 0.30
    T_ds: float = 0.0
    phi_z: float = 0.0
    arm_bias_deg: float = 0.0
    arm_amp_deg: float = 0.0

    def __post_init__(self):
        if self.T_ss <= 0 or self.T_ds < 0:
            raise ValueError("step timing must be positive")
        if self.z_sw <= 0:
            raise ValueError("swing height must be positive")
        if self.z_0 - abs(self.A_z) <= 0:
            raise ValueError("COM height profile reaches the ground")

    @property
    def step_time(self) -> float:
        return self.T_ss + self.T_ds

    # radian views used by the planners
    @property
    def TI_to(self) -> float:
        return math.radians(self.TI_to_deg)

    @property
    def A_to(self) -> float:
        return math.radians(self.A_to_deg)

    @property
    def arm_bias(self) -> float:
        return math.radians(self.arm_bias_deg)

    @property
    def arm_amp(self) -> float:
        return math.radians(self.arm_amp_deg)


@dataclass
class WalkCommand:
    X: float = 0.0
    Y: float = 0.0
    alpha_deg: float = 0.0      # deg/s; converted to per-step yaw by the engine


@dataclass
class EngineConfig:
    gait: GaitParams = field(default_factory=GaitParams)
    stack: str = "two_mass"     # "lipm" | "lipm_z" | "two_mass"
    dt: float = 0.02
    # nominal (controller) body model
    m_c: float = 3.5
    m_to: float = 1.5
    l: float = 0.2
    z_to: float = 0.45
    g: float = 9.81
    constraints: StepConstraints = field(default_factory=StepConstraints)
    init_duration: float = 1.0
    tau_cmd: float = 0.5
    walk_start_time: float = 0.0   # negative: stay in Idle
    foot_half_x: float = 0.05
    foot_half_y: float = 0.03
    emergency_enable: bool = True
    emergency_shrink: float = 0.8
    emergency_err_m: float = 0.075
    emergency_sat_ticks: int = 8
    res_dz_max: float = 0.03
    res_ddth_max: float = 8.0
    xi_clamp: float = 0.2
    u2_max: float = 150.0
    theta_guard: float = 0.35
    kalman_fixed_gain: bool = False
    lqr_weights: LqrWeights | None = None
    dare_method: str = "iteration"

    def __post_init__(self):
        if self.stack not in ("lipm", "lipm_z", "two_mass"):
            raise ValueError(f"unknown controller stack: {self.stack}")

    def effective_gait(self) -> GaitParams:
        """Gait as actually planned by this stack (lower stacks drop the
        vertical profile and torso sinusoid they cannot model)."""
        g = self.gait
        if self.stack == "lipm":
            return replace(g, A_z=0.0, TI_to_deg=0.0, A_to_deg=0.0)
        if self.stack == "lipm_z":
            return replace(g, TI_to_deg=0.0, A_to_deg=0.0)
        return g

    @property
    def use_torso(self) -> bool:
        return self.stack == "two_mass"


def build_config_pack(cfg: EngineConfig) -> np.ndarray:
    gait = cfg.effective_gait()
    cf = np.zeros(CF_SIZE)
    cf[CF_DT] = cfg.dt
    cf[CF_T_SS] = gait.T_ss
    cf[CF_T_DS] = gait.T_ds
    cf[CF_STEP_TIME] = gait.step_time
    cf[CF_INIT_DUR] = cfg.init_duration
    cf[CF_Z0] = gait.z_0
    cf[CF_AZ] = gait.A_z
    cf[CF_PHI_Z] = gait.phi_z
    cf[CF_Z_SW] = gait.z_sw
    cf[CF_TI_TO] = gait.TI_to
    cf[CF_A_TO] = gait.A_to
    cf[CF_ARM_BIAS] = gait.arm_bias
    cf[CF_ARM_AMP] = gait.arm_amp
    cf[CF_FEET_DIST] = cfg.constraints.feet_distance
    cf[CF_R_MAX] = cfg.constraints.R_max
    cf[CF_SIGMA_MAX] = cfg.constraints.sigma_max
    cf[CF_LAT_MAX] = cfg.constraints.lateral_max
    cf[CF_MIN_SEP] = cfg.constraints.min_separation
    cf[CF_TAU_CMD] = cfg.tau_cmd
    cf[CF_WALK_START] = cfg.walk_start_time
    cf[CF_USE_TORSO] = 1.0 if cfg.use_torso else 0.0
    cf[CF_M_C] = cfg.m_c
    cf[CF_M_TO] = cfg.m_to
    cf[CF_L] = cfg.l
    cf[CF_ZC0] = gait.z_0
    cf[CF_Z_TO] = cfg.z_to
    cf[CF_G] = cfg.g
    cf[CF_FOOT_HALF_X] = cfg.foot_half_x
    cf[CF_FOOT_HALF_Y] = cfg.foot_half_y
    cf[CF_EMERG_SHRINK] = cfg.emergency_shrink
    cf[CF_EMERG_ERR] = cfg.emergency_err_m
    cf[CF_EMERG_ENABLE] = 1.0 if cfg.emergency_enable else 0.0
    cf[CF_RES_DZ_MAX] = cfg.res_dz_max
    cf[CF_RES_DDTH_MAX] = cfg.res_ddth_max
    cf[CF_XI_CLAMP] = cfg.xi_clamp
    cf[CF_U2_MAX] = cfg.u2_max
    cf[CF_THETA_GUARD] = cfg.theta_guard
    cf[CF_KAL_FIXED] = 1.0 if cfg.kalman_fixed_gain else 0.0
    cf[CF_EMERG_TICKS] = float(cfg.emergency_sat_ticks)
    return cf


def nominal_discrete_model(cfg: EngineConfig):
    """Controller model linearized at the gait's step-boundary COM height."""
    gait = cfg.effective_gait()
    z_step = gait.z_0 + gait.A_z * math.cos(gait.phi_z)
    m_to = cfg.m_to if cfg.use_torso else 0.0
    alpha, beta, _, mu = derived_constants(cfg.m_c, m_to, cfg.l, z_step,
                                           cfg.z_to, cfg.g)
    A, B = continuous_ss_kernel(alpha, beta, cfg.l, mu)
    Ad, Bd = zoh_kernel(A, B, cfg.dt)
    return DiscreteSS(A_d=Ad, B_d=Bd, C_d=np.eye(4), dt=cfg.dt)


@dataclass
class EngineTick:
    references: ReferenceFrame
    u: np.ndarray               # (2 axes, 2 channels), residuals applied
    u_base: np.ndarray          # controller output before residuals
    residual: tuple
    emergency: bool
    phase: str


class WalkEngine:
    """Stateful wrapper around the packed engine kernels (one per episode)."""

    def __init__(self, cfg: EngineConfig):
        self.cfg = cfg
        self.cf = build_config_pack(cfg)
        model = nominal_discrete_model(cfg)
        self.gain = synthesize_tracking_gain(
            model, cfg.lqr_weights, tracked=(0, 2), method=cfg.dare_method)
        self.K = np.ascontiguousarray(self.gain.K)
        self.model = model
        self.reset()

    def reset(self):
        self.ef = np.zeros(EF_SIZE)
        self.ei = np.zeros(EI_SIZE, dtype=np.int64)
        half = self.cfg.constraints.feet_distance / 2.0
        self.ef[EF_LX], self.ef[EF_LY], self.ef[EF_LTH] = 0.0, half, 0.0
        self.ef[EF_RX], self.ef[EF_RY], self.ef[EF_RTH] = 0.0, -half, 0.0
        self.ef[EF_LPHI], self.ef[EF_RPHI] = 1.0, -1.0   # left swings first
        self.ef[EF_Z0_EFF] = self.cf[CF_Z0]
        gait = self.cfg.effective_gait()
        z_step = gait.z_0 + gait.A_z * math.cos(gait.phi_z)
        self.ef[EF_ZC_STEP] = z_step
        m_to = self.cfg.m_to if self.cfg.use_torso else 0.0
        _, _, _, mu = derived_constants(self.cfg.m_c, m_to, self.cfg.l,
                                        z_step, self.cfg.z_to, self.cfg.g)
        self.ef[EF_MU_C] = mu
        self.Ad_c = np.ascontiguousarray(self.model.A_d.copy())
        self.Bd_c = np.ascontiguousarray(self.model.B_d.copy())
        self.out = np.zeros(TICK_SIZE)

    @property
    def phase(self) -> str:
        return PHASE_NAMES[int(self.ei[EI_PHASE])]

    @property
    def step_index(self) -> int:
        return int(self.ei[EI_STEP_INDEX])

    def set_command(self, cmd: WalkCommand):
        self.ef[EF_CMDR_X] = cmd.X
        self.ef[EF_CMDR_Y] = cmd.Y
        self.ef[EF_CMDR_A] = math.radians(cmd.alpha_deg)

    def command_filter_state(self) -> WalkCommand:
        return WalkCommand(X=self.ef[EF_CMDF_X], Y=self.ef[EF_CMDF_Y],
                           alpha_deg=math.degrees(self.ef[EF_CMDF_A]))

    def tick(self, estimate: np.ndarray, residual=None) -> EngineTick:
        """Advance one control period given the (2, 4) state estimate."""
        xh = np.ascontiguousarray(estimate, dtype=np.float64)
        engine_tick_kernel(self.cf, self.ef, self.ei, self.Ad_c, self.Bd_c,
                           self.K, xh, self.out)
        out = self.out
        u = np.array([[out[TICK_U_PX], out[TICK_U_AX]],
                      [out[TICK_U_PY], out[TICK_U_AY]]])
        u_base = u.copy()
        dz_cmd, ddx, ddy = (0.0, 0.0, 0.0) if residual is None else residual
        dz = apply_residual_kernel(u, dz_cmd, ddx, ddy,
                                   self.cf[CF_RES_DDTH_MAX],
                                   self.cf[CF_U2_MAX],
                                   self.cf[CF_RES_DZ_MAX])
        if residual is not None:
            self.ef[EF_PENDING_DZ] = dz
        refs = ReferenceFrame(
            t=self.ef[EF_PHASE_TIMER] - self.cfg.dt,
            r_zmp=np.array([out[TICK_RZMP_X], out[TICK_RZMP_Y]]),
            hip_pos=np.array([out[TICK_HIP_X], out[TICK_HIP_Y]]),
            hip_vel=np.array([out[TICK_HIPV_X], out[TICK_HIPV_Y]]),
            swing_foot=np.array([out[TICK_SW_X], out[TICK_SW_Y],
                                 out[TICK_SW_Z]]),
            z_com=out[TICK_ZCOM],
            theta_to_ref=out[TICK_THETA_REF],
            arm_ref=out[TICK_ARM])
        return EngineTick(references=refs, u=u, u_base=u_base,
                          residual=(dz, ddx, ddy),
                          emergency=bool(out[TICK_EMERG] > 0.0),
                          phase=PHASE_NAMES[int(self.ei[EI_PHASE])])

    def reference_state(self, axis: int) -> np.ndarray:
        """Reference [pos, vel, theta, thetad] for one world axis from the
        last tick output."""
        o = self.out
        if axis == 0:
            return np.array([o[TICK_HIP_X], o[TICK_HIPV_X],
                             o[TICK_THREF_X], o[TICK_THDREF_X]])
        return np.array([o[TICK_HIP_Y], o[TICK_HIPV_Y],
                         o[TICK_THREF_Y], o[TICK_THDREF_Y]])
