"""Discrete-time plant and episode harness.

The plant integrates the true two-mass dynamics (optionally mismatched
against the controller's nominal model), adds Gaussian measurement noise,
applies scheduled velocity pushes and detects falls. run_episode fuses the
measure -> estimate -> engine tick -> plant step loop into one jitted kernel;
the same kernels back the step-by-step wrappers used in tests.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .backend import jit_kernel
from .dynamics import (ModelParams, continuous_ss_kernel, derived_constants,
                       step_kernel, zoh_kernel)
from .estimation import (KalmanConfig, kalman_predict_kernel,
                         kalman_update_kernel, steady_state_gain)
from .rl.policy import mlp_forward_single, log_std_of, LOG2PI
from .walk_engine import (CF_DT, CF_RES_DDTH_MAX, CF_RES_DZ_MAX, CF_STEP_TIME,
                          CF_U2_MAX, CF_Z0, EF_CMDF_A, EF_CMDF_X, EF_CMDF_Y,
                          EF_CMDR_A, EF_CMDR_X,
                          EF_CMDR_Y, EF_FCUR_X, EF_FCUR_Y, EF_HEADING,
                          EF_PENDING_DZ, EF_PHASE_TIMER, EF_STAND_X,
                          EF_STAND_Y, EF_T, EF_Z0_EFF, EI_PHASE,
                          EI_STEP_INDEX, EI_TICKS, PHASE_DS, PHASE_SS,
                          EF_ZC_STEP, EngineConfig, WalkEngine,
                          apply_residual_kernel, engine_tick_kernel,
                          TICK_ARM, TICK_EMERG, TICK_HIP_X, TICK_HIP_Y,
                          TICK_HIPV_X, TICK_HIPV_Y, TICK_PHASE, TICK_RZMP_X,
                          TICK_RZMP_Y, TICK_SIZE, TICK_SW_X, TICK_SW_Y,
                          TICK_SW_Z, TICK_THDREF_X, TICK_THDREF_Y,
                          TICK_THETA_REF, TICK_THREF_X, TICK_THREF_Y,
                          TICK_U_AX, TICK_U_AY, TICK_U_PX, TICK_U_PY,
                          TICK_ZCOM)

TWO_PI = 2.0 * math.pi

# plant pack indices
PF_M_C, PF_M_TO, PF_L, PF_Z_FACTOR, PF_Z_TO, PF_G = 0, 1, 2, 3, 4, 5
PF_FALL_X, PF_FALL_Y, PF_THETA_MAX = 6, 7, 8
PF_SIZE = 9

OBS_DIM = 16
ACT_DIM = 3

# episode status codes
RUNNING, FELL, DIVERGED = 0, 1, 2

TRACE_COLUMNS = (
    "t", "phase", "cmd_x", "cmd_y", "cmd_alpha", "r_zmp_x", "r_zmp_y",
    "hip_x", "hip_y", "swing_x", "swing_y", "swing_z", "z_com", "theta_ref",
    "arm_ref", "u_px", "u_py", "u_ddth_x", "u_ddth_y", "res_dz", "res_ddth_x",
    "res_ddth_y", "emergency", "com_x", "com_y", "fell",
)
TRACE_NCOLS = len(TRACE_COLUMNS)

# task-state slots (mutable across chunks)
TS_TURNING, TS_RATE, TS_PREV_X, TS_PREV_Y = 0, 1, 2, 3
TS_SIZE = 4

# turn-protocol pack
TP_ENABLE, TP_HALF, TP_FACING_TOL, TP_FORWARD_X = 0, 1, 2, 3
TP_SIZE = 4


@jit_kernel
def _wrap_pi(a):
    return a - TWO_PI * math.floor((a + math.pi) / TWO_PI) - math.pi


@jit_kernel
def _refresh_plant(pf, Ad_p, Bd_p, z_cmd, dt):
    z_true = z_cmd * pf[PF_Z_FACTOR]
    alpha, beta, omega_sq, mu = derived_constants(
        pf[PF_M_C], pf[PF_M_TO], pf[PF_L], z_true, pf[PF_Z_TO], pf[PF_G])
    A, B = continuous_ss_kernel(alpha, beta, pf[PF_L], mu)
    Ad, Bd = zoh_kernel(A, B, dt)
    Ad_p[:, :] = Ad
    Bd_p[:, :] = Bd


@jit_kernel
def fall_check_kernel(Xp, pf, anchor_x, anchor_y):
    for axis in range(2):
        for j in range(4):
            if not math.isfinite(Xp[axis, j]):
                return DIVERGED
    if abs(Xp[0, 0] - anchor_x) > pf[PF_FALL_X]:
        return FELL
    if abs(Xp[1, 0] - anchor_y) > pf[PF_FALL_Y]:
        return FELL
    if abs(Xp[0, 2]) >= pf[PF_THETA_MAX] or abs(Xp[1, 2]) >= pf[PF_THETA_MAX]:
        return FELL
    return RUNNING


@jit_kernel
def _build_obs(obs, cf, ef, out, xh):
    """Observation in the gait's heading frame: tracking-error coordinates of
    the state estimate, the controller's feedback action, the height setpoint
    offset and the step-phase encoding."""
    c = math.cos(ef[EF_HEADING])
    s = math.sin(ef[EF_HEADING])
    obs[0] = ef[EF_CMDF_A]
    ex = xh[0, 0] - out[TICK_HIP_X]
    ey = xh[1, 0] - out[TICK_HIP_Y]
    obs[1] = c * ex + s * ey
    obs[2] = -s * ex + c * ey
    ex = xh[0, 1] - out[TICK_HIPV_X]
    ey = xh[1, 1] - out[TICK_HIPV_Y]
    obs[3] = c * ex + s * ey
    obs[4] = -s * ex + c * ey
    ex = xh[0, 2] - out[TICK_THREF_X]
    ey = xh[1, 2] - out[TICK_THREF_Y]
    obs[5] = c * ex + s * ey
    obs[6] = -s * ex + c * ey
    ex = xh[0, 3] - out[TICK_THDREF_X]
    ey = xh[1, 3] - out[TICK_THDREF_Y]
    obs[7] = c * ex + s * ey
    obs[8] = -s * ex + c * ey
    ex = out[TICK_U_PX] - out[TICK_RZMP_X]
    ey = out[TICK_U_PY] - out[TICK_RZMP_Y]
    obs[9] = c * ex + s * ey
    obs[10] = -s * ex + c * ey
    ex = out[TICK_U_AX]
    ey = out[TICK_U_AY]
    obs[11] = c * ex + s * ey
    obs[12] = -s * ex + c * ey
    obs[13] = ef[EF_Z0_EFF] - cf[CF_Z0]
    sp = TWO_PI * (ef[EF_PHASE_TIMER] - cf[CF_DT]) / cf[CF_STEP_TIME]
    obs[14] = math.sin(sp)
    obs[15] = math.cos(sp)


@jit_kernel
def _normalize_obs(obs, zobs, norm_count, norm_mean, norm_m2, update):
    n_dim = obs.shape[0]
    if update == 1:
        norm_count[0] += 1.0
        n = norm_count[0]
        for j in range(n_dim):
            delta = obs[j] - norm_mean[j]
            norm_mean[j] += delta / n
            norm_m2[j] += delta * (obs[j] - norm_mean[j])
    n = norm_count[0]
    if n < 1.0:
        n = 1.0
    for j in range(n_dim):
        std = math.sqrt(norm_m2[j] / n + 1e-8)
        z = (obs[j] - norm_mean[j]) / std
        zobs[j] = min(max(z, -10.0), 10.0)


@jit_kernel
def episode_kernel(n_ticks, cf, ef, ei, Ad_c, Bd_c, K, pf, Ad_p, Bd_p,
                   Xp, xh, Pcov, kal_Q, kal_R, Kf, kal_fixed,
                   sched, pushes, noise,
                   use_policy, stochastic, theta, hidden, act_noise,
                   norm_count, norm_mean, norm_m2, norm_update,
                   tp, turn_rates, task_state, alive_bonus,
                   trace, record_trace, rl_obs, rl_act, rl_logp, rl_rew,
                   rl_val, rl_done, record_rl, tick_out):
    """Run up to n_ticks of the closed loop from the current packed state.

    Returns (ticks_done, status, bootstrap_value). All engine, plant and
    estimator state is mutated in place so the episode can resume across
    calls.
    """
    dt = cf[CF_DT]
    last_step = ei[EI_STEP_INDEX]
    status = RUNNING
    done_ticks = 0
    obs = np.empty(OBS_DIM)
    zobs = np.empty(OBS_DIM)
    u = np.empty((2, 2))
    y = np.empty(2 * 4)

    for k in range(n_ticks):
        t_now = ef[EF_T]

        # -- measurement and filter update -----------------------------------
        for axis in range(2):
            for j in range(4):
                y[4 * axis + j] = Xp[axis, j] + noise[k, 4 * axis + j]
        for axis in range(2):
            y_ax = y[4 * axis:4 * axis + 4].copy()
            if kal_fixed == 1:
                innov = y_ax - xh[axis]
                xh[axis, :] = xh[axis] + Kf @ innov
            else:
                x_new, P_new = kalman_update_kernel(xh[axis],
                                                    Pcov[axis], y_ax, kal_R)
                xh[axis, :] = x_new
                Pcov[axis, :, :] = P_new

        # -- command source ---------------------------------------------------
        if tp[TP_ENABLE] > 0.0:
            px = Xp[0, 0]
            py = Xp[1, 0]
            half = tp[TP_HALF]
            inside = abs(px) <= half and abs(py) <= half
            if task_state[TS_TURNING] > 0.0:
                to_center = math.atan2(-py, -px)
                if abs(_wrap_pi(to_center - ef[EF_HEADING])) < tp[TP_FACING_TOL]:
                    task_state[TS_TURNING] = 0.0
                    task_state[TS_RATE] = 0.0
            elif not inside:
                to_center = math.atan2(-py, -px)
                sign = 1.0 if _wrap_pi(to_center - ef[EF_HEADING]) >= 0.0 else -1.0
                task_state[TS_TURNING] = 1.0
                task_state[TS_RATE] = sign * turn_rates[k]
            ef[EF_CMDR_X] = tp[TP_FORWARD_X]
            ef[EF_CMDR_Y] = 0.0
            ef[EF_CMDR_A] = task_state[TS_RATE]
        else:
            m = sched.shape[0]
            for si in range(m):
                if t_now >= sched[si, 0] - 1e-9:
                    ef[EF_CMDR_X] = sched[si, 1]
                    ef[EF_CMDR_Y] = sched[si, 2]
                    ef[EF_CMDR_A] = sched[si, 3]

        # -- engine tick -------------------------------------------------------
        engine_tick_kernel(cf, ef, ei, Ad_c, Bd_c, K, xh, tick_out)
        if ei[EI_STEP_INDEX] != last_step:
            last_step = ei[EI_STEP_INDEX]
            _refresh_plant(pf, Ad_p, Bd_p, ef[EF_ZC_STEP], dt)

        u[0, 0] = tick_out[TICK_U_PX]
        u[0, 1] = tick_out[TICK_U_AX]
        u[1, 0] = tick_out[TICK_U_PY]
        u[1, 1] = tick_out[TICK_U_AY]

        # -- residual policy ---------------------------------------------------
        res_dz = 0.0
        res_x = 0.0
        res_y = 0.0
        if use_policy == 1:
            _build_obs(obs, cf, ef, tick_out, xh)
            _normalize_obs(obs, zobs, norm_count, norm_mean, norm_m2,
                           norm_update)
            mean, value = mlp_forward_single(theta, zobs, OBS_DIM, hidden,
                                             ACT_DIM)
            log_std = log_std_of(theta, OBS_DIM, hidden, ACT_DIM)
            act = np.empty(ACT_DIM)
            logp = -0.5 * ACT_DIM * LOG2PI
            for j in range(ACT_DIM):
                if stochastic == 1:
                    eps_j = act_noise[k, j]
                    act[j] = mean[j] + math.exp(log_std[j]) * eps_j
                    logp -= 0.5 * eps_j * eps_j + log_std[j]
                else:
                    act[j] = mean[j]
                    logp -= log_std[j]
            # heading-frame residuals scaled to engineering units
            c = math.cos(ef[EF_HEADING])
            s = math.sin(ef[EF_HEADING])
            res_dz = act[0] * cf[CF_RES_DZ_MAX]
            a_fwd = act[1] * cf[CF_RES_DDTH_MAX]
            a_lat = act[2] * cf[CF_RES_DDTH_MAX]
            res_x = c * a_fwd - s * a_lat
            res_y = s * a_fwd + c * a_lat
            if record_rl == 1:
                for j in range(OBS_DIM):
                    rl_obs[k, j] = zobs[j]
                for j in range(ACT_DIM):
                    rl_act[k, j] = act[j]
                rl_logp[k] = logp
                rl_val[k] = value
        dz = apply_residual_kernel(u, res_dz, res_x, res_y,
                                   cf[CF_RES_DDTH_MAX], cf[CF_U2_MAX],
                                   cf[CF_RES_DZ_MAX])
        if use_policy == 1:
            ef[EF_PENDING_DZ] = dz

        # -- plant step, pushes, fall detection --------------------------------
        for axis in range(2):
            Xp[axis, :] = step_kernel(Ad_p, Bd_p, Xp[axis], u[axis])
        g_tick = ei[EI_TICKS] - 1
        for pi in range(pushes.shape[0]):
            if int(pushes[pi, 0]) == g_tick:
                Xp[int(pushes[pi, 1]), 1] += pushes[pi, 2]

        phase = ei[EI_PHASE]
        if phase == PHASE_SS or phase == PHASE_DS:
            anchor_x = ef[EF_FCUR_X]
            anchor_y = ef[EF_FCUR_Y]
        else:
            anchor_x = ef[EF_STAND_X]
            anchor_y = ef[EF_STAND_Y]
        status = fall_check_kernel(Xp, pf, anchor_x, anchor_y)

        # -- reward ------------------------------------------------------------
        com_x = Xp[0, 0]
        com_y = Xp[1, 0]
        vx = com_x - task_state[TS_PREV_X]
        vy = com_y - task_state[TS_PREV_Y]
        task_state[TS_PREV_X] = com_x
        task_state[TS_PREV_Y] = com_y
        fwd = vx * math.cos(ef[EF_HEADING]) + vy * math.sin(ef[EF_HEADING])
        reward = max(fwd, 0.0) + alive_bonus

        # -- estimator prediction with the applied input ------------------------
        for axis in range(2):
            x_pred, P_pred = kalman_predict_kernel(xh[axis], Pcov[axis],
                                                   Ad_c, Bd_c,
                                                   u[axis], kal_Q)
            xh[axis, :] = x_pred
            if kal_fixed == 0:
                Pcov[axis, :, :] = P_pred

        # -- recording -----------------------------------------------------------
        if record_rl == 1:
            rl_rew[k] = reward
            rl_done[k] = 1.0 if status != RUNNING else 0.0
        if record_trace == 1:
            trace[k, 0] = t_now
            trace[k, 1] = tick_out[TICK_PHASE]
            trace[k, 2] = ef[EF_CMDF_X]
            trace[k, 3] = ef[EF_CMDF_Y]
            trace[k, 4] = ef[EF_CMDF_A]
            trace[k, 5] = tick_out[TICK_RZMP_X]
            trace[k, 6] = tick_out[TICK_RZMP_Y]
            trace[k, 7] = tick_out[TICK_HIP_X]
            trace[k, 8] = tick_out[TICK_HIP_Y]
            trace[k, 9] = tick_out[TICK_SW_X]
            trace[k, 10] = tick_out[TICK_SW_Y]
            trace[k, 11] = tick_out[TICK_SW_Z]
            trace[k, 12] = tick_out[TICK_ZCOM]
            trace[k, 13] = tick_out[TICK_THETA_REF]
            trace[k, 14] = tick_out[TICK_ARM]
            trace[k, 15] = u[0, 0]
            trace[k, 16] = u[1, 0]
            trace[k, 17] = u[0, 1]
            trace[k, 18] = u[1, 1]
            trace[k, 19] = dz if use_policy == 1 else 0.0
            trace[k, 20] = res_x
            trace[k, 21] = res_y
            trace[k, 22] = tick_out[TICK_EMERG]
            trace[k, 23] = com_x
            trace[k, 24] = com_y
            trace[k, 25] = 1.0 if status == FELL or status == DIVERGED else 0.0

        done_ticks = k + 1
        if status != RUNNING:
            break

    # bootstrap value of the successor state for truncated rollouts
    bootstrap = 0.0
    if use_policy == 1 and record_rl == 1 and status == RUNNING:
        ef2 = ef.copy()
        ei2 = ei.copy()
        Ac2 = Ad_c.copy()
        Bc2 = Bd_c.copy()
        out2 = tick_out.copy()
        engine_tick_kernel(cf, ef2, ei2, Ac2, Bc2, K, xh, out2)
        _build_obs(obs, cf, ef2, out2, xh)
        _normalize_obs(obs, zobs, norm_count, norm_mean, norm_m2, 0)
        _, bootstrap = mlp_forward_single(theta, zobs, OBS_DIM, hidden,
                                          ACT_DIM)

    return done_ticks, status, bootstrap


# ---------------------------------------------------------------------------
# configuration and wrappers
# ---------------------------------------------------------------------------

@dataclass
class PlantConfig:
    """True-plant settings; mismatch factors emulate the reality gap."""

    meas_noise_var: float = 6.25e-4
    dt: float = 0.02
    pushes: list = field(default_factory=list)   # (time s, axis 0|1, dv m/s)
    fall_margin_x: float = 0.35
    fall_margin_y: float = 0.35
    theta_max: float = 0.35
    mismatch_m_to: float = 1.0
    mismatch_l: float = 1.0
    mismatch_z: float = 1.0

    def sampled_gap(self, rng: np.random.Generator,
                    frac: float = 0.1) -> "PlantConfig":
        """Copy with m_to, l and z_c scaled by independent U[1-frac, 1+frac]."""
        f = rng.uniform(1.0 - frac, 1.0 + frac, 3)
        return PlantConfig(meas_noise_var=self.meas_noise_var, dt=self.dt,
                           pushes=list(self.pushes),
                           fall_margin_x=self.fall_margin_x,
                           fall_margin_y=self.fall_margin_y,
                           theta_max=self.theta_max,
                           mismatch_m_to=f[0], mismatch_l=f[1],
                           mismatch_z=f[2])


def build_plant_pack(engine_cfg: EngineConfig, plant_cfg: PlantConfig):
    pf = np.zeros(PF_SIZE)
    pf[PF_M_C] = engine_cfg.m_c
    pf[PF_M_TO] = engine_cfg.m_to * plant_cfg.mismatch_m_to
    pf[PF_L] = engine_cfg.l * plant_cfg.mismatch_l
    pf[PF_Z_FACTOR] = plant_cfg.mismatch_z
    pf[PF_Z_TO] = engine_cfg.z_to
    pf[PF_G] = engine_cfg.g
    pf[PF_FALL_X] = plant_cfg.fall_margin_x
    pf[PF_FALL_Y] = plant_cfg.fall_margin_y
    pf[PF_THETA_MAX] = plant_cfg.theta_max
    return pf


def true_model_params(engine_cfg: EngineConfig, plant_cfg: PlantConfig,
                      z_cmd: float) -> ModelParams:
    return ModelParams(m_c=engine_cfg.m_c,
                       m_to=engine_cfg.m_to * plant_cfg.mismatch_m_to,
                       l=engine_cfg.l * plant_cfg.mismatch_l,
                       z_c=z_cmd * plant_cfg.mismatch_z,
                       z_to=engine_cfg.z_to, g=engine_cfg.g)


def check_fall(state, support_xy, cfg: PlantConfig) -> bool:
    """Capture-hopeless test: COM too far from the support anchor or torso
    beyond the linearization bound (closed boundary)."""
    X = np.asarray(state, dtype=np.float64).reshape(2, 4)
    pf = np.zeros(PF_SIZE)
    pf[PF_FALL_X] = cfg.fall_margin_x
    pf[PF_FALL_Y] = cfg.fall_margin_y
    pf[PF_THETA_MAX] = cfg.theta_max
    return fall_check_kernel(X, pf, float(support_xy[0]),
                             float(support_xy[1])) != RUNNING


@dataclass
class EpisodeResult:
    duration: float
    fell: bool
    displacement: np.ndarray
    mean_speed: float
    trace: np.ndarray
    diverged: bool = False

    def summary(self) -> dict:
        return {"duration_s": self.duration, "fell": bool(self.fell),
                "diverged": bool(self.diverged),
                "delta_x_m": float(self.displacement[0]),
                "delta_y_m": float(self.displacement[1]),
                "mean_speed_m_s": float(self.mean_speed)}


def schedule_array(entries) -> np.ndarray:
    """Command schedule [(t, X, Y, alpha_deg_per_s), ...] -> kernel array."""
    if not entries:
        entries = [(0.0, 0.0, 0.0, 0.0)]
    arr = np.array([[t, x, y, math.radians(a)] for (t, x, y, a) in entries],
                   dtype=np.float64)
    return arr[np.argsort(arr[:, 0], kind="stable")]


class Episode:
    """One resumable closed-loop episode binding an engine to a plant."""

    def __init__(self, engine_cfg: EngineConfig, plant_cfg: PlantConfig,
                 schedule=None, seed=0, kalman: KalmanConfig | None = None,
                 turn_task=None, alive_bonus: float = 0.01,
                 engine: WalkEngine | None = None):
        if abs(engine_cfg.dt - plant_cfg.dt) > 1e-12:
            raise ValueError("engine and plant must share dt")
        self.engine_cfg = engine_cfg
        self.plant_cfg = plant_cfg
        self.engine = engine if engine is not None else WalkEngine(engine_cfg)
        self.kalman = kalman or KalmanConfig.default(
            meas_var=plant_cfg.meas_noise_var if plant_cfg.meas_noise_var > 0
            else 6.25e-4)
        self.sched = schedule if isinstance(schedule, np.ndarray) \
            else schedule_array(schedule)
        self.pf = build_plant_pack(engine_cfg, plant_cfg)
        self.noise_std = math.sqrt(plant_cfg.meas_noise_var)
        self.alive_bonus = alive_bonus
        self.tp = np.zeros(TP_SIZE)
        if turn_task is not None:
            self.tp[TP_ENABLE] = 1.0
            self.tp[TP_HALF] = turn_task.get("square_half_m", 1.0)
            self.tp[TP_FACING_TOL] = turn_task.get("facing_tol_rad",
                                                   math.radians(20.0))
            self.tp[TP_FORWARD_X] = turn_task.get("forward_x_m", 0.04)
        self.turn_lo = math.radians(30.0)
        self.turn_hi = math.radians(60.0)
        if engine_cfg.kalman_fixed_gain:
            self.Kf = steady_state_gain(self.engine.model, self.kalman)
        else:
            self.Kf = np.eye(4)
        self.reset(seed)

    def reset(self, seed=None):
        if seed is not None:
            self.seed_seq = np.random.SeedSequence(seed) \
                if not isinstance(seed, np.random.SeedSequence) else seed
            self.rng = np.random.Generator(np.random.PCG64(self.seed_seq))
        self.engine.reset()
        self.Xp = np.zeros((2, 4))
        self.xh = np.zeros((2, 4))
        self.Pcov = np.stack([self.kalman.P0.copy(), self.kalman.P0.copy()])
        self.Ad_p = np.zeros((4, 4))
        self.Bd_p = np.zeros((4, 2))
        _refresh_plant(self.pf, self.Ad_p, self.Bd_p,
                       self.engine.cf[CF_Z0], self.engine_cfg.dt)
        self.task_state = np.zeros(TS_SIZE)
        self.tick_out = np.zeros(TICK_SIZE)
        self.push_arr = self._pushes_to_ticks(self.plant_cfg.pushes)
        self.total_ticks = 0

    def _pushes_to_ticks(self, pushes):
        if not pushes:
            return np.zeros((0, 3))
        dt = self.engine_cfg.dt
        return np.array([[round(t / dt), float(axis), dv]
                         for (t, axis, dv) in pushes], dtype=np.float64)

    def run_chunk(self, n_ticks: int, policy=None, stochastic=False,
                  norm=None, norm_update=False, record_trace=True,
                  record_rl=False, buffers=None):
        """Advance the loop; returns (ticks, status, bootstrap, trace_rows)."""
        noise = self.rng.normal(0.0, self.noise_std, (n_ticks, 8)) \
            if self.noise_std > 0 else np.zeros((n_ticks, 8))
        use_policy = 1 if policy is not None else 0
        theta = policy.theta if policy is not None else np.zeros(1)
        hidden = policy.hidden if policy is not None else 1
        act_noise = self.rng.normal(0.0, 1.0, (n_ticks, ACT_DIM)) \
            if (policy is not None and stochastic) else np.zeros((1, ACT_DIM))
        if self.tp[TP_ENABLE] > 0:
            turn_rates = self.rng.uniform(self.turn_lo, self.turn_hi, n_ticks)
        else:
            turn_rates = np.zeros(1)
        if norm is None:
            norm_count = np.ones(1)
            norm_mean = np.zeros(OBS_DIM)
            norm_m2 = np.ones(OBS_DIM)
        else:
            norm_count, norm_mean, norm_m2 = norm.count, norm.mean, norm.m2
        trace = np.zeros((n_ticks if record_trace else 1, TRACE_NCOLS))
        if buffers is None:
            if record_rl:
                raise ValueError("record_rl requires transition buffers")
            rl_obs = np.zeros((1, OBS_DIM))
            rl_act = np.zeros((1, ACT_DIM))
            rl_logp = np.zeros(1)
            rl_rew = np.zeros(1)
            rl_val = np.zeros(1)
            rl_done = np.zeros(1)
        else:
            rl_obs, rl_act, rl_logp, rl_rew, rl_val, rl_done = buffers
        e = self.engine
        ticks, status, bootstrap = episode_kernel(
            n_ticks, e.cf, e.ef, e.ei, e.Ad_c, e.Bd_c, e.K, self.pf,
            self.Ad_p, self.Bd_p, self.Xp, self.xh, self.Pcov,
            self.kalman.Q_proc, self.kalman.R_meas, self.Kf,
            1 if self.engine_cfg.kalman_fixed_gain else 0,
            self.sched, self.push_arr, noise,
            use_policy, 1 if stochastic else 0, theta, hidden, act_noise,
            norm_count, norm_mean, norm_m2, 1 if norm_update else 0,
            self.tp, turn_rates, self.task_state, self.alive_bonus,
            trace, 1 if record_trace else 0,
            rl_obs, rl_act, rl_logp, rl_rew, rl_val, rl_done,
            1 if record_rl else 0, self.tick_out)
        self.total_ticks += ticks
        return ticks, status, bootstrap, (trace[:ticks] if record_trace else None)


def run_episode(engine_cfg: EngineConfig, plant_cfg: PlantConfig,
                schedule=None, policy=None, max_time: float = 10.0,
                seed=0, record_trace: bool = True, stochastic: bool = False,
                turn_task=None, engine: WalkEngine | None = None,
                kalman: KalmanConfig | None = None) -> EpisodeResult:
    """Simulate one episode to a fall or the time limit."""
    ep = Episode(engine_cfg, plant_cfg, schedule=schedule, seed=seed,
                 turn_task=turn_task, engine=engine, kalman=kalman)
    n_ticks = int(round(max_time / engine_cfg.dt))
    if n_ticks == 0:
        return EpisodeResult(duration=0.0, fell=False,
                             displacement=np.zeros(2), mean_speed=0.0,
                             trace=np.zeros((0, TRACE_NCOLS)))
    ticks, status, _, trace = ep.run_chunk(
        n_ticks, policy=policy, stochastic=stochastic,
        record_trace=record_trace)
    duration = ticks * engine_cfg.dt
    disp = ep.Xp[:, 0].copy()
    speed = float(np.hypot(disp[0], disp[1]) / duration) if duration > 0 else 0.0
    return EpisodeResult(duration=duration, fell=status != RUNNING,
                         displacement=disp, mean_speed=speed,
                         trace=trace if record_trace else np.zeros((0, TRACE_NCOLS)),
                         diverged=status == DIVERGED)


def write_trace_csv(trace: np.ndarray, path):
    with open(path, "w") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for row in trace:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
