"""Discrete Kalman filtering for the walking control loop.

The plant is observed through a full-state measurement (C = I) corrupted by
Gaussian noise; the filter supplies the estimate consumed by the LQG law.
A first-order lag filter is also provided for velocity-from-position
smoothing and command shaping.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .backend import jit_kernel
from .dynamics import DiscreteSS


@jit_kernel
def _cholesky_solve(S, B):
    """X = S^-1 B for symmetric positive-definite S (hand-rolled so the
    per-tick filter avoids LAPACK dispatch overhead on tiny matrices)."""
    n = S.shape[0]
    m = B.shape[1]
    L = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            acc = S[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            if i == j:
                if acc <= 0.0:
                    raise ValueError("estimator-degenerate: singular innovation covariance")
                L[i, i] = math.sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
    X = np.empty((n, m))
    for c in range(m):
        # forward substitution L z = b
        for i in range(n):
            acc = B[i, c]
            for k in range(i):
                acc -= L[i, k] * X[k, c]
            X[i, c] = acc / L[i, i]
        # back substitution L^T x = z
        for i in range(n - 1, -1, -1):
            acc = X[i, c]
            for k in range(i + 1, n):
                acc -= L[k, i] * X[k, c]
            X[i, c] = acc / L[i, i]
    return X


@jit_kernel
def kalman_predict_kernel(x_hat, P, A_d, B_d, u, Q):
    n = x_hat.shape[0]
    m = u.shape[0]
    x_pred = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += A_d[i, j] * x_hat[j]
        for j in range(m):
            acc += B_d[i, j] * u[j]
        x_pred[i] = acc
    AP = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(n):
                acc += A_d[i, k] * P[k, j]
            AP[i, j] = acc
    P_pred = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            acc = Q[i, j]
            for k in range(n):
                acc += AP[i, k] * A_d[j, k]
            P_pred[i, j] = acc
    return x_pred, P_pred


@jit_kernel
def kalman_update_kernel(x_hat, P, y, R):
    """Measurement update with C = I; Joseph form keeps P symmetric PSD."""
    n = x_hat.shape[0]
    S = P + R
    K = _cholesky_solve(S, P).T.copy()   # K = P S^-1 (P, S symmetric)
    x_new = np.empty(n)
    for i in range(n):
        acc = x_hat[i]
        for j in range(n):
            acc += K[i, j] * (y[j] - x_hat[j])
        x_new[i] = acc
    M = np.eye(n) - K
    MP = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(n):
                acc += M[i, k] * P[k, j]
            MP[i, j] = acc
    KR = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(n):
                acc += K[i, k] * R[k, j]
            KR[i, j] = acc
    P_new = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(n):
                acc += MP[i, k] * M[j, k] + KR[i, k] * K[j, k]
            P_new[i, j] = acc
    for i in range(n):
        for j in range(i):
            v = 0.5 * (P_new[i, j] + P_new[j, i])
            P_new[i, j] = v
            P_new[j, i] = v
    return x_new, P_new


@jit_kernel
def lag_filter_kernel(prev, value, dt, tau):
    return prev + (dt / tau) * (value - prev)


def _check_psd(M, name, strict=False):
    if not np.allclose(M, M.T, atol=1e-10):
        raise ValueError(f"{name} must be symmetric")
    w = np.linalg.eigvalsh(M)
    floor = 1e-12 if strict else -1e-10
    if w.min() < floor:
        kind = "positive-definite" if strict else "positive-semidefinite"
        raise ValueError(f"{name} must be {kind}")


@dataclass
class KalmanConfig:
    Q_proc: np.ndarray
    R_meas: np.ndarray
    P0: np.ndarray
    fixed_gain: bool = False    # use the steady-state gain instead of propagating P

    def __post_init__(self):
        self.Q_proc = np.asarray(self.Q_proc, dtype=np.float64)
        self.R_meas = np.asarray(self.R_meas, dtype=np.float64)
        self.P0 = np.asarray(self.P0, dtype=np.float64)
        _check_psd(self.Q_proc, "Q_proc")
        _check_psd(self.R_meas, "R_meas", strict=True)
        _check_psd(self.P0, "P0")

    @staticmethod
    def default(n: int = 4, meas_var: float = 6.25e-4,
                proc_var: float = 1e-6) -> "KalmanConfig":
        return KalmanConfig(Q_proc=proc_var * np.eye(n),
                            R_meas=meas_var * np.eye(n),
                            P0=meas_var * np.eye(n))


@dataclass
class EstimatorState:
    x_hat: np.ndarray
    P: np.ndarray

    def validate(self):
        if not np.allclose(self.P, self.P.T, atol=1e-9):
            raise ValueError("covariance lost symmetry")
        if np.linalg.eigvalsh(self.P).min() < -1e-10:
            raise ValueError("covariance lost positive-semidefiniteness")


def kalman_predict(est: EstimatorState, ss: DiscreteSS, u,
                   cfg: KalmanConfig) -> EstimatorState:
    """Time update x <- A_d x + B_d u, P <- A_d P A_d' + Q."""
    u = np.asarray(u, dtype=np.float64)
    x, P = kalman_predict_kernel(est.x_hat, est.P, ss.A_d, ss.B_d, u, cfg.Q_proc)
    return EstimatorState(x_hat=x, P=P)


def kalman_update(est: EstimatorState, y, ss: DiscreteSS,
                  cfg: KalmanConfig) -> EstimatorState:
    """Measurement update against a full-state observation."""
    y = np.asarray(y, dtype=np.float64)
    S = est.P + cfg.R_meas
    if abs(np.linalg.det(S)) < 1e-300:
        raise ValueError("estimator-degenerate: singular innovation covariance")
    x, P = kalman_update_kernel(est.x_hat, est.P, y, cfg.R_meas)
    return EstimatorState(x_hat=x, P=P)


def lag_filter(prev: float, value: float, dt: float, tau: float) -> float:
    """One Euler step of a first-order lag toward `value`."""
    if tau <= 0 or dt <= 0:
        raise ValueError("tau and dt must be positive")
    return lag_filter_kernel(prev, value, dt, tau)


def steady_state_gain(ss: DiscreteSS, cfg: KalmanConfig,
                      tol: float = 1e-12, max_iter: int = 100000) -> np.ndarray:
    """Fixed filter gain: iterate the covariance recursion to its fixed point."""
    P = cfg.P0.copy()
    n = P.shape[0]
    for _ in range(max_iter):
        S = P + cfg.R_meas
        K = np.linalg.solve(S.T, P.T).T
        M = np.eye(n) - K
        P_upd = M @ P @ M.T + K @ cfg.R_meas @ K.T
        P_next = ss.A_d @ P_upd @ ss.A_d.T + cfg.Q_proc
        if np.max(np.abs(P_next - P)) <= tol:
            S = P_next + cfg.R_meas
            return np.linalg.solve(S.T, P_next.T).T
        P = P_next
    raise RuntimeError("estimator-degenerate: covariance iteration did not converge")
