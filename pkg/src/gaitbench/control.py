"""Discrete LQR synthesis and the LQG tracking law.

The regulator acts on an augmented state [x_err; x_i] where x_i integrates
selected tracking errors to remove steady-state offsets. Gains are solved
offline from the discrete algebraic Riccati equation and held fixed for a
run; there is no online optimization or gain scheduling.
"""

from dataclasses import dataclass

import numpy as np

from .backend import jit_kernel
from .dynamics import DiscreteSS


@jit_kernel
def lqg_law_kernel(K, x_err, x_i):
    n = x_err.shape[0]
    m = x_i.shape[0]
    nu = K.shape[0]
    u = np.empty(nu)
    for i in range(nu):
        acc = 0.0
        for j in range(n):
            acc += K[i, j] * x_err[j]
        for j in range(m):
            acc += K[i, n + j] * x_i[j]
        u[i] = -acc
    return u


@dataclass
class LqrWeights:
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=np.float64)
        self.R = np.asarray(self.R, dtype=np.float64)
        if not np.allclose(self.Q, self.Q.T) or np.linalg.eigvalsh(self.Q).min() < -1e-10:
            raise ValueError("Q must be symmetric positive-semidefinite")
        if not np.allclose(self.R, self.R.T) or np.linalg.eigvalsh(self.R).min() <= 0:
            raise ValueError("R must be symmetric positive-definite")

    @staticmethod
    def default(n_int: int = 2) -> "LqrWeights":
        # state cost on [x_c, xd_c, theta, thetad] plus integral channels
        q = np.diag([400.0, 10.0, 50.0, 1.0] + [100.0] * n_int)
        return LqrWeights(Q=q, R=np.diag([1.0, 1.0]))


@dataclass
class LqrGain:
    K: np.ndarray
    P: np.ndarray
    iterations: int = 0

    def to_dict(self) -> dict:
        return {"K": self.K.tolist(), "P": self.P.tolist(),
                "iterations": self.iterations}

    @staticmethod
    def from_dict(d: dict) -> "LqrGain":
        return LqrGain(K=np.array(d["K"]), P=np.array(d["P"]),
                       iterations=int(d.get("iterations", 0)))


def augment_integrator(ss: DiscreteSS, tracked) -> DiscreteSS:
    """Extend a discrete system with error integrators on `tracked` outputs.

    x_i(k+1) = x_i(k) + dt * (y_tracked(k) - r_tracked(k)); in regulator form
    the reference is folded into the error coordinates, so the augmented
    system integrates the selected state components.
    """
    tracked = sorted(tracked)
    n = ss.A_d.shape[0]
    m = ss.B_d.shape[1]
    k = len(tracked)
    if any(i < 0 or i >= n for i in tracked):
        raise ValueError("tracked index out of range")
    if k == 0:
        return DiscreteSS(ss.A_d.copy(), ss.B_d.copy(), ss.C_d.copy(), ss.dt)
    A = np.zeros((n + k, n + k))
    A[:n, :n] = ss.A_d
    A[n:, n:] = np.eye(k)
    for row, idx in enumerate(tracked):
        A[n + row, idx] = ss.dt
    B = np.zeros((n + k, m))
    B[:n, :] = ss.B_d
    return DiscreteSS(A_d=A, B_d=B, C_d=np.eye(n + k), dt=ss.dt)


def dare_residual(A, B, Q, R, P) -> float:
    """Infinity norm of the DARE fixed-point defect for a candidate P."""
    G = R + B.T @ P @ B
    rhs = A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(G, B.T @ P @ A) + Q
    return float(np.max(np.abs(P - rhs)))


DARE_OK, DARE_DIVERGED, DARE_DEGENERATE = 0, 1, 2


@jit_kernel
def _dare_iterate_kernel(A, B, Q, R, tol, max_iter):
    P = Q.copy()
    for it in range(1, max_iter + 1):
        G = R + B.T @ P @ B
        if abs(np.linalg.det(G)) < 1e-300:
            return P, it, DARE_DEGENERATE
        APB = A.T @ P @ B
        P_next = A.T @ P @ A - APB @ np.linalg.solve(G, APB.T) + Q
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)) or np.max(np.abs(P_next)) > 1e14:
            return P_next, it, DARE_DIVERGED
        if np.max(np.abs(P_next - P)) <= tol:
            return P_next, it, DARE_OK
        P = P_next
    return P, max_iter, DARE_DIVERGED


@jit_kernel
def _dare_doubling_kernel(A, B, Q, R, tol, max_iter):
    """Structured doubling iteration; quadratic convergence."""
    Ak = A.copy()
    G = B @ np.linalg.solve(R, B.T)
    H = Q.copy()
    n = A.shape[0]
    for it in range(1, max_iter + 1):
        W = np.eye(n) + G @ H
        if abs(np.linalg.det(W)) < 1e-300:
            return H, it, DARE_DEGENERATE
        Winv_A = np.linalg.solve(W, Ak)
        Winv_G = np.linalg.solve(W, G)
        H_next = H + Ak.T @ H @ Winv_A
        G = G + Ak @ Winv_G @ Ak.T
        A_next = Ak @ Winv_A
        if not np.all(np.isfinite(H_next)) or np.max(np.abs(H_next)) > 1e14:
            return H_next, it, DARE_DIVERGED
        if np.max(np.abs(H_next - H)) <= tol:
            return 0.5 * (H_next + H_next.T), it, DARE_OK
        H = H_next
        Ak = A_next
    return H, max_iter, DARE_DIVERGED


def _dare_solve_core(A, B, Q, R, tol, max_iter, method):
    kern = _dare_doubling_kernel if method == "doubling" else _dare_iterate_kernel
    P, it, status = kern(np.ascontiguousarray(A), np.ascontiguousarray(B),
                         np.ascontiguousarray(Q), np.ascontiguousarray(R),
                         tol, max_iter)
    if status == DARE_DEGENERATE:
        raise ValueError("riccati-degenerate: singular pivot")
    if status == DARE_DIVERGED:
        raise ValueError("riccati-diverged: no convergence within max_iter")
    return P, it


def solve_dare(A, B, Q, R, tol: float = 1e-10, max_iter: int = 100000,
               method: str = "iteration") -> LqrGain:
    """Solve the discrete algebraic Riccati equation and form the LQR gain.

    method="iteration" runs the plain fixed-point recursion from P=Q;
    method="doubling" is the fast structured alternative. Both verify the
    returned P directly through the DARE residual.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.asarray(B, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    if method not in ("iteration", "doubling"):
        raise ValueError(f"unknown DARE method: {method}")
    P, it = _dare_solve_core(A, B, Q, R, tol, max_iter, method)
    G = R + B.T @ P @ B
    K = np.linalg.solve(G, B.T @ P @ A)
    eigs = np.linalg.eigvals(A - B @ K)
    if np.max(np.abs(eigs)) >= 1.0:
        raise ValueError("riccati-diverged: closed loop not stable")
    return LqrGain(K=K, P=P, iterations=it)


def lqg_law(x_tilde, x_ref, x_i, gain: LqrGain):
    """Feedback u = -K [x_tilde - x_ref; x_i]."""
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    x_ref = np.asarray(x_ref, dtype=np.float64)
    x_i = np.atleast_1d(np.asarray(x_i, dtype=np.float64))
    return lqg_law_kernel(gain.K, x_tilde - x_ref, x_i)


def synthesize_tracking_gain(ss: DiscreteSS, weights: LqrWeights | None = None,
                             tracked=(0, 2), tol: float = 1e-10,
                             max_iter: int = 100000,
                             method: str = "iteration") -> LqrGain:
    """Gain over [x_err; integral of tracked errors] for one axis model."""
    aug = augment_integrator(ss, tracked)
    if weights is None:
        weights = LqrWeights.default(n_int=len(tuple(tracked)))
    return solve_dare(aug.A_d, aug.B_d, weights.Q, weights.R,
                      tol=tol, max_iter=max_iter, method=method)
