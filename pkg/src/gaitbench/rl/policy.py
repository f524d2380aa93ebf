"""Gaussian MLP policy with a separate value network, trained by hand-rolled
backprop so the whole pipeline stays inside the jittable numpy subset.

Both networks are two tanh hidden layers of 64 units. All parameters live in
one flat float64 vector (policy block first, then value block) which keeps
Adam, serialization and gradient checking trivial.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..backend import jit_kernel

LOG2PI = math.log(2.0 * math.pi)
LOGSTD_MIN, LOGSTD_MAX = -5.0, 2.0


def policy_size(obs_dim: int, hidden: int, act_dim: int) -> int:
    return (obs_dim * hidden + hidden + hidden * hidden + hidden
            + hidden * act_dim + act_dim + act_dim)


def value_size(obs_dim: int, hidden: int) -> int:
    return obs_dim * hidden + hidden + hidden * hidden + hidden + hidden + 1


def param_size(obs_dim: int, hidden: int, act_dim: int) -> int:
    return policy_size(obs_dim, hidden, act_dim) + value_size(obs_dim, hidden)


@jit_kernel
def mlp_forward_single(theta, obs, obs_dim, hidden, act_dim):
    """Mean action and state value for one observation."""
    o, h, a = obs_dim, hidden, act_dim
    i = 0
    W1 = theta[i:i + o * h].reshape(o, h); i += o * h
    b1 = theta[i:i + h]; i += h
    W2 = theta[i:i + h * h].reshape(h, h); i += h * h
    b2 = theta[i:i + h]; i += h
    Wm = theta[i:i + h * a].reshape(h, a); i += h * a
    bm = theta[i:i + a]; i += a
    i += a  # log_std
    V1 = theta[i:i + o * h].reshape(o, h); i += o * h
    c1 = theta[i:i + h]; i += h
    V2 = theta[i:i + h * h].reshape(h, h); i += h * h
    c2 = theta[i:i + h]; i += h
    Vw = theta[i:i + h]; i += h
    vb = theta[i]

    h1 = np.tanh(obs @ W1 + b1)
    h2 = np.tanh(h1 @ W2 + b2)
    mean = h2 @ Wm + bm
    g1 = np.tanh(obs @ V1 + c1)
    g2 = np.tanh(g1 @ V2 + c2)
    value = g2 @ Vw + vb
    return mean, value


@jit_kernel
def log_std_of(theta, obs_dim, hidden, act_dim):
    o, h, a = obs_dim, hidden, act_dim
    i = o * h + h + h * h + h + h * a + a
    ls = theta[i:i + a].copy()
    for j in range(a):
        ls[j] = min(max(ls[j], LOGSTD_MIN), LOGSTD_MAX)
    return ls


@jit_kernel
def gaussian_logp(action, mean, log_std):
    a = action.shape[0]
    lp = -0.5 * a * LOG2PI
    for j in range(a):
        z = (action[j] - mean[j]) / math.exp(log_std[j])
        lp -= 0.5 * z * z + log_std[j]
    return lp


@jit_kernel
def ppo_loss_and_grad(theta, obs, act, logp_old, adv, ret,
                      obs_dim, hidden, act_dim, clip_eps, vf_coef):
    """Minibatch PPO loss (clipped surrogate + vf_coef * value MSE) and its
    gradient with respect to the flat parameter vector.

    Returns (grad, policy_loss, value_loss, clip_fraction, approx_kl).
    """
    o, h, a = obs_dim, hidden, act_dim
    n = obs.shape[0]
    i = 0
    W1 = theta[i:i + o * h].reshape(o, h); i += o * h
    b1 = theta[i:i + h]; i += h
    W2 = theta[i:i + h * h].reshape(h, h); i += h * h
    b2 = theta[i:i + h]; i += h
    Wm = theta[i:i + h * a].reshape(h, a); i += h * a
    bm = theta[i:i + a]; i += a
    ls_raw = theta[i:i + a]; i += a
    V1 = theta[i:i + o * h].reshape(o, h); i += o * h
    c1 = theta[i:i + h]; i += h
    V2 = theta[i:i + h * h].reshape(h, h); i += h * h
    c2 = theta[i:i + h]; i += h
    Vw = theta[i:i + h]; i += h
    vb = theta[i]

    log_std = np.empty(a)
    clipped_ls = np.zeros(a)      # 1 where the clamp is active (zero gradient)
    for j in range(a):
        v = ls_raw[j]
        if v < LOGSTD_MIN:
            log_std[j] = LOGSTD_MIN
            clipped_ls[j] = 1.0
        elif v > LOGSTD_MAX:
            log_std[j] = LOGSTD_MAX
            clipped_ls[j] = 1.0
        else:
            log_std[j] = v
    inv_var = np.exp(-2.0 * log_std)

    # forward
    H1 = np.tanh(obs @ W1 + b1)
    H2 = np.tanh(H1 @ W2 + b2)
    MEAN = H2 @ Wm + bm
    G1 = np.tanh(obs @ V1 + c1)
    G2 = np.tanh(G1 @ V2 + c2)
    VAL = G2 @ Vw + vb

    # per-sample log-probs and clipped surrogate
    dMEAN = np.empty((n, a))
    dlogstd = np.zeros(a)
    pol_loss = 0.0
    val_loss = 0.0
    clip_count = 0.0
    kl_sum = 0.0
    dVAL = np.empty(n)
    for k in range(n):
        lp = -0.5 * a * LOG2PI
        for j in range(a):
            d = act[k, j] - MEAN[k, j]
            lp -= 0.5 * d * d * inv_var[j] + log_std[j]
        ratio = math.exp(lp - logp_old[k])
        surr1 = ratio * adv[k]
        clip_r = min(max(ratio, 1.0 - clip_eps), 1.0 + clip_eps)
        surr2 = clip_r * adv[k]
        if surr1 <= surr2:
            pol_loss -= surr1
            g = -ratio * adv[k] / n      # d(-surr1/n)/dlogp
        else:
            pol_loss -= surr2
            g = 0.0
        if ratio > 1.0 + clip_eps or ratio < 1.0 - clip_eps:
            clip_count += 1.0
        kl_sum += logp_old[k] - lp
        for j in range(a):
            d = act[k, j] - MEAN[k, j]
            # dlogp/dmean = d / sigma^2 ; dlogp/dlogstd = d^2/sigma^2 - 1
            dMEAN[k, j] = g * (d * inv_var[j])
            if clipped_ls[j] == 0.0:
                dlogstd[j] += g * (d * d * inv_var[j] - 1.0)
        e = VAL[k] - ret[k]
        val_loss += e * e
        dVAL[k] = vf_coef * 2.0 * e / n
    pol_loss /= n
    val_loss /= n

    # backprop policy trunk
    dWm = H2.T @ dMEAN
    dbm = dMEAN.sum(axis=0)
    dH2 = dMEAN @ Wm.T
    dZ2 = dH2 * (1.0 - H2 * H2)
    dW2 = H1.T @ dZ2
    db2 = dZ2.sum(axis=0)
    dH1 = dZ2 @ W2.T
    dZ1 = dH1 * (1.0 - H1 * H1)
    dW1 = obs.T @ dZ1
    db1 = dZ1.sum(axis=0)

    # backprop value trunk
    dVw = G2.T @ dVAL
    dvb = dVAL.sum()
    dG2 = np.outer(dVAL, Vw)
    dY2 = dG2 * (1.0 - G2 * G2)
    dV2 = G1.T @ dY2
    dc2 = dY2.sum(axis=0)
    dG1 = dY2 @ V2.T
    dY1 = dG1 * (1.0 - G1 * G1)
    dV1 = obs.T @ dY1
    dc1 = dY1.sum(axis=0)

    grad = np.empty(theta.shape[0])
    i = 0
    grad[i:i + o * h] = dW1.ravel(); i += o * h
    grad[i:i + h] = db1; i += h
    grad[i:i + h * h] = dW2.ravel(); i += h * h
    grad[i:i + h] = db2; i += h
    grad[i:i + h * a] = dWm.ravel(); i += h * a
    grad[i:i + a] = dbm; i += a
    grad[i:i + a] = dlogstd; i += a
    grad[i:i + o * h] = dV1.ravel(); i += o * h
    grad[i:i + h] = dc1; i += h
    grad[i:i + h * h] = dV2.ravel(); i += h * h
    grad[i:i + h] = dc2; i += h
    grad[i:i + h] = dVw; i += h
    grad[i] = dvb

    return (grad, pol_loss, vf_coef * val_loss, clip_count / n, kl_sum / n)


@jit_kernel
def adam_step(theta, grad, m, v, step, lr, beta1, beta2, eps, max_grad_norm):
    gn = math.sqrt(float(np.sum(grad * grad)))
    scale = 1.0
    if max_grad_norm > 0.0 and gn > max_grad_norm:
        scale = max_grad_norm / gn
    b1t = 1.0 - beta1 ** step
    b2t = 1.0 - beta2 ** step
    for i in range(theta.shape[0]):
        g = grad[i] * scale
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        theta[i] -= lr * (m[i] / b1t) / (math.sqrt(v[i] / b2t) + eps)
    return gn


@dataclass
class PolicyNet:
    """Flat-parameter Gaussian policy + value function pair."""

    obs_dim: int
    act_dim: int
    hidden: int = 64
    theta: np.ndarray = None

    def __post_init__(self):
        if self.theta is None:
            raise ValueError("use PolicyNet.init or PolicyNet.from_dict")
        expected = param_size(self.obs_dim, self.hidden, self.act_dim)
        if self.theta.shape != (expected,):
            raise ValueError("parameter vector has the wrong size")

    @staticmethod
    def init(rng: np.random.Generator, obs_dim: int, act_dim: int,
             hidden: int = 64, init_log_std: float = -0.5) -> "PolicyNet":
        """Scaled-normal hidden layers; near-zero action head so the fresh
        policy is a no-op residual on top of the analytical controller."""
        o, h, a = obs_dim, hidden, act_dim
        parts = [
            rng.normal(0.0, 1.0 / math.sqrt(o), o * h), np.zeros(h),
            rng.normal(0.0, 1.0 / math.sqrt(h), h * h), np.zeros(h),
            rng.normal(0.0, 0.01 / math.sqrt(h), h * a), np.zeros(a),
            np.full(a, init_log_std),
            rng.normal(0.0, 1.0 / math.sqrt(o), o * h), np.zeros(h),
            rng.normal(0.0, 1.0 / math.sqrt(h), h * h), np.zeros(h),
            rng.normal(0.0, 1.0 / math.sqrt(h), h), np.zeros(1),
        ]
        theta = np.concatenate(parts).astype(np.float64)
        return PolicyNet(obs_dim=o, act_dim=a, hidden=h, theta=theta)

    def forward(self, obs: np.ndarray):
        """(mean, log_std, value) for a single observation."""
        obs = np.ascontiguousarray(obs, dtype=np.float64)
        if obs.shape != (self.obs_dim,):
            raise ValueError("observation dimension mismatch")
        mean, value = mlp_forward_single(self.theta, obs, self.obs_dim,
                                         self.hidden, self.act_dim)
        log_std = log_std_of(self.theta, self.obs_dim, self.hidden,
                             self.act_dim)
        return mean, log_std, float(value)

    def to_dict(self) -> dict:
        return {"obs_dim": self.obs_dim, "act_dim": self.act_dim,
                "hidden": self.hidden, "theta": self.theta.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "PolicyNet":
        return PolicyNet(obs_dim=int(d["obs_dim"]), act_dim=int(d["act_dim"]),
                         hidden=int(d["hidden"]),
                         theta=np.array(d["theta"], dtype=np.float64))

    def save(self, path, extra: dict | None = None):
        payload = self.to_dict()
        if extra:
            payload.update(extra)
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @staticmethod
    def load(path) -> tuple["PolicyNet", dict]:
        with open(path) as fh:
            payload = json.load(fh)
        return PolicyNet.from_dict(payload), payload


@dataclass
class RunningNorm:
    """Welford running mean/variance used to normalize observations."""

    dim: int
    count: np.ndarray = None
    mean: np.ndarray = None
    m2: np.ndarray = None

    def __post_init__(self):
        if self.count is None:
            self.count = np.zeros(1)
            self.mean = np.zeros(self.dim)
            self.m2 = np.zeros(self.dim)

    def normalize(self, obs):
        n = max(self.count[0], 1.0)
        std = np.sqrt(self.m2 / n + 1e-8)
        return np.clip((obs - self.mean) / std, -10.0, 10.0)

    def to_dict(self):
        return {"count": self.count.tolist(), "mean": self.mean.tolist(),
                "m2": self.m2.tolist()}

    @staticmethod
    def from_dict(d):
        rn = RunningNorm(dim=len(d["mean"]))
        rn.count = np.array(d["count"], dtype=np.float64)
        rn.mean = np.array(d["mean"], dtype=np.float64)
        rn.m2 = np.array(d["m2"], dtype=np.float64)
        return rn
