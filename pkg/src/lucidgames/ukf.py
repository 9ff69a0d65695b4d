"""Unscented Kalman filter over the other agents' objective parameters.

The estimated quantity is the flat parameter vector of all non-robot agents.
Its process model is a random walk with small Gaussian noise; the measurement
model maps a candidate parameter vector and the previous joint state to a
prediction of the current joint state by solving the trajectory game the
agents faced and stepping the dynamics once. The filter itself is the
standard sigma-point scheme and is agnostic to where the measurement function
comes from, which lets tests swap in closed-form models.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class UkfConfig:
    alpha: float = 1.0
    beta: float = 2.0
    kappa: float = 0.0
    process_noise: np.ndarray = field(default_factory=lambda: np.eye(1) * 1e-4)
    measurement_noise: np.ndarray = field(default_factory=lambda: np.eye(1) * 1e-4)

    def __post_init__(self):
        object.__setattr__(self, "process_noise", np.asarray(self.process_noise, dtype=float))
        object.__setattr__(self, "measurement_noise", np.asarray(self.measurement_noise, dtype=float))
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @staticmethod
    def diagonal(dim_theta: int, dim_state: int, process_var: float = 1e-4,
                 measurement_std: float = 0.01, alpha: float = 1.0,
                 beta: float = 2.0, kappa: float = 0.0) -> "UkfConfig":
        return UkfConfig(alpha=alpha, beta=beta, kappa=kappa,
                         process_noise=np.eye(dim_theta) * process_var,
                         measurement_noise=np.eye(dim_state) * measurement_std ** 2)


@dataclass
class Belief:
    """Gaussian over the parameter vector."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError("covariance shape does not match mean")

    def copy(self) -> "Belief":
        return Belief(self.mean.copy(), self.cov.copy())


@dataclass(frozen=True)
class SigmaPointSet:
    points: np.ndarray        # (2q+1, q)
    mean_weights: np.ndarray  # (2q+1,)
    cov_weights: np.ndarray   # (2q+1,)


@dataclass
class UpdateDiagnostics:
    innovation_norm: float = 0.0
    cov_trace: float = 0.0
    skipped: bool = False
    sigma_converged: list[bool] = field(default_factory=list)


def clamp_psd(cov: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Symmetrize and clip eigenvalues so the matrix is usable as a covariance."""
    sym = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(sym)
    w = np.maximum(w, floor)
    out = (V * w) @ V.T
    return 0.5 * (out + out.T)


def sigma_points(mean: np.ndarray, cov: np.ndarray, cfg: UkfConfig) -> SigmaPointSet:
    """Deterministic samples of a Gaussian and their reconstruction weights.

    Uses the scaled scheme with spread lambda = alpha^2 (q + kappa) - q and
    the Cholesky factor's columns as the matrix square root. Weights for the
    symmetric points are 1 / (2 (q + lambda)) so the mean weights sum to one.
    """
    mean = np.asarray(mean, dtype=float)
    q = mean.size
    lam = cfg.alpha ** 2 * (q + cfg.kappa) - q
    scale = q + lam
    if scale <= 0:
        raise ValueError("q + lambda must be positive")

    spread = clamp_psd(np.asarray(cov, dtype=float)) * scale
    jitter = 0.0
    for _ in range(6):
        try:
            L = np.linalg.cholesky(spread + jitter * np.eye(q))
            break
        except np.linalg.LinAlgError:
            jitter = max(jitter * 10.0, 1e-12 * max(1.0, float(np.trace(spread)) / q))
    else:
        raise np.linalg.LinAlgError("covariance not factorizable after PSD clamping")

    points = np.empty((2 * q + 1, q))
    points[0] = mean
    points[1:q + 1] = mean + L.T
    points[q + 1:] = mean - L.T

    mean_w = np.full(2 * q + 1, 1.0 / (2.0 * scale))
    cov_w = mean_w.copy()
    mean_w[0] = lam / scale
    cov_w[0] = lam / scale + (1.0 - cfg.alpha ** 2 + cfg.beta)
    return SigmaPointSet(points, mean_w, cov_w)


def estimator_update(belief: Belief, x_prev: np.ndarray, x_curr: np.ndarray,
                     measure, cfg: UkfConfig, workers: int = 1):
    """One filter update from the observed transition x_prev -> x_curr.

    `measure(theta)` returns the noiseless predicted current state for one
    candidate parameter vector (it closes over x_prev and whatever planning
    context is needed); it may also return (prediction, converged_flag).
    Returns (Belief, UpdateDiagnostics). A singular innovation covariance is
    retried with jitter once, then the update is skipped and only the
    prediction step is applied.
    """
    x_curr = np.asarray(x_curr, dtype=float)
    mu_bar = belief.mean.copy()
    sigma_bar = belief.cov + cfg.process_noise
    pts = sigma_points(mu_bar, sigma_bar, cfg)

    raw = _map_sigma(measure, pts.points, workers)
    preds = np.empty((len(raw), x_curr.size))
    flags = []
    for i, item in enumerate(raw):
        if isinstance(item, tuple):
            preds[i] = np.asarray(item[0], dtype=float)
            flags.append(bool(item[1]))
        else:
            preds[i] = np.asarray(item, dtype=float)
            flags.append(True)

    x_bar = pts.mean_weights @ preds
    dz = preds - x_bar
    dth = pts.points - mu_bar
    P = np.einsum("i,ij,ik->jk", pts.cov_weights, dz, dz) + cfg.measurement_noise
    S = np.einsum("i,ij,ik->jk", pts.cov_weights, dth, dz)

    diag = UpdateDiagnostics(sigma_converged=flags)
    K = _solve_gain(S, P)
    if K is None:
        K = _solve_gain(S, P + 1e-9 * np.eye(P.shape[0]))
    if K is None:
        diag.skipped = True
        out = Belief(mu_bar, clamp_psd(sigma_bar))
        diag.cov_trace = float(np.trace(out.cov))
        return out, diag

    innovation = x_curr - x_bar
    mu_next = mu_bar + K @ innovation
    sigma_next = clamp_psd(sigma_bar - K @ P @ K.T)
    diag.innovation_norm = float(np.linalg.norm(innovation))
    diag.cov_trace = float(np.trace(sigma_next))
    return Belief(mu_next, sigma_next), diag


def _solve_gain(S: np.ndarray, P: np.ndarray):
    """Kalman gain K = S P^-1, or None if P is not invertible."""
    try:
        K = np.linalg.solve(P.T, S.T).T
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(K)):
        return None
    return K


def _map_sigma(measure, points: np.ndarray, workers: int):
    if workers <= 1:
        return [measure(p) for p in points]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(measure, points))
