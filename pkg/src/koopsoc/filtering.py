"""Extended Kalman filter and its measurement-free (CE) information-state map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import FilterError
from .model import SystemModel

JITTER = 1e-12


@dataclass(frozen=True)
class Belief:
    """Prior moments ``(x_{k|k-1}, Sigma_{k|k-1})`` produced by the eKF."""

    mean: np.ndarray
    cov: np.ndarray

    def is_valid(self, tol: float = 1e-10) -> bool:
        return _is_valid_cov(self.cov, tol)


@dataclass(frozen=True)
class InfoState:
    """CE surrogate ``(x^p_k, Sigma^p_{k|k-1})``; deterministic given the inputs."""

    mean: np.ndarray
    cov: np.ndarray

    def is_valid(self, tol: float = 1e-10) -> bool:
        return _is_valid_cov(self.cov, tol)


def _is_valid_cov(cov, tol):
    if np.linalg.norm(cov - cov.T) > tol:
        return False
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return False
    return True


def symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def ensure_pd(cov: np.ndarray) -> np.ndarray:
    """Symmetrize; if Cholesky fails, retry once with ``1e-12 I`` jitter."""
    cov = symmetrize(cov)
    try:
        np.linalg.cholesky(cov)
        return cov
    except np.linalg.LinAlgError:
        pass
    cov = cov + JITTER * np.eye(cov.shape[0])
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise FilterError("updated covariance is not positive definite") from exc
    return cov


def _gain(model: SystemModel, mean, cov, u):
    H = np.atleast_2d(model.jac_h(mean, u))
    HS = H @ cov
    S = HS @ H.T + model.measurement_noise.cov
    try:
        factor = scipy.linalg.cho_factor(S)
        gain = scipy.linalg.cho_solve(factor, HS).T
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise FilterError("innovation covariance is not positive definite") from exc
    return gain, H


def kalman_gain(model: SystemModel, b: Belief, u) -> np.ndarray:
    """``Sigma H^T (H Sigma H^T + Sigma_v)^{-1}`` via a Cholesky solve, with H at ``b.mean``."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return _gain(model, b.mean, b.cov, u)[0]


def _correct_predict(model, mean, cov, u, innovation):
    gain, H = _gain(model, mean, cov, u)
    post_mean = mean + gain @ innovation if innovation is not None else mean
    post_cov = symmetrize((np.eye(mean.size) - gain @ H) @ cov)
    F = np.atleast_2d(model.jac_f(post_mean, u))
    next_cov = ensure_pd(F @ post_cov @ F.T + model.process_noise.cov)
    return model.f(post_mean, u), next_cov


def ekf_step(model: SystemModel, b: Belief, u, y) -> Belief:
    """One eKF recursion: correct with ``y`` (taken after applying ``u``), then predict."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    innovation = np.atleast_1d(y) - model.h(b.mean, u)
    mean, cov = _correct_predict(model, b.mean, b.cov, u, innovation)
    return Belief(mean, cov)


def t_pi(model: SystemModel, p: InfoState, u) -> InfoState:
    """CE information-state dynamics: the eKF step with the innovation set to zero."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    mean, cov = _correct_predict(model, p.mean, p.cov, u, None)
    return InfoState(mean, cov)
