"""Quick oracle and invariant checks behind ``koopsoc check``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .control import dare_residual, lqr_gain, solve_dare
from .filtering import Belief, InfoState, ekf_step
from .koopman import DataMatrices, fit_edmd
from .lift import build_cost, chol_halfvec, halfvec_inv, m_inv, m_map
from .model import NoiseSpec, linear_model


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.value:.3e} (tol {self.tolerance:.0e})"


def _result(name, value, tol):
    return CheckResult(name, bool(value <= tol), float(value), tol)


def random_spd(rng, n, floor=0.1):
    G = rng.standard_normal((n, n))
    return G @ G.T + floor * np.eye(n)


def kf_oracle_step(A, B, C, W, V, x, P, u, y):
    """Textbook Kalman filter: measurement update then time update."""
    S = C @ P @ C.T + V
    K = P @ C.T @ np.linalg.inv(S)
    x_post = x + K @ (y - C @ x)
    P_post = P - K @ C @ P
    return A @ x_post + B @ u, A @ P_post @ A.T + W


def check_dare_scalars() -> list[CheckResult]:
    golden = solve_dare([[1.0]], [[1.0]], [[1.0]], [[1.0]])[0, 0]
    lyap = solve_dare([[0.5]], [[0.0]], [[1.0]], [[1.0]])[0, 0]
    return [
        _result("DARE golden-ratio scalar", abs(golden - (1 + math.sqrt(5)) / 2), 1e-10),
        _result("DARE b=0 Lyapunov scalar", abs(lyap - 4.0 / 3.0), 1e-10),
    ]


def check_dare_residual(seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(10):
        A = rng.standard_normal((4, 4))
        B = rng.standard_normal((4, 2))
        Q, R = random_spd(rng, 4), random_spd(rng, 2)
        P = solve_dare(A, B, Q, R)
        worst = max(worst, dare_residual(P, A, B, Q, R))
    return _result("DARE residual (random)", worst, 1e-9)


def check_round_trips(seed=0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst_cov = worst_trace = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 6))
        S = random_spd(rng, n)
        worst_cov = max(worst_cov, np.abs(halfvec_inv(chol_halfvec(S)) - S).max())
        Q = random_spd(rng, n, 0.0)
        L = np.tril(rng.standard_normal((n, n)))
        ell = L.T[np.triu_indices(n)]
        Qs = build_cost(Q, np.eye(1), n + n * (n + 1) // 2).Q_star
        worst_trace = max(worst_trace, abs(np.trace(L.T @ Q @ L) - ell @ Qs @ ell))
    p = InfoState(rng.standard_normal(3), random_spd(rng, 3))
    back = m_inv(m_map(p))
    worst_m = max(np.abs(back.mean - p.mean).max(), np.abs(back.cov - p.cov).max())
    return [
        _result("halfvec round trip", worst_cov, 1e-12),
        _result("trace identity tr(L'QL) = ell'Q*ell", worst_trace, 1e-10),
        _result("m_inv(m_map(p)) round trip", worst_m, 1e-12),
    ]


def check_exact_recovery(seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    n, m, d = 5, 2, 200
    A0 = rng.standard_normal((n, n)) * 0.3
    B0 = rng.standard_normal((n, m))
    X = rng.standard_normal((n, d))
    U = rng.standard_normal((m, d))
    data = DataMatrices(A0 @ X + B0 @ U, X, U, state_dim=n, dictionary="identity")
    fit = fit_edmd(data)
    err = max(np.abs(fit.A - A0).max(), np.abs(fit.B - B0).max())
    return _result("eDMD exact recovery", err, 1e-8)


def check_kf_equivalence(seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    n, m, p = 3, 1, 2
    A = rng.standard_normal((n, n)) * 0.5
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((p, n))
    W, V = random_spd(rng, n), random_spd(rng, p)
    model = linear_model(A, B, C, NoiseSpec(np.zeros(n), W), NoiseSpec(np.zeros(p), V),
                         NoiseSpec(np.zeros(n), np.eye(n)))
    b = Belief(np.zeros(n), np.eye(n))
    x, P = np.zeros(n), np.eye(n)
    worst = 0.0
    for _ in range(100):
        u, y = rng.standard_normal(m), rng.standard_normal(p)
        b = ekf_step(model, b, u, y)
        x, P = kf_oracle_step(A, B, C, W, V, x, P, u, y)
        worst = max(worst, np.abs(b.mean - x).max(), np.abs(b.cov - P).max())
    return _result("eKF = Kalman filter on linear model", worst, 1e-9)


def check_lqr_stability(seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((4, 4))
    B = rng.standard_normal((4, 1))
    gain = lqr_gain(A, B, np.eye(4), np.eye(1))
    return CheckResult("LQR closed loop spectral radius < 1", gain.spectral_radius < 1,
                       gain.spectral_radius, 1.0)


def run_all() -> list[CheckResult]:
    return [
        *check_dare_scalars(),
        check_dare_residual(),
        *check_round_trips(),
        check_exact_recovery(),
        check_kf_equivalence(),
        check_lqr_stability(),
    ]
