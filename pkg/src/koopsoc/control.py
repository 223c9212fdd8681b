"""Infinite-horizon discrete LQR by Riccati fixed-point iteration.

Gains follow the convention ``u = -K @ state``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DareError, UnstableClosedLoopError
from .koopman import LinearPredictor
from .lift import CostMatrices, DICTIONARIES, lifted_dim
from .model import SystemModel

DARE_TOL = 1e-10
DARE_MAX_ITER = 100_000
DEFAULT_REG = 1e-9
STALL_WINDOW = 1000


@dataclass
class LqrGain:
    K: np.ndarray
    P: np.ndarray
    spectral_radius: float
    iterations: int = 0
    tol: float = DARE_TOL
    diagnostics: dict | None = None
    constant_modes: list[int] = field(default_factory=list)

    def __call__(self, state) -> np.ndarray:
        return -self.K @ np.asarray(state, dtype=float)

    def to_dict(self) -> dict:
        return {
            "K": self.K.tolist(),
            "P": self.P.tolist(),
            "spectral_radius": self.spectral_radius,
            "iterations": self.iterations,
            "tol": self.tol,
            "diagnostics": self.diagnostics,
            "constant_modes": self.constant_modes,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LqrGain":
        return cls(
            K=np.atleast_2d(np.array(data["K"], dtype=float)),
            P=np.atleast_2d(np.array(data["P"], dtype=float)),
            spectral_radius=float(data["spectral_radius"]),
            iterations=int(data.get("iterations", 0)),
            tol=float(data.get("tol", DARE_TOL)),
            diagnostics=data.get("diagnostics"),
            constant_modes=list(data.get("constant_modes", [])),
        )


def _check_weights(Q, R):
    if not np.allclose(R, R.T):
        raise DareError("R must be symmetric")
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError as exc:
        raise DareError("R must be positive definite") from exc
    if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() < -1e-10 * max(1.0, np.abs(Q).max()):
        raise DareError("Q must be positive semidefinite")


def riccati_map(P, A, B, Q, R):
    """One step ``Q + A'PA - A'PB (R + B'PB)^{-1} B'PA``."""
    PA = P @ A
    BPA = B.T @ PA
    nxt = Q + A.T @ PA - BPA.T @ np.linalg.solve(R + B.T @ P @ B, BPA)
    return 0.5 * (nxt + nxt.T)


def _iterate(A, B, Q, R, tol, max_iter):
    A, B, Q, R = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, B, Q, R))
    n = A.shape[0]
    if A.shape != (n, n) or B.shape[0] != n or Q.shape != (n, n) or R.shape != (B.shape[1],) * 2:
        raise ConfigError(
            f"inconsistent shapes A{A.shape} B{B.shape} Q{Q.shape} R{R.shape}"
        )
    _check_weights(Q, R)
    P = Q.copy()
    increment = best = np.inf
    best_it = 0
    for it in range(1, max_iter + 1):
        nxt = riccati_map(P, A, B, Q, R)
        increment = float(np.linalg.norm(nxt - P))
        P = nxt
        if not np.isfinite(increment):
            break
        if increment <= tol:
            return P, it, increment
        if increment < best:
            best, best_it = increment, it
        # stalled at the roundoff floor of a large P
        if it - best_it >= STALL_WINDOW and increment <= tol * float(np.linalg.norm(P)):
            return P, it, increment
    raise DareError(
        f"Riccati iteration did not converge in {max_iter} iterations "
        f"(last increment {increment:.3e})",
        increment=increment,
        iterations=max_iter,
    )


def solve_dare(A, B, Q, R, tol: float = DARE_TOL, max_iter: int = DARE_MAX_ITER) -> np.ndarray:
    """Fixed-point iteration from ``P_0 = Q`` until ``||P_{i+1} - P_i||_F <= tol``.

    When ``P`` is large an absolute 1e-10 can sit below the roundoff floor of
    the Riccati map; the iteration then also stops once the increment has not
    improved for ``STALL_WINDOW`` steps and is already below ``tol * ||P||_F``.
    """
    return _iterate(A, B, Q, R, tol, max_iter)[0]


def dare_residual(P, A, B, Q, R) -> float:
    return float(np.linalg.norm(P - riccati_map(P, A, B, Q, R)))


def _gain_from_p(P, A, B, R):
    return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if np.size(M) else 0.0


def lqr_gain(A, B, Q, R, tol: float = DARE_TOL, max_iter: int = DARE_MAX_ITER) -> LqrGain:
    A, B, Q, R = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, B, Q, R))
    P, iters, _ = _iterate(A, B, Q, R, tol, max_iter)
    K = _gain_from_p(P, A, B, R)
    rho = spectral_radius(A - B @ K)
    if rho >= 1.0:
        raise UnstableClosedLoopError(f"closed-loop spectral radius {rho:.6f} >= 1")
    return LqrGain(K=K, P=P, spectral_radius=rho, iterations=iters, tol=tol)


def _sqrt_psd(M):
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def diagnostics(A, B, Qsqrt, tol: float = 1e-8) -> dict:
    """PBH-style margins for every eigenvalue of ``A`` with ``|lambda| >= 1 - 1e-8``.

    ``stabilizability`` is ``sigma_min([A - lambda I, B])`` and ``detectability``
    is ``sigma_min([A - lambda I; Qsqrt])``. A margin below ``tol`` (scaled by
    the matrix size) is flagged; nothing here raises.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Qsqrt = np.atleast_2d(np.asarray(Qsqrt, dtype=float))
    n = A.shape[0]
    scale = max(1.0, np.linalg.norm(A, 2))
    modes = []
    status = "pass"
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0 - 1e-8:
            continue
        shifted = A - lam * np.eye(n)
        stab = float(np.linalg.svd(np.hstack([shifted, B]), compute_uv=False)[-1])
        det = float(np.linalg.svd(np.vstack([shifted, Qsqrt]), compute_uv=False)[-1])
        flags = []
        if stab < tol * scale:
            flags.append("not stabilizable")
        if det < tol * scale:
            flags.append("not detectable")
        if flags:
            status = "warn"
        modes.append(
            {
                "eigenvalue": [float(lam.real), float(lam.imag)],
                "abs": float(abs(lam)),
                "stabilizability_margin": stab,
                "detectability_margin": det,
                "flags": flags,
            }
        )
    return {"status": status, "tol": tol, "modes": modes}


def _constant_modes(p: LinearPredictor, atol: float = 1e-8) -> list[int]:
    """Indices of dictionary observables that are identically one and input-free."""
    d = DICTIONARIES.get(p.dictionary)
    if d is None:
        return []
    idx = d.constant_index(lifted_dim(p.state_dim))
    if idx is None:
        return []
    row = np.zeros(p.n_psi)
    row[idx] = 1.0
    if np.allclose(p.A[idx], row, atol=atol) and np.allclose(p.B[idx], 0.0, atol=atol):
        return [idx]
    return []


def design_soc_lqr(
    p: LinearPredictor,
    c: CostMatrices,
    reg: float = DEFAULT_REG,
    tol: float = DARE_TOL,
    max_iter: int = DARE_MAX_ITER,
) -> LqrGain:
    """LQR gain ``K_Psi`` for the lifted predictor under ``Psi' script_Q Psi + u' R u``.

    A constant observable (the affine dictionary's trailing 1) is a mode with
    eigenvalue exactly 1 that no input can move, while the lifted stage cost
    never drops below ``tr(Q Sigma_w)``. The undiscounted Riccati iteration
    therefore grows without bound along that mode even though the gain
    converges. Such modes are split off: the DARE is solved on the remaining
    block and the constant's feedforward column comes from the linear value
    term ``M = Q_zc + A_cl' (P A_zc + M)``. The reported ``P`` holds the
    quadratic block and ``M``; its constant-constant block is left at zero.
    """
    if c.script_Q.shape != (p.n_psi, p.n_psi):
        raise ConfigError(
            f"script_Q has shape {c.script_Q.shape}, predictor has N_psi = {p.n_psi}"
        )
    R = np.atleast_2d(c.R)
    Qreg = c.script_Q + reg * np.eye(p.n_psi)
    report = diagnostics(p.A, p.B, _sqrt_psd(c.script_Q))
    const = _constant_modes(p)
    if not const:
        gain = lqr_gain(p.A, p.B, Qreg, R, tol, max_iter)
        gain.diagnostics = report
        return gain

    keep = [i for i in range(p.n_psi) if i not in const]
    Az, Ac, Bz = p.A[np.ix_(keep, keep)], p.A[np.ix_(keep, const)], p.B[keep]
    Qz, Qzc = Qreg[np.ix_(keep, keep)], c.script_Q[np.ix_(keep, const)]
    Pz, iters, _ = _iterate(Az, Bz, Qz, R, tol, max_iter)
    G = R + Bz.T @ Pz @ Bz
    Kz = np.linalg.solve(G, Bz.T @ Pz @ Az)
    Acl = Az - Bz @ Kz
    rho = spectral_radius(Acl)
    if rho >= 1.0:
        raise UnstableClosedLoopError(f"closed-loop spectral radius {rho:.6f} >= 1")
    M = np.linalg.solve(np.eye(len(keep)) - Acl.T, Qzc + Acl.T @ Pz @ Ac)
    Kc = np.linalg.solve(G, Bz.T @ (Pz @ Ac + M))

    K = np.zeros((R.shape[0], p.n_psi))
    K[:, keep] = Kz
    K[:, const] = Kc
    P = np.zeros((p.n_psi, p.n_psi))
    P[np.ix_(keep, keep)] = Pz
    P[np.ix_(keep, const)] = M
    P[np.ix_(const, keep)] = M.T
    return LqrGain(
        K=K,
        P=P,
        spectral_radius=rho,
        iterations=iters,
        tol=tol,
        diagnostics=report,
        constant_modes=const,
    )


def input_jacobian_fd(model: SystemModel, x, u, step: float = 1e-5) -> np.ndarray:
    """Central differences of ``f`` in ``u``; exact up to roundoff for input-affine ``f``."""
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    cols = []
    for j in range(u.size):
        e = np.zeros_like(u)
        e[j] = step
        cols.append((model.f(x, u + e) - model.f(x, u - e)) / (2 * step))
    return np.column_stack(cols)


def design_ce_lqr(
    model: SystemModel,
    Q,
    R,
    lin_point=None,
    lin_input=None,
    tol: float = DARE_TOL,
    max_iter: int = DARE_MAX_ITER,
) -> LqrGain:
    """Certainty-equivalent LQR on the linearization of ``f`` (default: origin, zero input)."""
    x0 = np.zeros(model.state_dim) if lin_point is None else np.asarray(lin_point, dtype=float)
    u0 = np.zeros(model.input_dim) if lin_input is None else np.atleast_1d(lin_input)
    A = np.atleast_2d(model.jac_f(x0, u0))
    B = input_jacobian_fd(model, x0, u0)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    report = diagnostics(A, B, _sqrt_psd(Q))
    gain = lqr_gain(A, B, Q, np.atleast_2d(R), tol, max_iter)
    gain.diagnostics = report
    return gain
