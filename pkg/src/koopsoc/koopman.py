"""Training-data collection on the CE information state and eDMD fitting.

Data are generated by rolling ``t_pi`` forward from randomized ``(x^p_0, Sigma^p_0)``
under a random excitation input, lifting every visited information state
through ``m_map`` and the chosen dictionary. The fit solves

    min_{A, B} || Psi_plus - A Psi_minus - B U ||_F   (+ ridge ||[A B]||_F^2)

jointly for ``[A B]``.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalError
from .filtering import InfoState, t_pi
from .lift import (
    DictionaryState,
    LiftedState,
    dictionary,
    get_dictionary,
    lifted_dim,
    m_inv,
    m_map,
)
from .model import NoiseSpec, SystemModel, sample_truncated_gaussian

log = logging.getLogger(__name__)

RANK_RTOL = 1e-10


@dataclass(frozen=True)
class TrainingConfig:
    """Settings for the training-stage rollouts.

    ``init_mean_spec=None`` draws ``x^p_0`` from the model prior.
    ``init_cov_scheme`` is ``"wishart-like"`` (``G G^T + floor I`` with
    ``G_ij ~ N(0, scale^2)``) or ``"fixed-identity"``.
    """

    num_trajectories: int = 100
    steps_per_trajectory: int = 200
    excitation: NoiseSpec = field(default_factory=lambda: NoiseSpec.isotropic(1, 0.2, trunc=2.0))
    init_mean_spec: NoiseSpec | None = None
    init_cov_scheme: str = "wishart-like"
    init_cov_scale: float = 0.5
    init_cov_floor: float = 0.1
    dictionary: str = "affine"
    seed: int = 0

    @property
    def num_samples(self) -> int:
        return self.num_trajectories * self.steps_per_trajectory


@dataclass
class DataMatrices:
    psi_plus: np.ndarray
    psi_minus: np.ndarray
    u_data: np.ndarray
    state_dim: int
    dictionary: str = "affine"
    discarded: int = 0

    @property
    def num_samples(self) -> int:
        return self.psi_minus.shape[1]


@dataclass
class LinearPredictor:
    """Lifted linear model ``Psi+ = A Psi + B u``, ``eta = C Psi``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    dictionary: str
    residual: float
    state_dim: int
    min_singular_value: float = float("nan")
    rank_deficient: bool = False

    @property
    def n_psi(self) -> int:
        return self.A.shape[0]

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "dictionary": self.dictionary,
            "residual": self.residual,
            "state_dim": self.state_dim,
            "min_singular_value": self.min_singular_value,
            "rank_deficient": self.rank_deficient,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LinearPredictor":
        return cls(
            A=np.array(data["A"], dtype=float),
            B=np.array(data["B"], dtype=float),
            C=np.array(data["C"], dtype=float),
            dictionary=data["dictionary"],
            residual=float(data["residual"]),
            state_dim=int(data["state_dim"]),
            min_singular_value=float(data.get("min_singular_value", float("nan"))),
            rank_deficient=bool(data.get("rank_deficient", False)),
        )


def canonical_projection(r_eta: int, n_psi: int) -> np.ndarray:
    C = np.zeros((r_eta, n_psi))
    C[:, :r_eta] = np.eye(r_eta)
    return C


def initial_info_state(model: SystemModel, cfg: TrainingConfig, rng) -> InfoState:
    mean_spec = cfg.init_mean_spec or model.prior
    mean = sample_truncated_gaussian(mean_spec, rng)
    n = model.state_dim
    if cfg.init_cov_scheme == "wishart-like":
        G = cfg.init_cov_scale * rng.standard_normal((n, n))
        cov = G @ G.T + cfg.init_cov_floor * np.eye(n)
    elif cfg.init_cov_scheme == "fixed-identity":
        cov = np.eye(n)
    else:
        raise ConfigError(f"unknown init_cov_scheme {cfg.init_cov_scheme!r}")
    return InfoState(mean, cov)


def _rollout(model, cfg, rng):
    p = initial_info_state(model, cfg, rng)
    psi = [dictionary(m_map(p), cfg.dictionary).psi]
    us = []
    for _ in range(cfg.steps_per_trajectory):
        u = sample_truncated_gaussian(cfg.excitation, rng)
        p = t_pi(model, p, u)
        psi.append(dictionary(m_map(p), cfg.dictionary).psi)
        us.append(u)
    return np.array(psi).T, np.array(us).T


def collect_data(model: SystemModel, cfg: TrainingConfig, rng=None) -> DataMatrices:
    """Roll out ``cfg.num_trajectories`` CE trajectories and stack the lifted pairs.

    Each trajectory draws from its own child stream of ``cfg.seed`` (or of
    ``rng`` when given). A trajectory whose covariance breaks down is discarded
    and redrawn from the same stream. No pair crosses a trajectory boundary.
    """
    if cfg.excitation.dim != model.input_dim:
        raise ConfigError(
            f"excitation has dimension {cfg.excitation.dim}, model input has {model.input_dim}"
        )
    get_dictionary(cfg.dictionary)
    entropy = cfg.seed if rng is None else int(rng.integers(2**63))
    seed_seq = np.random.SeedSequence(entropy)
    children = seed_seq.spawn(cfg.num_trajectories)
    minus, plus, inputs = [], [], []
    discarded = 0
    for child in children:
        traj_rng = np.random.default_rng(child)
        while True:
            try:
                psi, us = _rollout(model, cfg, traj_rng)
                break
            except NumericalError:
                discarded += 1
                if discarded > 10 * cfg.num_trajectories:
                    raise
        minus.append(psi[:, :-1])
        plus.append(psi[:, 1:])
        inputs.append(us)
    if discarded:
        log.warning("discarded %d trajectories after covariance breakdown", discarded)
    return DataMatrices(
        psi_plus=np.hstack(plus),
        psi_minus=np.hstack(minus),
        u_data=np.hstack(inputs),
        state_dim=model.state_dim,
        dictionary=cfg.dictionary,
        discarded=discarded,
    )


def fit_edmd(data: DataMatrices, ridge: float = 0.0) -> LinearPredictor:
    """Least-squares fit of ``[A B]`` with an SVD-based solver.

    Warns when the stacked regressor ``[Psi_minus; U]`` is rank deficient at
    ``1e-10 * sigma_max``.
    """
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    Psi_m, Psi_p, U = data.psi_minus, data.psi_plus, data.u_data
    if Psi_m.shape != Psi_p.shape or U.shape[1] != Psi_m.shape[1]:
        raise ConfigError(
            f"data dimension mismatch: {Psi_m.shape}, {Psi_p.shape}, {U.shape}"
        )
    n_psi = Psi_m.shape[0]
    Z = np.vstack([Psi_m, U])
    sv = np.linalg.svd(Z, compute_uv=False)
    rank_deficient = bool(sv[-1] <= RANK_RTOL * sv[0]) if sv.size else True
    if rank_deficient:
        warnings.warn(
            f"eDMD regressor is rank deficient (sigma_min/sigma_max = {sv[-1] / sv[0]:.3e})",
            RuntimeWarning,
            stacklevel=2,
        )
    lhs, rhs = Z.T, Psi_p.T
    if ridge > 0:
        lhs = np.vstack([lhs, np.sqrt(ridge) * np.eye(Z.shape[0])])
        rhs = np.vstack([rhs, np.zeros((Z.shape[0], n_psi))])
    G = np.linalg.lstsq(lhs, rhs, rcond=None)[0].T
    A, B = G[:, :n_psi], G[:, n_psi:]
    residual = float(np.linalg.norm(Psi_p - A @ Psi_m - B @ U))
    r_eta = lifted_dim(data.state_dim) if data.dictionary != "identity" else n_psi
    return LinearPredictor(
        A=A,
        B=B,
        C=canonical_projection(r_eta, n_psi),
        dictionary=data.dictionary,
        residual=residual,
        state_dim=data.state_dim,
        min_singular_value=float(sv[-1]),
        rank_deficient=rank_deficient,
    )


def predict(p: LinearPredictor, psi, u):
    if isinstance(psi, DictionaryState):
        if psi.dictionary != p.dictionary:
            raise ConfigError(f"dictionary mismatch: {psi.dictionary!r} vs {p.dictionary!r}")
        return DictionaryState(p.A @ psi.psi + p.B @ np.atleast_1d(u), p.dictionary)
    return p.A @ psi + p.B @ np.atleast_1d(u)


def prediction_error(
    p: LinearPredictor,
    model: SystemModel,
    cfg: TrainingConfig,
    horizon: int,
    num_trajectories: int = 20,
    seed: int = 12345,
) -> np.ndarray:
    """RMS over fresh CE trajectories of ``||C Psi_hat_k - eta_k||`` for k = 0..horizon."""
    rng = np.random.default_rng(seed)
    errors = np.zeros((num_trajectories, horizon + 1))
    for j in range(num_trajectories):
        info = initial_info_state(model, cfg, rng)
        psi_hat = dictionary(m_map(info), p.dictionary).psi
        for k in range(1, horizon + 1):
            u = sample_truncated_gaussian(cfg.excitation, rng)
            info = t_pi(model, info, u)
            psi_hat = p.A @ psi_hat + p.B @ u
            errors[j, k] = np.linalg.norm(p.C @ psi_hat - m_map(info).eta)
    return np.sqrt(np.mean(errors**2, axis=0))


def check_pairing(data: DataMatrices, model: SystemModel, atol: float = 1e-10) -> int:
    """Count columns where ``psi_plus`` is not regenerated by ``t_pi`` from ``psi_minus``."""
    r_eta = lifted_dim(data.state_dim)
    bad = 0
    for j in range(data.num_samples):
        info = m_inv(LiftedState(data.psi_minus[:r_eta, j], data.state_dim))
        nxt = t_pi(model, info, data.u_data[:, j])
        psi = dictionary(m_map(nxt), data.dictionary).psi
        if not np.allclose(psi, data.psi_plus[:, j], atol=atol, rtol=1e-9):
            bad += 1
    return bad


# -- file formats --------------------------------------------------------------
# Matrix CSV: first line "rows,cols"; then one line per matrix column
# (column-major), each holding that column's ``rows`` entries at 17 digits.


def write_matrix_csv(mat: np.ndarray, path) -> None:
    mat = np.atleast_2d(mat)
    with open(path, "w") as fh:
        fh.write(f"{mat.shape[0]},{mat.shape[1]}\n")
        for col in mat.T:
            fh.write(",".join(f"{v:.17g}" for v in col) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    with open(path) as fh:
        rows, cols = (int(t) for t in fh.readline().split(","))
        body = [list(map(float, line.split(","))) for line in fh if line.strip()]
    mat = np.array(body, dtype=float).reshape(cols, rows).T if cols else np.zeros((rows, 0))
    return mat


def save_data(data: DataMatrices, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(data.psi_plus, directory / "psi_plus.csv")
    write_matrix_csv(data.psi_minus, directory / "psi_minus.csv")
    write_matrix_csv(data.u_data, directory / "u_data.csv")
    meta = {"state_dim": data.state_dim, "dictionary": data.dictionary, "discarded": data.discarded}
    (directory / "meta.json").write_text(json.dumps(meta, indent=2))


def load_data(directory) -> DataMatrices:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    return DataMatrices(
        psi_plus=read_matrix_csv(directory / "psi_plus.csv"),
        psi_minus=read_matrix_csv(directory / "psi_minus.csv"),
        u_data=read_matrix_csv(directory / "u_data.csv"),
        state_dim=meta["state_dim"],
        dictionary=meta["dictionary"],
        discarded=meta.get("discarded", 0),
    )
