"""Lifting ``(mean, covariance)`` to a vector and the observable dictionaries.

The covariance is parameterized by its lower Cholesky factor ``L``, stacked
column by column (on-and-below-diagonal entries, left to right). For
``r_x = 3`` the index map is::

    ell = (L00, L10, L20, L11, L21, L22)
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import ConfigError, LiftError
from .filtering import InfoState


def tri_number(n: int) -> int:
    return n * (n + 1) // 2


def lifted_dim(state_dim: int) -> int:
    return state_dim + tri_number(state_dim)


def halfvec_indices(n: int) -> list[tuple[int, int]]:
    """(row, col) of each half-vectorized entry, in storage order."""
    return [(i, j) for j in range(n) for i in range(j, n)]


def _tri_root(m: int) -> int:
    n = int((np.sqrt(8 * m + 1) - 1) / 2)
    while tri_number(n) < m:
        n += 1
    if tri_number(n) != m:
        raise LiftError(f"length {m} is not a triangular number")
    return n


def chol_halfvec(S) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise LiftError("matrix is not positive definite") from exc
    rows, cols = np.tril_indices(S.shape[0])
    order = np.lexsort((rows, cols))
    return L[rows[order], cols[order]]


def halfvec_to_factor(ell) -> np.ndarray:
    ell = np.asarray(ell, dtype=float)
    n = _tri_root(ell.size)
    L = np.zeros((n, n))
    for value, (i, j) in zip(ell, halfvec_indices(n)):
        L[i, j] = value
    return L


def halfvec_inv(ell) -> np.ndarray:
    """Rebuild ``L`` from its half-vectorization and return ``L L^T``."""
    L = halfvec_to_factor(ell)
    if np.any(np.diag(L) <= 0):
        raise LiftError("implied Cholesky diagonal must be strictly positive")
    return L @ L.T


@dataclass(frozen=True)
class LiftedState:
    eta: np.ndarray
    state_dim: int

    @property
    def mean(self) -> np.ndarray:
        return self.eta[: self.state_dim]

    @property
    def ell(self) -> np.ndarray:
        return self.eta[self.state_dim :]


def m_map(p: InfoState) -> LiftedState:
    mean = np.asarray(p.mean, dtype=float)
    return LiftedState(np.concatenate([mean, chol_halfvec(p.cov)]), mean.size)


def m_inv(e: LiftedState) -> InfoState:
    return InfoState(e.mean.copy(), halfvec_inv(e.ell))


@dataclass(frozen=True)
class CostMatrices:
    Q: np.ndarray
    R: np.ndarray
    Q_star: np.ndarray
    Q_dstar: np.ndarray
    script_Q: np.ndarray


def build_cost(Q, R, n_psi: int) -> CostMatrices:
    """Assemble the moment, lifted, and dictionary-space state weights.

    ``Q_star`` stacks the trailing principal submatrices ``Q[i:, i:]`` so that
    ``tr(L^T Q L) == ell^T Q_star ell``.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = Q.shape[0]
    if Q.shape != (n, n):
        raise ConfigError(f"Q must be square, got {Q.shape}")
    if R.shape[0] != R.shape[1]:
        raise ConfigError(f"R must be square, got {R.shape}")
    r_eta = lifted_dim(n)
    if n_psi < r_eta:
        raise ConfigError(f"dictionary size {n_psi} is smaller than lifted dimension {r_eta}")
    Q_star = scipy.linalg.block_diag(*[Q[i:, i:] for i in range(n)])
    Q_dstar = scipy.linalg.block_diag(Q, Q_star)
    script_Q = np.zeros((n_psi, n_psi))
    script_Q[:r_eta, :r_eta] = Q_dstar
    return CostMatrices(Q, R, Q_star, Q_dstar, script_Q)


# -- dictionaries ---------------------------------------------------------------


@dataclass(frozen=True)
class DictionaryState:
    psi: np.ndarray
    dictionary: str


@dataclass(frozen=True)
class Dictionary:
    """Observables whose first ``r_eta`` outputs are ``eta`` itself.

    ``constant_index`` marks an always-one observable, if any.
    """

    name: str
    evaluate: Callable[[np.ndarray], np.ndarray]
    size: Callable[[int], int]
    constant_index: Callable[[int], int | None]


def _affine(eta):
    return np.append(eta, 1.0)


def _monomials2(eta):
    quad = [eta[i] * eta[j] for i, j in combinations_with_replacement(range(eta.size), 2)]
    return np.concatenate([eta, quad, [1.0]])


DICTIONARIES: dict[str, Dictionary] = {}


def register_dictionary(d: Dictionary) -> None:
    DICTIONARIES[d.name] = d


register_dictionary(Dictionary("affine", _affine, lambda r: r + 1, lambda r: r))
register_dictionary(
    Dictionary(
        "monomials2",
        _monomials2,
        lambda r: r + tri_number(r) + 1,
        lambda r: r + tri_number(r),
    )
)
register_dictionary(Dictionary("identity", lambda eta: np.array(eta, dtype=float), lambda r: r, lambda r: None))


def get_dictionary(name: str) -> Dictionary:
    try:
        return DICTIONARIES[name]
    except KeyError:
        raise ConfigError(f"unknown dictionary {name!r}; known: {sorted(DICTIONARIES)}") from None


def dictionary(e: LiftedState | np.ndarray, name: str = "affine") -> DictionaryState:
    eta = e.eta if isinstance(e, LiftedState) else np.asarray(e, dtype=float)
    return DictionaryState(get_dictionary(name).evaluate(eta), name)
