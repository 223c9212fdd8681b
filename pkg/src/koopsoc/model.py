"""Nonlinear stochastic system models and bounded-noise sampling.

A model is the pair

    x_{k+1} = f(x_k, u_k) + w_k
    y_k     = h(x_k, u_k) + v_k

with analytic state Jacobians and truncated-Gaussian noise. Models are
immutable; every random draw goes through an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, SamplingError

MAX_REJECTION_ATTEMPTS = 10**6

Map = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise ConfigError(f"{name}: expected a matrix, got shape {arr.shape}")
    return arr


def _check_spd(mat: np.ndarray, name: str) -> None:
    if mat.shape[0] != mat.shape[1]:
        raise ConfigError(f"{name}: covariance must be square, got {mat.shape}")
    if not np.allclose(mat, mat.T, atol=1e-12, rtol=0.0):
        raise ConfigError(f"{name}: covariance must be symmetric")
    try:
        np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise ConfigError(f"{name}: covariance must be positive definite") from exc


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian ``N(mean, cov)`` truncated at Mahalanobis radius ``trunc``.

    ``trunc = inf`` means no truncation.
    """

    mean: np.ndarray
    cov: np.ndarray
    trunc: float = math.inf
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = _as_matrix(self.cov, "NoiseSpec.cov")
        if cov.shape != (mean.size, mean.size):
            raise ConfigError(
                f"NoiseSpec: mean has size {mean.size} but cov has shape {cov.shape}"
            )
        _check_spd(cov, "NoiseSpec.cov")
        trunc = float(self.trunc)
        if not trunc > 0:
            raise ConfigError(f"NoiseSpec.trunc must be > 0, got {trunc}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "trunc", trunc)
        object.__setattr__(self, "_chol", np.linalg.cholesky(cov))

    @property
    def dim(self) -> int:
        return self.mean.size

    def mahalanobis(self, x) -> float:
        z = np.linalg.solve(self._chol, np.asarray(x, dtype=float) - self.mean)
        return float(np.sqrt(z @ z))

    @classmethod
    def isotropic(cls, dim: int, variance: float, trunc: float = math.inf) -> "NoiseSpec":
        return cls(np.zeros(dim), variance * np.eye(dim), trunc)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "trunc": None if math.isinf(self.trunc) else self.trunc,
        }

    @classmethod
    def from_dict(cls, data: dict, dim: int | None = None) -> "NoiseSpec":
        cov = data["cov"]
        if np.isscalar(cov):
            if dim is None:
                raise ConfigError("scalar 'cov' needs a known dimension")
            cov = float(cov) * np.eye(dim)
        cov = _as_matrix(cov, "cov")
        mean = data.get("mean")
        mean = np.zeros(cov.shape[0]) if mean is None else mean
        if np.isscalar(mean):
            mean = float(mean) * np.ones(cov.shape[0])
        trunc = data.get("trunc")
        return cls(mean, cov, math.inf if trunc is None else float(trunc))


@dataclass(frozen=True)
class SystemModel:
    """Discrete-time nonlinear model with analytic state Jacobians."""

    state_dim: int
    input_dim: int
    output_dim: int
    f: Map
    h: Map
    jac_f: Map
    jac_h: Map
    process_noise: NoiseSpec
    measurement_noise: NoiseSpec
    prior: NoiseSpec
    name: str = "custom"

    def __post_init__(self):
        for label, spec, dim in (
            ("process_noise", self.process_noise, self.state_dim),
            ("measurement_noise", self.measurement_noise, self.output_dim),
            ("prior", self.prior, self.state_dim),
        ):
            if spec.dim != dim:
                raise ConfigError(f"{label} has dimension {spec.dim}, expected {dim}")


def elu(x, derivative: bool = False):
    """Exponential linear unit; with ``derivative=True`` returns ``(value, slope)``.

    The slope at 0 is taken as 1, which matches both one-sided limits.
    """
    x = np.asarray(x, dtype=float)
    neg = x < 0
    value = np.where(neg, np.expm1(np.minimum(x, 0.0)), x)
    if not derivative:
        return value[()] if value.ndim == 0 else value
    slope = np.where(neg, np.exp(np.minimum(x, 0.0)), 1.0)
    if value.ndim == 0:
        return value[()], slope[()]
    return value, slope


def linear_model(
    A,
    B,
    C,
    process_noise: NoiseSpec,
    measurement_noise: NoiseSpec,
    prior: NoiseSpec,
    name: str = "linear",
) -> SystemModel:
    """Linear-Gaussian model ``x+ = Ax + Bu + w``, ``y = Cx + v``."""
    A, B, C = (_as_matrix(m, n) for m, n in ((A, "A"), (B, "B"), (C, "C")))
    return SystemModel(
        state_dim=A.shape[0],
        input_dim=B.shape[1],
        output_dim=C.shape[0],
        f=lambda x, u: A @ x + B @ np.atleast_1d(u),
        h=lambda x, u: C @ x,
        jac_f=lambda x, u: A,
        jac_h=lambda x, u: C,
        process_noise=process_noise,
        measurement_noise=measurement_noise,
        prior=prior,
        name=name,
    )


def linear_elu_model(
    A,
    B,
    offset: float,
    process_noise: NoiseSpec,
    measurement_noise: NoiseSpec,
    prior: NoiseSpec,
    name: str = "linear-elu",
) -> SystemModel:
    """Linear dynamics observed through ``y = ELU(sum(x) - offset)``."""
    A, B = _as_matrix(A, "A"), _as_matrix(B, "B")
    n = A.shape[0]
    ones = np.ones((1, n))

    def h(x, u):
        return np.atleast_1d(elu(np.sum(x) - offset))

    def jac_h(x, u):
        _, slope = elu(np.sum(x) - offset, derivative=True)
        return slope * ones

    return SystemModel(
        state_dim=n,
        input_dim=B.shape[1],
        output_dim=1,
        f=lambda x, u: A @ x + B @ np.atleast_1d(u),
        h=h,
        jac_f=lambda x, u: A,
        jac_h=jac_h,
        process_noise=process_noise,
        measurement_noise=measurement_noise,
        prior=prior,
        name=name,
    )


EXAMPLE_A = np.array([[0.63, 0.54, 0.0], [0.74, 0.96, 0.68], [0.1, -0.86, 0.54]])
EXAMPLE_B = np.array([[0.0], [1.0], [0.0]])


def example_system() -> SystemModel:
    """Three-state Hammerstein-Wiener example with an ELU output ("elu-hw")."""
    return linear_elu_model(
        EXAMPLE_A,
        EXAMPLE_B,
        offset=3.0,
        process_noise=NoiseSpec.isotropic(3, 0.2, trunc=3.0),
        measurement_noise=NoiseSpec.isotropic(1, 0.2, trunc=2.0),
        prior=NoiseSpec.isotropic(3, 1.0, trunc=3.0),
        name="elu-hw",
    )


BUILTIN_MODELS = {"elu-hw": example_system}


def sample_truncated_gaussian(
    spec: NoiseSpec, rng: np.random.Generator, max_attempts: int = MAX_REJECTION_ATTEMPTS
) -> np.ndarray:
    """Draw from ``spec`` by rejecting samples whose Mahalanobis distance exceeds ``trunc``."""
    if math.isinf(spec.trunc):
        return spec.mean + spec._chol @ rng.standard_normal(spec.dim)
    limit = spec.trunc * spec.trunc
    for _ in range(max_attempts):
        z = rng.standard_normal(spec.dim)
        if z @ z <= limit:
            return spec.mean + spec._chol @ z
    raise SamplingError(
        f"no sample within Mahalanobis radius {spec.trunc} after {max_attempts} attempts"
    )


def step_plant(model: SystemModel, x, u, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return model.f(x, np.atleast_1d(u)) + sample_truncated_gaussian(model.process_noise, rng)


def measure(model: SystemModel, x, u, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return model.h(x, np.atleast_1d(u)) + sample_truncated_gaussian(
        model.measurement_noise, rng
    )


def jacobian_fd(fun: Map, x, u, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference Jacobian of ``fun(x, u)`` with respect to ``x``."""
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        cols.append((np.atleast_1d(fun(x + e, u)) - np.atleast_1d(fun(x - e, u))) / (2 * step))
    return np.column_stack(cols)


# -- JSON model configs -------------------------------------------------------


def model_from_dict(data: dict) -> SystemModel:
    """Build a model from a JSON-style mapping.

    Schema::

        {"name": str, "A": [[..]], "B": [[..]],
         "output": {"kind": "elu-sum", "offset": 3.0} | {"kind": "linear", "C": [[..]]},
         "process_noise": {"cov": .., "trunc": ..},
         "measurement_noise": {...}, "prior": {"mean": .., "cov": .., "trunc": ..}}

    ``cov`` may be a scalar (times identity); a null ``trunc`` means untruncated.
    """
    try:
        A = _as_matrix(data["A"], "A")
        B = _as_matrix(data["B"], "B")
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n:
            raise ConfigError(f"A must be square and B must have {n} rows")
        output = data.get("output", {"kind": "elu-sum", "offset": 3.0})
        kind = output.get("kind")
        r_y = 1 if kind == "elu-sum" else _as_matrix(output.get("C", [[0.0]]), "C").shape[0]
        w = NoiseSpec.from_dict(data["process_noise"], n)
        v = NoiseSpec.from_dict(data["measurement_noise"], r_y)
        prior = NoiseSpec.from_dict(data["prior"], n)
    except KeyError as exc:
        raise ConfigError(f"model config is missing field {exc.args[0]!r}") from exc
    name = data.get("name", "custom")
    if kind == "elu-sum":
        return linear_elu_model(A, B, float(output.get("offset", 3.0)), w, v, prior, name)
    if kind == "linear":
        return linear_model(A, B, output["C"], w, v, prior, name)
    raise ConfigError(f"model.output.kind: unknown output kind {kind!r}")


def load_model(ref) -> SystemModel:
    """Resolve a built-in name, a JSON path, or an inline mapping to a model."""
    if isinstance(ref, dict):
        return model_from_dict(ref)
    if ref in BUILTIN_MODELS:
        return BUILTIN_MODELS[ref]()
    path = Path(ref)
    if not path.exists():
        raise ConfigError(f"unknown model {ref!r} (not a built-in name or a file)")
    with open(path) as fh:
        return model_from_dict(json.load(fh))
