"""Experiment configuration and the train / compare pipelines.

An experiment config is a JSON object with sections ``model``, ``training``,
``edmd`` (optional), ``cost`` and ``simulation``; see ``configs/elu-hw.json``
for the bundled example and ``SCHEMA`` for the accepted fields.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .control import LqrGain, design_ce_lqr, design_soc_lqr
from .errors import ConfigError
from .harness import (
    Comparison,
    SocLqrController,
    StateFeedbackController,
    compare_controllers,
)
from .koopman import LinearPredictor, TrainingConfig, collect_data, fit_edmd
from .lift import build_cost, get_dictionary, lifted_dim
from .model import NoiseSpec, SystemModel, load_model

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_noise = {
    "type": "object",
    "required": ["cov"],
    "properties": {
        "mean": {"type": ["number", "array", "null"]},
        "cov": {"anyOf": [{"type": "number", "exclusiveMinimum": 0}, _matrix]},
        "trunc": {"type": ["number", "null"], "exclusiveMinimum": 0},
    },
}

SCHEMA = {
    "type": "object",
    "required": ["model", "training", "cost", "simulation"],
    "properties": {
        "model": {"anyOf": [{"type": "string"}, {"type": "object"}]},
        "training": {
            "type": "object",
            "required": ["num_trajectories", "steps_per_trajectory", "excitation"],
            "properties": {
                "num_trajectories": {"type": "integer", "minimum": 1},
                "steps_per_trajectory": {"type": "integer", "minimum": 1},
                "excitation": _noise,
                "init_mean": {"anyOf": [{"type": "null"}, _noise]},
                "init_cov_scheme": {"enum": ["wishart-like", "fixed-identity"]},
                "init_cov_scale": {"type": "number", "minimum": 0},
                "init_cov_floor": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "edmd": {
            "type": "object",
            "properties": {
                "dictionary": {"type": "string"},
                "ridge": {"type": "number", "minimum": 0},
            },
        },
        "cost": {
            "type": "object",
            "required": ["Q", "R"],
            "properties": {
                "Q": {"anyOf": [{"type": "number", "minimum": 0}, _matrix]},
                "R": {"anyOf": [{"type": "number", "exclusiveMinimum": 0}, _matrix]},
                "reg": {"type": "number", "minimum": 0},
            },
        },
        "simulation": {
            "type": "object",
            "required": ["horizon", "seeds"],
            "properties": {
                "horizon": {"type": "integer", "minimum": 1},
                "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
            },
        },
    },
}


def builtin_config_names() -> list[str]:
    files = resources.files("koopsoc") / "configs"
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def read_config(ref) -> dict:
    """Load an experiment config from a built-in name, a path, or a dict, and validate it."""
    if isinstance(ref, dict):
        data = copy.deepcopy(ref)
    else:
        ref = str(ref)
        if ref in builtin_config_names():
            text = (resources.files("koopsoc") / "configs" / f"{ref}.json").read_text()
            source = f"<builtin {ref}>"
        else:
            path = Path(ref)
            if not path.exists():
                raise ConfigError(f"config {ref!r} is neither a built-in name nor a file")
            text = path.read_text()
            source = str(path)
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    validate_config(data)
    return data


def validate_config(data: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for err in errors:
            where = "/".join(str(p) for p in err.absolute_path) or "<root>"
            if err.validator == "required":
                missing = err.message.split("'")[1]
                where = f"{where}/{missing}" if where != "<root>" else missing
                lines.append(f"{where}: missing required field")
            else:
                lines.append(f"{where}: {err.message}")
        raise ConfigError("invalid experiment config:\n  " + "\n  ".join(lines))


def _weight(value, dim: int) -> np.ndarray:
    if np.isscalar(value):
        return float(value) * np.eye(dim)
    return np.atleast_2d(np.asarray(value, dtype=float))


@dataclass
class Experiment:
    config: dict
    model: SystemModel
    training: TrainingConfig
    ridge: float
    Q: np.ndarray
    R: np.ndarray
    reg: float
    horizon: int
    seeds: list[int]


def build_experiment(ref) -> Experiment:
    cfg = read_config(ref)
    model = load_model(cfg["model"])
    tr = cfg["training"]
    edmd = cfg.get("edmd", {})
    dictionary_name = edmd.get("dictionary", "affine")
    get_dictionary(dictionary_name)
    training = TrainingConfig(
        num_trajectories=tr["num_trajectories"],
        steps_per_trajectory=tr["steps_per_trajectory"],
        excitation=NoiseSpec.from_dict(tr["excitation"], model.input_dim),
        init_mean_spec=(
            NoiseSpec.from_dict(tr["init_mean"], model.state_dim) if tr.get("init_mean") else None
        ),
        init_cov_scheme=tr.get("init_cov_scheme", "wishart-like"),
        init_cov_scale=tr.get("init_cov_scale", 0.5),
        init_cov_floor=tr.get("init_cov_floor", 0.1),
        dictionary=dictionary_name,
        seed=tr.get("seed", 0),
    )
    n_psi = get_dictionary(dictionary_name).size(lifted_dim(model.state_dim))
    if training.num_samples < n_psi + model.input_dim:
        raise ConfigError(
            f"training: {training.num_samples} samples cannot identify "
            f"{n_psi + model.input_dim} regressors"
        )
    Q = _weight(cfg["cost"]["Q"], model.state_dim)
    R = _weight(cfg["cost"]["R"], model.input_dim)
    if Q.shape != (model.state_dim,) * 2 or R.shape != (model.input_dim,) * 2:
        raise ConfigError(f"cost: Q must be {model.state_dim}x{model.state_dim}, R {model.input_dim}x{model.input_dim}")
    sim = cfg["simulation"]
    return Experiment(
        config=cfg,
        model=model,
        training=training,
        ridge=float(edmd.get("ridge", 0.0)),
        Q=Q,
        R=R,
        reg=float(cfg["cost"].get("reg", 1e-9)),
        horizon=int(sim["horizon"]),
        seeds=[int(s) for s in sim["seeds"]],
    )


@dataclass
class TrainedBundle:
    """Everything needed to run either controller on the experiment's model."""

    config: dict
    predictor: LinearPredictor
    soc_gain: LqrGain
    ce_gain: LqrGain
    num_samples: int = 0
    discarded: int = 0

    def to_dict(self) -> dict:
        return {
            "format": "koopsoc-bundle/1",
            "config": self.config,
            "predictor": self.predictor.to_dict(),
            "soc_gain": self.soc_gain.to_dict(),
            "ce_gain": self.ce_gain.to_dict(),
            "training": {"num_samples": self.num_samples, "discarded": self.discarded},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainedBundle":
        try:
            return cls(
                config=data["config"],
                predictor=LinearPredictor.from_dict(data["predictor"]),
                soc_gain=LqrGain.from_dict(data["soc_gain"]),
                ce_gain=LqrGain.from_dict(data["ce_gain"]),
                num_samples=data.get("training", {}).get("num_samples", 0),
                discarded=data.get("training", {}).get("discarded", 0),
            )
        except KeyError as exc:
            raise ConfigError(f"model bundle is missing field {exc.args[0]!r}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "TrainedBundle":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"model bundle {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(data)

    def controller(self, kind: str):
        if kind == "soc-lqr":
            return SocLqrController(self.soc_gain, self.predictor.dictionary)
        if kind == "ce-lqr":
            return StateFeedbackController(self.ce_gain.K)
        raise ConfigError(f"unknown controller {kind!r}")


def train(exp: Experiment) -> TrainedBundle:
    """Collect CE data, fit the lifted predictor, and design both gains."""
    data = collect_data(exp.model, exp.training)
    predictor = fit_edmd(data, exp.ridge)
    cost = build_cost(exp.Q, exp.R, predictor.n_psi)
    soc = design_soc_lqr(predictor, cost, reg=exp.reg)
    ce = design_ce_lqr(exp.model, exp.Q, exp.R)
    return TrainedBundle(
        config=exp.config,
        predictor=predictor,
        soc_gain=soc,
        ce_gain=ce,
        num_samples=data.num_samples,
        discarded=data.discarded,
    )


def compare(exp: Experiment, bundle: TrainedBundle | None = None, keep_traces: bool = False):
    """Matched-seed CE-LQR versus SOC-LQR comparison; returns ``(Comparison, bundle, traces)``."""
    bundle = bundle or train(exp)
    comp, traces = compare_controllers(
        exp.model,
        bundle.controller("ce-lqr"),
        bundle.controller("soc-lqr"),
        exp.horizon,
        exp.seeds,
        exp.Q,
        exp.R,
        keep_traces=keep_traces,
    )
    return comp, bundle, traces


__all__ = [
    "Comparison",
    "Experiment",
    "TrainedBundle",
    "build_experiment",
    "compare",
    "read_config",
    "train",
]
