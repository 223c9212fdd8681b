"""Closed-loop simulation of eKF-based controllers, metrics, and trace export.

Every run draws its randomness from four independent child streams of the
seed: initial state, plant noise, measurement noise, and excitation. The
noise realization of a seed therefore does not depend on the controller.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .control import LqrGain
from .errors import NumericalError
from .filtering import Belief, InfoState, ekf_step
from .lift import dictionary, m_map
from .model import SystemModel, measure, sample_truncated_gaussian, step_plant

log = logging.getLogger(__name__)

STREAMS = ("initial", "plant", "measurement", "excitation")


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(c) for name, c in zip(STREAMS, children)}


# -- controllers -----------------------------------------------------------------


@dataclass
class SocLqrController:
    """``u = -K_Psi Psi(M(x_{k|k-1}, Sigma_{k|k-1}))``."""

    gain: LqrGain
    dictionary: str = "affine"
    kind: str = "soc-lqr"

    def __call__(self, belief: Belief) -> np.ndarray:
        psi = dictionary(m_map(InfoState(belief.mean, belief.cov)), self.dictionary).psi
        return -self.gain.K @ psi


@dataclass
class StateFeedbackController:
    """``u = -K x_{k|k-1}``; the CE baseline or any user-supplied gain."""

    K: np.ndarray
    kind: str = "ce-lqr"

    def __call__(self, belief: Belief) -> np.ndarray:
        return -np.atleast_2d(self.K) @ belief.mean


@dataclass
class ZeroController:
    input_dim: int = 1
    kind: str = "zero"

    def __call__(self, belief: Belief) -> np.ndarray:
        return np.zeros(self.input_dim)


Controller = Callable[[Belief], np.ndarray]


# -- traces ----------------------------------------------------------------------


@dataclass
class Trace:
    """Closed-loop record; state-like arrays have one more row than inputs.

    ``x_est[k]`` and ``cov[k]`` are the eKF prior ``x_{k|k-1}``, ``Sigma_{k|k-1}``.
    """

    x_true: np.ndarray
    x_est: np.ndarray
    cov: np.ndarray
    u: np.ndarray
    y: np.ndarray
    stage_cost: np.ndarray
    controller: str = ""
    seed: int | None = None
    error: str | None = None

    @property
    def horizon(self) -> int:
        return len(self.u)

    @property
    def sumx(self) -> np.ndarray:
        return self.x_true.sum(axis=1) if len(self.x_true) else np.zeros(0)

    @property
    def tr_cov(self) -> np.ndarray:
        return np.trace(self.cov, axis1=1, axis2=2) if len(self.cov) else np.zeros(0)


def run_closed_loop(
    model: SystemModel,
    controller: Controller,
    horizon: int,
    seed: int,
    Q=None,
    R=None,
) -> Trace:
    """Simulate the plant with an eKF in the loop for ``horizon`` steps.

    Per step k: the controller reads the prior ``(x_{k|k-1}, Sigma_{k|k-1})``,
    ``u_k`` is applied, ``y_k = h(x_k, u_k) + v_k`` arrives, the eKF produces
    the next prior, and the plant moves to ``x_{k+1}``. The true initial state
    is drawn from the prior while the filter starts at the prior moments. A
    numerical breakdown truncates the trace and sets ``error``.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    Q = np.eye(model.state_dim) if Q is None else np.atleast_2d(Q)
    R = np.eye(model.input_dim) if R is None else np.atleast_2d(R)
    rng = seed_streams(seed)
    x = sample_truncated_gaussian(model.prior, rng["initial"])
    belief = Belief(model.prior.mean.copy(), model.prior.cov.copy())
    xs, xhats, covs, us, ys, costs = [x], [belief.mean], [belief.cov], [], [], []
    error = None
    for _ in range(horizon):
        try:
            u = np.atleast_1d(controller(belief))
            y = measure(model, x, u, rng["measurement"])
            belief = ekf_step(model, belief, u, y)
            x_next = step_plant(model, x, u, rng["plant"])
        except NumericalError as exc:
            error = str(exc)
            log.warning("closed loop stopped after %d steps: %s", len(us), exc)
            break
        costs.append(float(x @ Q @ x + u @ R @ u))
        us.append(u)
        ys.append(y)
        x = x_next
        xs.append(x)
        xhats.append(belief.mean)
        covs.append(belief.cov)
    return Trace(
        x_true=np.array(xs),
        x_est=np.array(xhats),
        cov=np.array(covs),
        u=np.array(us).reshape(len(us), model.input_dim),
        y=np.array(ys).reshape(len(ys), model.output_dim),
        stage_cost=np.array(costs),
        controller=getattr(controller, "kind", "custom"),
        seed=seed,
        error=error,
    )


# -- metrics ----------------------------------------------------------------------


@dataclass
class Summary:
    cost: float
    epsilon: float
    mean_sumx: float
    mean_trace_cov: float
    horizon: int
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def metrics(trace: Trace, Q=None, R=None) -> Summary:
    """Time averages over the ``N`` recorded steps.

    cost    = (x_N'Q x_N + sum_k x_k'Q x_k + u_k'R u_k) / N on the true states
    epsilon = sum_k ||x_{k|k-1} - x_k||^2 / N
    """
    N = trace.horizon
    n = trace.x_true.shape[1] if trace.x_true.ndim == 2 else 0
    if N == 0:
        return Summary(0.0, 0.0, 0.0, 0.0, 0, trace.error)
    Q = np.eye(n) if Q is None else np.atleast_2d(Q)
    R = np.eye(trace.u.shape[1]) if R is None else np.atleast_2d(R)
    X = trace.x_true
    state_terms = np.einsum("ki,ij,kj->k", X, Q, X)
    input_terms = np.einsum("ki,ij,kj->k", trace.u, R, trace.u)
    cost = (state_terms[N] + state_terms[:N].sum() + input_terms.sum()) / N
    err = trace.x_est[:N] - X[:N]
    epsilon = float(np.sum(err**2) / N)
    return Summary(
        cost=float(cost),
        epsilon=epsilon,
        mean_sumx=float(trace.sumx[:N].mean()),
        mean_trace_cov=float(trace.tr_cov[:N].mean()),
        horizon=N,
        error=trace.error,
    )


def average(summaries: list[Summary]) -> Summary:
    errors = [s.error for s in summaries if s.error]
    return Summary(
        cost=float(np.mean([s.cost for s in summaries])),
        epsilon=float(np.mean([s.epsilon for s in summaries])),
        mean_sumx=float(np.mean([s.mean_sumx for s in summaries])),
        mean_trace_cov=float(np.mean([s.mean_trace_cov for s in summaries])),
        horizon=int(np.mean([s.horizon for s in summaries])),
        error="; ".join(errors) or None,
    )


def reduction_pct(baseline: float, improved: float) -> float:
    if baseline == 0:
        return 0.0
    return float((1.0 - improved / baseline) * 100.0)


@dataclass
class Comparison:
    ce: Summary
    soc: Summary
    per_seed: list[dict] = field(default_factory=list)
    horizon: int = 0
    seeds: list[int] = field(default_factory=list)

    @property
    def cost_reduction(self) -> float:
        return reduction_pct(self.ce.cost, self.soc.cost)

    @property
    def epsilon_reduction(self) -> float:
        return reduction_pct(self.ce.epsilon, self.soc.epsilon)

    def to_dict(self) -> dict:
        return {
            "ce": self.ce.to_dict(),
            "soc": self.soc.to_dict(),
            "reduction": {
                "cost_pct": self.cost_reduction,
                "epsilon_pct": self.epsilon_reduction,
            },
            "horizon": self.horizon,
            "seeds": self.seeds,
            "per_seed": self.per_seed,
        }

    def table(self) -> str:
        rows = [
            ("time-averaged metric", "CE-LQR: K", "SOC-LQR: K_Psi", "reduction"),
            ("Achieved cost", f"{self.ce.cost:.3g}", f"{self.soc.cost:.3g}", f"{self.cost_reduction:.0f}%"),
            ("epsilon", f"{self.ce.epsilon:.3g}", f"{self.soc.epsilon:.3g}", f"{self.epsilon_reduction:.0f}%"),
        ]
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = [" | ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
        lines.insert(1, "-+-".join("-" * w for w in widths))
        return "\n".join(lines)


def compare_controllers(
    model: SystemModel,
    ce: Controller,
    soc: Controller,
    horizon: int,
    seeds,
    Q=None,
    R=None,
    keep_traces: bool = False,
):
    """Matched-seed runs of both controllers; returns ``(Comparison, traces)``."""
    ce_runs, soc_runs, per_seed, traces = [], [], [], []
    for seed in seeds:
        t_ce = run_closed_loop(model, ce, horizon, seed, Q, R)
        t_soc = run_closed_loop(model, soc, horizon, seed, Q, R)
        s_ce, s_soc = metrics(t_ce, Q, R), metrics(t_soc, Q, R)
        ce_runs.append(s_ce)
        soc_runs.append(s_soc)
        per_seed.append({"seed": int(seed), "ce": s_ce.to_dict(), "soc": s_soc.to_dict()})
        if keep_traces:
            traces.append((t_ce, t_soc))
    comp = Comparison(
        ce=average(ce_runs),
        soc=average(soc_runs),
        per_seed=per_seed,
        horizon=horizon,
        seeds=[int(s) for s in seeds],
    )
    return comp, traces


# -- export ------------------------------------------------------------------------


def _vector_names(prefix: str, dim: int) -> list[str]:
    return [prefix] if dim == 1 else [f"{prefix}{i + 1}" for i in range(dim)]


def trace_header(state_dim: int, input_dim: int, output_dim: int) -> list[str]:
    return (
        ["k"]
        + [f"x{i + 1}" for i in range(state_dim)]
        + [f"xhat{i + 1}" for i in range(state_dim)]
        + ["trSigma"]
        + _vector_names("u", input_dim)
        + _vector_names("y", output_dim)
        + ["stage_cost", "sumx"]
    )


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_trace_csv(trace: Trace, path, state_dim=None, input_dim=None, output_dim=None) -> None:
    """One row per step ``k = 0..N``; the terminal row leaves u, y, stage_cost empty."""
    n = trace.x_true.shape[1] if trace.x_true.size else (state_dim or 3)
    r_u = trace.u.shape[1] if trace.u.ndim == 2 and trace.u.shape[1] else (input_dim or 1)
    r_y = trace.y.shape[1] if trace.y.ndim == 2 and trace.y.shape[1] else (output_dim or 1)
    header = trace_header(n, r_u, r_y)
    tr = trace.tr_cov
    sumx = trace.sumx
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for k in range(len(trace.x_true)):
            row = [str(k)]
            row += [_fmt(v) for v in trace.x_true[k]]
            row += [_fmt(v) for v in trace.x_est[k]]
            row.append(_fmt(tr[k]))
            if k < trace.horizon:
                row += [_fmt(v) for v in trace.u[k]]
                row += [_fmt(v) for v in trace.y[k]]
                row.append(_fmt(trace.stage_cost[k]))
            else:
                row += [""] * (r_u + r_y + 1)
            row.append(_fmt(sumx[k]))
            writer.writerow(row)


def read_trace_csv(path) -> dict[str, np.ndarray]:
    """Parse a trace CSV into column arrays (empty cells become NaN)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(c) if c else np.nan for c in r] for r in reader]
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def plot_traces(ce: Trace, soc: Trace, directory) -> list[Path]:
    """SVG figures: sum(x) and tr(Sigma) versus k, and true versus estimated states."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    directory = Path(directory)
    paths = []
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    for t, label in ((ce, "CE-LQR"), (soc, "SOC-LQR")):
        top.plot(t.sumx, label=label, lw=0.8)
        bottom.plot(t.tr_cov, label=label, lw=0.8)
    top.axhline(3.0, color="k", ls="--", lw=0.6)
    top.set_ylabel("sum x")
    bottom.set_ylabel("tr Sigma")
    bottom.set_xlabel("k")
    top.legend()
    paths.append(directory / "sumx_trace.svg")
    fig.savefig(paths[-1], metadata={"Date": None})
    plt.close(fig)

    n = ce.x_true.shape[1]
    fig, axes = plt.subplots(n, 2, figsize=(9, 1.6 * n), sharex=True, squeeze=False)
    for col, (t, label) in enumerate(((ce, "CE-LQR"), (soc, "SOC-LQR"))):
        for i in range(n):
            axes[i, col].plot(t.x_true[:, i], lw=0.7, label="true")
            axes[i, col].plot(t.x_est[:, i], lw=0.7, label="estimate")
            axes[i, col].set_ylabel(f"x{i + 1}")
        axes[0, col].set_title(label)
    axes[0, 0].legend()
    paths.append(directory / "true_vs_estimate.svg")
    fig.savefig(paths[-1], metadata={"Date": None})
    plt.close(fig)
    return paths
