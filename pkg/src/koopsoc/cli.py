"""Command line interface: ``koopsoc train | simulate | compare | check``.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import checks
from .errors import ConfigError, NumericalError
from .experiment import TrainedBundle, build_experiment, compare, train
from .harness import (
    Summary,
    average,
    metrics,
    plot_traces,
    run_closed_loop,
    write_json,
    write_trace_csv,
)
from .model import load_model

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def parse_seeds(text: str) -> list[int]:
    """Accept ``7``, ``1..20`` or ``1,4,9`` (and mixtures such as ``1..3,8``)."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..")
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError(f"no seeds in {text!r}")
    return seeds


def cmd_train(args) -> int:
    exp = build_experiment(args.config)
    bundle = train(exp)
    bundle.save(args.out)
    diag = bundle.soc_gain.diagnostics or {}
    print(f"wrote {args.out}")
    print(f"  samples: {bundle.num_samples}  discarded trajectories: {bundle.discarded}")
    print(f"  eDMD residual: {bundle.predictor.residual:.4g}  "
          f"sigma_min: {bundle.predictor.min_singular_value:.3g}")
    print(f"  K_Psi spectral radius (non-constant block): {bundle.soc_gain.spectral_radius:.4f}")
    print(f"  diagnostics: {diag.get('status', 'n/a')}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    bundle = TrainedBundle.load(args.model)
    exp = build_experiment(bundle.config)
    model = load_model(bundle.config["model"])
    horizon = args.horizon or exp.horizon
    seeds = args.seeds or exp.seeds
    controller = bundle.controller(args.controller)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summaries = []
    for seed in seeds:
        trace = run_closed_loop(model, controller, horizon, seed, exp.Q, exp.R)
        write_trace_csv(trace, out / f"trace_{args.controller}_seed{seed}.csv")
        s = metrics(trace, exp.Q, exp.R)
        summaries.append({"seed": seed, **s.to_dict()})
        if trace.error:
            print(f"seed {seed}: stopped early ({trace.error})", file=sys.stderr)
    mean = average([Summary(**{k: v for k, v in s.items() if k != "seed"}) for s in summaries])
    write_json(
        {"controller": args.controller, "horizon": horizon, "seeds": seeds,
         "mean": mean.to_dict(), "per_seed": summaries},
        out / f"summary_{args.controller}.json",
    )
    print(f"{args.controller}: cost {mean.cost:.4g}  epsilon {mean.epsilon:.4g}  "
          f"mean sum x {mean.mean_sumx:.4g}  over {len(seeds)} seed(s)")
    return EXIT_OK


def cmd_compare(args) -> int:
    exp = build_experiment(args.config)
    if args.horizon:
        exp.horizon = args.horizon
    if args.seeds:
        exp.seeds = args.seeds
    comp, bundle, traces = compare(exp, keep_traces=args.plots or args.traces)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(comp.to_dict(), out / "comparison.json")
    bundle.save(out / "model.json")
    if args.traces:
        for t_ce, t_soc in traces:
            write_trace_csv(t_ce, out / f"trace_ce-lqr_seed{t_ce.seed}.csv")
            write_trace_csv(t_soc, out / f"trace_soc-lqr_seed{t_soc.seed}.csv")
    if args.plots and traces:
        plot_traces(*traces[0], out)
    print(comp.table())
    print(f"\nmean sum x: CE {comp.ce.mean_sumx:.3g}, SOC {comp.soc.mean_sumx:.3g};  "
          f"mean tr Sigma: CE {comp.ce.mean_trace_cov:.3g}, SOC {comp.soc.mean_trace_cov:.3g}")
    return EXIT_OK


def cmd_check(args) -> int:
    results = checks.run_all()
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="koopsoc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="collect CE data, fit eDMD, design K_Psi")
    p.add_argument("--config", required=True, help="experiment JSON or built-in name (elu-hw)")
    p.add_argument("--out", required=True, help="output model bundle (JSON)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="closed-loop runs from a trained bundle")
    p.add_argument("--model", required=True, help="bundle written by 'train'")
    p.add_argument("--controller", choices=["soc-lqr", "ce-lqr"], default="soc-lqr")
    p.add_argument("--seeds", type=parse_seeds, help="e.g. 7, 1..20, 1,3,5")
    p.add_argument("--horizon", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="train and compare CE-LQR against SOC-LQR")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=parse_seeds)
    p.add_argument("--horizon", type=int)
    p.add_argument("--traces", action="store_true", help="also write per-seed trace CSVs")
    p.add_argument("--plots", action="store_true", help="write SVG figures for the first seed")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("check", help="run the oracle and invariant checks")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
