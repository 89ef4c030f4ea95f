"""Command-line entry point: ``adaptrait <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import MODES, load_config
from .models import ModelKind
from .report import fmt3
from . import study

RUNNERS = {
    "simulate": study.run_simulate,
    "abc-reject": study.run_abc_reject,
    "abc-mcmc": study.run_abc_mcmc,
    "model-select": study.run_empirical,
    "sim-study": study.run_sim_study,
}


def _common(p: argparse.ArgumentParser) -> None:
    # defaults are None so config-file values survive unless a flag is given
    p.add_argument("--config", help="YAML key-value configuration file")
    p.add_argument("--tree", help="Newick tree file")
    p.add_argument("--traits", help="trait CSV (species,y,x1,...,xk)")
    p.add_argument("--model", help="model kind(s), comma separated: "
                   + ", ".join(m.value for m in ModelKind))
    p.add_argument("--priors", choices=["uniform", "informative", "empirical"])
    p.add_argument("--reps", type=int, help="replicates per model (default 5000, 50000 with --full)")
    p.add_argument("--tol", type=float, help="acceptance rate")
    p.add_argument("--epsilon", type=float, help="fixed distance threshold instead of --tol")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--full", action="store_true", default=None,
                   help="full-scale settings (50000 reps, n in 10,20,50,100)")
    p.add_argument("--steps", type=int, help="grid steps per branch for stochastic integrals")
    p.add_argument("--adjust", action="store_true", default=None,
                   help="apply local-linear regression adjustment")
    p.add_argument("--no-heteroscedastic", dest="heteroscedastic", action="store_false",
                   default=None, help="skip the heteroscedasticity correction")
    p.add_argument("--joint-stats", action="store_true", default=None,
                   help="nearest neighbours in joint trait space")
    p.add_argument("--delta", type=float, help="ABC-MCMC distance threshold")
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.add_argument("--chain", type=int, dest="chain_length", help="ABC-MCMC chain length")
    p.add_argument("--sizes", help="taxa sizes for sim-study, comma separated")
    p.add_argument("--tips", type=int, dest="n_tips", help="tips of the simulated tree")
    p.add_argument("--workers", type=int, help="worker processes (results do not depend on it)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptrait",
                                     description="Adaptive trait evolution simulation and ABC.")
    sub = parser.add_subparsers(dest="mode", required=True)
    helps = {
        "simulate": "simulate trait datasets from the true parameters",
        "abc-reject": "rejection ABC for each model on observed data",
        "abc-mcmc": "ABC-MCMC for each model on observed data",
        "model-select": "empirical pipeline: ranking, Bayes factors, estimates",
        "sim-study": "simulation study tables across taxa sizes",
    }
    for mode in MODES:
        _common(sub.add_parser(mode, help=helps[mode]))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in ("config", "verbose")}
    if overrides.get("sizes"):
        overrides["sizes"] = [int(s) for s in overrides["sizes"].split(",")]
    try:
        config = load_config(args.config, overrides)
        result = RUNNERS[config.mode](config)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if config.mode == "model-select":
        print("ranking:", " > ".join(result["ranking"]["order"]))
        for pair, entry in result["kass_raftery"].items():
            print(f"  K({pair}) = {fmt3(entry['K'])}  {entry['label']}")
    print(f"outputs written to {config.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
