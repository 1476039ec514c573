from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Any, Sequence

import pandas as pd
import yaml

from .parse_config import (
    ConfigValidationError,
    load_eigenvalues,
    load_simulation_config,
    parse_float_list,
    parse_measure_spec,
    parse_rank_groups,
)
from .report_rows import SUMMARY_COLUMNS, to_summary_rows
from .sampling import EntryDistribution
from .simulate import SimulationError, run_monte_carlo
from .spectral_models import AspectRatios, EigenSample, SpectralMeasure
from .spectrum import AtomCollision, SpectrumError, lsd_support, phase_transition_limit
from .stieltjes import EXCLUSION_RATIO, estimate_spikes

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
IN_SUPPORT_OF_H = "in support of H"

LIMIT_COLUMNS = ["alpha", "kind", "limit", "psi_prime", "condition_ii", "critical_point"]
SUPPORT_COLUMNS = ["interval", "lower", "upper"]
ESTIMATE_COLUMNS = ["spike", "ranks", "per_rank", "pooled", "errors"]


def _measure(value: str) -> SpectralMeasure:
    try:
        return parse_measure_spec(value)
    except ConfigValidationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _floats(value: str) -> tuple[float, ...]:
    try:
        return parse_float_list(value)
    except ConfigValidationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _add_ratios(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--atoms", type=_measure, required=True, help="Population measure H as t:w[,t:w...]")
    parser.add_argument("--c1", type=float, required=True, help="Limit of p/n1")
    parser.add_argument("--c2", type=float, required=True, help="Limit of p/n2 (< 1)")
    parser.add_argument("--csv", type=Path, help="Also write the table to this CSV file")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spiked-fisher",
        description="Spiked eigenvalues of high-dimensional generalized Fisher matrices",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug logging")
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    limits = commands.add_parser(
        "limits",
        help="Classify spikes and compute their eigenvalue limits",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    _add_ratios(limits)
    limits.add_argument("--spikes", type=_floats, required=True, help="Spike values, e.g. 10,7.5,0.2")
    limits.add_argument("--delta", type=float, help="Minimum distance of a spike from the atoms of H")

    support = commands.add_parser(
        "support",
        help="Support intervals of the limiting spectral distribution",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    _add_ratios(support)

    estimate = commands.add_parser(
        "estimate",
        help="Estimate population spikes from a file of sample eigenvalues",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    estimate.add_argument("eigenvalues", type=Path, help="Text file, one eigenvalue per line, descending")
    estimate.add_argument("--n1", type=int, required=True, help="First sample size")
    estimate.add_argument("--n2", type=int, required=True, help="Second sample size (> p)")
    estimate.add_argument(
        "--ranks",
        nargs="+",
        required=True,
        metavar="LABEL=R[,R...]",
        help="Labeled 1-based rank groups, e.g. a1=1 a2=2,3 a4=p",
    )
    estimate.add_argument("--exclusion-ratio", type=float, default=EXCLUSION_RATIO, help="Relative radius of J0")
    estimate.add_argument("--csv", type=Path, help="Also write the table to this CSV file")

    simulate = commands.add_parser(
        "simulate",
        help="Monte Carlo study of the spike estimator",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    simulate.add_argument("config", nargs="?", type=Path, help="Optional YAML config; flags override its values")
    simulate.add_argument("--p", type=int, help="Dimension")
    simulate.add_argument("--n1", type=int, help="First sample size (default 2p)")
    simulate.add_argument("--n2", type=int, help="Second sample size (default 4p)")
    simulate.add_argument("--dist", choices=[d.value for d in EntryDistribution], help="Entry distribution")
    simulate.add_argument("--reps", type=int, help="Number of replications (default 500)")
    simulate.add_argument("--seed", type=int, help="Master seed (default 0)")
    simulate.add_argument("--exclusion-ratio", type=float, help="Relative radius of J0 (default 0.2)")
    simulate.add_argument("--rho", type=float, help="Toeplitz correlation of the rotation (default 0.5)")
    simulate.add_argument("--top-spikes", type=_floats, help="Leading spikes (default 10,7.5,7.5)")
    simulate.add_argument("--bottom-spikes", type=_floats, help="Trailing spikes (default 0.2,0.2,0.1)")
    simulate.add_argument("--spike-growth", type=float, help="Scale leading spikes by (p/100)**growth")
    simulate.add_argument("--workers", type=int, help="Worker processes (default 1)")
    simulate.add_argument("--bins", type=int, help="Histogram bins (default 40)")
    simulate.add_argument("--out-dir", type=Path, help="Directory for CSV artifacts (default output)")
    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.6g}"
    return "" if value is None else str(value)


def _emit(rows: list[dict[str, Any]], columns: list[str], csv_path: Path | None) -> None:
    """Print rows at 6 significant digits; the optional CSV keeps full precision."""
    frame = pd.DataFrame(rows, columns=columns)
    if frame.empty:
        print("(no rows)")
    else:
        print(frame.map(_fmt).to_string(index=False))
    if csv_path is not None:
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(csv_path, index=False, encoding="utf-8", lineterminator="\n")


def _ratios(args: argparse.Namespace) -> AspectRatios:
    try:
        return AspectRatios(args.c1, args.c2)
    except ValueError as exc:
        raise ConfigValidationError(str(exc)) from exc


def cmd_limits(args: argparse.Namespace) -> int:
    H: SpectralMeasure = args.atoms
    c = _ratios(args)
    rows: list[dict[str, Any]] = []
    collided = False
    for alpha in args.spikes:
        try:
            result = phase_transition_limit(alpha, H, c, args.delta)
        except AtomCollision:
            collided = True
            rows.append({"alpha": alpha, "kind": IN_SUPPORT_OF_H})
            continue
        except ValueError as exc:
            raise ConfigValidationError(f"spike {alpha!r}: {exc}") from exc
        rows.append(
            {
                "alpha": alpha,
                "kind": result.kind.value,
                "limit": result.limit,
                "psi_prime": result.psi_prime,
                "condition_ii": result.condition_ii,
                "critical_point": result.critical_point,
            }
        )
    _emit(rows, LIMIT_COLUMNS, args.csv)
    return 2 if collided else 0


def cmd_support(args: argparse.Namespace) -> int:
    support = lsd_support(args.atoms, _ratios(args))
    rows = [{"interval": i, "lower": lo, "upper": hi} for i, (lo, hi) in enumerate(support.intervals, start=1)]
    _emit(rows, SUPPORT_COLUMNS, args.csv)
    if support.zero_mass > 0:
        print(f"atom at 0 with mass {support.zero_mass:.6g}")
    return 0


def cmd_estimate(args: argparse.Namespace) -> int:
    values = load_eigenvalues(args.eigenvalues)
    try:
        sample = EigenSample(values=tuple(values), p=len(values), n1=args.n1, n2=args.n2)
    except ValueError as exc:
        raise ConfigValidationError(f"{args.eigenvalues}: {exc}") from exc
    groups = parse_rank_groups(args.ranks, sample.p)

    results = estimate_spikes(sample, groups, args.exclusion_ratio)
    rows = [
        {
            "spike": label,
            "ranks": ",".join(str(r) for r in est.ranks),
            "per_rank": ",".join(_fmt(v) for v in est.per_rank),
            "pooled": est.pooled,
            "errors": "; ".join(f"rank {r}: {msg}" for r, msg in sorted(est.errors.items())),
        }
        for label, est in results.items()
    ]
    _emit(rows, ESTIMATE_COLUMNS, args.csv)
    if not any(est.ok for est in results.values()):
        print("Error: every spike group failed to estimate", file=sys.stderr)
        return 2
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    overrides = {
        "p": args.p,
        "n1": args.n1,
        "n2": args.n2,
        "dist": args.dist,
        "reps": args.reps,
        "seed": args.seed,
        "exclusion_ratio": args.exclusion_ratio,
        "rho": args.rho,
        "top_spikes": None if args.top_spikes is None else list(args.top_spikes),
        "bottom_spikes": None if args.bottom_spikes is None else list(args.bottom_spikes),
        "spike_growth": args.spike_growth,
        "workers": args.workers,
        "bins": args.bins,
        "out_dir": None if args.out_dir is None else str(args.out_dir),
    }
    config = load_simulation_config(args.config, overrides)
    report = run_monte_carlo(config)
    _emit(to_summary_rows(report), SUMMARY_COLUMNS, None)
    if config.out_dir is not None:
        print(f"wrote results to {config.out_dir}")
    return 0


_COMMANDS = {
    "limits": cmd_limits,
    "support": cmd_support,
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)

    try:
        return _COMMANDS[args.command](args)
    except (yaml.YAMLError, ConfigValidationError, SimulationError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"Error: file not found: {exc.filename}", file=sys.stderr)
        return 1
    except (SpectrumError, OSError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # Unexpected
        logger.debug("unexpected failure", exc_info=True)
        print(f"Unexpected error in {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
