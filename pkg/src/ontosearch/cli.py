"""Command-line entry point: ``ontosearch personalize`` and ``ontosearch study <name>``."""
from __future__ import annotations

import argparse
import logging
import sys

from .envmodel import ConfigError, NoPathError
from .harness import FORMATS, PRIORS, STUDIES, ExperimentConfig, emit, personalize_report
from .planner import DEFAULT_ALPHA, LTOS_ALPHA, PLANNERS

log = logging.getLogger("ontosearch")


def parse_int_list(text: str) -> tuple[int, ...]:
    """Parse ``"0-4,7,9"`` into ``(0, 1, 2, 3, 4, 7, 9)``."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            if sep:
                a, b = int(lo), int(hi)
                if b < a:
                    raise argparse.ArgumentTypeError(f"empty range {part!r}")
                out.extend(range(a, b + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise argparse.ArgumentTypeError(f"not an integer list: {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("list must not be empty")
    return tuple(out)


def _name_list(choices):
    def parse(text: str) -> tuple[str, ...]:
        names = tuple(n.strip() for n in text.split(",") if n.strip())
        bad = [n for n in names if n not in choices]
        if bad or not names:
            raise argparse.ArgumentTypeError(f"expected a comma list from {', '.join(choices)}")
        return names
    return parse


def _common(p: argparse.ArgumentParser):
    p.add_argument("--env", help="environment JSON (default: bundled reference house)")
    p.add_argument("--seeds", type=parse_int_list, default=tuple(range(20)),
                   help="seed list such as 0-19 or 1,2,5 (default 0-19)")
    p.add_argument("--max-episodes", type=int, default=200)
    p.add_argument("--snapshots", type=parse_int_list, default=(15, 30),
                   help="personalization snapshot episodes (termination is always added)")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="adaptive utility scale")
    p.add_argument("--ltos-alpha", type=float, default=LTOS_ALPHA)
    p.add_argument("--counts", help="empirical co-occurrence counts CSV")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for personalization")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--format", choices=FORMATS, default="csv")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ontosearch",
                                     description="Personalized object-search experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("personalize", help="run personalization episodes per seed")
    _common(p)
    p.add_argument("--prior", choices=PRIORS, default="uniform")

    p = sub.add_parser("study", help="run one of the search studies")
    p.add_argument("study", choices=sorted(STUDIES))
    _common(p)
    p.add_argument("--prior", type=_name_list(PRIORS), default=PRIORS,
                   help="initial estimates to compare (initial-estimates only)")
    p.add_argument("--planner", type=_name_list(PLANNERS), default=PLANNERS,
                   help="planners to include (compare/enhancement)")
    return parser


def config_from_args(args) -> ExperimentConfig:
    kw = dict(env_path=args.env, seeds=args.seeds, max_episodes=args.max_episodes,
              snapshots=args.snapshots, alpha=args.alpha, ltos_alpha=args.ltos_alpha,
              counts_path=args.counts, jobs=args.jobs)
    if args.command == "study":
        kw.update(priors=args.prior, planners=args.planner)
    else:
        kw.update(priors=(args.prior,))
    return ExperimentConfig(**kw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "personalize":
            report = personalize_report(cfg, args.prior)
        else:
            report = STUDIES[args.study](cfg)
        paths = emit(report, args.out, args.format)
    except (ConfigError, NoPathError, ValueError, KeyError, OSError) as exc:
        print(f"ontosearch: error: {exc}", file=sys.stderr)
        return 1
    print(f"{report.name}: config {report.provenance.get('config_hash')}")
    for path in paths:
        print(f"  wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
