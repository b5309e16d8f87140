"""Command-line entry point.

    stochlbfgs run <config.toml> [--seed S] [--out DIR] [--format csv|json]
                                 [--workers TAU] [--quiet]
    stochlbfgs reference <config.toml>
    stochlbfgs check-theory <config.toml>
    stochlbfgs selftest

Exit status: 0 success, 1 configuration or usage error, 2 diverged run or
failed check.
"""

import argparse
import json
import sys

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="run this single seed instead of the config list")
    common.add_argument("--out", help="output directory (default: $STOCHLBFGS_OUT or ./stochlbfgs-out)")
    common.add_argument("--format", choices=("csv", "json"), help="per-run file and stdout format")
    common.add_argument("--workers", type=int, metavar="TAU",
                        help="simulate TAU workers and record communication")
    common.add_argument("--quiet", action="store_true", help="only print errors")

    parser = _Parser(prog="stochlbfgs", description="Stochastic L-BFGS experiment runner.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (("run", "run the optimizer grid of a config file"),
                       ("reference", "compute the reference minimum of a config's problem"),
                       ("check-theory", "run the numerical theory checks")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("config", help="TOML experiment config")
    sub.add_parser("selftest", parents=[common], help="run the built-in invariant suites")
    return parser


def _load(args):
    from .harness import load_config

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.out is not None:
        cfg.out = args.out
    if args.format is not None:
        cfg.format = args.format
    if args.workers is not None:
        cfg.workers = args.workers
    return cfg.validate()


def _emit(args, payload, lines):
    if args.quiet:
        return
    if args.format == "json":
        print(json.dumps(payload, indent=1, sort_keys=True))
    else:
        for line in lines:
            print(line)


def _cmd_run(args):
    from .harness import format_result_json, run_experiment

    cfg = _load(args)
    log = None if (args.quiet or args.format == "json") else print
    result = run_experiment(cfg, log=log)
    lines = [f"wrote {len(result.runs)} run(s) to {result.out_dir}",
             f"reference {result.reference.label} = {result.reference.f!r}"]
    if result.ledger:
        lines.append("ledger:")
        for name, led in result.ledger.items():
            lines.append(f"  {name}: total {led['total']} scalars "
                         f"(gradient {led['gradient_broadcast'] + led['gradient_reduced']}, "
                         f"curvature {led['curvature_broadcast'] + led['curvature_reduced']}, "
                         f"recursion {led['recursion_broadcast'] + led['recursion_reduced']})")
    for r in result.diverged:
        lines.append(f"diverged: {r['name']}: {r['diverged']}")
    _emit(args, format_result_json(result), lines)
    return EXIT_FAILED if result.diverged else EXIT_OK


def _cmd_reference(args):
    from .harness import build_problem, compute_reference

    cfg = _load(args)
    problem, _ = build_problem(cfg)
    ref = compute_reference(problem)
    payload = {k: v for k, v in ref.as_dict().items() if k != "w"}
    _emit(args, payload, [f"{ref.label} = {ref.f!r}", f"grad_norm = {ref.grad_norm:.3e}",
                          f"certified = {ref.certified}"])
    return EXIT_OK


def _cmd_check_theory(args):
    from .harness import check_theory

    cfg = _load(args)
    reports = check_theory(cfg)
    _emit(args, [r.as_dict() for r in reports], [r.line() for r in reports])
    failed = [r for r in reports if r.status == "fail"]
    return EXIT_FAILED if failed else EXIT_OK


def _cmd_selftest(args):
    from .selftest import run_selftest

    reports = run_selftest(seed=args.seed or 0)
    _emit(args, [r.as_dict() for r in reports], [r.line() for r in reports])
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAILED


_COMMANDS = {"run": _cmd_run, "reference": _cmd_reference, "check-theory": _cmd_check_theory,
             "selftest": _cmd_selftest}


def main(argv=None):
    from .harness import ConfigError

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"stochlbfgs: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
