"""``resprune`` command line: train, eval, flops, report, selftest.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O error
(missing or corrupt data), 4 numeric fault, 1 any failed self-test.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError, ContractViolation, IngestionError, NumericFaultError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _cmd_train(args) -> int:
    from .experiment.config import load_config
    from .experiment.runner import run_experiment

    cfg = load_config(args.config)
    changes = {}
    if args.epochs is not None:
        changes["epochs"] = args.epochs
    if args.data_dir is not None:
        changes["data_dir"] = args.data_dir
    if args.out is not None:
        changes["output_dir"] = args.out
    cfg = cfg.with_overrides(**changes)
    out = cfg.output_dir or str(Path(args.config).with_suffix("")) + "_run"
    result = run_experiment(cfg, out, resume=not args.no_resume, stop_after=args.stop_after)
    if result is None:
        print(f"stopped after epoch {args.stop_after}; rerun to resume from {out}")
    else:
        print(result.to_json(), end="")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .data import NormalizationStats, load_cifar10, normalize, synthetic_dataset
    from .experiment.runner import evaluate

    model = load_checkpoint(args.checkpoint).build_model()
    if args.synthetic:
        train = synthetic_dataset(args.synthetic, split="train")
        test = synthetic_dataset(args.synthetic, split="test")
    else:
        train, test = load_cifar10(args.data_dir or _env_dir())
    if args.subset:
        test = test.subset(args.subset)
    test = normalize(test, NormalizationStats.from_dataset(train))
    print(f"accuracy {evaluate(model, test):.2f}% on {len(test)} images")
    return EXIT_OK


def _env_dir():
    from .data import default_data_dir
    return default_data_dir()


def _cmd_flops(args) -> int:
    from .flops import model_flops
    from .models import ModelSpec

    if args.config:
        from .experiment.config import load_config
        from .experiment.runner import planned_flops
        report = planned_flops(load_config(args.config))
    elif args.depth is None:
        raise ConfigError("flops needs --depth or --config")
    else:
        report = model_flops(ModelSpec(args.depth), keep_ratio=args.keep_ratio, scope=args.scope,
                             counting=args.counting)
    print(report.render())
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    return EXIT_OK


def _cmd_report(args) -> int:
    from .experiment.report import emit_results_table, emit_scatter_plot, load_results

    results = load_results(args.runs)
    out = Path(args.out or args.runs)
    table = emit_results_table(results)
    txt, cs = table.write(out)
    print(table.text, end="")
    if not results:
        print("warning: no run results found; wrote header-only table", file=sys.stderr)
        return EXIT_OK
    info = emit_scatter_plot(results, out / "mflops_vs_accuracy.svg")
    print(f"wrote {txt}, {cs}, {info.path}")
    return EXIT_OK


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest()
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    from .flops import COUNTING_RULES
    from .pruning import SCOPE_POLICIES

    p = _Parser(prog="resprune", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run one experiment from a config file")
    t.add_argument("--config", required=True, help="key = value config file")
    t.add_argument("--data-dir", help="CIFAR-10 binary directory (overrides data.dir)")
    t.add_argument("--out", help="output directory (overrides output.dir)")
    t.add_argument("--epochs", type=int, help="override the epoch count")
    t.add_argument("--stop-after", type=int, help="stop after this 0-based epoch (resumable)")
    t.add_argument("--no-resume", action="store_true", help="ignore an existing checkpoint")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="test accuracy of a saved checkpoint")
    e.add_argument("--checkpoint", required=True, help="checkpoint file")
    e.add_argument("--data-dir", help="CIFAR-10 binary directory")
    e.add_argument("--subset", type=int, default=0, help="evaluate the first N test images")
    e.add_argument("--synthetic", type=int, default=0, metavar="N",
                   help="use N synthetic samples instead of CIFAR-10")
    e.set_defaults(func=_cmd_eval)

    f = sub.add_parser("flops", help="print a per-layer MAC report")
    f.add_argument("--depth", type=int, help="ResNet depth")
    f.add_argument("--config", help="take depth and pruning settings from a config file")
    f.add_argument("--keep-ratio", type=float, help="filter keep ratio (omit for dense)")
    f.add_argument("--scope", default="all", choices=SCOPE_POLICIES, help="prune scope policy")
    f.add_argument("--counting", default="nominal", choices=COUNTING_RULES,
                   help="how kept widths are counted")
    f.add_argument("--csv", help="also write the report as CSV")
    f.set_defaults(func=_cmd_flops)

    r = sub.add_parser("report", help="results table and scatter plot from run results")
    r.add_argument("--runs", required=True, help="directory of result JSON files")
    r.add_argument("--out", help="output directory (default: --runs)")
    r.set_defaults(func=_cmd_report)

    s = sub.add_parser("selftest", help="gradient, FLOP and compaction checks")
    s.set_defaults(func=_cmd_selftest)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (ConfigError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IngestionError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericFaultError as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
