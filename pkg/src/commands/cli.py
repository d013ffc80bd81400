import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from pydantic import ValidationError

from ..models import LossVariant, MarginSurrogate, OutputConfig, PrototypeDenominator, Regime, WorldKind
from ..services import ExperimentService, NdclError, TrainingError
from ..services import config_service
from ..services.experiment_service import write_report
from ..services.gradcheck import GRAD_CHECK_TARGETS

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class CommandError(Exception):
    """Raised by a command handler; carries the process exit code."""

    def __init__(self, exit_code: int, detail: str):
        super().__init__(detail)
        self.exit_code = exit_code
        self.detail = detail


class UsageParser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so usage errors flow through CommandError."""

    def error(self, message):
        raise CommandError(EXIT_USAGE, message)


def _validation_detail(e: ValidationError) -> str:
    return "; ".join(err["msg"].removeprefix("Value error, ") for err in e.errors())


def _env_defaults() -> Dict[str, Dict[str, Any]]:
    defaults: Dict[str, Dict[str, Any]] = {"output": {}}
    if os.getenv("NDCL_OUTPUT_DIR"):
        defaults["output"]["out_dir"] = os.getenv("NDCL_OUTPUT_DIR")
    if os.getenv("NDCL_EVAL_WORKERS"):
        defaults["output"]["eval_workers"] = os.getenv("NDCL_EVAL_WORKERS")
    return defaults


def _eval_workers(flag: Optional[int]) -> int:
    output = _env_defaults()["output"]
    if flag is not None:
        output["eval_workers"] = flag
    try:
        return OutputConfig(**output).eval_workers
    except ValidationError as e:
        raise CommandError(EXIT_USAGE, _validation_detail(e))


def _resolve(args: argparse.Namespace, flags: Dict[str, Dict[str, Any]]):
    try:
        return config_service.resolve_config(args.config, flags, _env_defaults())
    except FileNotFoundError as e:
        raise CommandError(EXIT_USAGE, str(e))
    except ValidationError as e:
        raise CommandError(EXIT_USAGE, _validation_detail(e))
    except NdclError as e:
        raise CommandError(EXIT_USAGE, str(e))


def _format_stats_table(stats) -> List[str]:
    lines = ["statistic\tdomain\tvalue", f"CR\t-\t{stats.cr:.4f}", f"DR\t-\t{stats.dr:.4f}"]
    lines.extend(f"ECR\t{d}\t{value:.4f}" for d, value in enumerate(stats.ecr))
    return lines


def create_command_routes(service_factory: Callable[[int], ExperimentService]) -> argparse.ArgumentParser:
    """
    Create the command parser with one handler per sub-command.

    Commands:
    - generate-splits : writes a split plan and prints CR / DR / ECR
    - train           : trains on a configured world, writes checkpoint, loss log, metrics
    - eval            : re-evaluates the checkpoint of a run directory
    - grad-check      : analytic vs finite-difference audits per objective
    - report          : per-run comparison table and Pearson correlations

    Handlers return an exit code or raise CommandError.
    """
    parser = UsageParser(prog="ndcl", description="Negative-dominant contrastive learning for imbalanced domain generalization.")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=UsageParser)

    splits_cmd = commands.add_parser("generate-splits", help="generate an imbalanced class x domain plan")
    splits_cmd.add_argument("--config", help="INI run configuration")
    splits_cmd.add_argument("--regime", choices=[r.value for r in Regime])
    splits_cmd.add_argument("--classes", type=int)
    splits_cmd.add_argument("--domains", type=int)
    splits_cmd.add_argument("--total", type=int, help="head-class count of a full-size domain")
    splits_cmd.add_argument("--tail", type=float)
    splits_cmd.add_argument("--domain-imbalance", type=float)
    splits_cmd.add_argument("--many", type=int)
    splits_cmd.add_argument("--few", type=int)
    splits_cmd.add_argument("--seed", type=int)
    splits_cmd.add_argument("--out", required=True, help="plan file to write")

    def generate_splits(args: argparse.Namespace) -> int:
        """Write a plan file and echo its statistics"""
        config = _resolve(
            args,
            {
                "split": {
                    "regime": args.regime,
                    "num_classes": args.classes,
                    "num_domains": args.domains,
                    "total_per_domain": args.total,
                    "tail_param": args.tail,
                    "domain_imbalance": args.domain_imbalance,
                    "many_threshold": args.many,
                    "few_threshold": args.few,
                    "seed": args.seed,
                }
            },
        )
        service = service_factory(1)
        try:
            plan, stats = service.generate_splits(config.split, Path(args.out))
        except OSError as e:
            raise CommandError(EXIT_USAGE, f"cannot write plan: {e}")
        except NdclError as e:
            raise CommandError(EXIT_USAGE, str(e))
        finally:
            service.close()
        print(f"plan: {args.out} ({plan.num_domains} domains x {plan.num_classes} classes)")
        for line in _format_stats_table(stats):
            print(line)
        return EXIT_OK

    splits_cmd.set_defaults(handler=generate_splits)

    train_cmd = commands.add_parser("train", help="train a model and evaluate it on the target domains")
    train_cmd.add_argument("--config", help="INI run configuration")
    train_cmd.add_argument("--world", choices=[w.value for w in WorldKind])
    train_cmd.add_argument("--plan", help="split plan file (world kind 'plan')")
    train_cmd.add_argument("--classes", type=int)
    train_cmd.add_argument("--variant", choices=[v.value for v in LossVariant])
    train_cmd.add_argument("--alpha", type=float)
    train_cmd.add_argument("--beta", type=float)
    train_cmd.add_argument("--rho", type=float)
    train_cmd.add_argument("--budget-scale", type=float)
    train_cmd.add_argument("--iterations", type=int)
    train_cmd.add_argument("--batch-size", type=int)
    train_cmd.add_argument("--lr", type=float)
    train_cmd.add_argument("--augment", action=argparse.BooleanOptionalAction, default=None)
    train_cmd.add_argument("--con-on-augmented-only", action=argparse.BooleanOptionalAction, default=None)
    train_cmd.add_argument("--ce-stop-gradient", action=argparse.BooleanOptionalAction, default=None)
    train_cmd.add_argument("--ce-reweighting", action=argparse.BooleanOptionalAction, default=None)
    train_cmd.add_argument("--denominator", choices=[d.value for d in PrototypeDenominator])
    train_cmd.add_argument("--delta", type=float)
    train_cmd.add_argument("--surrogate", choices=[s.value for s in MarginSurrogate])
    train_cmd.add_argument("--seed", type=int)
    train_cmd.add_argument("--workers", type=int)
    train_cmd.add_argument("--out", help="run directory")

    def train(args: argparse.Namespace) -> int:
        """Train, evaluate and write every run artifact"""
        flags = {
            "world": {"kind": "plan" if args.plan and not args.world else args.world, "plan_path": args.plan, "num_classes": args.classes},
            "train": {
                "variant": args.variant,
                "alpha": args.alpha,
                "beta": args.beta,
                "iterations": args.iterations,
                "batch_size": args.batch_size,
                "learning_rate": args.lr,
                "augment": args.augment,
                "con_on_augmented_only": args.con_on_augmented_only,
                "ce_weight_stop_gradient": args.ce_stop_gradient,
                "ce_reweighting": args.ce_reweighting,
                "prototype_denominator": args.denominator,
                "seed": args.seed,
            },
            "mining": {"rho": args.rho, "budget_scale": args.budget_scale},
            "split": {"seed": args.seed},
            "diagnostics": {"delta": args.delta, "surrogate": args.surrogate},
            "output": {"out_dir": args.out, "eval_workers": args.workers},
        }
        config = _resolve(args, flags)
        service = service_factory(config.output.eval_workers)
        try:
            result, report, out_dir = service.run_training(config)
        except FileNotFoundError as e:
            raise CommandError(EXIT_USAGE, str(e))
        except TrainingError as e:
            raise CommandError(EXIT_FAILURE, f"training aborted: {e}")
        except NdclError as e:
            raise CommandError(EXIT_FAILURE, str(e))
        finally:
            service.close()
        last = result.log[-1]
        print(f"run: {out_dir} iterations={last.iteration} final_total={last.total:.6f}")
        print(report.summary_line())
        return EXIT_OK

    train_cmd.set_defaults(handler=train)

    eval_cmd = commands.add_parser("eval", help="re-evaluate the checkpoint of a run directory")
    eval_cmd.add_argument("--run", required=True, help="run directory written by train")
    eval_cmd.add_argument("--workers", type=int)
    eval_cmd.add_argument("--out", help="metrics file to write")

    def evaluate(args: argparse.Namespace) -> int:
        """Re-evaluate a trained run"""
        service = service_factory(_eval_workers(args.workers))
        try:
            report = service.evaluate_run(Path(args.run), Path(args.out) if args.out else None)
        except FileNotFoundError as e:
            raise CommandError(EXIT_USAGE, str(e))
        except ValidationError as e:
            raise CommandError(EXIT_USAGE, _validation_detail(e))
        except NdclError as e:
            raise CommandError(EXIT_FAILURE, str(e))
        finally:
            service.close()
        print(report.summary_line())
        return EXIT_OK

    eval_cmd.set_defaults(handler=evaluate)

    grad_cmd = commands.add_parser("grad-check", help="audit analytic gradients against finite differences")
    grad_cmd.add_argument("--variant", default="all", choices=["all"] + GRAD_CHECK_TARGETS)
    grad_cmd.add_argument("--trials", type=int, default=100)
    grad_cmd.add_argument("--seed", type=int, default=0)

    def grad_check(args: argparse.Namespace) -> int:
        """Print max relative error per target; exit 1 if any trial exceeds its tolerance"""
        if args.trials < 1:
            raise CommandError(EXIT_USAGE, "trials must be at least 1")
        if args.seed < 0:
            raise CommandError(EXIT_USAGE, "seed must be a non-negative integer")
        targets = GRAD_CHECK_TARGETS if args.variant == "all" else [args.variant]
        service = service_factory(1)
        try:
            results = service.grad_check(targets, args.trials, args.seed)
        finally:
            service.close()
        print("target\ttrials\tmax_rel_err\ttolerance\tstatus")
        for result in results:
            status = "pass" if result.passed else "FAIL"
            print(f"{result.target}\t{result.trials}\t{result.max_rel_err:.3e}\t{result.tolerance:.0e}\t{status}")
        failing = [r for r in results if not r.passed]
        if failing:
            detail = "; ".join(f"{r.target}: trial seeds {', '.join(map(str, r.failing_seeds))}" for r in failing)
            raise CommandError(EXIT_FAILURE, f"gradient audit failed ({detail})")
        return EXIT_OK

    grad_cmd.set_defaults(handler=grad_check)

    report_cmd = commands.add_parser("report", help="compare completed runs")
    report_cmd.add_argument("--runs", nargs="+", required=True, help="run directories")
    report_cmd.add_argument("--out", help="CSV file for the runs table")

    def report(args: argparse.Namespace) -> int:
        """Per-run table plus correlations with accuracy"""
        service = service_factory(1)
        try:
            table, correlations = service.collect_report(args.runs)
        finally:
            service.close()
        if table.empty:
            raise CommandError(EXIT_FAILURE, "no valid run directories")
        print(table.to_string(index=False, na_rep="-"))
        if correlations is None:
            print(f"correlations omitted: {len(table)} runs, at least 3 needed")
        else:
            print(correlations.to_string(index=False))
        if args.out:
            for path in write_report(table, correlations, Path(args.out)):
                logger.info("wrote %s", path)
        return EXIT_OK

    report_cmd.set_defaults(handler=report)
    return parser


def run_command(parser: argparse.ArgumentParser, argv: Optional[List[str]] = None) -> int:
    """Parse argv, run the handler and map failures onto exit codes."""
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except CommandError as e:
        print(f"error: {e.detail}", file=sys.stderr)
        return e.exit_code
