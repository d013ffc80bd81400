import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import pandas as pd

from ..models import (
    ClassGroup,
    GradCheckResult,
    ImbalanceStats,
    MetricsReport,
    RunConfig,
    SplitPlan,
    SplitSpec,
    SyntheticWorld,
    TrainResult,
    WorldKind,
)
from . import config_service, diagnostics, splits, trainer
from .errors import NumericalError
from .gradcheck import run_grad_checks
from .mlp import MlpModel, load_checkpoint, save_checkpoint
from .numkit import Rng
from .worlds import build_world, cell_counts, draw_dataset

logger = logging.getLogger(__name__)

REPORT_COLUMNS = [
    "run",
    "average",
    "many",
    "medium",
    "few",
    "avg_gamma",
    "small_margin_prob",
    "posterior_discrepancy",
    "prior_discrepancy_ss",
    "prior_discrepancy_st",
]
CORRELATION_COLUMNS = ["quantity", "r", "p_value"]
CORRELATED_QUANTITIES = ["avg_gamma", "small_margin_prob", "posterior_discrepancy"]
MIN_RUNS_FOR_CORRELATION = 3


class ExperimentService:
    """
    Runs the pipeline behind every command: split generation, training,
    evaluation, gradient audits and cross-run reports.

    Evaluation shards are spread over a thread pool of `eval_workers`.
    """

    def __init__(self, eval_workers: int = 1):
        self.eval_workers = max(1, int(eval_workers))
        self.executor = ThreadPoolExecutor(max_workers=self.eval_workers) if self.eval_workers > 1 else None

    def generate_splits(self, spec: SplitSpec, out_path: Path) -> Tuple[SplitPlan, ImbalanceStats]:
        plan = splits.generate_plan(spec, Rng(spec.seed).substream("splits"))
        stats = splits.compute_stats(plan)
        splits.write_plan(plan, out_path)
        return plan, stats

    def _groups(self, config: RunConfig, world: SyntheticWorld) -> List[ClassGroup]:
        many, few = config.split.many_threshold, config.split.few_threshold
        if config.world.kind == WorldKind.PLAN:
            plan = splits.read_plan(config.world.plan_path)
            many, few = plan.many_threshold, plan.few_threshold
        counts = cell_counts(world)[world.source_domains]
        return splits.group_classes(SplitPlan(counts=counts.tolist(), many_threshold=many, few_threshold=few))

    def _eval_totals(self, config: RunConfig, world: SyntheticWorld) -> Optional[List[int]]:
        if config.world.eval_total is None:
            return None
        return [config.world.eval_total] * world.num_domains

    def _evaluate(self, config: RunConfig, world: SyntheticWorld, model: MlpModel) -> MetricsReport:
        rng = Rng(config.train.seed)
        eval_data = draw_dataset(world, rng.substream("eval-data"), totals=self._eval_totals(config, world))
        return trainer.evaluate(
            model,
            eval_data,
            world.source_domains,
            world.target_domains,
            self._groups(config, world),
            config.diagnostics,
            seed=config.train.seed,
            executor=self.executor,
        )

    def run_training(self, config: RunConfig) -> Tuple[TrainResult, MetricsReport, Path]:
        out_dir = Path(config.output.out_dir)
        world = build_world(config.world)
        rng = Rng(config.train.seed)
        train_data = draw_dataset(world, rng.substream("train-data"), domains=world.source_domains)
        layer_sizes = [world.dim, *config.train.hidden, world.num_classes]
        model = MlpModel.initialize(layer_sizes, rng.substream("init"), config.train.activation)

        config_service.write_resolved_config(config, out_dir)
        result = trainer.train(model, config.train, train_data, world.source_domains)
        report = self._evaluate(config, world, result.model)

        save_checkpoint(result.model, out_dir / config.output.checkpoint)
        trainer.write_loss_log(result.log, out_dir / config.output.loss_log)
        diagnostics.write_metrics(report, out_dir / config.output.metrics)
        return result, report, out_dir

    def evaluate_run(self, run_dir: Path, out_path: Optional[Path] = None) -> MetricsReport:
        run_dir = Path(run_dir)
        config = config_service.load_resolved_config(run_dir / "resolved_config.json")
        model = load_checkpoint(run_dir / config.output.checkpoint)
        report = self._evaluate(config, build_world(config.world), model)
        if out_path is not None:
            diagnostics.write_metrics(report, out_path)
        return report

    def grad_check(self, targets: Sequence[str], trials: int, seed: int) -> List[GradCheckResult]:
        return run_grad_checks(targets, trials, seed)

    def collect_report(self, run_dirs: Sequence[Path]) -> Tuple[pd.DataFrame, Optional[pd.DataFrame]]:
        """
        One row per readable run directory; correlations with accuracy once
        there are at least three runs. Unreadable runs are skipped.
        """
        rows = []
        for run_dir in map(Path, run_dirs):
            try:
                config = config_service.load_resolved_config(run_dir / "resolved_config.json")
                report = diagnostics.read_metrics(run_dir / config.output.metrics)
            except (FileNotFoundError, ValueError, KeyError) as e:
                logger.warning("skipping run directory %s: %s", run_dir, e)
                continue
            rows.append(
                {
                    "run": str(run_dir),
                    "average": report.accuracy,
                    "many": report.group_accuracy.get(ClassGroup.MANY),
                    "medium": report.group_accuracy.get(ClassGroup.MEDIUM),
                    "few": report.group_accuracy.get(ClassGroup.FEW),
                    "avg_gamma": report.avg_gamma,
                    "small_margin_prob": report.small_margin_prob,
                    "posterior_discrepancy": report.posterior_discrepancy,
                    "prior_discrepancy_ss": report.prior_discrepancy_ss,
                    "prior_discrepancy_st": report.prior_discrepancy_st,
                }
            )
        table = pd.DataFrame(rows, columns=REPORT_COLUMNS)
        if len(table) < MIN_RUNS_FOR_CORRELATION:
            return table, None

        correlations = []
        for quantity in CORRELATED_QUANTITIES:
            try:
                r, p_value = diagnostics.pearson(table[quantity].to_numpy(), table["average"].to_numpy())
            except NumericalError as e:
                logger.warning("no correlation for %s: %s", quantity, e)
                continue
            correlations.append({"quantity": quantity, "r": r, "p_value": p_value})
        return table, pd.DataFrame(correlations, columns=CORRELATION_COLUMNS)

    def close(self):
        if self.executor is not None:
            self.executor.shutdown(wait=True)


def report_paths(out_path: Path) -> Tuple[Path, Path]:
    """The runs table and the correlations table written for `report --out`."""
    out_path = Path(out_path)
    return out_path, out_path.with_name(f"{out_path.stem}_correlations{out_path.suffix or '.csv'}")


def write_report(table: pd.DataFrame, correlations: Optional[pd.DataFrame], out_path: Path) -> List[Path]:
    runs_path, corr_path = report_paths(out_path)
    runs_path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(runs_path, index=False, lineterminator="\n", float_format="%.17g")
    written = [runs_path]
    if correlations is not None:
        correlations.to_csv(corr_path, index=False, lineterminator="\n", float_format="%.17g")
        written.append(corr_path)
    return written


def read_report(out_path: Path) -> Tuple[pd.DataFrame, Optional[pd.DataFrame]]:
    runs_path, corr_path = report_paths(out_path)
    table = pd.read_csv(runs_path, float_precision="round_trip")
    correlations = pd.read_csv(corr_path, float_precision="round_trip") if corr_path.exists() else None
    return table, correlations
