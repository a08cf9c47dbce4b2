"""Baseline vs gated evaluation, run reports and wall-clock benchmarking"""

import csv
import io
import logging
import statistics
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel

from .babi import Sample
from .cost_model import COST_TABLE_COLUMNS, CostParams, cost_table_rows, cross_check, measure_psi
from .engine import HopPolicy, embed_memories, forward
from .gate import Gate, classification_metrics, label_from_outcomes
from .pool import QueryPool, merge_ledgers
from .pruning import FcOrigin, PrunedFC, route_weighted_pruning_ratio
from .state import AppMode, HyperParams, ModelWeights, Prediction, Route, Variant
from .utils import atomic_write_text

logger = logging.getLogger(__name__)


class TaskReport(BaseModel):
    """Per-task (or pooled, task_id 0) evaluation results"""
    task_id: int
    n_queries: int
    accuracy_baseline: float
    accuracy_adaptive: float
    zeta_e: float
    false_positive: float
    false_negative: float
    pruning_ratio: float
    psi_e: Optional[float]
    psi_h: Optional[float]
    flops_baseline_mean: float
    flops_adaptive_mean: float
    cr_analytic: float
    cr_measured: float
    gap_abs: float
    gap_rel: float
    gap_budget: float
    within_budget: bool
    wall_ns_baseline: float
    wall_ns_adaptive: float


class RunReport(BaseModel):
    scenario: str
    mode: AppMode
    variant: Variant
    theta_zs: Optional[float] = None
    seed: int = 0
    flagged_tasks: list[int] = []
    tasks: list[TaskReport]
    pooled: TaskReport


class BenchReport(BaseModel):
    """Wall-clock time of one pass over the queries, summed from per-query medians"""
    n_queries: int
    n_s: int
    repeat: int
    zeta_e: float
    wall_ns_baseline: float
    wall_ns_adaptive: float

    @property
    def ratio(self) -> float:
        return self.wall_ns_adaptive / self.wall_ns_baseline if self.wall_ns_baseline else float("nan")


class _Timed(BaseModel):
    prediction: Prediction
    wall_ns: int


class _QueryRun(BaseModel):
    baseline: _Timed
    adaptive: _Timed
    one_hop: Prediction


def _time(fn) -> _Timed:
    start = time.perf_counter_ns()
    prediction = fn()
    return _Timed(prediction=prediction, wall_ns=time.perf_counter_ns() - start)


def _memories(weights: ModelWeights, hyper: HyperParams, sample: Sample):
    """Pre-embedded memories for one sample; None in interactive mode"""
    if hyper.app_mode == AppMode.PRE_EMBEDDED:
        return embed_memories(weights, hyper, sample)
    return None


def _task_report(
    task_id: int,
    samples: Sequence[Sample],
    baseline: Sequence[_Timed],
    adaptive: Sequence[_Timed],
    one_hop: Sequence[Prediction],
    hyper: HyperParams,
    fc_e: PrunedFC,
    fc_h: PrunedFC,
    theta_zs: Optional[float],
) -> TaskReport:
    n = len(samples)
    answers = np.array([s.answer_id for s in samples])
    base_answers = np.array([t.prediction.answer_id for t in baseline])
    gated_answers = np.array([t.prediction.answer_id for t in adaptive])
    routes = [t.prediction.route for t in adaptive]

    labels = [
        label_from_outcomes(one.answer_id == s.answer_id, b.prediction.answer_id == s.answer_id)
        for one, b, s in zip(one_hop, baseline, samples)
    ]
    metrics = classification_metrics(labels, routes)
    zeta_e = sum(1 for r in routes if r == Route.EASY) / n
    pruning_ratio = route_weighted_pruning_ratio(zeta_e, fc_e, fc_h)
    psi_e, psi_h = measure_psi([t.prediction.trace for t in adaptive], routes, hyper.n_s)

    params = CostParams.from_hyper(
        hyper,
        zeta_e=zeta_e,
        pruning_ratio=pruning_ratio,
        psi_e=psi_e or 0.0,
        psi_h=psi_h or 0.0,
    )
    check = cross_check(
        merge_ledgers(t.prediction for t in baseline),
        merge_ledgers(t.prediction for t in adaptive),
        params,
        n,
        zero_skip=theta_zs is not None,
    )
    return TaskReport(
        task_id=task_id,
        n_queries=n,
        accuracy_baseline=float(np.mean(base_answers == answers)),
        accuracy_adaptive=float(np.mean(gated_answers == answers)),
        zeta_e=zeta_e,
        false_positive=metrics.false_positive,
        false_negative=metrics.false_negative,
        pruning_ratio=pruning_ratio,
        psi_e=psi_e,
        psi_h=psi_h,
        flops_baseline_mean=check.flops_baseline_mean,
        flops_adaptive_mean=check.flops_adaptive_mean,
        cr_analytic=check.cr_analytic,
        cr_measured=check.cr_measured,
        gap_abs=check.gap_abs,
        gap_rel=check.gap_rel,
        gap_budget=check.gap_budget,
        within_budget=check.within_budget,
        wall_ns_baseline=float(statistics.median(t.wall_ns for t in baseline)),
        wall_ns_adaptive=float(statistics.median(t.wall_ns for t in adaptive)),
    )


def evaluate(
    weights: ModelWeights,
    hyper: HyperParams,
    samples: Sequence[Sample],
    gate: Gate,
    *,
    scenario: str,
    theta_zs: Optional[float] = None,
    fc_e: Optional[PrunedFC] = None,
    fc_h: Optional[PrunedFC] = None,
    avoid_reembed: bool = False,
    pool: Optional[QueryPool] = None,
    seed: int = 0,
) -> RunReport:
    """
    Run the all-hops baseline and the gated network over the same queries

    The baseline uses the full W with zero-skipping off; the gated pass uses
    the supplied heads, threshold config and zero-skipping threshold. Labels
    for the FP/FN rates come from a one-hop FC_E pass against the baseline.

    Raises:
        ConfigurationError: The gate or FC_E head is missing
    """
    if not samples:
        raise ValueError("evaluate needs at least one sample")
    pool = pool or QueryPool()
    fc_h = fc_h or PrunedFC.full(weights.W, FcOrigin.W)
    if fc_e is None and weights.W_E is not None:
        fc_e = PrunedFC.full(weights.W_E, FcOrigin.W_E)
    full_w = PrunedFC.full(weights.W, FcOrigin.W)

    def run_query(s: Sample) -> _QueryRun:
        # memories are built outside the timed calls and dropped with the query
        mem = _memories(weights, hyper, s)
        return _QueryRun(
            baseline=_time(lambda: forward(weights, hyper, s, HopPolicy.ALL_HOPS, fc_h=full_w, memories=mem)),
            adaptive=_time(lambda: forward(
                weights, hyper, s, HopPolicy.GATED, theta_zs=theta_zs, fc_h=fc_h, fc_e=fc_e,
                gate=gate, memories=mem, avoid_reembed=avoid_reembed,
            )),
            one_hop=forward(weights, hyper, s, HopPolicy.ONE_HOP, fc_e=fc_e, memories=mem),
        )

    runs = pool.run(run_query, samples)
    baseline = [r.baseline for r in runs]
    adaptive = [r.adaptive for r in runs]
    one_hop = [r.one_hop for r in runs]

    by_task: dict[int, list[int]] = {}
    for i, sample in enumerate(samples):
        by_task.setdefault(sample.task_id, []).append(i)

    def report_for(task_id: int, idx: list[int]) -> TaskReport:
        return _task_report(
            task_id,
            [samples[i] for i in idx],
            [baseline[i] for i in idx],
            [adaptive[i] for i in idx],
            [one_hop[i] for i in idx],
            hyper, fc_e, fc_h, theta_zs,
        )

    tasks = [report_for(task_id, idx) for task_id, idx in sorted(by_task.items())]
    pooled = report_for(0, list(range(len(samples))))
    for t in tasks:
        logger.info(
            f"Task {t.task_id}: acc {t.accuracy_baseline:.3f} -> {t.accuracy_adaptive:.3f}, "
            f"zeta_E={t.zeta_e:.2f}, FLOPs {t.flops_baseline_mean:.0f} -> {t.flops_adaptive_mean:.0f}"
        )
    return RunReport(
        scenario=scenario,
        mode=hyper.app_mode,
        variant=hyper.variant,
        theta_zs=theta_zs,
        seed=seed,
        flagged_tasks=list(gate.config.flagged_tasks),
        tasks=tasks,
        pooled=pooled,
    )


def inflate_ns(sample: Sample, n_s: int) -> Sample:
    """Tile story rows (and values) until the story has n_s rows"""
    reps = -(-n_s // sample.story_grid.shape[0])
    grid = np.tile(sample.story_grid, (reps, 1))[:n_s]
    values = None
    if sample.value_ids is not None:
        values = np.tile(sample.value_ids, reps)[:n_s]
    return sample.model_copy(update={"story_grid": grid, "value_ids": values})


def benchmark(
    weights: ModelWeights,
    hyper: HyperParams,
    samples: Sequence[Sample],
    gate: Gate,
    *,
    repeat: int = 11,
    inflate_to: Optional[int] = None,
    theta_zs: Optional[float] = None,
    fc_e: Optional[PrunedFC] = None,
    fc_h: Optional[PrunedFC] = None,
) -> BenchReport:
    """
    Single-threaded wall-clock time of baseline and gated passes

    Each query is warmed up once and then timed `repeat` times per policy;
    a pass costs the sum of the per-query medians. Queries are inflated and
    pre-embedded one at a time, outside the timed calls, so only one query's
    memories are alive at once.
    """
    if repeat < 1:
        raise ValueError("repeat must be at least 1")
    if inflate_to is not None:
        hyper = hyper.model_copy(update={"n_s": inflate_to})
    full_w = PrunedFC.full(weights.W, FcOrigin.W)

    base_ns = 0.0
    gated_ns = 0.0
    n_easy = 0
    for sample in samples:
        s = inflate_ns(sample, inflate_to) if inflate_to is not None else sample
        mem = _memories(weights, hyper, s)

        def baseline() -> Prediction:
            return forward(weights, hyper, s, HopPolicy.ALL_HOPS, fc_h=full_w, memories=mem)

        def gated() -> Prediction:
            return forward(weights, hyper, s, HopPolicy.GATED, theta_zs=theta_zs,
                           fc_e=fc_e, fc_h=fc_h, gate=gate, memories=mem)

        baseline()
        if gated().route == Route.EASY:
            n_easy += 1
        base_ns += statistics.median(_time(baseline).wall_ns for _ in range(repeat))
        gated_ns += statistics.median(_time(gated).wall_ns for _ in range(repeat))

    report = BenchReport(
        n_queries=len(samples),
        n_s=hyper.n_s,
        repeat=repeat,
        zeta_e=n_easy / len(samples) if samples else 0.0,
        wall_ns_baseline=float(base_ns),
        wall_ns_adaptive=float(gated_ns),
    )
    logger.info(
        f"Bench n_s={report.n_s}: baseline {report.wall_ns_baseline / 1e6:.2f} ms, "
        f"gated {report.wall_ns_adaptive / 1e6:.2f} ms (ratio {report.ratio:.3f}, zeta_E={report.zeta_e:.2f})"
    )
    return report


def _csv_text(rows: list[dict], columns: Sequence[str]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row[k] is None else row[k]) for k in columns})
    return buffer.getvalue()


def write_report_json(report: RunReport, path: Path) -> None:
    atomic_write_text(path, report.model_dump_json(indent=2))
    logger.info(f"Wrote report to {path}")


def write_report_csv(report: RunReport, path: Path) -> None:
    """One row per task plus the pooled row (task 0)"""
    columns = list(TaskReport.model_fields)
    rows = [t.model_dump() for t in report.tasks] + [report.pooled.model_dump()]
    atomic_write_text(path, _csv_text(rows, columns))
    logger.info(f"Wrote per-task CSV to {path}")


def write_cost_table(report: RunReport, path: Path) -> None:
    atomic_write_text(path, _csv_text(list(cost_table_rows(report)), COST_TABLE_COLUMNS))
    logger.info(f"Wrote cost table to {path}")


def load_report(path: Path) -> RunReport:
    return RunReport.model_validate_json(Path(path).read_text(encoding="utf-8"))
