"""Closed-form FLOP model and its cross-check against measured ledgers

Per-operation costs, per-hop and per-query totals, and the computation
reduction of the gated, pruned network with and without zero-skipping.
Formulas are integer-valued where possible; reductions are reals because
they are driven by measured rates.
"""

import logging
from typing import Any, Iterable, Optional, Sequence

from pydantic import BaseModel, Field

from .errors import ConfigurationError, ParameterError
from .state import AppMode, HopTrace, Route, Variant
from .tensor import FlopLedger

logger = logging.getLogger(__name__)

COST_TABLE_COLUMNS = (
    "task",
    "mode",
    "scenario",
    "cc_baseline",
    "cc_adaptive_measured",
    "cr_analytic",
    "gap_rel",
)

# Absolute per-query slack on top of the ICN accounting difference
GAP_BUDGET_FLOPS = 64
# Relative slack once zero-skipping is on
GAP_BUDGET_ZERO_SKIP = 0.05


class CostParams(BaseModel):
    """Every scalar the analytic model needs"""
    d: int = Field(ge=1)
    V: int = Field(ge=1)
    n_s: int = Field(ge=1)
    n_w: int = Field(ge=1)
    m: int = Field(ge=0)
    l1: int = Field(default=32, ge=1)
    variant: Variant = Variant.CONVENTIONAL
    app_mode: AppMode = AppMode.PRE_EMBEDDED
    zeta_e: float = Field(default=0.0, ge=0.0, le=1.0)
    pruning_ratio: float = Field(default=0.0, ge=0.0, le=1.0)
    psi_e: float = 0.0
    psi_h: float = 0.0

    @classmethod
    def from_hyper(cls, hyper, **rates: float) -> "CostParams":
        return cls(
            d=hyper.d,
            V=hyper.V,
            n_s=hyper.n_s,
            n_w=hyper.n_w,
            m=hyper.m,
            l1=hyper.l1,
            variant=hyper.variant,
            app_mode=hyper.app_mode,
            **rates,
        )


# Per-operation rows


def story_embedding(n_s: int, n_w: int, d: int) -> int:
    """Bag of words with positional encoding over every story sentence"""
    return n_s * (2 * n_w - 1) * d


def query_embedding_pe(n_w: int, d: int) -> int:
    return (2 * n_w - 1) * d


def query_embedding(n_w: int, d: int) -> int:
    """Plain bag of words, used by key-value networks"""
    return (n_w - 1) * d


def inner_product(n_s: int, d: int) -> int:
    return n_s * (2 * d - 1)


def softmax_attention(n_s: int) -> int:
    return 13 * n_s - 1


def weighted_sum(n_s: int, d: int) -> int:
    return (2 * n_s - 1) * d


def key_sum(d: int) -> int:
    return d


def key_generation(d: int) -> int:
    return 2 * d * d - d


def key_bias(d: int) -> int:
    return d


def final_fc(V: int, d: int) -> int:
    return V * (2 * d - 1)


def icn_overhead(l1: int, d: int) -> int:
    """Analytic ICN charge as used in the reduction formulas"""
    return 2 * l1 * (d + 2) + 25


def icn_measured(l1: int, d: int) -> int:
    """What the ledger charges for one ICN pass: two matvecs, two bias adds, ReLU, softmax of 2"""
    return l1 * (2 * d - 1) + l1 + l1 + 2 * (2 * l1 - 1) + 2 + softmax_attention(2)


# Totals


def _check(p: CostParams) -> None:
    if p.variant == Variant.KEY_VALUE and p.app_mode == AppMode.INTERACTIVE:
        raise ConfigurationError("No cost model for interactive key-value networks")


def cc_hop(p: CostParams) -> int:
    """
    FLOPs of one attention hop

    Pre-embedded conventional: n_s(4d+12) - 1. Key-value adds 2d^2 for output
    key generation. Interactive adds two story embeddings per hop.

    Raises:
        ConfigurationError: Interactive key-value networks
    """
    _check(p)
    hop = inner_product(p.n_s, p.d) + softmax_attention(p.n_s) + weighted_sum(p.n_s, p.d) + key_sum(p.d)
    if p.variant == Variant.KEY_VALUE:
        hop += key_generation(p.d) + key_bias(p.d)
    if p.app_mode == AppMode.INTERACTIVE:
        hop += 2 * story_embedding(p.n_s, p.n_w, p.d)
    return hop


def cc_total(p: CostParams) -> int:
    """Query embedding, m hops and the final FC layer"""
    if p.variant == Variant.KEY_VALUE:
        embed = query_embedding(p.n_w, p.d)
    else:
        embed = query_embedding_pe(p.n_w, p.d)
    return embed + p.m * cc_hop(p) + final_fc(p.V, p.d)


def cr(p: CostParams) -> float:
    """
    Computation reduction of gating plus FC pruning, without zero-skipping

    Pre-embedded: zeta_E (m-1) CC_H + P_R V(2d-1) - ICN overhead.
    Interactive uses 2 CC_H for the skipped hops, as the reduction formula
    is written for three-hop networks.
    """
    hop = cc_hop(p)
    if p.app_mode == AppMode.INTERACTIVE:
        skipped_hops = p.zeta_e * 2 * hop
    else:
        skipped_hops = p.zeta_e * (p.m - 1) * hop
    return skipped_hops + p.pruning_ratio * final_fc(p.V, p.d) - icn_overhead(p.l1, p.d)


def cr_zero_skip(p: CostParams) -> float:
    """
    cr plus the weighted-sum terms removed by zero-skipping

    Raises:
        ParameterError: psi_e or psi_h outside [0, 1]
    """
    for name, value in (("psi_e", p.psi_e), ("psi_h", p.psi_h)):
        if not 0.0 <= value <= 1.0:
            raise ParameterError(f"{name}={value} outside [0, 1]")
    if p.app_mode == AppMode.INTERACTIVE:
        rate = p.zeta_e * p.psi_e + (1.0 - p.zeta_e) * 3 * p.psi_h
        term = p.d * (p.n_s * (2 * p.n_w + 1) - 1)
    else:
        rate = p.zeta_e * p.psi_e + (1.0 - p.zeta_e) * p.m * p.psi_h
        term = weighted_sum(p.n_s, p.d)
    return cr(p) + rate * term


def measure_psi(
    traces: Sequence[Sequence[HopTrace]], routes: Sequence[Route], n_s: int
) -> tuple[Optional[float], Optional[float]]:
    """
    Mean skipped fraction of attention entries

    Easy-routed queries contribute their first hop; every other query
    contributes all its hops. A route class with no queries yields None.
    """
    if len(traces) != len(routes):
        raise ParameterError(f"{len(traces)} traces for {len(routes)} routes")
    easy: list[float] = []
    hard: list[float] = []
    for trace, route in zip(traces, routes):
        if not trace:
            continue
        if route == Route.EASY:
            easy.append(trace[0].skipped / n_s)
        else:
            hard.extend(hop.skipped / n_s for hop in trace)
    psi_e = sum(easy) / len(easy) if easy else None
    psi_h = sum(hard) / len(hard) if hard else None
    return psi_e, psi_h


class CrossCheckReport(BaseModel):
    n_queries: int
    flops_baseline_mean: float
    flops_adaptive_mean: float
    cr_measured: float
    cr_analytic: float
    gap_abs: float
    gap_rel: float
    icn_slack: float
    gap_budget: float
    within_budget: bool


def cross_check(
    ledger_baseline: FlopLedger,
    ledger_adaptive: FlopLedger,
    analytic: CostParams,
    n_queries: int,
    zero_skip: bool = False,
) -> CrossCheckReport:
    """
    Compare the measured mean reduction per query with the analytic one

    Both ledgers must hold the merged cost of the same n_queries queries and
    `analytic` must carry rates measured on that run. The relative gap is
    taken against the magnitude of the analytic reduction.

    The gated pass runs the ICN on every query and the ledger charges it
    L_1 FLOPs more than the analytic overhead term, so the budget is
    GAP_BUDGET_FLOPS plus that slack, widened to GAP_BUDGET_ZERO_SKIP of the
    analytic reduction when zero-skipping is on.
    """
    if n_queries < 1:
        raise ParameterError("cross_check needs at least one query")
    baseline_mean = ledger_baseline.total() / n_queries
    adaptive_mean = ledger_adaptive.total() / n_queries
    measured = baseline_mean - adaptive_mean
    predicted = cr_zero_skip(analytic) if zero_skip else cr(analytic)
    gap = measured - predicted
    rel = abs(gap) / abs(predicted) if predicted else (0.0 if gap == 0 else float("inf"))
    slack = icn_measured(analytic.l1, analytic.d) - icn_overhead(analytic.l1, analytic.d)
    budget = GAP_BUDGET_FLOPS + slack
    if zero_skip:
        budget = max(budget, GAP_BUDGET_ZERO_SKIP * abs(predicted))
    logger.debug(f"cross_check: measured {measured:.1f}, analytic {predicted:.1f}, gap {gap:.1f} (budget {budget:.1f})")
    return CrossCheckReport(
        n_queries=n_queries,
        flops_baseline_mean=baseline_mean,
        flops_adaptive_mean=adaptive_mean,
        cr_measured=measured,
        cr_analytic=predicted,
        gap_abs=abs(gap),
        gap_rel=rel,
        icn_slack=slack,
        gap_budget=budget,
        within_budget=abs(gap) <= budget,
    )


def cost_table_rows(report: Any) -> Iterable[dict[str, Any]]:
    """One cost-table row per task of a RunReport"""
    for task in report.tasks:
        yield {
            "task": task.task_id,
            "mode": report.mode.value,
            "scenario": report.scenario,
            "cc_baseline": task.flops_baseline_mean,
            "cc_adaptive_measured": task.flops_adaptive_mean,
            "cr_analytic": task.cr_analytic,
            "gap_rel": task.gap_rel,
        }
