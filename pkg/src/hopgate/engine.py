"""Ledgered forward pass: embedding, attention hops, key generation and the final FC layer"""

import logging
from enum import Enum
from typing import Optional

import numpy as np

from .babi import Sample
from .errors import ConfigurationError, DimensionError
from .gate import Gate, decide_route, icn_forward
from .pruning import FcOrigin, PrunedFC, pruned_output
from .state import (
    AppMode,
    EmbeddedMemory,
    HopTrace,
    HyperParams,
    ModelWeights,
    Prediction,
    Route,
    Variant,
)
from .tensor import (
    FlopCategory,
    FlopLedger,
    Mat,
    Vec,
    add,
    bag_of_words,
    embed_rows,
    matvec,
    softmax,
    weighted_column_sum,
)

logger = logging.getLogger(__name__)


class HopPolicy(str, Enum):
    """How many hops to run and which head answers"""
    ALL_HOPS = "all"
    ONE_HOP = "one"
    GATED = "gated"


def embed_story(grid: np.ndarray, e: Mat, pe: Optional[Mat], ledger: FlopLedger) -> Mat:
    """d x n_s memory: column i is the position-weighted bag of words of sentence i"""
    return embed_rows(e, grid, pe, ledger, FlopCategory.EMBED_STORY)


def embed_query(query_ids: np.ndarray, e0: Mat, pe: Optional[Mat], ledger: FlopLedger) -> Vec:
    """Internal state u of the query; no positional encoding for key-value networks"""
    return bag_of_words(e0, query_ids, pe, ledger, FlopCategory.EMBED_QUERY)


def _hop_memory(
    weights: ModelWeights,
    hyper: HyperParams,
    sample: Sample,
    hop: int,
    ledger: FlopLedger,
    columns: Optional[np.ndarray] = None,
) -> EmbeddedMemory:
    grid = sample.story_grid if columns is None else sample.story_grid[columns]
    e_in = weights.embeds[hyper.input_embed(hop)]
    e_out = weights.embeds[hyper.output_embed(hop)]
    if hyper.variant == Variant.KEY_VALUE:
        if sample.value_ids is None:
            raise ConfigurationError("Key-value networks need samples with value_ids")
        values = sample.value_ids if columns is None else sample.value_ids[columns]
        m_in = embed_rows(e_in, grid, None, ledger, FlopCategory.EMBED_STORY)
        m_out = e_out[:, values]
    else:
        m_in = embed_story(grid, e_in, weights.pe, ledger)
        m_out = embed_story(grid, e_out, weights.pe, ledger)
    return EmbeddedMemory(m_in=m_in, m_out=m_out, hop_index=hop, columns=columns)


def embed_memories(
    weights: ModelWeights,
    hyper: HyperParams,
    sample: Sample,
    ledger: Optional[FlopLedger] = None,
) -> list[EmbeddedMemory]:
    """
    Per-hop memories for pre-embedded use

    The cost lands in `ledger` if given, otherwise in a scratch ledger that is
    dropped, since pre-embedded databases are embedded once ahead of queries.
    """
    ledger = ledger if ledger is not None else FlopLedger()
    return [_hop_memory(weights, hyper, sample, hop, ledger) for hop in range(1, hyper.m + 1)]


def attention_hop(
    u: Vec,
    mem: EmbeddedMemory,
    theta_zs: Optional[float],
    ledger: FlopLedger,
    r: Optional[Mat] = None,
    r_bias: Optional[Vec] = None,
    n_s: Optional[int] = None,
) -> tuple[Vec, HopTrace]:
    """
    One attention inference hop

    k = u^T M_in, p = softmax(k), o = sum of p_i * m_out_i over entries with
    p_i >= theta_zs (all entries when theta_zs is None). Conventional:
    u_out = o + u. Key-value: u_out = R (o + u) + r_bias.
    """
    if u.shape != (mem.m_in.shape[0],):
        raise DimensionError(f"attention_hop: u {u.shape} against memory {mem.m_in.shape}")
    k = matvec(mem.m_in.T, u, ledger, FlopCategory.INNER_PRODUCT)
    p_a = softmax(k, ledger)

    if theta_zs is None:
        keep = np.ones(p_a.shape[0], dtype=bool)
    else:
        keep = p_a >= theta_zs
    idx = np.flatnonzero(keep)
    o = weighted_column_sum(mem.m_out[:, idx], p_a[idx], ledger, FlopCategory.WEIGHTED_SUM)

    x = add(o, u, ledger, FlopCategory.KEY_SUM)
    if r is not None:
        u_out = add(matvec(r, x, ledger, FlopCategory.KEY_GEN), r_bias, ledger, FlopCategory.KEY_GEN)
    else:
        u_out = x

    total = n_s if n_s is not None else p_a.shape[0]
    kept = idx if mem.columns is None else mem.columns[idx]
    trace = HopTrace(k=k, p_a=p_a, o=o, u_out=u_out, skipped=total - idx.size, kept=kept)
    return u_out, trace


def _check_sample(hyper: HyperParams, sample: Sample) -> None:
    if sample.story_grid.shape != (hyper.n_s, hyper.n_w) or sample.query_ids.shape != (hyper.n_w,):
        raise DimensionError(
            f"sample grid {sample.story_grid.shape} / query {sample.query_ids.shape} "
            f"does not match n_s={hyper.n_s}, n_w={hyper.n_w}"
        )


def forward(
    weights: ModelWeights,
    hyper: HyperParams,
    sample: Sample,
    policy: HopPolicy = HopPolicy.ALL_HOPS,
    *,
    theta_zs: Optional[float] = None,
    fc_h: Optional[PrunedFC] = None,
    fc_e: Optional[PrunedFC] = None,
    gate: Optional[Gate] = None,
    ledger: Optional[FlopLedger] = None,
    memories: Optional[list[EmbeddedMemory]] = None,
    avoid_reembed: bool = False,
) -> Prediction:
    """
    Answer one query

    Args:
        policy: ALL_HOPS answers with FC_H after m hops, ONE_HOP with FC_E after
            hop 1, GATED lets the ICN pick after hop 1
        theta_zs: Zero-skipping threshold, None disables
        fc_h, fc_e: Output heads; default to the full W and W_E
        gate: ICN weights and thresholds, required for GATED
        ledger: Charged for everything this query costs; fresh if omitted
        memories: Precomputed pre-embedded memories (see embed_memories)
        avoid_reembed: Interactive mode only; hops 2..m embed just the
            sentences hop 1 kept

    Returns:
        Prediction carrying the answer, route, hops executed, ledger and trace

    Raises:
        ConfigurationError: GATED without a gate, ONE_HOP/GATED without FC_E,
            or an unsupported variant/mode combination
    """
    hyper.check_supported()
    _check_sample(hyper, sample)
    ledger = ledger if ledger is not None else FlopLedger()

    if policy == HopPolicy.GATED and gate is None:
        raise ConfigurationError("Gated policy needs a gate (trained ICN and thresholds)")
    if fc_h is None:
        fc_h = PrunedFC.full(weights.W, FcOrigin.W)
    if policy in (HopPolicy.ONE_HOP, HopPolicy.GATED) and fc_e is None:
        if weights.W_E is None:
            raise ConfigurationError(f"{policy.value} policy needs a trained FC_E head")
        fc_e = PrunedFC.full(weights.W_E, FcOrigin.W_E)

    key_value = hyper.variant == Variant.KEY_VALUE
    interactive = hyper.app_mode == AppMode.INTERACTIVE
    pe = None if key_value else weights.pe

    u = embed_query(sample.query_ids, weights.embeds[0], pe, ledger)
    if not interactive and memories is None:
        memories = embed_memories(weights, hyper, sample)

    n_hops = 1 if policy == HopPolicy.ONE_HOP else hyper.m
    route = Route.FORCED
    p_easy = None
    trace: list[HopTrace] = []
    kept_rows: Optional[np.ndarray] = None

    for hop in range(1, n_hops + 1):
        if interactive:
            # an empty hop-1 selection falls back to the whole story
            reuse = avoid_reembed and hop > 1 and kept_rows is not None and kept_rows.size > 0
            columns = kept_rows if reuse else None
            mem = _hop_memory(weights, hyper, sample, hop, ledger, columns)
        else:
            mem = memories[hop - 1]
        r = weights.R[hop - 1] if key_value else None
        r_bias = weights.R_bias[hop - 1] if key_value else None
        u, hop_trace = attention_hop(u, mem, theta_zs, ledger, r, r_bias, n_s=hyper.n_s)
        trace.append(hop_trace)

        if hop == 1:
            if theta_zs is not None:
                kept_rows = hop_trace.kept
            if policy == HopPolicy.GATED:
                p_easy, p_hard = icn_forward(u, gate.icn, ledger)
                route = decide_route((p_easy, p_hard), sample.task_id, gate.config)
                if route == Route.EASY:
                    break

    head = fc_e if (policy == HopPolicy.ONE_HOP or route == Route.EASY) else fc_h
    answer_id, logits = pruned_output(head, u, ledger)
    return Prediction(
        answer_id=answer_id,
        logits=logits,
        route=route,
        hops_executed=len(trace),
        ledger=ledger,
        trace=trace,
        p_easy=p_easy,
    )
