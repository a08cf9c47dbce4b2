"""Row pruning of the final FC matrices W and W_E"""

import logging
from enum import Enum
from typing import Iterable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import ParameterError
from .tensor import FlopCategory, FlopLedger, Vec, argmax, matvec

logger = logging.getLogger(__name__)


class FcOrigin(str, Enum):
    W = "W"
    W_E = "W_E"


class PruneParams(BaseModel):
    """A row is unimportant when at least n_p of its weights have |w| < theta_p"""
    theta_p: float = Field(default=0.1, ge=0.0)
    n_p: int = Field(default=13, ge=0)


class PrunedFC(BaseModel):
    """Kept rows of an FC matrix together with their vocabulary indices"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    rows: np.ndarray
    important_indices: np.ndarray
    origin: FcOrigin
    vocab_size: int

    @model_validator(mode="after")
    def _consistent(self) -> "PrunedFC":
        idx = self.important_indices
        if idx.ndim != 1 or idx.size < 1 or self.rows.shape[0] != idx.size:
            raise ParameterError(f"{idx.size} indices for {self.rows.shape[0]} rows")
        if np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= self.vocab_size:
            raise ParameterError("important_indices must be strictly increasing and inside the vocabulary")
        return self

    @classmethod
    def full(cls, matrix: np.ndarray, origin: FcOrigin = FcOrigin.W) -> "PrunedFC":
        """Identity reindexing: every row kept"""
        return cls(
            rows=matrix,
            important_indices=np.arange(matrix.shape[0], dtype=np.int64),
            origin=origin,
            vocab_size=matrix.shape[0],
        )

    @property
    def n_rows(self) -> int:
        return int(self.important_indices.size)

    @property
    def pruning_ratio(self) -> float:
        """P_R: fraction of vocabulary rows removed"""
        return (self.vocab_size - self.n_rows) / self.vocab_size


def find_unused(train_labels: Iterable[int], vocab_size: int) -> set[int]:
    """Rows whose word is never a training answer; the padding row is always unused"""
    labels = set(int(x) for x in train_labels)
    unused = set(range(vocab_size)) - labels
    unused.add(0)
    return unused


def find_unimportant(matrix: np.ndarray, params: PruneParams) -> set[int]:
    """
    Rows with at least n_p entries of magnitude strictly below theta_p

    Raises:
        ParameterError: n_p exceeds the row width, so the rule could never fire
    """
    if params.n_p > matrix.shape[1]:
        raise ParameterError(f"N_p={params.n_p} exceeds row width d={matrix.shape[1]}")
    small = (np.abs(matrix) < params.theta_p).sum(axis=1)
    return set(np.flatnonzero(small >= params.n_p).tolist())


def prune(
    matrix: np.ndarray,
    remove: Iterable[int],
    keep_labels: Iterable[int] = (),
    origin: FcOrigin = FcOrigin.W,
) -> PrunedFC:
    """
    Keep every row not in `remove`; rows of training labels are always kept

    Raises:
        ParameterError: Nothing would remain
    """
    vocab_size = matrix.shape[0]
    removed = set(int(i) for i in remove) - set(int(i) for i in keep_labels)
    kept = np.array(sorted(set(range(vocab_size)) - removed), dtype=np.int64)
    if kept.size == 0:
        raise ParameterError("Pruning would remove every row")
    pfc = PrunedFC(
        rows=matrix[kept].copy(),
        important_indices=kept,
        origin=origin,
        vocab_size=vocab_size,
    )
    logger.info(
        f"Pruned {origin.value}: kept {pfc.n_rows}/{vocab_size} rows (P_R={pfc.pruning_ratio:.3f})"
    )
    return pfc


def build_pruned_heads(
    W: np.ndarray,
    W_E: Optional[np.ndarray],
    train_labels: Iterable[int],
    params: Optional[PruneParams] = None,
) -> dict[FcOrigin, PrunedFC]:
    """Unused-row pruning, plus unimportant-row pruning when params are given, for W and W_E"""
    labels = set(int(x) for x in train_labels)
    heads = {}
    for origin, matrix in ((FcOrigin.W, W), (FcOrigin.W_E, W_E)):
        if matrix is None:
            continue
        remove = find_unused(labels, matrix.shape[0])
        if params is not None:
            unimportant = find_unimportant(matrix, params)
            overlap = len(unimportant & remove) / len(unimportant) if unimportant else 1.0
            logger.info(
                f"{origin.value}: {len(unimportant)} unimportant rows, "
                f"{overlap:.0%} of them already unused"
            )
            remove |= unimportant
        heads[origin] = prune(matrix, remove, keep_labels=labels, origin=origin)
    return heads


def pruned_output(pfc: PrunedFC, u_out: Vec, ledger: FlopLedger) -> tuple[int, np.ndarray]:
    """Argmax over the kept rows, mapped back to the full vocabulary"""
    logits = matvec(pfc.rows, u_out, ledger, FlopCategory.FC)
    return int(pfc.important_indices[argmax(logits)]), logits


def route_weighted_pruning_ratio(zeta_e: float, fc_e: PrunedFC, fc_h: PrunedFC) -> float:
    """Measured P_R: row removal averaged over the heads queries actually used"""
    kept = zeta_e * fc_e.n_rows + (1.0 - zeta_e) * fc_h.n_rows
    return 1.0 - kept / fc_h.vocab_size


class PruneSearchResult(BaseModel):
    theta_p: float
    n_p: int
    pruning_ratio: float
    accuracy: float
    accuracy_loss: float


def grid_search_prune(
    weights,
    hyper,
    samples,
    train_labels: Iterable[int],
    thetas: Iterable[float],
    n_ps: Iterable[int],
    budget: float = 0.005,
) -> Optional[PruneSearchResult]:
    """
    Most aggressive (theta_p, N_p) on W whose all-hops accuracy loss stays within budget

    Returns None when no grid point satisfies the budget.
    """
    from .engine import HopPolicy, forward

    labels = set(int(x) for x in train_labels)
    answers = np.array([s.answer_id for s in samples])

    def accuracy(head: PrunedFC) -> float:
        predicted = np.array([
            forward(weights, hyper, s, HopPolicy.ALL_HOPS, fc_h=head).answer_id for s in samples
        ])
        return float(np.mean(predicted == answers))

    baseline = accuracy(PrunedFC.full(weights.W))
    best: Optional[PruneSearchResult] = None
    for theta_p in thetas:
        for n_p in n_ps:
            params = PruneParams(theta_p=theta_p, n_p=n_p)
            remove = find_unused(labels, weights.W.shape[0]) | find_unimportant(weights.W, params)
            head = prune(weights.W, remove, keep_labels=labels)
            acc = accuracy(head)
            loss = baseline - acc
            logger.info(f"theta_p={theta_p} N_p={n_p}: P_R={head.pruning_ratio:.3f}, loss={loss:.4f}")
            if loss <= budget and (best is None or head.pruning_ratio > best.pruning_ratio):
                best = PruneSearchResult(
                    theta_p=theta_p,
                    n_p=n_p,
                    pruning_ratio=head.pruning_ratio,
                    accuracy=acc,
                    accuracy_loss=loss,
                )
    return best
