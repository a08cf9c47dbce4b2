"""Dense float64 kernels that charge every floating-point operation to a ledger

Vectors and matrices are plain numpy float64 arrays. Each kernel charges the
nominal FLOP count of the operation it performs, with the weights
add=1, mul=1, div=4, exp=8. Softmax is computed in max-subtracted form but
charged the nominal 13n - 1.
"""

from enum import Enum
from typing import Optional

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, Field

from .errors import DimensionError, EncodingError, NumericalError

Vec = npt.NDArray[np.float64]
Mat = npt.NDArray[np.float64]

FLOPS_ADD = 1
FLOPS_MUL = 1
FLOPS_DIV = 4
FLOPS_EXP = 8
# ReLU is a compare-and-select per element
FLOPS_CMP = 1


class FlopCategory(str, Enum):
    """Ledger buckets, one per cost-table row plus ICN and a catch-all"""
    EMBED_STORY = "embed_story"
    EMBED_QUERY = "embed_query"
    INNER_PRODUCT = "inner_product"
    SOFTMAX = "softmax"
    WEIGHTED_SUM = "weighted_sum"
    KEY_SUM = "key_sum"
    KEY_GEN = "key_gen"
    FC = "fc"
    ICN = "icn"
    OTHER = "other"


class FlopLedger(BaseModel):
    """Per-category FLOP counters; one ledger per concurrent inference"""
    counters: dict[FlopCategory, int] = Field(
        default_factory=lambda: {c: 0 for c in FlopCategory}
    )

    def add(self, category: FlopCategory, flops: int) -> None:
        if flops < 0:
            raise ValueError(f"Negative FLOP charge for {category.value}: {flops}")
        self.counters[category] = self.counters.get(category, 0) + flops

    def __getitem__(self, category: FlopCategory) -> int:
        return self.counters.get(category, 0)

    def total(self) -> int:
        return sum(self.counters.values())

    def snapshot(self) -> "FlopLedger":
        return FlopLedger(counters=dict(self.counters))

    def diff(self, earlier: "FlopLedger") -> "FlopLedger":
        """Counts accumulated since `earlier`, which must be a snapshot of this ledger"""
        delta = {}
        for category in FlopCategory:
            change = self[category] - earlier[category]
            if change < 0:
                raise ValueError(f"Ledger went backwards in {category.value}")
            delta[category] = change
        return FlopLedger(counters=delta)

    def merge(self, other: "FlopLedger") -> None:
        for category, flops in other.counters.items():
            self.add(category, flops)

    def reset(self) -> None:
        self.counters = {c: 0 for c in FlopCategory}

    def as_dict(self) -> dict[str, int]:
        return {c.value: self[c] for c in FlopCategory}


def ledger_snapshot(ledger: FlopLedger) -> FlopLedger:
    return ledger.snapshot()


def ledger_total(ledger: FlopLedger) -> int:
    return ledger.total()


def _finite(result: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(result)):
        raise NumericalError(f"{op} produced a non-finite value")
    return result


def dot(u: Vec, v: Vec, ledger: FlopLedger, category: FlopCategory) -> float:
    """Inner product, charged d muls and d-1 adds"""
    if u.ndim != 1 or u.shape != v.shape or u.shape[0] < 1:
        raise DimensionError(f"dot: shapes {u.shape} and {v.shape}")
    d = u.shape[0]
    result = float(np.dot(u, v))
    _finite(np.asarray(result), "dot")
    ledger.add(category, d * FLOPS_MUL + (d - 1) * FLOPS_ADD)
    return result


def matvec(m: Mat, v: Vec, ledger: FlopLedger, category: FlopCategory) -> Vec:
    """Matrix-vector product, charged rows * (2 * cols - 1)"""
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionError(f"matvec: shapes {m.shape} and {v.shape}")
    rows, cols = m.shape
    result = _finite(m @ v, "matvec")
    ledger.add(category, rows * (cols * FLOPS_MUL + (cols - 1) * FLOPS_ADD))
    return result


def softmax(
    v: Vec,
    ledger: FlopLedger,
    category: FlopCategory = FlopCategory.SOFTMAX,
) -> Vec:
    """Stable softmax, charged n exps, n divisions and n-1 adds (13n - 1)"""
    if v.ndim != 1 or v.shape[0] < 1:
        raise DimensionError(f"softmax: shape {v.shape}")
    n = v.shape[0]
    shifted = np.exp(v - np.max(v))
    result = _finite(shifted / np.sum(shifted), "softmax")
    ledger.add(category, n * (FLOPS_EXP + FLOPS_DIV) + (n - 1) * FLOPS_ADD)
    return result


def add(u: Vec, v: Vec, ledger: FlopLedger, category: FlopCategory) -> Vec:
    """Element-wise sum, charged len adds"""
    if u.shape != v.shape:
        raise DimensionError(f"add: shapes {u.shape} and {v.shape}")
    result = _finite(u + v, "add")
    ledger.add(category, u.size * FLOPS_ADD)
    return result


def relu(v: Vec, ledger: FlopLedger, category: FlopCategory) -> Vec:
    result = np.maximum(v, 0.0)
    ledger.add(category, v.size * FLOPS_CMP)
    return result


def weighted_column_sum(
    m: Mat, weights: Vec, ledger: FlopLedger, category: FlopCategory
) -> Vec:
    """Sum of columns scaled by weights, charged (2n - 1) * rows; empty sums are free zeros"""
    if m.ndim != 2 or weights.ndim != 1 or m.shape[1] != weights.shape[0]:
        raise DimensionError(f"weighted_column_sum: shapes {m.shape} and {weights.shape}")
    rows, n = m.shape
    if n == 0:
        return np.zeros(rows, dtype=np.float64)
    result = _finite(m @ weights, "weighted_column_sum")
    ledger.add(category, rows * (n * FLOPS_MUL + (n - 1) * FLOPS_ADD))
    return result


def _gather_columns(e: Mat, ids: np.ndarray) -> np.ndarray:
    if ids.size and (ids.min() < 0 or ids.max() >= e.shape[1]):
        raise EncodingError(
            f"word index out of range [0, {e.shape[1]}): {int(ids.min())}..{int(ids.max())}"
        )
    return e[:, ids]


def bag_of_words(
    e: Mat,
    ids: np.ndarray,
    pe: Optional[Mat],
    ledger: FlopLedger,
    category: FlopCategory,
) -> Vec:
    """Embed one token sequence as the (optionally position-weighted) sum of its columns

    Charged (2n - 1) * d with a positional encoding and (n - 1) * d without.
    """
    n = ids.shape[0]
    cols = _gather_columns(e, ids)
    if pe is not None:
        if pe.shape != (n, e.shape[0]):
            raise DimensionError(f"bag_of_words: pe {pe.shape} for {n} tokens, d={e.shape[0]}")
        cols = cols * pe.T
        flops = e.shape[0] * (n * FLOPS_MUL + (n - 1) * FLOPS_ADD)
    else:
        flops = e.shape[0] * (n - 1) * FLOPS_ADD
    result = cols.sum(axis=1)
    ledger.add(category, flops)
    return result


def embed_rows(
    e: Mat,
    grid: np.ndarray,
    pe: Optional[Mat],
    ledger: FlopLedger,
    category: FlopCategory,
) -> Mat:
    """bag_of_words applied to every row of an index grid; returns d x rows"""
    if grid.ndim != 2:
        raise DimensionError(f"embed_rows: grid shape {grid.shape}")
    n_rows, n_w = grid.shape
    d = e.shape[0]
    cols = _gather_columns(e, grid)  # d x rows x n_w
    if pe is not None:
        if pe.shape != (n_w, d):
            raise DimensionError(f"embed_rows: pe {pe.shape} for n_w={n_w}, d={d}")
        cols = cols * pe.T[:, None, :]
        per_row = d * (n_w * FLOPS_MUL + (n_w - 1) * FLOPS_ADD)
    else:
        per_row = d * (n_w - 1) * FLOPS_ADD
    result = cols.sum(axis=2)
    ledger.add(category, n_rows * per_row)
    return result


def argmax(v: Vec) -> int:
    """Index of the largest entry; ties go to the lowest index"""
    return int(np.argmax(v))
