"""Input classifier network, activation module and Easy/Hard label generation"""

import json
import logging
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from .errors import ConfigurationError, DimensionError
from .state import IcnWeights, Route
from .tensor import FlopCategory, FlopLedger, Vec, add, matvec, relu, softmax

logger = logging.getLogger(__name__)

EASY, HARD = 0, 1


class GateMode(str, Enum):
    """Threshold scenario"""
    NC = "nc"
    GLOBAL = "global"
    PER_TASK = "pertask"


class GateConfig(BaseModel):
    """
    Activation-module thresholds

    NC is plain argmax (threshold 0.5). PerTask looks the task up in z_per_task,
    then falls back to z_unlisted if set, else z_global.
    """
    mode: GateMode = GateMode.GLOBAL
    z_global: float = Field(default=0.6, gt=0.0, le=1.0)
    z_per_task: dict[int, float] = Field(default_factory=dict)
    z_unlisted: Optional[float] = Field(default=None, gt=0.0, le=1.0)
    flagged_tasks: list[int] = Field(default_factory=list)

    def threshold(self, task_id: int) -> float:
        if self.mode == GateMode.NC:
            return 0.5
        if self.mode == GateMode.GLOBAL:
            return self.z_global
        if task_id in self.z_per_task:
            return self.z_per_task[task_id]
        return self.z_unlisted if self.z_unlisted is not None else self.z_global

    def with_mode(self, mode: GateMode) -> "GateConfig":
        return self.model_copy(update={"mode": mode})

    @classmethod
    def all_hard(cls) -> "GateConfig":
        """Unreachable Easy threshold: every query runs all hops"""
        return cls(mode=GateMode.GLOBAL, z_global=1.0)


class Gate(BaseModel):
    icn: IcnWeights
    config: GateConfig


class IcnLabel(BaseModel):
    """Easy/Hard target for one sample, by position in the labeled set"""
    index: int
    task_id: int
    label: Route


class IcnMetrics(BaseModel):
    """ICN quality against labels; FP = Hard routed Easy, FN = Easy routed Hard"""
    accuracy: float
    false_positive: float
    false_negative: float


def load_gate_config(path: Path) -> GateConfig:
    """
    Read a GateConfig JSON file

    Raises:
        ConfigurationError: File missing or not a valid gate config
    """
    try:
        return GateConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigurationError(f"Gate config not found: {path}") from e
    except ValidationError as e:
        raise ConfigurationError(f"Invalid gate config {path}: {e}") from e


def load_preset(name: str) -> GateConfig:
    """Reference threshold presets shipped with the package (e.g. 'reference_pertask_babi')"""
    try:
        text = resources.files("hopgate.presets").joinpath(f"{name}.json").read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise ConfigurationError(f"Unknown gate preset: {name}") from e
    return GateConfig.model_validate(json.loads(text))


def icn_forward(u2: Vec, icn: IcnWeights, ledger: FlopLedger) -> tuple[float, float]:
    """
    Classify the first hop's output key

    h = ReLU(W1 u2 + b1); (p_easy, p_hard) = softmax(W2 h + b2).
    Every operation is charged to the icn bucket.
    """
    if u2.shape != (icn.W1.shape[1],):
        raise DimensionError(f"ICN expects d={icn.W1.shape[1]}, got {u2.shape}")
    h = relu(add(matvec(icn.W1, u2, ledger, FlopCategory.ICN), icn.b1, ledger, FlopCategory.ICN),
             ledger, FlopCategory.ICN)
    z = add(matvec(icn.W2, h, ledger, FlopCategory.ICN), icn.b2, ledger, FlopCategory.ICN)
    probs = softmax(z, ledger, FlopCategory.ICN)
    return float(probs[EASY]), float(probs[HARD])


def decide_route(probs: Sequence[float], task_id: int, cfg: GateConfig) -> Route:
    """Easy only when Easy is the argmax and its probability strictly exceeds the threshold"""
    p_easy, p_hard = probs
    if p_easy >= p_hard and p_easy > cfg.threshold(task_id):
        return Route.EASY
    return Route.HARD


def gated_forward(weights, hyper, sample, gate: Gate, **kwargs):
    """Hop 1, ICN, activation module; Easy answers through FC_E, Hard runs the remaining hops"""
    from .engine import HopPolicy, forward

    return forward(weights, hyper, sample, HopPolicy.GATED, gate=gate, **kwargs)


def label_from_outcomes(easy_correct: bool, hard_correct: bool) -> Route:
    """Easy if the one-hop head is right or both heads are wrong; Hard otherwise"""
    if easy_correct:
        return Route.EASY
    if hard_correct:
        return Route.HARD
    return Route.EASY


def generate_labels(weights, hyper, samples, fc_e=None, fc_h=None) -> list[IcnLabel]:
    """
    Label every sample by comparing the one-hop FC_E answer with the all-hops FC_H answer

    Raises:
        ConfigurationError: FC_E has not been trained
    """
    from .engine import HopPolicy, forward

    if fc_e is None and weights.W_E is None:
        raise ConfigurationError("FC_E must be trained before generating ICN labels")

    labels = []
    for index, sample in enumerate(samples):
        one = forward(weights, hyper, sample, HopPolicy.ONE_HOP, fc_e=fc_e)
        full = forward(weights, hyper, sample, HopPolicy.ALL_HOPS, fc_h=fc_h)
        label = label_from_outcomes(one.answer_id == sample.answer_id, full.answer_id == sample.answer_id)
        labels.append(IcnLabel(index=index, task_id=sample.task_id, label=label))

    n_hard = sum(1 for lab in labels if lab.label == Route.HARD)
    logger.info(f"Generated {len(labels)} ICN labels: {len(labels) - n_hard} Easy, {n_hard} Hard")
    return labels


def classification_metrics(labels: Sequence[Route], routes: Sequence[Route]) -> IcnMetrics:
    """Fractions of all queries: correct, Hard-routed-Easy (FP), Easy-routed-Hard (FN)"""
    if len(labels) != len(routes):
        raise DimensionError(f"{len(labels)} labels for {len(routes)} routes")
    if not labels:
        return IcnMetrics(accuracy=0.0, false_positive=0.0, false_negative=0.0)
    lab = np.array([x == Route.EASY for x in labels])
    got = np.array([x == Route.EASY for x in routes])
    n = len(labels)
    return IcnMetrics(
        accuracy=float(np.sum(lab == got)) / n,
        false_positive=float(np.sum(~lab & got)) / n,
        false_negative=float(np.sum(lab & ~got)) / n,
    )
