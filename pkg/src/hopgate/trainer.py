"""Analytic-gradient training of the baseline network, the FC_E head and the ICN, plus threshold calibration"""

import logging
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .babi import Sample, positional_encoding
from .errors import ParameterError, TrainingDivergedError
from .gate import EASY, HARD, GateConfig, GateMode, IcnLabel, decide_route, icn_forward
from .optim import Adam, clip_grad_norm
from .state import HyperParams, IcnWeights, ModelWeights, Route, Variant
from .tensor import FlopLedger

logger = logging.getLogger(__name__)

THRESHOLD_GRID = tuple(round(0.50 + 0.01 * i, 2) for i in range(50))


class TrainConfig(BaseModel):
    """Optimizer and schedule; anneal_every=None keeps the learning rate fixed"""
    learning_rate: float = Field(default=0.01, ge=0.0)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = Field(default=60, ge=0)
    batch_size: int = Field(default=32, ge=1)
    seed: int = 0
    grad_clip_norm: Optional[float] = 40.0
    anneal_every: Optional[int] = Field(default=25, ge=1)
    anneal_rate: float = Field(default=0.5, gt=0.0, le=1.0)
    log_path: Optional[Path] = None

    def lr_at(self, epoch: int) -> float:
        if self.anneal_every is None:
            return self.learning_rate
        return self.learning_rate * self.anneal_rate ** (epoch // self.anneal_every)


class LossKind(str, Enum):
    CROSS_ENTROPY = "ce"
    WEIGHTED_CROSS_ENTROPY = "wce"


class LossSpec(BaseModel):
    """class_weights are (Easy, Hard); None means inverse class frequency"""
    kind: LossKind = LossKind.WEIGHTED_CROSS_ENTROPY
    class_weights: Optional[tuple[float, float]] = None

    @field_validator("class_weights")
    @classmethod
    def _positive(cls, v):
        if v is not None and min(v) <= 0:
            raise ValueError("class weights must be positive")
        return v


class TrainLogRecord(BaseModel):
    epoch: int
    split: str
    loss: float
    accuracy: float


class _Batch(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    grids: np.ndarray
    queries: np.ndarray
    answers: np.ndarray
    values: Optional[np.ndarray] = None


def _stack(samples: Sequence[Sample]) -> _Batch:
    values = None
    if samples[0].value_ids is not None:
        values = np.stack([s.value_ids for s in samples])
    return _Batch(
        grids=np.stack([s.story_grid for s in samples]),
        queries=np.stack([s.query_ids for s in samples]),
        answers=np.array([s.answer_id for s in samples], dtype=np.int64),
        values=values,
    )


def _bow(e: np.ndarray, ids: np.ndarray, pe: Optional[np.ndarray]) -> np.ndarray:
    words = e.T[ids]
    if pe is not None:
        words = words * pe
    return words.sum(axis=-2)


def _scatter_bow(g_t: np.ndarray, ids: np.ndarray, grad: np.ndarray, pe: Optional[np.ndarray]) -> None:
    contrib = np.broadcast_to(grad[..., None, :], ids.shape + (grad.shape[-1],))
    if pe is not None:
        contrib = contrib * pe
    np.add.at(g_t, ids, contrib)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def _log_softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _forward_batch(weights: ModelWeights, hyper: HyperParams, batch: _Batch, n_hops: Optional[int] = None):
    key_value = hyper.variant == Variant.KEY_VALUE
    pe = None if key_value else weights.pe
    u = _bow(weights.embeds[0], batch.queries, pe)
    hops = []
    for hop in range(1, (n_hops or hyper.m) + 1):
        e_in = weights.embeds[hyper.input_embed(hop)]
        e_out = weights.embeds[hyper.output_embed(hop)]
        m_in = _bow(e_in, batch.grids, pe)
        m_out = e_out.T[batch.values] if key_value else _bow(e_out, batch.grids, pe)
        p = _softmax_rows(np.einsum("bsd,bd->bs", m_in, u))
        x = np.einsum("bs,bsd->bd", p, m_out) + u
        u_next = x @ weights.R[hop - 1].T + weights.R_bias[hop - 1] if key_value else x
        hops.append({"u": u, "m_in": m_in, "m_out": m_out, "p": p, "x": x})
        u = u_next
    return u, hops


def baseline_loss(weights: ModelWeights, hyper: HyperParams, samples: Sequence[Sample]) -> float:
    """Mean softmax cross-entropy of the full network on `samples`"""
    batch = _stack(samples)
    u, _ = _forward_batch(weights, hyper, batch)
    logp = _log_softmax_rows(u @ weights.W.T)
    return float(-np.mean(logp[np.arange(len(samples)), batch.answers]))


def baseline_gradients(
    weights: ModelWeights, hyper: HyperParams, samples: Sequence[Sample]
) -> tuple[float, int, dict[str, np.ndarray]]:
    """
    Loss, number of correct answers and gradients for every trainable tensor

    Gradients are keyed like ModelWeights.as_params().
    """
    batch = _stack(samples)
    key_value = hyper.variant == Variant.KEY_VALUE
    pe = None if key_value else weights.pe
    n = len(samples)
    rows = np.arange(n)

    u, hops = _forward_batch(weights, hyper, batch)
    logp = _log_softmax_rows(u @ weights.W.T)
    loss = float(-np.mean(logp[rows, batch.answers]))
    correct = int(np.sum(np.argmax(logp, axis=1) == batch.answers))

    dz = np.exp(logp)
    dz[rows, batch.answers] -= 1.0
    dz /= n

    grads: dict[str, np.ndarray] = {"W": dz.T @ u}
    du = dz @ weights.W
    g_embed = [np.zeros((hyper.V, hyper.d)) for _ in weights.embeds]

    for j in reversed(range(len(hops))):
        h = hops[j]
        hop = j + 1
        if key_value:
            grads[f"R{hop}"] = du.T @ h["x"]
            grads[f"R{hop}.bias"] = du.sum(axis=0)
            dx = du @ weights.R[j]
        else:
            dx = du
        p = h["p"]
        dp = np.einsum("bd,bsd->bs", dx, h["m_out"])
        dm_out = p[:, :, None] * dx[:, None, :]
        dk = p * (dp - np.sum(p * dp, axis=1, keepdims=True))
        du = dx + np.einsum("bs,bsd->bd", dk, h["m_in"])
        dm_in = dk[:, :, None] * h["u"][:, None, :]

        _scatter_bow(g_embed[hyper.input_embed(hop)], batch.grids, dm_in, pe)
        if key_value:
            np.add.at(g_embed[hyper.output_embed(hop)], batch.values, dm_out)
        else:
            _scatter_bow(g_embed[hyper.output_embed(hop)], batch.grids, dm_out, pe)

    _scatter_bow(g_embed[0], batch.queries, du, pe)
    for i, g_t in enumerate(g_embed):
        grads[f"E{i}"] = np.ascontiguousarray(g_t.T)
    return loss, correct, grads


def init_weights(hyper: HyperParams, seed: int) -> ModelWeights:
    """Embeddings, W and R drawn from N(0, 0.1^2); padding columns zeroed"""
    rng = np.random.default_rng(seed)
    embeds = []
    for _ in range(hyper.n_embeds):
        e = rng.normal(0.0, 0.1, size=(hyper.d, hyper.V))
        e[:, 0] = 0.0
        embeds.append(e)
    W = rng.normal(0.0, 0.1, size=(hyper.V, hyper.d))
    if hyper.variant == Variant.KEY_VALUE:
        return ModelWeights(
            embeds=embeds,
            W=W,
            R=[rng.normal(0.0, 0.1, size=(hyper.d, hyper.d)) for _ in range(hyper.m)],
            R_bias=[np.zeros(hyper.d) for _ in range(hyper.m)],
        )
    return ModelWeights(embeds=embeds, W=W, pe=positional_encoding(hyper.n_w, hyper.d))


def _write_log(cfg: TrainConfig, record: TrainLogRecord, history: Optional[list]) -> None:
    logger.info(
        f"epoch {record.epoch} {record.split}: loss={record.loss:.4f} accuracy={record.accuracy:.4f}"
    )
    if history is not None:
        history.append(record)
    if cfg.log_path is not None:
        with open(cfg.log_path, "a", encoding="utf-8") as f:
            f.write(record.model_dump_json() + "\n")


def _check_finite(loss: float, epoch: int, what: str) -> None:
    if not np.isfinite(loss):
        raise TrainingDivergedError(
            f"{what} loss became {loss} in epoch {epoch}; lower the learning rate or enable clipping"
        )


def _batches(rng: np.random.Generator, n: int, batch_size: int):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_baseline(
    samples: Sequence[Sample],
    hyper: HyperParams,
    cfg: TrainConfig,
    validation: Optional[Sequence[Sample]] = None,
    history: Optional[list[TrainLogRecord]] = None,
) -> ModelWeights:
    """
    Train the multi-hop network jointly on every sample

    Args:
        samples: Encoded training samples (all tasks pooled)
        hyper: Model dimensions
        cfg: Optimizer and schedule
        validation: Optional held-out samples, evaluated after each epoch
        history: Receives one TrainLogRecord per epoch and split

    Returns:
        Trained weights; deterministic for a given cfg.seed

    Raises:
        TrainingDivergedError: The loss became NaN or infinite
    """
    if not samples:
        raise ParameterError("train_baseline needs at least one sample")
    hyper.check_supported()
    weights = init_weights(hyper, cfg.seed)
    weights.validate_for(hyper)
    params = weights.as_params()
    optimizer = Adam(lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.eps)
    rng = np.random.default_rng(cfg.seed + 1)

    logger.info(
        f"Training {hyper.variant.value} network: {len(samples)} samples, d={hyper.d}, "
        f"V={hyper.V}, m={hyper.m}, {cfg.epochs} epochs"
    )
    for epoch in range(cfg.epochs):
        optimizer.lr = cfg.lr_at(epoch)
        total_loss = 0.0
        total_correct = 0
        for idx in _batches(rng, len(samples), cfg.batch_size):
            loss, correct, grads = baseline_gradients(weights, hyper, [samples[i] for i in idx])
            _check_finite(loss, epoch, "baseline")
            if cfg.grad_clip_norm is not None:
                clip_grad_norm(grads, cfg.grad_clip_norm)
            optimizer.step(params, grads)
            for e in weights.embeds:
                e[:, 0] = 0.0
            total_loss += loss * len(idx)
            total_correct += correct

        _write_log(cfg, TrainLogRecord(
            epoch=epoch, split="train", loss=total_loss / len(samples), accuracy=total_correct / len(samples),
        ), history)
        if validation:
            loss, correct, _ = baseline_gradients(weights, hyper, validation)
            _write_log(cfg, TrainLogRecord(
                epoch=epoch, split="valid", loss=loss, accuracy=correct / len(validation),
            ), history)
    return weights


def first_hop_keys(
    weights: ModelWeights, hyper: HyperParams, samples: Sequence[Sample], batch_size: int = 256
) -> np.ndarray:
    """u2 for every sample, stacked into an N x d matrix"""
    out = []
    for start in range(0, len(samples), batch_size):
        u, _ = _forward_batch(weights, hyper, _stack(samples[start:start + batch_size]), n_hops=1)
        out.append(u)
    return np.concatenate(out, axis=0) if out else np.zeros((0, hyper.d))


def fc_e_gradients(W_E: np.ndarray, features: np.ndarray, answers: np.ndarray) -> tuple[float, int, np.ndarray]:
    """Cross-entropy loss, correct count and gradient of a linear head on fixed features"""
    n = features.shape[0]
    rows = np.arange(n)
    logp = _log_softmax_rows(features @ W_E.T)
    loss = float(-np.mean(logp[rows, answers]))
    correct = int(np.sum(np.argmax(logp, axis=1) == answers))
    dz = np.exp(logp)
    dz[rows, answers] -= 1.0
    dz /= n
    return loss, correct, dz.T @ features


def train_fc_e(
    weights: ModelWeights,
    hyper: HyperParams,
    samples: Sequence[Sample],
    cfg: TrainConfig,
    history: Optional[list[TrainLogRecord]] = None,
) -> np.ndarray:
    """
    Train the early-exit head on first-hop keys with every embedding frozen

    W_E starts as a copy of W. Zero epochs return that copy unchanged.
    """
    features = first_hop_keys(weights, hyper, samples)
    answers = np.array([s.answer_id for s in samples], dtype=np.int64)
    params = {"W_E": weights.W.copy()}
    optimizer = Adam(lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.eps)
    rng = np.random.default_rng(cfg.seed + 2)

    for epoch in range(cfg.epochs):
        optimizer.lr = cfg.lr_at(epoch)
        total_loss = 0.0
        total_correct = 0
        for idx in _batches(rng, len(samples), cfg.batch_size):
            loss, correct, grad = fc_e_gradients(params["W_E"], features[idx], answers[idx])
            _check_finite(loss, epoch, "FC_E")
            grads = {"W_E": grad}
            if cfg.grad_clip_norm is not None:
                clip_grad_norm(grads, cfg.grad_clip_norm)
            optimizer.step(params, grads)
            total_loss += loss * len(idx)
            total_correct += correct
        _write_log(cfg, TrainLogRecord(
            epoch=epoch, split="fc_e", loss=total_loss / len(samples), accuracy=total_correct / len(samples),
        ), history)
    return params["W_E"]


def icn_targets(labels: Sequence) -> np.ndarray:
    """0 for Easy, 1 for Hard; accepts IcnLabel or Route items"""
    routes = [lab.label if isinstance(lab, IcnLabel) else Route(lab) for lab in labels]
    return np.array([EASY if r == Route.EASY else HARD for r in routes], dtype=np.int64)


def inverse_frequency_weights(targets: np.ndarray) -> tuple[float, float]:
    """Class weights proportional to 1/count, normalized to mean 1"""
    counts = np.bincount(targets, minlength=2).astype(np.float64)
    if np.any(counts == 0):
        return 1.0, 1.0
    inv = 1.0 / counts
    inv /= inv.mean()
    return float(inv[EASY]), float(inv[HARD])


def init_icn(d: int, l1: int, seed: int) -> IcnWeights:
    rng = np.random.default_rng(seed)
    b1 = 1.0 / np.sqrt(d)
    b2 = 1.0 / np.sqrt(l1)
    return IcnWeights(
        W1=rng.uniform(-b1, b1, size=(l1, d)),
        b1=rng.uniform(-b1, b1, size=l1),
        W2=rng.uniform(-b2, b2, size=(2, l1)),
        b2=rng.uniform(-b2, b2, size=2),
    )


def icn_gradients(
    icn: IcnWeights, features: np.ndarray, targets: np.ndarray, class_weights: tuple[float, float] = (1.0, 1.0)
) -> tuple[float, int, dict[str, np.ndarray]]:
    """
    Weighted cross-entropy of the ICN and its gradients

    The loss is sum(w_y * CE) / sum(w_y), so equal weights give plain mean CE.
    """
    rows = np.arange(features.shape[0])
    pre = features @ icn.W1.T + icn.b1
    h = np.maximum(pre, 0.0)
    logp = _log_softmax_rows(h @ icn.W2.T + icn.b2)

    w = np.asarray(class_weights, dtype=np.float64)[targets]
    norm = w.sum()
    loss = float(-np.sum(w * logp[rows, targets]) / norm)
    correct = int(np.sum(np.argmax(logp, axis=1) == targets))

    dz = np.exp(logp)
    dz[rows, targets] -= 1.0
    dz *= (w / norm)[:, None]
    dh = dz @ icn.W2
    dpre = dh * (pre > 0.0)
    grads = {
        "W2": dz.T @ h,
        "b2": dz.sum(axis=0),
        "W1": dpre.T @ features,
        "b1": dpre.sum(axis=0),
    }
    return loss, correct, grads


def train_icn(
    features: np.ndarray,
    labels: Sequence,
    d: int,
    l1: int,
    cfg: TrainConfig,
    loss: Optional[LossSpec] = None,
    history: Optional[list[TrainLogRecord]] = None,
) -> IcnWeights:
    """
    Train the Easy/Hard classifier on first-hop keys

    Args:
        features: N x d first-hop keys
        labels: IcnLabel or Route per row of features
        d, l1: Input width and hidden width
        cfg: Optimizer and schedule
        loss: Weighted or plain cross-entropy; weighted by default

    Returns:
        Trained IcnWeights, deterministic for a given cfg.seed
    """
    targets = icn_targets(labels)
    if features.shape != (targets.size, d):
        raise ParameterError(f"ICN features {features.shape} for {targets.size} labels and d={d}")
    loss = loss or LossSpec()
    if np.unique(targets).size < 2:
        logger.warning("ICN label set has a single class; the classifier will be degenerate")
    if loss.kind == LossKind.CROSS_ENTROPY:
        class_weights = (1.0, 1.0)
    else:
        class_weights = loss.class_weights or inverse_frequency_weights(targets)
    logger.info(f"Training ICN (L1={l1}) on {targets.size} labels, class weights {class_weights}")

    icn = init_icn(d, l1, cfg.seed)
    params = icn.as_params()
    optimizer = Adam(lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.eps)
    rng = np.random.default_rng(cfg.seed + 3)

    for epoch in range(cfg.epochs):
        optimizer.lr = cfg.lr_at(epoch)
        total_loss = 0.0
        total_correct = 0
        for idx in _batches(rng, targets.size, cfg.batch_size):
            batch_loss, correct, grads = icn_gradients(icn, features[idx], targets[idx], class_weights)
            _check_finite(batch_loss, epoch, "ICN")
            if cfg.grad_clip_norm is not None:
                clip_grad_norm(grads, cfg.grad_clip_norm)
            optimizer.step(params, grads)
            total_loss += batch_loss * len(idx)
            total_correct += correct
        _write_log(cfg, TrainLogRecord(
            epoch=epoch, split="icn", loss=total_loss / targets.size, accuracy=total_correct / targets.size,
        ), history)
    return icn


class _CalibrationRow(BaseModel):
    task_id: int
    baseline_correct: bool
    easy_correct: bool
    p_easy: float
    p_hard: float


def _calibration_rows(weights, hyper, icn, samples, fc_e, fc_h) -> list[_CalibrationRow]:
    from .engine import HopPolicy, forward

    rows = []
    for sample in samples:
        full = forward(weights, hyper, sample, HopPolicy.ALL_HOPS, fc_h=fc_h)
        one = forward(weights, hyper, sample, HopPolicy.ONE_HOP, fc_e=fc_e)
        p_easy, p_hard = icn_forward(full.trace[0].u_out, icn, FlopLedger())
        rows.append(_CalibrationRow(
            task_id=sample.task_id,
            baseline_correct=full.answer_id == sample.answer_id,
            easy_correct=one.answer_id == sample.answer_id,
            p_easy=p_easy,
            p_hard=p_hard,
        ))
    return rows


def _smallest_threshold(rows: list[_CalibrationRow], budget: float) -> Optional[float]:
    n = len(rows)
    baseline = sum(r.baseline_correct for r in rows) / n
    for z in THRESHOLD_GRID:
        cfg = GateConfig(mode=GateMode.GLOBAL, z_global=z)
        correct = 0
        for r in rows:
            easy = decide_route((r.p_easy, r.p_hard), r.task_id, cfg) == Route.EASY
            correct += r.easy_correct if easy else r.baseline_correct
        if baseline - correct / n <= budget + 1e-12:
            return z
    return None


def calibrate_thresholds(
    weights: ModelWeights,
    hyper: HyperParams,
    icn: IcnWeights,
    validation: Sequence[Sample],
    mode: GateMode,
    budget: float = 0.01,
    fc_e=None,
    fc_h=None,
) -> GateConfig:
    """
    Pick confidence thresholds on held-out samples

    For each task (PerTask) or the pooled set (Global), the smallest z in
    0.50..0.99 whose gated accuracy loss against the all-hops baseline is
    within `budget`. PerTask tasks that already pass at 0.50 are left
    unlisted and fall back to z_unlisted=0.5. Where nothing passes the
    threshold is 1.0 (all Hard) and the task is flagged.
    """
    if mode == GateMode.NC:
        return GateConfig(mode=GateMode.NC)
    if not validation:
        raise ParameterError("calibrate_thresholds needs validation samples")

    rows = _calibration_rows(weights, hyper, icn, validation, fc_e, fc_h)
    task_ids = sorted({r.task_id for r in rows})

    if mode == GateMode.GLOBAL:
        z = _smallest_threshold(rows, budget)
        if z is None:
            logger.warning(f"No global threshold keeps accuracy loss within {budget}; routing everything Hard")
            return GateConfig(mode=GateMode.GLOBAL, z_global=1.0, flagged_tasks=task_ids)
        logger.info(f"Calibrated global threshold z={z}")
        return GateConfig(mode=GateMode.GLOBAL, z_global=z)

    per_task: dict[int, float] = {}
    flagged: list[int] = []
    for task_id in task_ids:
        z = _smallest_threshold([r for r in rows if r.task_id == task_id], budget)
        if z is None:
            logger.warning(f"Task {task_id}: no threshold within budget {budget}; routing all Hard")
            per_task[task_id] = 1.0
            flagged.append(task_id)
        elif z > THRESHOLD_GRID[0]:
            per_task[task_id] = z
        logger.info(f"Task {task_id}: threshold {per_task.get(task_id, 'none needed')}")
    return GateConfig(
        mode=GateMode.PER_TASK,
        z_per_task=per_task,
        z_unlisted=THRESHOLD_GRID[0],
        flagged_tasks=flagged,
    )
