"""JSON checkpoints: hyperparameters, vocabulary, named tensors and pruned heads"""

import logging
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .babi import Vocab, positional_encoding
from .errors import ConfigurationError
from .pruning import FcOrigin, PrunedFC
from .state import HyperParams, IcnWeights, ModelWeights, Variant
from .utils import atomic_write_text

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class TensorRecord(BaseModel):
    """Row-major matrix; vectors are stored with cols=1"""
    rows: int
    cols: int
    data: list[float]

    @classmethod
    def from_array(cls, a: np.ndarray) -> "TensorRecord":
        m = a.reshape(a.shape[0], -1)
        return cls(rows=m.shape[0], cols=m.shape[1], data=m.ravel().tolist())

    def matrix(self) -> np.ndarray:
        if len(self.data) != self.rows * self.cols:
            raise ConfigurationError(f"Tensor data has {len(self.data)} values for {self.rows}x{self.cols}")
        return np.array(self.data, dtype=np.float64).reshape(self.rows, self.cols)

    def vector(self) -> np.ndarray:
        return self.matrix().reshape(-1)


class Checkpoint(BaseModel):
    format_version: int = FORMAT_VERSION
    hyper: HyperParams
    vocab: list[str]
    tasks: list[int] = Field(default_factory=list)
    train_labels: list[int] = Field(default_factory=list)
    tensors: dict[str, TensorRecord]
    important_indices: dict[str, list[int]] = Field(default_factory=dict)


class Bundle(BaseModel):
    """Everything a command needs from a checkpoint, decoded"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    hyper: HyperParams
    vocab: Vocab
    weights: ModelWeights
    train_labels: list[int]
    tasks: list[int] = Field(default_factory=list)
    pruned: dict[FcOrigin, PrunedFC] = Field(default_factory=dict)


def _pruned_name(origin: FcOrigin) -> str:
    return f"{origin.value}.pruned"


def save_checkpoint(path: Path, bundle: Bundle) -> None:
    """Serialize a bundle; the positional encoding is not stored, it is recomputed on load"""
    w = bundle.weights
    tensors = {name: TensorRecord.from_array(a) for name, a in w.as_params().items()}
    if w.W_E is not None:
        tensors["W_E"] = TensorRecord.from_array(w.W_E)
    if w.icn is not None:
        for name, a in w.icn.as_params().items():
            tensors[f"icn.{name}"] = TensorRecord.from_array(a)
    indices = {}
    for origin, head in bundle.pruned.items():
        tensors[_pruned_name(origin)] = TensorRecord.from_array(head.rows)
        indices[_pruned_name(origin)] = head.important_indices.tolist()

    ckpt = Checkpoint(
        hyper=bundle.hyper,
        vocab=bundle.vocab.words,
        tasks=sorted(set(bundle.tasks)),
        train_labels=sorted(set(bundle.train_labels)),
        tensors=tensors,
        important_indices=indices,
    )
    atomic_write_text(path, ckpt.model_dump_json())
    logger.info(f"Saved checkpoint to {path} ({len(tensors)} tensors)")


def load_checkpoint(path: Path) -> Bundle:
    """
    Read and validate a checkpoint

    Raises:
        ConfigurationError: Missing file, bad JSON, unknown format or inconsistent tensors
    """
    try:
        ckpt = Checkpoint.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigurationError(f"Checkpoint not found: {path}") from e
    except ValidationError as e:
        raise ConfigurationError(f"Invalid checkpoint {path}: {e}") from e
    if ckpt.format_version != FORMAT_VERSION:
        raise ConfigurationError(f"Unsupported checkpoint format {ckpt.format_version}")

    hyper = ckpt.hyper
    t = ckpt.tensors

    def need(name: str) -> "TensorRecord":
        if name not in t:
            raise ConfigurationError(f"Checkpoint {path} is missing tensor {name}")
        return t[name]

    def optional(name: str) -> Optional[np.ndarray]:
        return t[name].matrix() if name in t else None

    key_value = hyper.variant == Variant.KEY_VALUE
    icn = None
    if "icn.W1" in t:
        icn = IcnWeights(
            W1=need("icn.W1").matrix(),
            b1=need("icn.b1").vector(),
            W2=need("icn.W2").matrix(),
            b2=need("icn.b2").vector(),
        )
    weights = ModelWeights(
        embeds=[need(f"E{i}").matrix() for i in range(hyper.n_embeds)],
        W=need("W").matrix(),
        W_E=optional("W_E"),
        R=[need(f"R{j}").matrix() for j in range(1, hyper.m + 1)] if key_value else None,
        R_bias=[need(f"R{j}.bias").vector() for j in range(1, hyper.m + 1)] if key_value else None,
        pe=None if key_value else positional_encoding(hyper.n_w, hyper.d),
        icn=icn,
    )
    weights.validate_for(hyper)

    pruned = {}
    for origin in FcOrigin:
        name = _pruned_name(origin)
        if name in t:
            pruned[origin] = PrunedFC(
                rows=t[name].matrix(),
                important_indices=np.array(ckpt.important_indices.get(name, []), dtype=np.int64),
                origin=origin,
                vocab_size=hyper.V,
            )
    return Bundle(
        hyper=hyper,
        vocab=Vocab(words=ckpt.vocab),
        weights=weights,
        train_labels=ckpt.train_labels,
        tasks=ckpt.tasks,
        pruned=pruned,
    )
