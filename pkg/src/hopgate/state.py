"""Data models for hyperparameters, weights, hop traces and predictions"""

from enum import Enum
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import ConfigurationError
from .tensor import FlopLedger


class Variant(str, Enum):
    """Network structure"""
    CONVENTIONAL = "conventional"
    KEY_VALUE = "keyvalue"


class AppMode(str, Enum):
    """Whether story embedding is amortized or paid on every query"""
    PRE_EMBEDDED = "pre"
    INTERACTIVE = "interactive"


class Tying(str, Enum):
    """Embedding sharing scheme across hops"""
    ADJACENT = "adjacent"
    HOP_SPECIFIC = "hop_specific"


class Route(str, Enum):
    """Path a query took through the network"""
    EASY = "Easy"
    HARD = "Hard"
    FORCED = "Forced"


class HyperParams(BaseModel):
    """Model dimensions; m and l1 default by variant (3/32 conventional, 2/200 key-value)"""
    d: int = Field(default=40, ge=1)
    V: int = Field(ge=1)
    n_s: int = Field(default=50, ge=1)
    n_w: int = Field(ge=1)
    m: int = Field(ge=1)
    l1: int = Field(ge=1)
    variant: Variant = Variant.CONVENTIONAL
    app_mode: AppMode = AppMode.PRE_EMBEDDED
    tying: Tying = Tying.ADJACENT

    @model_validator(mode="before")
    @classmethod
    def _variant_defaults(cls, data: Any) -> Any:
        if isinstance(data, dict):
            key_value = Variant(data.get("variant", Variant.CONVENTIONAL)) == Variant.KEY_VALUE
            data = dict(data)
            if data.get("m") is None:
                data["m"] = 2 if key_value else 3
            if data.get("l1") is None:
                data["l1"] = 200 if key_value else 32
        return data

    @property
    def n_embeds(self) -> int:
        return self.m + 1 if self.tying == Tying.ADJACENT else 2 * self.m + 1

    def input_embed(self, hop: int) -> int:
        """Index of A_hop (1-based hop)"""
        return hop - 1 if self.tying == Tying.ADJACENT else 2 * hop - 1

    def output_embed(self, hop: int) -> int:
        """Index of C_hop (1-based hop)"""
        return hop if self.tying == Tying.ADJACENT else 2 * hop

    def check_supported(self) -> None:
        if self.variant == Variant.KEY_VALUE and self.app_mode == AppMode.INTERACTIVE:
            raise ConfigurationError("Key-value networks are only defined for pre-embedded use")


class IcnWeights(BaseModel):
    """Two-layer Easy/Hard classifier on the first hop's output key"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @model_validator(mode="after")
    def _shapes(self) -> "IcnWeights":
        l1 = self.W1.shape[0]
        if self.b1.shape != (l1,) or self.W2.shape != (2, l1) or self.b2.shape != (2,):
            raise ConfigurationError(
                f"ICN shapes inconsistent: W1 {self.W1.shape}, b1 {self.b1.shape}, "
                f"W2 {self.W2.shape}, b2 {self.b2.shape}"
            )
        return self

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    def as_params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}


class ModelWeights(BaseModel):
    """
    Trainable tensors

    embeds holds E_0..E_n (d x V each); which of them serve as B, A_k and C_k is
    decided by HyperParams.tying. W and W_E are V x d. R / R_bias exist only for
    key-value networks; pe only for conventional ones.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    embeds: list[np.ndarray]
    W: np.ndarray
    W_E: Optional[np.ndarray] = None
    R: Optional[list[np.ndarray]] = None
    R_bias: Optional[list[np.ndarray]] = None
    pe: Optional[np.ndarray] = None
    icn: Optional[IcnWeights] = None

    def validate_for(self, hyper: HyperParams) -> None:
        """Raise ConfigurationError unless every tensor matches hyper"""
        if len(self.embeds) != hyper.n_embeds:
            raise ConfigurationError(f"Expected {hyper.n_embeds} embedding matrices, got {len(self.embeds)}")
        for i, e in enumerate(self.embeds):
            if e.shape != (hyper.d, hyper.V):
                raise ConfigurationError(f"E{i} has shape {e.shape}, expected {(hyper.d, hyper.V)}")
        if self.W.shape != (hyper.V, hyper.d):
            raise ConfigurationError(f"W has shape {self.W.shape}, expected {(hyper.V, hyper.d)}")
        if self.W_E is not None and self.W_E.shape != self.W.shape:
            raise ConfigurationError(f"W_E has shape {self.W_E.shape}, expected {self.W.shape}")
        key_value = hyper.variant == Variant.KEY_VALUE
        if key_value != (self.R is not None):
            raise ConfigurationError("R matrices must be present exactly for key-value networks")
        if key_value:
            if len(self.R) != hyper.m or self.R_bias is None or len(self.R_bias) != hyper.m:
                raise ConfigurationError(f"Expected {hyper.m} R matrices and biases")
        elif self.pe is None or self.pe.shape != (hyper.n_w, hyper.d):
            raise ConfigurationError("Conventional networks need an n_w x d positional encoding")

    def as_params(self) -> dict[str, np.ndarray]:
        """Trainable tensors by checkpoint name; arrays are shared, not copied"""
        params = {f"E{i}": e for i, e in enumerate(self.embeds)}
        params["W"] = self.W
        if self.R is not None:
            for j, (r, b) in enumerate(zip(self.R, self.R_bias), start=1):
                params[f"R{j}"] = r
                params[f"R{j}.bias"] = b
        return params

    def embedding_params(self) -> dict[str, np.ndarray]:
        return {f"E{i}": e for i, e in enumerate(self.embeds)}


class EmbeddedMemory(BaseModel):
    """Input/output memories for one hop; `columns` maps memory slots to story rows"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    m_in: np.ndarray
    m_out: np.ndarray
    hop_index: int
    columns: Optional[np.ndarray] = None


class HopTrace(BaseModel):
    """What one attention hop saw and produced"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    k: np.ndarray
    p_a: np.ndarray
    o: np.ndarray
    u_out: np.ndarray
    skipped: int
    kept: np.ndarray


class Prediction(BaseModel):
    """Answer plus the route, hop count, FLOPs and attention trace that produced it"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    answer_id: int
    logits: np.ndarray
    route: Route
    hops_executed: int
    ledger: FlopLedger
    trace: list[HopTrace]
    p_easy: Optional[float] = None
