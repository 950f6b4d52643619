"""Configuration models of the subject transformer and its base training."""

from enum import Enum
from typing import Self

from pydantic import BaseModel, ConfigDict, Field, model_validator


class TokenKind(str, Enum):
    """Modality of a sequence position."""

    IMAGE = "image"
    TEXT = "text"


class ModelConfig(BaseModel):
    """
    Shape and seed of the desk-scale multimodal transformer.

    Attributes
    ----------
    n_layers : int
        Number of transformer layers ``L``.
    d_model : int
        Residual stream width.
    n_heads : int
        Attention heads; must divide ``d_model``.
    d_ff : int
        MLP hidden width.
    vocab_size : int
        Size of the token vocabulary (question words and answers).
    n_image_tokens : int
        Number ``m`` of image-prefix positions.
    max_text_tokens : int
        Number ``n`` of text positions; questions are left-padded to it.
    image_feature_dim : int
        Width of the image feature vectors fed to the image projection.
    seed : int
        Initialisation seed.
    allow_shallow : bool
        Permit ``n_layers < 4``. Only gradient-check configs set this; masking
        sweeps need a top-layers range.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_layers: int = Field(4, ge=1)
    d_model: int = Field(64, ge=1)
    n_heads: int = Field(4, ge=1)
    d_ff: int = Field(128, ge=1)
    vocab_size: int = Field(64, ge=2)
    n_image_tokens: int = Field(8, ge=1)
    max_text_tokens: int = Field(8, ge=1)
    image_feature_dim: int = Field(48, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    init_std: float = Field(0.02, gt=0)
    norm_eps: float = Field(1e-6, gt=0)
    allow_shallow: bool = False

    @model_validator(mode="after")
    def _check_shapes(self) -> Self:
        if self.d_model % self.n_heads != 0:
            msg = f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}"
            raise ValueError(msg)
        if self.n_layers < 4 and not self.allow_shallow:
            msg = f"n_layers must be >= 4, got {self.n_layers}"
            raise ValueError(msg)
        return self

    @property
    def seq_len(self) -> int:
        """Total positions ``N = m + n``."""
        return self.n_image_tokens + self.max_text_tokens

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def output_position(self) -> int:
        return self.seq_len - 1

    def token_kind(self, position: int) -> TokenKind:
        """Modality of ``position``: the first ``m`` positions hold the image."""
        if not 0 <= position < self.seq_len:
            msg = f"position {position} outside 0..{self.seq_len - 1}"
            raise ValueError(msg)
        if position < self.n_image_tokens:
            return TokenKind.IMAGE
        return TokenKind.TEXT


class TrainConfig(BaseModel):
    """Optimizer settings of base training (mini-batch Adam)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    learning_rate: float = Field(3e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    batch_size: int = Field(64, ge=1)
    max_epochs: int = Field(200, ge=0)
    target_accuracy: float = Field(0.95, ge=0, le=1)
    eval_every: int = Field(5, ge=1)
    include_text_only: bool = True
    include_rephrases: bool = True
