"""JSON wire schema (version field ``v`` = 1)."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

WIRE_VERSION = 1


class Message(BaseModel):
    model_config = ConfigDict(extra="forbid")
    v: Literal[1] = WIRE_VERSION


class PairOut(Message):
    pair_id: str
    smiles_i: str
    smiles_j: str
    variance: float


class NextPairOut(Message):
    session: str
    exhausted: bool
    pair: PairOut | None = None
    position: int = Field(description="zero-based rank of the served pair")
    remaining: int


class PairIn(BaseModel):
    smiles_i: str
    smiles_j: str
    variance: float = 0.0


class SessionCreate(Message):
    """Either explicit ranked pairs or raw molecules to pair with the current model."""

    pairs: list[PairIn] | None = None
    smiles: list[str] | None = None
    source: str = ""
    seed: int = 0
    n_samples: int = Field(100, ge=2)


class SessionOut(Message):
    session: str
    source: str
    n_pairs: int
    n_labels: int
    cursor: int


class LabelIn(Message):
    session: str
    pair_id: str
    harder: Literal["i", "j"]
    labeler: str = "anonymous"


class LabelOut(Message):
    session: str
    pair_id: str
    harder: Literal["i", "j"]
    status: Literal["recorded", "duplicate"]


class FinetuneIn(Message):
    session: str
    model: str | None = None
    lr: float | None = Field(None, gt=0)
    batch_size: int = Field(4, ge=1)
    max_epochs: int = Field(20, ge=1)
    validation: bool = True
    seed: int = 0


class JobOut(Message):
    id: str
    kind: Literal["finetune", "score", "pair"]
    state: Literal["queued", "running", "done", "failed"]
    detail: dict = Field(default_factory=dict)


class ScoreIn(Message):
    smiles: list[str]
    model: str | None = None


class ScoreItem(BaseModel):
    smiles: str
    score: float


class ScoreOut(Message):
    model: str
    scores: list[ScoreItem]


class ModelInfo(BaseModel):
    id: str
    architecture: str
    parent: str | None = None
    n_labels: int | None = None


class ModelsOut(Message):
    models: list[ModelInfo]
    default: str
