"""Content and speaker embeddings: containers, file I/O, speaker projection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import torch
from torch import nn

from .arrayfile import FormatError, load_array, save_array

CONTENT_FRAME_RATE = 62.5
SPEAKER_RAW_DIM = 256
SPEAKER_DIM = 128
DEFAULT_CONTENT_DIM = 64


@dataclass(frozen=True)
class ContentEmbedding:
    """Per-frame speech content features, ``(T, D)`` at 62.5 frames per second."""

    values: np.ndarray
    frame_rate: float = CONTENT_FRAME_RATE

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float32)
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise ValueError(f"content embedding must be (T>=1, D>=1), got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("content embedding contains non-finite values")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SpeakerEmbedding:
    """A unit-norm 256-d identity vector plus its optional 128-d projection."""

    raw: np.ndarray
    projected: np.ndarray | None = None

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=np.float32)
        if raw.shape != (SPEAKER_RAW_DIM,):
            raise ValueError(f"speaker embedding must have 256 values, got shape {raw.shape}")
        if not np.all(np.isfinite(raw)):
            raise ValueError("speaker embedding contains non-finite values")
        if abs(float(np.linalg.norm(raw.astype(np.float64))) - 1.0) > 1e-3:
            raise ValueError("speaker embedding must have unit L2 norm (within 1e-3)")
        object.__setattr__(self, "raw", raw)
        if self.projected is not None:
            proj = np.asarray(self.projected, dtype=np.float32)
            if proj.shape != (SPEAKER_DIM,) or not np.all(np.isfinite(proj)):
                raise ValueError("projected speaker embedding must be 128 finite values")
            object.__setattr__(self, "projected", proj)


def load_embedding(path, kind: Literal["content", "speaker"]):
    try:
        arr = load_array(path)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if kind == "content":
        if arr.ndim != 2:
            raise FormatError(f"{path}: dims must be (T, D) for a content embedding, got rank {arr.ndim}")
        return ContentEmbedding(arr)
    if kind == "speaker":
        if arr.shape != (SPEAKER_RAW_DIM,):
            raise FormatError(f"{path}: dims must be (256,) for a speaker embedding, got {arr.shape}")
        return SpeakerEmbedding(arr)
    raise ValueError(f"kind must be 'content' or 'speaker', got {kind!r}")


def save_embedding(path, emb: ContentEmbedding | SpeakerEmbedding) -> None:
    save_array(path, emb.values if isinstance(emb, ContentEmbedding) else emb.raw)


class SpeakerProjection(nn.Module):
    """Single dense layer reducing the identity vector from 256 to 128 dims."""

    def __init__(self, in_dim: int = SPEAKER_RAW_DIM, out_dim: int = SPEAKER_DIM):
        super().__init__()
        self.linear = nn.Linear(in_dim, out_dim)

    def forward(self, raw: torch.Tensor) -> torch.Tensor:
        return self.linear(raw)


def project_speaker(s: SpeakerEmbedding, weight, bias) -> SpeakerEmbedding:
    """Return ``s`` with ``projected = weight @ raw + bias``."""
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if weight.shape != (SPEAKER_DIM, SPEAKER_RAW_DIM) or bias.shape != (SPEAKER_DIM,):
        raise ValueError(f"projection expects W (128, 256) and b (128,), got {weight.shape}, {bias.shape}")
    return SpeakerEmbedding(s.raw, weight @ s.raw.astype(np.float64) + bias)
