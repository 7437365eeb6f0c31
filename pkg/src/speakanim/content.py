"""Speech-content branch: windowed LSTM encoder and MLP displacement decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .embeddings import DEFAULT_CONTENT_DIM, ContentEmbedding
from .geometry import DEFAULT_TOPOLOGY, LandmarkSequence, PartTopology, as_frame
from .nn import WindowLSTM, landmark_loss, laplacian_operator, mlp, seeded_init

N_COORDS = 204


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WindowConfig:
    tau: int = 18
    tau_prime: int = 256

    def __post_init__(self):
        if self.tau < 1 or self.tau_prime < self.tau:
            raise ConfigError(f"need 1 <= tau <= tau_prime, got tau={self.tau}, tau_prime={self.tau_prime}")


@dataclass(frozen=True)
class ContentConfig:
    content_dim: int = DEFAULT_CONTENT_DIM
    lstm_hidden: int = 256
    lstm_layers: int = 3
    mlp_hidden: tuple[int, ...] = (512, 256)
    tau: int = 18


class ContentBranch(nn.Module):
    def __init__(self, cfg: ContentConfig = ContentConfig()):
        super().__init__()
        self.cfg = cfg
        self.encoder = WindowLSTM(cfg.content_dim, cfg.lstm_hidden, cfg.lstm_layers, cfg.tau)
        self.decoder = mlp([cfg.lstm_hidden + N_COORDS, *cfg.mlp_hidden, N_COORDS])

    @classmethod
    def initialized(cls, cfg: ContentConfig = ContentConfig(), seed: int = 0) -> "ContentBranch":
        return seeded_init(lambda: cls(cfg), seed)

    def forward(self, a: torch.Tensor, q: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """``a``: ``(T, D)``; ``q``: ``(68, 3)``. Returns landmarks ``(T, 68, 3)`` and codes ``(T, H)``."""
        codes = self.encoder(a)
        return self.decode(codes, q.expand(len(codes), 68, 3)), codes

    def forward_windows(self, windows: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
        """Landmarks for pre-cut windows ``(B, tau + 1, D)`` with per-sample faces ``(B, 68, 3)``."""
        out, _ = self.encoder.lstm(windows)
        return self.decode(out[:, -1], q)

    def decode(self, codes: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
        delta = self.decoder(torch.cat([codes, q.reshape(-1, N_COORDS)], dim=-1))
        return q + delta.reshape(-1, 68, 3)


def check_shapes(branch: nn.Module, content_dim: int):
    lstm = branch.encoder.lstm
    if lstm.input_size != content_dim:
        raise ConfigError(f"network expects content dim {lstm.input_size}, embedding has {content_dim}")


def content_forward(
    a: ContentEmbedding,
    q,
    params: ContentBranch,
    cfg: WindowConfig | None = None,
) -> tuple[LandmarkSequence, np.ndarray]:
    """Predict pose-free landmarks ``p_t = q + MLP(c_t, q)`` for every content frame."""
    q = as_frame(q)
    check_shapes(params, a.dim)
    if cfg is not None and cfg.tau != params.encoder.tau:
        raise ConfigError(f"window tau={cfg.tau} does not match network tau={params.encoder.tau}")
    dtype = next(params.parameters()).dtype
    with torch.no_grad():
        p, codes = params(torch.tensor(a.values, dtype=dtype), torch.tensor(q, dtype=dtype))
    return LandmarkSequence(p.double().numpy(), a.frame_rate), codes.numpy()


def content_loss(
    pred: LandmarkSequence,
    ref: LandmarkSequence,
    topo: PartTopology = DEFAULT_TOPOLOGY,
    lambda_c: float = 1.0,
) -> float:
    if pred.frames.shape != ref.frames.shape:
        raise ValueError(f"sequence shapes differ: {pred.frames.shape} vs {ref.frames.shape}")
    loss = landmark_loss(
        torch.tensor(pred.frames), torch.tensor(ref.frames), laplacian_operator(topo), lambda_c
    )
    return float(loss)
