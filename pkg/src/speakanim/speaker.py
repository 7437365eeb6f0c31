"""Speaker-aware branch: attention generator, realism discriminator, GAN losses.

Sequences are processed in non-overlapping windows of ``tau_prime`` frames
(edge-replicated at the end). The content LSTM windows are also clipped at
the window boundary, so each output window depends only on its own frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .content import N_COORDS, ConfigError
from .embeddings import DEFAULT_CONTENT_DIM, SPEAKER_DIM, SPEAKER_RAW_DIM, ContentEmbedding, SpeakerEmbedding, SpeakerProjection
from .geometry import DEFAULT_TOPOLOGY, LandmarkSequence, PartTopology, as_frame
from .nn import AttentionEncoder, WindowLSTM, landmark_loss, laplacian_operator, mlp, seeded_init, split_windows, zero_parameters


@dataclass(frozen=True)
class SpeakerConfig:
    content_dim: int = DEFAULT_CONTENT_DIM
    lstm_hidden: int = 256
    lstm_layers: int = 3
    tau: int = 18
    tau_prime: int = 256
    d_model: int = 32
    n_heads: int = 2
    n_layers: int = 2
    mlp_hidden: tuple[int, ...] = (512, 256)
    disc_mlp_hidden: tuple[int, ...] = (512, 256)
    position_encoding: bool = True


class SpeakerGenerator(nn.Module):
    def __init__(self, cfg: SpeakerConfig = SpeakerConfig()):
        super().__init__()
        self.cfg = cfg
        self.projection = SpeakerProjection(SPEAKER_RAW_DIM, SPEAKER_DIM)
        self.encoder = WindowLSTM(cfg.content_dim, cfg.lstm_hidden, cfg.lstm_layers, cfg.tau)
        self.attention = AttentionEncoder(
            cfg.lstm_hidden + SPEAKER_DIM, cfg.d_model, cfg.n_heads, cfg.n_layers, cfg.position_encoding
        )
        self.decoder = mlp([cfg.d_model + N_COORDS, *cfg.mlp_hidden, N_COORDS])
        # start as the zero generator (y = p); the discriminator first learns real vs. pose-free
        zero_parameters(self.decoder[-1])

    @classmethod
    def initialized(cls, cfg: SpeakerConfig = SpeakerConfig(), seed: int = 0) -> "SpeakerGenerator":
        return seeded_init(lambda: cls(cfg), seed)

    def encode_content(self, a_win: torch.Tensor) -> torch.Tensor:
        """``(W, tau_prime, D) -> (W, tau_prime, H)``, LSTM windows clipped per window."""
        return self.encoder(a_win)

    def forward_windows(self, c_win, s128, p_win, q) -> torch.Tensor:
        """Displaced landmarks for windowed inputs ``(W, tau_prime, ...)``; ``s128`` is ``(W, 128)``."""
        spk = s128[:, None, :].expand(*c_win.shape[:2], s128.shape[-1])
        h = self.attention(torch.cat([c_win, spk], dim=-1))
        q_flat = q.reshape(-1, 1, N_COORDS).expand(*h.shape[:2], N_COORDS)
        delta = self.decoder(torch.cat([h, q_flat], dim=-1))
        return p_win + delta.reshape(*delta.shape[:2], 68, 3)

    def forward(self, a, s_raw, p, q) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Full sequence: ``a (T, D)``, ``s_raw (256,)``, ``p (T, 68, 3)``, ``q (68, 3)``.

        Returns ``y (T, 68, 3)``, windowed content codes and the projected speaker vector.
        """
        s128 = self.projection(s_raw)
        return (*self.forward_projected(a, s128, p, q), s128)

    def forward_projected(self, a, s128, p, q) -> tuple[torch.Tensor, torch.Tensor]:
        a_win, n = split_windows(a, self.cfg.tau_prime)
        p_win, _ = split_windows(p, self.cfg.tau_prime)
        c_win = self.encode_content(a_win)
        y = self.forward_windows(c_win, s128.expand(len(a_win), -1), p_win, q)
        return y.reshape(-1, 68, 3)[:n], c_win

    def project(self, s: SpeakerEmbedding) -> SpeakerEmbedding:
        dtype = self.projection.linear.weight.dtype
        with torch.no_grad():
            proj = self.projection(torch.tensor(s.raw, dtype=dtype))
        return SpeakerEmbedding(s.raw, proj.numpy())


class Discriminator(nn.Module):
    """Per-frame realism from landmarks, content codes and speaker vector."""

    def __init__(self, cfg: SpeakerConfig = SpeakerConfig()):
        super().__init__()
        self.cfg = cfg
        self.attention = AttentionEncoder(
            N_COORDS + cfg.lstm_hidden + SPEAKER_DIM, cfg.d_model, cfg.n_heads, cfg.n_layers, cfg.position_encoding
        )
        self.head = mlp([cfg.d_model, *cfg.disc_mlp_hidden, 1])

    @classmethod
    def initialized(cls, cfg: SpeakerConfig = SpeakerConfig(), seed: int = 1) -> "Discriminator":
        return seeded_init(lambda: cls(cfg), seed)

    def forward(self, y_win, c_win, s128) -> torch.Tensor:
        """``y_win (W, L, 68, 3)``, ``c_win (W, L, H)``, ``s128 (W, 128)`` -> ``(W, L)``."""
        spk = s128[:, None, :].expand(*c_win.shape[:2], s128.shape[-1])
        x = torch.cat([y_win.reshape(*y_win.shape[:2], N_COORDS), c_win, spk], dim=-1)
        return self.head(self.attention(x)).squeeze(-1)


@dataclass(frozen=True)
class RealismScore:
    r: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(r)):
            raise ValueError("realism scores must be finite")
        object.__setattr__(self, "r", r)

    def __len__(self) -> int:
        return len(self.r)


def _dtype(module: nn.Module) -> torch.dtype:
    return next(module.parameters()).dtype


def speaker_forward(
    a: ContentEmbedding,
    s: SpeakerEmbedding,
    p: LandmarkSequence,
    q,
    params: SpeakerGenerator,
) -> LandmarkSequence:
    """Speaker-aware landmarks ``y_t = p_t + MLP(h_t, q)``.

    ``s`` must carry its 128-d projection (see :meth:`SpeakerGenerator.project`).
    """
    if s.projected is None:
        raise ValueError("speaker embedding has no 128-d projection; call SpeakerGenerator.project first")
    if len(p) != len(a):
        raise ValueError(f"content has {len(a)} frames but landmarks have {len(p)}")
    if params.encoder.lstm.input_size != a.dim:
        raise ConfigError(f"generator expects content dim {params.encoder.lstm.input_size}, got {a.dim}")
    dt = _dtype(params)
    with torch.no_grad():
        y, _ = params.forward_projected(
            torch.tensor(a.values, dtype=dt),
            torch.tensor(s.projected, dtype=dt),
            torch.tensor(p.frames, dtype=dt),
            torch.tensor(as_frame(q), dtype=dt),
        )
    return p.with_frames(y.double().numpy())


def discriminator_score(
    y: LandmarkSequence,
    c_codes: np.ndarray,
    s128: np.ndarray,
    params: Discriminator,
) -> RealismScore:
    """Per-frame realism of ``y`` given content codes ``(T, H)`` and a projected speaker vector."""
    c_codes = np.asarray(c_codes)
    s128 = np.asarray(s128).reshape(-1)
    if c_codes.shape != (len(y), params.cfg.lstm_hidden):
        raise ValueError(f"content codes must be ({len(y)}, {params.cfg.lstm_hidden}), got {c_codes.shape}")
    if s128.shape != (SPEAKER_DIM,):
        raise ValueError(f"speaker vector must have 128 values, got {s128.shape}")
    dt = _dtype(params)
    with torch.no_grad():
        y_win, n = split_windows(torch.tensor(y.frames, dtype=dt), params.cfg.tau_prime)
        c_win, _ = split_windows(torch.tensor(c_codes, dtype=dt), params.cfg.tau_prime)
        s = torch.tensor(s128, dtype=dt).expand(len(y_win), -1)
        r = params(y_win, c_win, s).reshape(-1)[:n]
    return RealismScore(r.double().numpy())


def lsgan_terms(r_real: torch.Tensor, r_fake: torch.Tensor) -> torch.Tensor:
    return ((r_real - 1.0) ** 2).sum() + (r_fake**2).sum()


def lsgan_loss(r_real: RealismScore, r_fake: RealismScore) -> float:
    if len(r_real) != len(r_fake):
        raise ValueError(f"score lengths differ: {len(r_real)} vs {len(r_fake)}")
    return float(lsgan_terms(torch.tensor(r_real.r), torch.tensor(r_fake.r)))


def generator_terms(y, y_ref, lap, r_fake, lambda_s: float, mu_s: float) -> torch.Tensor:
    return landmark_loss(y, y_ref, lap, lambda_s) + mu_s * ((r_fake - 1.0) ** 2).sum()


def generator_loss(
    y: LandmarkSequence,
    y_ref: LandmarkSequence,
    topo: PartTopology = DEFAULT_TOPOLOGY,
    r_fake: RealismScore | None = None,
    lambda_s: float = 1.0,
    mu_s: float = 1e-3,
) -> float:
    if y.frames.shape != y_ref.frames.shape:
        raise ValueError(f"sequence shapes differ: {y.frames.shape} vs {y_ref.frames.shape}")
    r = torch.ones(len(y), dtype=torch.float64) if r_fake is None else torch.tensor(r_fake.r)
    if len(r) != len(y):
        raise ValueError(f"{len(r)} realism scores for {len(y)} frames")
    return float(
        generator_terms(torch.tensor(y.frames), torch.tensor(y_ref.frames), laplacian_operator(topo), r, lambda_s, mu_s)
    )
