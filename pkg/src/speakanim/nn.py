"""Shared network pieces: dense stacks, window slicing, self-attention encoder."""

from __future__ import annotations

import math

import torch
from torch import nn

from .geometry import DEFAULT_TOPOLOGY, PartTopology


def mlp(sizes: list[int], slope: float = 0.2) -> nn.Sequential:
    """Dense stack with LeakyReLU between layers and a linear output."""
    layers: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(nn.Linear(a, b))
        if i < len(sizes) - 2:
            layers.append(nn.LeakyReLU(slope))
    return nn.Sequential(*layers)


def zero_parameters(module: nn.Module) -> nn.Module:
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


def seeded_init(build, seed: int):
    """Construct a module with torch's global RNG temporarily seeded."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return build()


def edge_pad(x: torch.Tensor, length: int) -> torch.Tensor:
    """Extend ``x`` along dim 0 to ``length`` by repeating its last entry."""
    extra = length - x.shape[0]
    if extra <= 0:
        return x
    return torch.cat([x, x[-1:].expand(extra, *x.shape[1:])], dim=0)


def sliding_windows(a: torch.Tensor, tau: int) -> torch.Tensor:
    """``(..., T, D) -> (..., T, tau + 1, D)``: frames t..t+tau, edge-padded at the end."""
    pad = a[..., -1:, :].expand(*a.shape[:-2], tau, a.shape[-1])
    padded = torch.cat([a, pad], dim=-2)
    return padded.unfold(-2, tau + 1, 1).transpose(-1, -2)


def split_windows(x: torch.Tensor, size: int) -> tuple[torch.Tensor, int]:
    """Edge-pad dim 0 to a multiple of ``size`` and reshape to ``(n, size, ...)``."""
    n = x.shape[0]
    n_win = -(-n // size)
    return edge_pad(x, n_win * size).reshape(n_win, size, *x.shape[1:]), n


class WindowLSTM(nn.Module):
    """Stacked LSTM applied independently to each frame's look-ahead window.

    The state is reset for every window; the code for frame ``t`` is the top
    layer's output after reading frames ``t..t+tau``.
    """

    def __init__(self, in_dim: int, hidden: int, layers: int, tau: int):
        super().__init__()
        self.tau = tau
        self.lstm = nn.LSTM(in_dim, hidden, num_layers=layers, batch_first=True)

    def forward(self, a: torch.Tensor) -> torch.Tensor:
        lead = a.shape[:-2]
        win = sliding_windows(a, self.tau)
        flat = win.reshape(-1, self.tau + 1, a.shape[-1])
        out, _ = self.lstm(flat)
        return out[:, -1].reshape(*lead, a.shape[-2], -1)


def sinusoidal_encoding(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    freq = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    enc = torch.zeros(length, dim, dtype=torch.float64)
    enc[:, 0::2] = torch.sin(pos * freq)
    enc[:, 1::2] = torch.cos(pos * freq[: dim // 2])
    return enc.to(dtype)


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        if d_model % n_heads:
            raise ValueError(f"{n_heads} heads do not divide width {d_model}")
        self.n_heads = n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        q, k, v = self.qkv(x).reshape(b, n, 3, self.n_heads, d // self.n_heads).permute(2, 0, 3, 1, 4)
        weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(d // self.n_heads), dim=-1)
        return self.out((weights @ v).transpose(1, 2).reshape(b, n, d))


class EncoderLayer(nn.Module):
    """Post-norm block: attention and a feed-forward layer, each residual + LayerNorm."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int):
        super().__init__()
        self.attn = SelfAttention(d_model, n_heads)
        self.norm1 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(nn.Linear(d_model, d_ff), nn.ReLU(), nn.Linear(d_ff, d_model))
        self.norm2 = nn.LayerNorm(d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.attn(x))
        return self.norm2(x + self.ff(x))


class AttentionEncoder(nn.Module):
    """Dense embedding, sinusoidal positions, then a stack of encoder layers."""

    def __init__(self, in_dim: int, d_model: int = 32, n_heads: int = 2, n_layers: int = 2, position_encoding: bool = True):
        super().__init__()
        self.embed = nn.Linear(in_dim, d_model)
        self.layers = nn.ModuleList(EncoderLayer(d_model, n_heads, d_model) for _ in range(n_layers))
        self.position_encoding = position_encoding

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.embed(x)
        if self.position_encoding:
            h = h + sinusoidal_encoding(h.shape[-2], h.shape[-1], h.dtype)
        for layer in self.layers:
            h = layer(h)
        return h


def laplacian_operator(topo: PartTopology = DEFAULT_TOPOLOGY, dtype=torch.float64) -> torch.Tensor:
    return torch.as_tensor(topo.laplacian_matrix(), dtype=dtype)


def landmark_loss(pred: torch.Tensor, ref: torch.Tensor, lap: torch.Tensor, weight: float) -> torch.Tensor:
    """Summed squared position error plus ``weight`` times Laplacian-coordinate error."""
    diff = pred - ref
    pos = (diff**2).sum()
    lap_diff = torch.einsum("ij,...jk->...ik", lap.to(diff.dtype), diff)
    return pos + weight * (lap_diff**2).sum()

