"""Shared test utilities: finite-difference gradient checks and tiny configs."""

import numpy as np
import torch

from speakanim.content import ContentConfig
from speakanim.speaker import SpeakerConfig

TINY_CONTENT = ContentConfig(content_dim=8, lstm_hidden=4, lstm_layers=2, mlp_hidden=(8,), tau=2)
TINY_SPEAKER = SpeakerConfig(
    content_dim=8, lstm_hidden=4, lstm_layers=1, tau=2, tau_prime=8,
    d_model=8, n_heads=2, n_layers=2, mlp_hidden=(8,), disc_mlp_hidden=(8, 4),
)


def randomize(module: torch.nn.Module, seed: int, scale: float = 0.3) -> torch.nn.Module:
    """Fill every parameter with scaled Gaussian noise (no zero layers)."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)
    return module


def fd_relative_errors(loss_fn, module: torch.nn.Module, eps: float = 1e-6, per_tensor: int | None = None, seed: int = 0):
    """Compare autograd against central differences for each parameter tensor.

    Returns ``{name: relative error}`` with the error measured as
    ``|g_auto - g_fd| / max(|g_auto|, |g_fd|)`` over the checked entries.
    ``per_tensor`` limits the number of sampled entries per tensor.
    """
    rng = np.random.default_rng(seed)
    module.zero_grad()
    loss = loss_fn()
    loss.backward()
    errors = {}
    for name, p in module.named_parameters():
        if not p.requires_grad:
            continue
        auto = p.grad.detach().clone().reshape(-1)
        flat = p.data.view(-1)
        idx = np.arange(flat.numel())
        if per_tensor is not None and flat.numel() > per_tensor:
            idx = rng.choice(flat.numel(), per_tensor, replace=False)
        fd = torch.empty(len(idx), dtype=torch.float64)
        with torch.no_grad():
            for k, i in enumerate(idx):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
                fd[k] = (up - down) / (2 * eps)
        a = auto[torch.as_tensor(idx)]
        denom = max(a.norm().item(), fd.norm().item(), 1e-12)
        errors[name] = (a - fd).norm().item() / denom
    return errors


def random_frames(rng, t: int, scale: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, scale, (t, 68, 3))
