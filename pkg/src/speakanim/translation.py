"""Landmark-to-image translation for natural portraits.

Predicted landmarks are drawn as colored polylines, stacked with the
portrait into a 6-channel image and translated by a U-shaped encoder-decoder
(six stride-2 down blocks, six upsampling blocks with skip concatenation,
Tanh output).
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .arrayfile import load_container, save_container
from .geometry import DEFAULT_TOPOLOGY, PartTopology
from .nn import seeded_init

CANVAS = 256

# RGB per part, in topology order.
PART_COLORS = {
    "jaw": (255, 255, 255),
    "right_brow": (255, 128, 0),
    "left_brow": (255, 200, 0),
    "nose": (0, 255, 255),
    "right_eye": (0, 128, 255),
    "left_eye": (0, 200, 128),
    "outer_lip": (255, 0, 128),
    "inner_lip": (200, 0, 255),
}
_FALLBACK = (128, 128, 128)


def rasterize_landmarks(points, topo: PartTopology = DEFAULT_TOPOLOGY, size: int = CANVAS, thickness: int = 1) -> np.ndarray:
    """Draw each part's chain (or loop) as 1-pixel polylines on a black ``(size, size, 3)`` canvas.

    ``points`` are 2D pixel positions on the canvas; segments leaving the canvas are clipped.
    """
    pts = np.asarray(points, dtype=np.float64)[:, :2]
    canvas = np.zeros((size, size, 3), dtype=np.uint8)
    ipts = np.rint(pts).astype(np.int64)
    for name, idx in topo.parts.items():
        color = PART_COLORS.get(name, _FALLBACK)
        chain = list(idx) + ([idx[0]] if topo.closed[name] and len(idx) > 2 else [])
        for i, j in zip(chain[:-1], chain[1:]):
            p, q = ipts[i], ipts[j]
            if np.any(np.abs(np.r_[p, q]) > 1 << 20):
                continue
            cv2.line(canvas, (int(p[0]), int(p[1])), (int(q[0]), int(q[1])), color, thickness, cv2.LINE_8)
    return canvas


def to_tensor(image: np.ndarray) -> torch.Tensor:
    """``(H, W, 3)`` uint8 -> ``(3, H, W)`` float in [-1, 1]."""
    return torch.tensor(np.asarray(image), dtype=torch.float32).permute(2, 0, 1) / 127.5 - 1.0


def to_image(tensor: torch.Tensor) -> np.ndarray:
    arr = ((tensor.detach().clamp(-1, 1) + 1.0) * 127.5).permute(1, 2, 0).numpy()
    return np.rint(arr).astype(np.uint8)


class ResidualBlock(nn.Module):
    """Pre-activation: ``x + conv(act(conv(act(x))))``."""

    def __init__(self, ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x):
        h = self.conv1(F.leaky_relu(x, 0.2))
        return x + self.conv2(F.leaky_relu(h, 0.2))


class DownBlock(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
        self.res = nn.Sequential(ResidualBlock(cout), ResidualBlock(cout))

    def forward(self, x):
        return self.res(self.conv(x))


class UpBlock(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, padding=1)
        self.res = nn.Sequential(ResidualBlock(cout), ResidualBlock(cout))

    def forward(self, x):
        return self.res(self.conv(F.interpolate(x, scale_factor=2, mode="nearest")))


@dataclass(frozen=True)
class GeneratorConfig:
    widths: tuple[int, ...] = (64, 128, 256, 512, 512, 512)
    image_size: int = CANVAS
    in_channels: int = 6

    def reduced(self, factor: int, image_size: int | None = None) -> "GeneratorConfig":
        return GeneratorConfig(tuple(max(1, w // factor) for w in self.widths), image_size or self.image_size, self.in_channels)


class TranslationGenerator(nn.Module):
    def __init__(self, cfg: GeneratorConfig = GeneratorConfig()):
        super().__init__()
        if cfg.image_size % (1 << len(cfg.widths)):
            raise ValueError(f"image size {cfg.image_size} is not divisible by 2^{len(cfg.widths)}")
        self.cfg = cfg
        w = cfg.widths
        self.down = nn.ModuleList(DownBlock(a, b) for a, b in zip((cfg.in_channels, *w[:-1]), w))
        # first up block has no skip; later ones see [decoder, encoder] at equal resolution
        ups = [UpBlock(w[-1], w[-2])]
        outs = (*w[-3::-1], 3)
        for k, cout in enumerate(outs):
            skip = w[-2 - k]
            ups.append(UpBlock(w[-2 - k] + skip, cout))
        self.up = nn.ModuleList(ups)

    @classmethod
    def initialized(cls, cfg: GeneratorConfig = GeneratorConfig(), seed: int = 0) -> "TranslationGenerator":
        return seeded_init(lambda: cls(cfg), seed)

    def forward(self, x: torch.Tensor, return_features: bool = False):
        size = self.cfg.image_size
        if x.shape[-3:] != (self.cfg.in_channels, size, size):
            raise ValueError(f"expected input (*, {self.cfg.in_channels}, {size}, {size}), got {tuple(x.shape)}")
        feats = []
        skips = []
        h = x
        for block in self.down:
            h = block(h)
            skips.append(h)
            feats.append(h.shape)
        h = self.up[0](h)
        feats.append(h.shape)
        for k, block in enumerate(self.up[1:]):
            h = block(torch.cat([h, skips[-2 - k]], dim=1))
            feats.append(h.shape)
        out = torch.tanh(h)
        return (out, feats) if return_features else out


def i2i_forward(portrait: np.ndarray, lmk_img: np.ndarray, params: TranslationGenerator) -> np.ndarray:
    """Translate one ``(portrait, landmark image)`` pair; returns ``(3, H, W)`` values in [-1, 1]."""
    portrait = np.asarray(portrait)
    lmk_img = np.asarray(lmk_img)
    size = params.cfg.image_size
    if portrait.shape[:2] != (size, size) or lmk_img.shape[:2] != (size, size):
        raise ValueError(f"inputs must be {size}x{size}, got {portrait.shape[:2]} and {lmk_img.shape[:2]}")
    x = torch.cat([to_tensor(portrait), to_tensor(lmk_img)])[None]
    with torch.no_grad():
        return params(x.to(next(params.parameters()).dtype))[0].double().numpy()


class FrozenFeatures(nn.Module):
    """Small fixed random conv stack used as the default perceptual feature extractor."""

    def __init__(self, seed: int = 1234, channels: tuple[int, ...] = (8, 16)):
        super().__init__()
        layers = []
        cin = 3
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            for c in channels:
                layers.append(nn.Conv2d(cin, c, 3, stride=2, padding=1))
                cin = c
        self.convs = nn.ModuleList(layers)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        feats = []
        for conv in self.convs:
            x = F.relu(conv(x))
            feats.append(x.flatten(1))
        return torch.cat(feats, dim=1)


def identity_features(x: torch.Tensor) -> torch.Tensor:
    return x.flatten(1)


def i2i_terms(out: torch.Tensor, target: torch.Tensor, phi, lambda_a: float = 1.0) -> torch.Tensor:
    loss = (out - target).abs().mean()
    if lambda_a:
        loss = loss + lambda_a * (phi(out) - phi(target)).abs().mean()
    return loss


def i2i_loss(out, target, phi=identity_features, lambda_a: float = 1.0) -> float:
    """Mean absolute pixel error plus ``lambda_a`` times mean absolute feature error."""
    o = torch.as_tensor(np.asarray(out), dtype=torch.float64)
    t = torch.as_tensor(np.asarray(target), dtype=torch.float64)
    if o.ndim == 3:
        o, t = o[None], t[None]
    if isinstance(phi, nn.Module):
        phi = phi.double()
    with torch.no_grad():
        return float(i2i_terms(o, t, phi, lambda_a))


@dataclass
class I2IResult:
    model: TranslationGenerator
    losses: list[float]
    mae: float


def train_i2i(
    portrait: np.ndarray,
    lmk_img: np.ndarray,
    target: np.ndarray,
    cfg: GeneratorConfig = GeneratorConfig(),
    steps: int = 500,
    learning_rate: float = 1e-3,
    lambda_a: float = 1.0,
    phi=None,
    seed: int = 0,
    stop_below: float | None = None,
) -> I2IResult:
    """Fit the generator to one ``(source, landmark image) -> target`` pair with Adam.

    With ``stop_below``, training ends early once the pixel mean absolute error
    of a forward pass drops under that value.
    """
    model = TranslationGenerator.initialized(cfg, seed)
    phi = FrozenFeatures() if phi is None else phi
    x = torch.cat([to_tensor(portrait), to_tensor(lmk_img)])[None]
    y = to_tensor(target)[None]
    opt = torch.optim.Adam(model.parameters(), lr=learning_rate, foreach=False)
    losses = []
    for _ in range(steps):
        out = model(x)
        if stop_below is not None and float((out.detach() - y).abs().mean()) < stop_below:
            break
        loss = i2i_terms(out, y, phi, lambda_a)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    with torch.no_grad():
        mae = float((model(x) - y).abs().mean())
    return I2IResult(model, losses, mae)


def save_generator(path, model: TranslationGenerator, extra: dict | None = None) -> None:
    arrays = {k: v.detach().cpu().numpy().astype(np.float32) for k, v in model.state_dict().items()}
    cfg = model.cfg
    manifest = {
        "kind": "i2i",
        "model_config": {"widths": list(cfg.widths), "image_size": cfg.image_size, "in_channels": cfg.in_channels},
        "residual_block": "pre-activation leaky_relu(0.2), no normalization",
        "extra": extra or {},
    }
    save_container(path, arrays, manifest)


def load_generator(path) -> TranslationGenerator:
    arrays, manifest = load_container(path)
    if manifest.get("kind") != "i2i":
        raise ValueError(f"{path} is a {manifest.get('kind')!r} checkpoint, not an image-translation one")
    mc = manifest["model_config"]
    model = TranslationGenerator(GeneratorConfig(tuple(mc["widths"]), mc["image_size"], mc["in_channels"]))
    model.load_state_dict({k: torch.tensor(v) for k, v in arrays.items()})
    return model.eval()
