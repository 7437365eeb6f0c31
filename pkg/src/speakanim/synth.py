"""Synthetic talking-head corpus.

Each clip has a scripted phoneme track that drives jaw and lip opening, two
slow prosody signals, and a speaker with a fixed head-motion style. Content
features encode both the phonemes and the prosody; head pose and brow
expression are deterministic functions of prosody and speaker style, so the
content -> lip mapping is identical across speakers while pose tracks differ.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
from scipy.ndimage import gaussian_filter1d

from .corpus import Clip
from .embeddings import CONTENT_FRAME_RATE, SPEAKER_RAW_DIM, ContentEmbedding, SpeakerEmbedding
from .geometry import HeadPose, LandmarkSequence, apply_head_pose
from .renderer import PortraitImage


def face_template() -> np.ndarray:
    """Front-facing neutral 68-point face, roughly 2 units wide."""
    pts = np.zeros((68, 3))
    phi = np.linspace(0.0, np.pi, 17)
    pts[0:17, 0] = -np.cos(phi)
    pts[0:17, 1] = -0.35 + 1.3 * np.sin(phi)
    pts[0:17, 2] = -0.6 * np.cos(phi) ** 2

    k = np.arange(5)
    brow_x = np.linspace(0.85, 0.2, 5)
    brow_y = -0.55 - 0.1 * np.sin(np.pi * k / 4)
    pts[17:22] = np.c_[-brow_x, brow_y, np.full(5, 0.15)]
    pts[22:27] = np.c_[brow_x[::-1], brow_y[::-1], np.full(5, 0.15)]

    pts[27:31] = np.c_[np.zeros(4), np.linspace(-0.35, 0.1, 4), np.linspace(0.2, 0.5, 4)]
    nx = np.linspace(-0.2, 0.2, 5)
    pts[31:36] = np.c_[nx, 0.22 + 0.03 * (1 - np.abs(nx) / 0.2), 0.35 - np.abs(nx)]

    theta = np.arange(6) * np.pi / 3
    eye = np.c_[-0.2 * np.cos(theta), -0.07 * np.sin(theta)]
    pts[36:42, :2] = eye + [-0.45, -0.35]
    pts[42:48, :2] = eye + [0.45, -0.35]
    pts[36:48, 2] = 0.1

    theta = np.arange(12) * np.pi / 6
    b = np.where(np.sin(theta) > 0, 0.12, 0.15)
    pts[48:60, 0] = -0.4 * np.cos(theta)
    pts[48:60, 1] = 0.5 - b * np.sin(theta)
    theta = np.arange(8) * np.pi / 4
    pts[60:68, 0] = -0.3 * np.cos(theta)
    pts[60:68, 1] = 0.5 - 0.03 * np.sin(theta)
    pts[48:68, 2] = 0.25 - 0.3 * pts[48:68, 0] ** 2
    return pts


@dataclass(frozen=True)
class SpeakerStyle:
    """Head-motion style: sway amplitude (deg), sway frequency mix in [0, 1], brow gain."""

    sway_amplitude: float
    sway_frequency: float
    expression_gain: float


@dataclass(frozen=True)
class SynthSpec:
    n_speakers: int = 2
    clips_per_speaker: int = 5
    duration: float = 8.192  # seconds; 512 frames at 62.5 fps
    content_dim: int = 64
    n_phonemes: int = 12
    articulation: float = 1.0
    utterance_noise: float = 0.3
    tau_prime: int = 256
    styles: tuple[SpeakerStyle, ...] | None = None

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * CONTENT_FRAME_RATE))


_PROSODY_CHANNELS = 8
_ANTICIPATION = 4


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _smooth_noise(rng, n: int, sigma: float) -> np.ndarray:
    x = gaussian_filter1d(rng.standard_normal(n + 8 * int(sigma)), sigma, mode="wrap")
    x = x[4 * int(sigma): 4 * int(sigma) + n]
    return (x - x.mean()) / (x.std() + 1e-12)


def _phoneme_track(rng, n: int, n_phonemes: int) -> np.ndarray:
    track = np.empty(n, dtype=np.int64)
    t = 0
    while t < n:
        dur = int(rng.integers(4, 13))
        track[t:t + dur] = rng.integers(0, n_phonemes)
        t += dur
    return track


def articulate(neutral: np.ndarray, opening: np.ndarray, width: np.ndarray) -> np.ndarray:
    """Deform a neutral face by per-frame jaw opening and mouth width."""
    frames = np.repeat(neutral[None], len(opening), axis=0)
    o = opening[:, None]
    jaw_w = np.sin(np.linspace(0.0, np.pi, 17)) ** 2
    jaw_w[:4] = jaw_w[13:] = 0.0
    frames[:, 0:17, 1] += 0.25 * o * jaw_w
    lower = [55, 56, 57, 58, 59, 65, 66, 67]
    frames[:, lower, 1] += 0.25 * o
    frames[:, [49, 50, 51, 52, 53, 61, 62, 63], 1] -= 0.03 * o
    frames[:, [48, 54, 60, 64], 1] += 0.1 * o
    w = width[:, None]
    frames[:, [48, 60], 0] -= 0.05 * w
    frames[:, [54, 64], 0] += 0.05 * w
    return frames


def style_poses(style: SpeakerStyle, slow: np.ndarray, fast: np.ndarray) -> np.ndarray:
    """``(T, 6)`` yaw, pitch, roll (deg) and translation (face widths)."""
    f = style.sway_frequency
    mix = (1 - f) * slow + f * fast
    mix2 = (1 - f) * fast - f * slow
    a = style.sway_amplitude
    return np.c_[a * mix, 0.5 * a * mix2, 0.3 * a * mix, 0.004 * a * mix, 0.002 * a * mix2, np.zeros_like(mix)]


def _default_styles(rng, n: int) -> tuple[SpeakerStyle, ...]:
    return tuple(
        SpeakerStyle(float(rng.uniform(2.0, 12.0)), float(rng.uniform(0.0, 1.0)), float(rng.uniform(0.0, 1.0)))
        for _ in range(n)
    )


def synthesize_corpus(spec: SynthSpec, seed: int) -> list[Clip]:
    if spec.n_frames < spec.tau_prime:
        raise ValueError(
            f"duration {spec.duration}s gives {spec.n_frames} frames, shorter than the {spec.tau_prime}-frame window"
        )
    if spec.content_dim <= _PROSODY_CHANNELS:
        raise ValueError(f"content_dim must exceed {_PROSODY_CHANNELS}")
    rng = np.random.default_rng([seed, 0])
    phon_dim = spec.content_dim - _PROSODY_CHANNELS
    codebook = rng.standard_normal((spec.n_phonemes, phon_dim)) / np.sqrt(phon_dim) * 3.0
    openness = rng.uniform(0.0, 1.0, spec.n_phonemes)
    openness[0] = 0.0
    mouth_width = rng.uniform(-1.0, 1.0, spec.n_phonemes)
    prosody_mix = rng.standard_normal((2, _PROSODY_CHANNELS))
    styles = spec.styles if spec.styles is not None else _default_styles(rng, spec.n_speakers)
    if len(styles) != spec.n_speakers:
        raise ValueError(f"got {len(styles)} styles for {spec.n_speakers} speakers")
    base_ids = [_unit(rng.standard_normal(SPEAKER_RAW_DIM)) for _ in range(spec.n_speakers)]
    neutral = face_template()

    n = spec.n_frames
    clips = []
    for sid, style in enumerate(styles):
        for c in range(spec.clips_per_speaker):
            crng = np.random.default_rng([seed, 1, sid, c])
            phon = _phoneme_track(crng, n + _ANTICIPATION, spec.n_phonemes)
            slow = _smooth_noise(crng, n, sigma=40.0)
            fast = _smooth_noise(crng, n, sigma=12.0)
            values = np.concatenate([codebook[phon[:n]], np.c_[slow, fast] @ prosody_mix], axis=1)
            values += 0.01 * crng.standard_normal(values.shape)

            win = np.lib.stride_tricks.sliding_window_view(phon, _ANTICIPATION)[:n]
            opening = spec.articulation * openness[win].mean(axis=1)
            width = spec.articulation * mouth_width[win].mean(axis=1)
            frames = articulate(neutral, opening, width)
            frames[:, 17:27, 1] -= 0.04 * style.expression_gain * np.maximum(slow, 0.0)[:, None]
            registered = LandmarkSequence(frames, CONTENT_FRAME_RATE)

            track = style_poses(style, slow, fast)
            poses = [HeadPose(p[:3], p[3:]) for p in track]
            moved = apply_head_pose(registered, poses)

            noise = crng.standard_normal(SPEAKER_RAW_DIM) / np.sqrt(SPEAKER_RAW_DIM)
            ident = _unit(base_ids[sid] + spec.utterance_noise * noise)
            clips.append(
                Clip(
                    clip_id=f"s{sid:02d}_c{c:03d}",
                    speaker_id=sid,
                    content=ContentEmbedding(values),
                    speaker=SpeakerEmbedding(ident),
                    landmarks=moved,
                    registered=registered,
                    poses=poses,
                    neutral=neutral,
                )
            )
    return clips


def split_clips(clips: list[Clip], fractions=(0.6, 0.2, 0.2)) -> tuple[list[Clip], list[Clip], list[Clip]]:
    """Per-speaker train / validation / test split, in clip order."""
    train, val, test = [], [], []
    for sid in sorted({c.speaker_id for c in clips}):
        own = [c for c in clips if c.speaker_id == sid]
        n_train = max(1, int(round(fractions[0] * len(own))))
        n_val = int(round(fractions[1] * len(own)))
        train += own[:n_train]
        val += own[n_train:n_train + n_val]
        test += own[n_train + n_val:]
    return train, val, test


def draw_portrait(size: int = 256, seed: int = 0) -> PortraitImage:
    """Flat-shaded cartoon face with its 68 landmarks, for warping demos and tests.

    The face is the template projected orthographically into the middle of
    the canvas; the background carries a soft gradient plus speckle so that
    warps are visible everywhere.
    """
    rng = np.random.default_rng(seed)
    tmpl = face_template()
    scale = 0.3 * size
    center = np.array([size / 2, size / 2 + 0.02 * size])
    lmk = tmpl[:, :2] * scale + center

    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    img = np.empty((size, size, 3), dtype=np.float64)
    img[..., 0] = 90 + 80 * xx
    img[..., 1] = 140 + 60 * yy
    img[..., 2] = 200 - 50 * xx * yy
    img += rng.normal(0.0, 6.0, (size, size, 1))
    img = np.clip(img, 0, 255).astype(np.uint8)

    def poly(idx):
        return np.rint(lmk[idx] * 16).astype(np.int32)

    skin, dark = (238, 196, 160), (60, 40, 30)
    head = np.r_[0:17, 26:21:-1, 21:16:-1]
    hair_top = lmk[[17, 26]].copy()
    hair_top[:, 1] -= 0.25 * scale
    head_pts = np.vstack([lmk[0:17], hair_top[::-1]])
    cv2.fillPoly(img, [np.rint(head_pts * 16).astype(np.int32)], skin, cv2.LINE_AA, shift=4)
    cv2.polylines(img, [poly(head)], False, dark, 2, cv2.LINE_AA, shift=4)
    for lo, hi in ((17, 22), (22, 27), (27, 31), (31, 36)):
        cv2.polylines(img, [poly(np.arange(lo, hi))], False, dark, 2, cv2.LINE_AA, shift=4)
    for lo, hi in ((36, 42), (42, 48)):
        cv2.fillPoly(img, [poly(np.arange(lo, hi))], (255, 255, 255), cv2.LINE_AA, shift=4)
        cv2.polylines(img, [poly(np.arange(lo, hi))], True, dark, 1, cv2.LINE_AA, shift=4)
        c = lmk[lo:hi].mean(axis=0)
        cv2.circle(img, tuple(np.rint(c * 16).astype(int)), int(0.05 * scale * 16), (40, 90, 160), -1, cv2.LINE_AA, shift=4)
    cv2.fillPoly(img, [poly(np.arange(48, 60))], (200, 70, 80), cv2.LINE_AA, shift=4)
    cv2.fillPoly(img, [poly(np.arange(60, 68))], (90, 20, 30), cv2.LINE_AA, shift=4)
    return PortraitImage(img, lmk)
