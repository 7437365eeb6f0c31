"""Desk-scale training: content branch, alternating GAN loop, checkpoints.

Every minibatch is drawn from ``np.random.default_rng([seed, step])``, so a
run resumed from a checkpoint replays exactly the batches it would have seen.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .arrayfile import load_container, save_container
from .content import ContentBranch, ContentConfig, content_forward, content_loss
from .corpus import Clip, fingerprint
from .geometry import DEFAULT_TOPOLOGY, LandmarkSequence, apply_head_pose, pose_track
from .nn import landmark_loss, laplacian_operator, split_windows
from .speaker import Discriminator, SpeakerConfig, SpeakerGenerator, generator_terms, lsgan_terms

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class BaselineUnavailable(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-6
    batch_size: int = 32
    max_steps: int = 1000
    seed: int = 0
    lambda_c: float = 1.0
    lambda_s: float = 1.0
    mu_s: float = 1e-3
    eval_every: int = 100
    disc_warmup: int = 0  # discriminator-only steps against y = p before alternation

    def __post_init__(self):
        if (self.learning_rate <= 0 or self.weight_decay < 0 or self.batch_size < 1 or self.max_steps < 0
                or self.disc_warmup < 0):
            raise ValueError(f"invalid training config: {self}")


# --------------------------------------------------------------------------
# Checkpoints


@dataclass
class Checkpoint:
    kind: str
    params: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray]
    step: int
    model_config: dict
    train_config: dict
    corpus_fingerprint: str
    extra: dict = field(default_factory=dict)

    def save(self, path) -> None:
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        arrays.update({f"optim/{k}": v for k, v in self.optimizer.items()})
        manifest = {
            "kind": self.kind,
            "step": self.step,
            "model_config": self.model_config,
            "train_config": self.train_config,
            "corpus_fingerprint": self.corpus_fingerprint,
            "extra": self.extra,
        }
        save_container(path, arrays, manifest)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        arrays, m = load_container(path)
        params = {k[6:]: v for k, v in arrays.items() if k.startswith("param/")}
        optim = {k[6:]: v for k, v in arrays.items() if k.startswith("optim/")}
        return cls(m["kind"], params, optim, m["step"], m["model_config"], m["train_config"], m["corpus_fingerprint"], m["extra"])


def _config_dict(cfg) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()}


def _config_from(cls, d: dict):
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def module_arrays(module: nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + k: v.detach().cpu().numpy().astype(np.float32).copy() for k, v in module.state_dict().items()}


def load_module_arrays(module: nn.Module, arrays: dict[str, np.ndarray], prefix: str = "") -> nn.Module:
    state = {k[len(prefix):]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith(prefix)}
    module.load_state_dict(state)
    return module


def make_adam(module: nn.Module, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(module.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay, foreach=False)


def optimizer_arrays(opt: torch.optim.Optimizer, module: nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    out = {}
    for name, p in module.named_parameters():
        for key, value in opt.state.get(p, {}).items():
            out[f"{prefix}{name}/{key}"] = value.detach().cpu().numpy().astype(np.float32).copy()
    return out


def restore_optimizer(opt: torch.optim.Optimizer, module: nn.Module, arrays: dict[str, np.ndarray], prefix: str = ""):
    for name, p in module.named_parameters():
        state = {}
        for key in ("step", "exp_avg", "exp_avg_sq"):
            arr = arrays.get(f"{prefix}{name}/{key}")
            if arr is not None:
                state[key] = torch.from_numpy(arr.copy())
        if state:
            opt.state[p] = state


def content_branch_from(ckpt: Checkpoint) -> ContentBranch:
    if ckpt.kind != "content":
        raise ValueError(f"expected a content checkpoint, got {ckpt.kind!r}")
    return load_module_arrays(ContentBranch(_config_from(ContentConfig, ckpt.model_config)), ckpt.params).eval()


def speaker_models_from(ckpt: Checkpoint) -> tuple[SpeakerGenerator, Discriminator]:
    if ckpt.kind != "speaker":
        raise ValueError(f"expected a speaker checkpoint, got {ckpt.kind!r}")
    cfg = _config_from(SpeakerConfig, ckpt.model_config)
    gen = load_module_arrays(SpeakerGenerator(cfg), ckpt.params, "gen/")
    disc = load_module_arrays(Discriminator(cfg), ckpt.params, "disc/")
    return gen.eval(), disc.eval()


@dataclass
class TrainResult:
    checkpoint: Checkpoint  # best validation
    last: Checkpoint
    losses: list[float]
    val_losses: list[tuple[int, float]]
    disc_losses: list[float] = field(default_factory=list)


def _check_finite(value: float, step: int, what: str):
    if not np.isfinite(value):
        raise TrainingDiverged(f"{what} became {value} at step {step}; lower the learning rate or check the inputs")


# --------------------------------------------------------------------------
# Content branch


def _content_arrays(clips):
    a = [torch.tensor(c.content.values, dtype=torch.float32) for c in clips]
    y = [torch.tensor(c.registered.frames, dtype=torch.float32) for c in clips]
    q = [torch.tensor(c.neutral, dtype=torch.float32) for c in clips]
    return a, y, q


def _content_batch(rng, a, y, q, tau: int, batch: int):
    clip_idx = rng.integers(0, len(a), batch)
    wins, targets, faces = [], [], []
    for i in clip_idx:
        t = int(rng.integers(0, len(a[i])))
        idx = np.minimum(np.arange(t, t + tau + 1), len(a[i]) - 1)
        wins.append(a[i][idx])
        targets.append(y[i][t])
        faces.append(q[i])
    return torch.stack(wins), torch.stack(targets), torch.stack(faces)


def content_eval_loss(model: ContentBranch, clips, lambda_c: float = 1.0) -> float:
    """Summed content loss over whole clips."""
    total = 0.0
    for c in clips:
        pred, _ = content_forward(c.content, c.neutral, model)
        total += content_loss(pred, c.registered, DEFAULT_TOPOLOGY, lambda_c)
    return total


def train_content(
    clips: list[Clip],
    cfg: TrainConfig = TrainConfig(),
    model_cfg: ContentConfig = ContentConfig(),
    val_clips: list[Clip] | None = None,
    resume: Checkpoint | None = None,
) -> TrainResult:
    """Fit the content branch to registered landmark tracks with Adam."""
    if not clips:
        raise ValueError("content training needs at least one clip")
    val_clips = val_clips or clips
    model = ContentBranch.initialized(model_cfg, cfg.seed)
    opt = make_adam(model, cfg)
    start = 0
    if resume is not None:
        model = content_branch_from(resume).train()
        opt = make_adam(model, cfg)
        restore_optimizer(opt, model, resume.optimizer)
        start = resume.step
    lap = laplacian_operator(dtype=torch.float32)
    a, y, q = _content_arrays(clips)
    fp = fingerprint(clips)

    def snapshot(step: int, extra: dict) -> Checkpoint:
        return Checkpoint("content", module_arrays(model), optimizer_arrays(opt, model), step,
                          _config_dict(model_cfg), _config_dict(cfg), fp, extra)

    losses, val_losses = [], []
    model.eval()
    best_val = content_eval_loss(model, val_clips, cfg.lambda_c)
    val_losses.append((start, best_val))
    best = snapshot(start, {"val_loss": best_val})
    model.train()
    for step in range(start, cfg.max_steps):
        rng = np.random.default_rng([cfg.seed, step])
        win, target, face = _content_batch(rng, a, y, q, model_cfg.tau, cfg.batch_size)
        loss = landmark_loss(model.forward_windows(win, face), target, lap, cfg.lambda_c) / cfg.batch_size
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
        _check_finite(losses[-1], step, "content loss")
        if (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.max_steps:
            model.eval()
            val = content_eval_loss(model, val_clips, cfg.lambda_c)
            model.train()
            val_losses.append((step + 1, val))
            log.info("content step %d: batch loss %.5g, val loss %.5g", step + 1, losses[-1], val)
            if val < best_val:
                best_val = val
                best = snapshot(step + 1, {"val_loss": val})
    model.eval()
    last = snapshot(max(start, cfg.max_steps), {"val_loss": val_losses[-1][1]})
    return TrainResult(best, last, losses, val_losses)


# --------------------------------------------------------------------------
# Speaker branch


@dataclass
class _SpeakerData:
    a: list[torch.Tensor]
    p: list[torch.Tensor]
    y: list[torch.Tensor]
    q: list[torch.Tensor]
    s: list[torch.Tensor]


_WARMUP_STREAM = 1 << 20


def _speaker_data(clips, content: ContentBranch) -> _SpeakerData:
    p = []
    for c in clips:
        pred, _ = content_forward(c.content, c.neutral, content)
        p.append(torch.tensor(pred.frames, dtype=torch.float32))
    return _SpeakerData(
        a=[torch.tensor(c.content.values, dtype=torch.float32) for c in clips],
        p=p,
        y=[torch.tensor(c.landmarks.frames, dtype=torch.float32) for c in clips],
        q=[torch.tensor(c.neutral, dtype=torch.float32) for c in clips],
        s=[torch.tensor(c.speaker.raw, dtype=torch.float32) for c in clips],
    )


def _speaker_batch(rng, data: _SpeakerData, window: int, batch: int):
    clip_idx = rng.integers(0, len(data.a), batch)
    out = ([], [], [], [], [])
    for i in clip_idx:
        n = len(data.a[i])
        t = int(rng.integers(0, max(1, n - window + 1)))
        idx = np.minimum(np.arange(t, t + window), n - 1)
        for dst, src in zip(out, (data.a[i][idx], data.p[i][idx], data.y[i][idx], data.q[i], data.s[i])):
            dst.append(src)
    return tuple(torch.stack(x) for x in out)


def speaker_eval_loss(gen: SpeakerGenerator, clips, content: ContentBranch, lambda_s: float = 1.0) -> float:
    lap = laplacian_operator()
    total = 0.0
    with torch.no_grad():
        for c in clips:
            p, _ = content_forward(c.content, c.neutral, content)
            y, _, _ = gen(
                torch.tensor(c.content.values), torch.tensor(c.speaker.raw),
                torch.tensor(p.frames, dtype=torch.float32), torch.tensor(c.neutral, dtype=torch.float32),
            )
            total += float(landmark_loss(y.double(), torch.tensor(c.landmarks.frames), lap, lambda_s))
    return total


def train_speaker(
    clips: list[Clip],
    content_ckpt: Checkpoint,
    cfg: TrainConfig = TrainConfig(),
    model_cfg: SpeakerConfig = SpeakerConfig(),
    val_clips: list[Clip] | None = None,
    resume: Checkpoint | None = None,
) -> TrainResult:
    """Alternate one generator step (L_s) and one discriminator step (LSGAN)."""
    if not clips:
        raise ValueError("speaker training needs at least one clip")
    val_clips = val_clips or clips
    content = content_branch_from(content_ckpt)
    for p in content.parameters():
        p.requires_grad_(False)
    if resume is not None:
        gen, disc = speaker_models_from(resume)
        gen.train()
        disc.train()
        start = resume.step
    else:
        gen = SpeakerGenerator.initialized(model_cfg, cfg.seed)
        disc = Discriminator.initialized(model_cfg, cfg.seed + 1)
        start = 0
    opt_g, opt_d = make_adam(gen, cfg), make_adam(disc, cfg)
    if resume is not None:
        restore_optimizer(opt_g, gen, resume.optimizer, "gen/")
        restore_optimizer(opt_d, disc, resume.optimizer, "disc/")
    lap = laplacian_operator(dtype=torch.float32)
    data = _speaker_data(clips, content)
    fp = fingerprint(clips)

    def snapshot(step: int, extra: dict) -> Checkpoint:
        params = module_arrays(gen, "gen/") | module_arrays(disc, "disc/")
        optim = optimizer_arrays(opt_g, gen, "gen/") | optimizer_arrays(opt_d, disc, "disc/")
        extra = {"content_fingerprint": content_ckpt.corpus_fingerprint, **extra}
        return Checkpoint("speaker", params, optim, step, _config_dict(model_cfg), _config_dict(cfg), fp, extra)

    if resume is None:
        for k in range(cfg.disc_warmup):
            rng = np.random.default_rng([cfg.seed, _WARMUP_STREAM, k])
            a, p, y_ref, q, s_raw = _speaker_batch(rng, data, model_cfg.tau_prime, cfg.batch_size)
            with torch.no_grad():
                s128 = gen.projection(s_raw)
                codes = gen.encode_content(a)
            d_loss = lsgan_terms(disc(y_ref, codes, s128), disc(p, codes, s128)) / cfg.batch_size
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()
            _check_finite(d_loss.item(), k, "discriminator warm-up loss")
    g_losses, d_losses, val_losses = [], [], []
    best_val = speaker_eval_loss(gen, val_clips, content, cfg.lambda_s)
    val_losses.append((start, best_val))
    best = snapshot(start, {"val_loss": best_val})
    for step in range(start, cfg.max_steps):
        rng = np.random.default_rng([cfg.seed, step])
        a, p, y_ref, q, s_raw = _speaker_batch(rng, data, model_cfg.tau_prime, cfg.batch_size)

        s128 = gen.projection(s_raw)
        codes = gen.encode_content(a)
        y = gen.forward_windows(codes, s128, p, q)
        r_fake = disc(y, codes.detach(), s128.detach())
        g_loss = generator_terms(y, y_ref, lap, r_fake, cfg.lambda_s, cfg.mu_s) / cfg.batch_size
        opt_g.zero_grad()
        g_loss.backward()
        opt_g.step()

        r_real = disc(y_ref, codes.detach(), s128.detach())
        r_fake = disc(y.detach(), codes.detach(), s128.detach())
        d_loss = lsgan_terms(r_real, r_fake) / cfg.batch_size
        opt_d.zero_grad()
        d_loss.backward()
        opt_d.step()

        g_losses.append(g_loss.item())
        d_losses.append(d_loss.item())
        _check_finite(g_losses[-1], step, "generator loss")
        _check_finite(d_losses[-1], step, "discriminator loss")
        if (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.max_steps:
            val = speaker_eval_loss(gen, val_clips, content, cfg.lambda_s)
            val_losses.append((step + 1, val))
            log.info("speaker step %d: G %.5g D %.5g val %.5g", step + 1, g_losses[-1], d_losses[-1], val)
            if val < best_val:
                best_val = val
                best = snapshot(step + 1, {"val_loss": val})
    last = snapshot(max(start, cfg.max_steps), {"val_loss": val_losses[-1][1]})
    return TrainResult(best, last, g_losses, val_losses, d_losses)


def discriminator_accuracy(disc: Discriminator, gen: SpeakerGenerator, content: ContentBranch, clips) -> float:
    """Fraction of frames scored on the right side of 0.5: real tracks vs. the content-only fakes."""
    correct = total = 0
    with torch.no_grad():
        for c in clips:
            p, _ = content_forward(c.content, c.neutral, content)
            a = torch.tensor(c.content.values)
            s128 = gen.projection(torch.tensor(c.speaker.raw))
            _, codes = gen.forward_projected(a, s128, torch.tensor(p.frames, dtype=torch.float32),
                                             torch.tensor(c.neutral, dtype=torch.float32))
            n = len(c)
            for frames, real in ((c.landmarks.frames, True), (p.frames, False)):
                y_win, _ = split_windows(torch.tensor(frames, dtype=torch.float32), gen.cfg.tau_prime)
                r = disc(y_win, codes, s128.expand(len(y_win), -1)).reshape(-1)[:n]
                correct += int(((r > 0.5) == real).sum())
                total += n
    return correct / total


# --------------------------------------------------------------------------
# Retrieval baselines


def retrieval_baseline(test_clip: Clip, corpus: list[Clip], mode: str, seed: int, template) -> LandmarkSequence:
    """Copy the head-pose track of another clip onto the test clip's registered landmarks.

    ``same_id`` samples among the same speaker's other clips; ``random_id``
    picks a different speaker at random, then one of their clips. Pose tracks
    are truncated, or extended with their last pose, to the test length.
    """
    others = [c for c in corpus if c.clip_id != test_clip.clip_id]
    rng = np.random.default_rng(seed)
    if mode == "same_id":
        eligible = [c for c in others if c.speaker_id == test_clip.speaker_id]
    elif mode == "random_id":
        speakers = sorted({c.speaker_id for c in others if c.speaker_id != test_clip.speaker_id})
        if speakers:
            pick = speakers[int(rng.integers(len(speakers)))]
            eligible = [c for c in others if c.speaker_id == pick]
        else:
            eligible = []
    else:
        raise ValueError(f"mode must be 'same_id' or 'random_id', got {mode!r}")
    if not eligible:
        raise BaselineUnavailable(f"no eligible clip for {mode} baseline of {test_clip.clip_id}")
    source = eligible[int(rng.integers(len(eligible)))]
    poses = pose_track(source.landmarks, template)
    n = len(test_clip.registered)
    poses = poses[:n] + [poses[-1]] * max(0, n - len(poses))
    return apply_head_pose(test_clip.registered, poses)


def save_result(result: TrainResult, out_dir, name: str) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    best, last = out / f"{name}.ckpt", out / f"{name}.last.ckpt"
    result.checkpoint.save(best)
    result.last.save(last)
    return best, last
