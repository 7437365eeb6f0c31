"""Command-line interface.

Subcommands: ``animate``, ``train-content``, ``train-speaker``, ``train-i2i``,
``eval``, ``synth-corpus`` and ``pose-edit``. Every option can also be given
in a JSON config file passed with ``--config``; keys are option names with
underscores (``batch_size``). Precedence is flags > config file > defaults.

Exit codes:

====  =====================================================================
0     success
2     invalid arguments or configuration (unknown key, missing flag, bad value)
3     an input file is missing, unreadable or malformed
4     runtime failure (training diverged, output could not be written)
====  =====================================================================
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import cv2
import numpy as np
import torch

from . import __version__
from .content import ConfigError, ContentConfig, content_forward
from .corpus import load_corpus, save_corpus
from .embeddings import CONTENT_FRAME_RATE, load_embedding
from .geometry import HeadPose, LandmarkSequence, apply_head_pose, load_landmarks, load_template, resample, save_landmarks
from .metrics import evaluate_clip, format_report
from .renderer import PortraitImage, Projection, read_frame, render_animation
from .speaker import SpeakerConfig, speaker_forward
from .synth import SynthSpec, draw_portrait, face_template, split_clips, synthesize_corpus
from .training import (
    Checkpoint,
    TrainConfig,
    TrainingDiverged,
    content_branch_from,
    save_result,
    speaker_models_from,
    train_content,
    train_speaker,
)
from .translation import GeneratorConfig, i2i_forward, load_generator, rasterize_landmarks, save_generator, to_image, train_i2i

log = logging.getLogger("speakanim")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_RUNTIME = 4


class UsageError(ValueError):
    pass


class InputError(Exception):
    pass


def _read(what: str, fn, path, *args):
    """Call a loader, turning I/O and format problems into :class:`InputError`."""
    try:
        return fn(path, *args)
    except FileNotFoundError:
        raise InputError(f"{what}: no such file {path}") from None
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"{what}: cannot read {path}: {exc}") from exc


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _ints(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).split(",") if v.strip())


# --------------------------------------------------------------------------
# Option plumbing


def _opt(p: argparse.ArgumentParser, flag: str, default=None, **kw):
    dest = flag.lstrip("-").replace("-", "_")
    p.get_default("_defaults")[dest] = default
    p.add_argument(flag, dest=dest, default=argparse.SUPPRESS, **kw)


def _subparser(sub, name: str, run, help: str) -> argparse.ArgumentParser:
    p = sub.add_parser(name, help=help, description=help)
    p.set_defaults(_defaults={}, _run=run, _command=name)
    p.add_argument("--config", default=None, help="JSON file with option values")
    return p


def resolve_config(ns: argparse.Namespace) -> dict:
    """Merge defaults, the optional config file and explicit flags."""
    cfg = dict(ns._defaults)
    if ns.config:
        try:
            data = json.loads(Path(ns.config).read_text())
        except FileNotFoundError:
            raise InputError(f"config: no such file {ns.config}") from None
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"config: cannot parse {ns.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError(f"config file {ns.config} must hold a JSON object")
        unknown = sorted(set(data) - set(cfg))
        if unknown:
            raise UsageError(f"config file keys not valid for {ns._command}: {', '.join(unknown)}")
        cfg.update(data)
    cfg.update({k: v for k, v in vars(ns).items() if k in ns._defaults})
    return cfg


def _require(cfg: dict, *names: str):
    for name in names:
        if cfg.get(name) in (None, ""):
            raise UsageError(f"missing required option --{name.replace('_', '-')}")


def _train_options(p, steps: int, lr: float, batch: int):
    _opt(p, "--seed", 0, type=int, help="training seed")
    _opt(p, "--steps", steps, type=int, help="optimizer steps")
    _opt(p, "--lr", lr, type=float, help="Adam learning rate")
    _opt(p, "--weight-decay", 1e-6, type=float)
    _opt(p, "--batch-size", batch, type=int)
    _opt(p, "--eval-every", 100, type=int, help="validation interval in steps")
    _opt(p, "--lstm-hidden", 256, type=int)
    _opt(p, "--lstm-layers", 3, type=int)
    _opt(p, "--mlp-hidden", "512,256", help="comma-separated hidden sizes of the decoder MLP")
    _opt(p, "--tau", 18, type=int, help="content window length in frames")
    _opt(p, "--resume", None, help="checkpoint to continue from")


def _corpus_options(p):
    _opt(p, "--corpus", None, help="corpus manifest.txt")
    _opt(p, "--template", None, help="template landmark file (default: template.lmk next to the manifest)")


def _load_clips(cfg: dict):
    _require(cfg, "corpus")
    manifest = Path(cfg["corpus"])
    tpath = Path(cfg["template"]) if cfg.get("template") else manifest.parent / "template.lmk"
    template = _read("template", load_template, tpath)
    clips = _read("corpus", load_corpus, manifest, template)
    if not clips:
        raise InputError(f"corpus {manifest} lists no clips")
    return clips, template


def _portrait(path, lmk_path=None) -> PortraitImage:
    lmk_path = Path(lmk_path) if lmk_path else Path(path).with_suffix(".lmk")
    pixels = _read("portrait", read_frame, path)
    seq = _read("portrait landmarks", load_landmarks, lmk_path)
    try:
        return PortraitImage(pixels, seq.frames[0][:, :2])
    except ValueError as exc:
        raise InputError(f"portrait landmarks {lmk_path}: {exc}") from exc


def _write_losses(path: Path, losses, val_losses, disc_losses=None):
    lines = ["# step loss" + (" disc_loss" if disc_losses else "")]
    for i, v in enumerate(losses):
        lines.append(f"{i + 1} {v!r}" + (f" {disc_losses[i]!r}" if disc_losses else ""))
    lines.append("# step val_loss")
    lines += [f"# {s} {v!r}" for s, v in val_losses]
    path.write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# Subcommands


def cmd_synth_corpus(cfg: dict) -> int:
    _require(cfg, "out")
    spec = SynthSpec(
        n_speakers=cfg["n_speakers"],
        clips_per_speaker=cfg["clips_per_speaker"],
        duration=cfg["duration"],
        content_dim=cfg["content_dim"],
        tau_prime=cfg["tau_prime"],
    )
    clips = synthesize_corpus(spec, cfg["seed"])
    out = Path(cfg["out"])
    manifest = save_corpus(clips, out)
    save_landmarks(out / "template.lmk", LandmarkSequence(face_template()[None], CONTENT_FRAME_RATE))
    portrait = draw_portrait(cfg["portrait_size"], cfg["seed"])
    cv2.imwrite(str(out / "portrait.png"), cv2.cvtColor(portrait.pixels, cv2.COLOR_RGB2BGR))
    lmk = np.c_[portrait.landmarks, np.zeros(68)]
    save_landmarks(out / "portrait.lmk", LandmarkSequence(lmk[None], CONTENT_FRAME_RATE))
    print(f"wrote {len(clips)} clips to {manifest}")
    return EXIT_OK


def _train_config(cfg: dict, **extra) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg["lr"],
        weight_decay=cfg["weight_decay"],
        batch_size=cfg["batch_size"],
        max_steps=cfg["steps"],
        seed=cfg["seed"],
        eval_every=cfg["eval_every"],
        **extra,
    )


def _split(clips):
    train, val, _ = split_clips(clips)
    return train, (val or None)


def cmd_train_content(cfg: dict) -> int:
    _require(cfg, "out")
    clips, _ = _load_clips(cfg)
    model_cfg = ContentConfig(
        content_dim=clips[0].content.dim,
        lstm_hidden=cfg["lstm_hidden"],
        lstm_layers=cfg["lstm_layers"],
        mlp_hidden=_ints(cfg["mlp_hidden"]),
        tau=cfg["tau"],
    )
    resume = _read("resume checkpoint", Checkpoint.load, cfg["resume"]) if cfg.get("resume") else None
    train, val = _split(clips)
    result = train_content(train, _train_config(cfg, lambda_c=cfg["lambda_c"]), model_cfg, val, resume)
    out = Path(cfg["out"])
    best, last = save_result(result, out, "content")
    _write_losses(out / "content_losses.txt", result.losses, result.val_losses)
    print(f"best checkpoint {best} (step {result.checkpoint.step}), last {last}")
    return EXIT_OK


def cmd_train_speaker(cfg: dict) -> int:
    _require(cfg, "out", "content_ckpt")
    clips, _ = _load_clips(cfg)
    content_ckpt = _read("content checkpoint", Checkpoint.load, cfg["content_ckpt"])
    model_cfg = SpeakerConfig(
        content_dim=clips[0].content.dim,
        lstm_hidden=cfg["lstm_hidden"],
        lstm_layers=cfg["lstm_layers"],
        tau=cfg["tau"],
        tau_prime=cfg["tau_prime"],
        mlp_hidden=_ints(cfg["mlp_hidden"]),
        disc_mlp_hidden=_ints(cfg["disc_mlp_hidden"]),
    )
    resume = _read("resume checkpoint", Checkpoint.load, cfg["resume"]) if cfg.get("resume") else None
    train, val = _split(clips)
    tcfg = _train_config(cfg, lambda_s=cfg["lambda_s"], mu_s=cfg["mu_s"], disc_warmup=cfg["disc_warmup"])
    result = train_speaker(train, content_ckpt, tcfg, model_cfg, val, resume)
    out = Path(cfg["out"])
    best, last = save_result(result, out, "speaker")
    _write_losses(out / "speaker_losses.txt", result.losses, result.val_losses, result.disc_losses)
    print(f"best checkpoint {best} (step {result.checkpoint.step}), last {last}")
    return EXIT_OK


def _fit_square(portrait: PortraitImage, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Resize a portrait to ``size x size``; returns pixels and scaled landmarks."""
    h, w = portrait.pixels.shape[:2]
    pixels = cv2.resize(portrait.pixels, (size, size), interpolation=cv2.INTER_AREA)
    lmk = portrait.landmarks[:, :2] * [(size - 1) / max(w - 1, 1), (size - 1) / max(h - 1, 1)]
    return pixels, lmk


def cmd_train_i2i(cfg: dict) -> int:
    _require(cfg, "portrait", "target", "out")
    src = _portrait(cfg["portrait"], cfg.get("portrait_landmarks"))
    tgt = _portrait(cfg["target"], cfg.get("target_landmarks"))
    gcfg = GeneratorConfig().reduced(cfg["width_divisor"], cfg["image_size"])
    src_px, _ = _fit_square(src, gcfg.image_size)
    tgt_px, tgt_lmk = _fit_square(tgt, gcfg.image_size)
    lmk_img = rasterize_landmarks(tgt_lmk, size=gcfg.image_size)
    torch.manual_seed(cfg["seed"])
    result = train_i2i(src_px, lmk_img, tgt_px, gcfg, cfg["steps"], cfg["lr"], cfg["lambda_a"], seed=cfg["seed"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    save_generator(out / "i2i.ckpt", result.model, {"steps": cfg["steps"], "seed": cfg["seed"], "mae": result.mae})
    _write_losses(out / "i2i_losses.txt", result.losses, [])
    print(f"wrote {out / 'i2i.ckpt'}; final mean absolute error {result.mae:.4f}")
    return EXIT_OK


def predict(clip, content, gen=None) -> LandmarkSequence:
    """Content-branch output for one clip, passed through the speaker branch if given."""
    p, _ = content_forward(clip.content, clip.neutral, content)
    if gen is None:
        return p
    return speaker_forward(clip.content, gen.project(clip.speaker), p, clip.neutral, gen)


def cmd_eval(cfg: dict) -> int:
    _require(cfg, "content_ckpt")
    clips, template = _load_clips(cfg)
    content = content_branch_from(_read("content checkpoint", Checkpoint.load, cfg["content_ckpt"]))
    gen = None
    if cfg.get("speaker_ckpt"):
        gen, _ = speaker_models_from(_read("speaker checkpoint", Checkpoint.load, cfg["speaker_ckpt"]))
    if cfg["split"] not in ("test", "all"):
        raise UsageError(f"--split must be 'test' or 'all', got {cfg['split']!r}")
    chosen = split_clips(clips)[2] if cfg["split"] == "test" else clips
    if not chosen:
        raise UsageError("the test split is empty; use --split all")
    reports = {c.clip_id: evaluate_clip(predict(c, content, gen), c.landmarks, template) for c in chosen}
    text = format_report(reports)
    if cfg.get("out"):
        Path(cfg["out"]).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _pose_from(cfg: dict) -> HeadPose | None:
    rot = [cfg["yaw"], cfg["pitch"], cfg["roll"]]
    trans = [cfg.get("tx", 0.0), cfg.get("ty", 0.0), cfg.get("tz", 0.0)]
    if not any(rot) and not any(trans):
        return None
    return HeadPose(rot, trans)


def animate_landmarks(cfg: dict) -> tuple[LandmarkSequence, np.ndarray, dict]:
    """Run the landmark half of the pipeline; returns the sequence, the static face and input hashes."""
    _require(cfg, "content", "content_ckpt")
    template = _read("template", load_template, cfg["template"]) if cfg.get("template") else face_template()
    a = _read("content embedding", load_embedding, cfg["content"], "content")
    content = content_branch_from(_read("content checkpoint", Checkpoint.load, cfg["content_ckpt"]))
    hashes = {"content": file_sha256(cfg["content"]), "content_ckpt": file_sha256(cfg["content_ckpt"])}
    p, _ = content_forward(a, template, content)
    if cfg["no_speaker"]:
        y = p
    else:
        if not cfg.get("speaker"):
            raise UsageError("speaker-aware animation needs --speaker (a speaker embedding file); "
                             "pass --no-speaker for content-only output")
        if not cfg.get("speaker_ckpt"):
            raise UsageError("speaker-aware animation needs --speaker-ckpt; pass --no-speaker for content-only output")
        s = _read("speaker embedding", load_embedding, cfg["speaker"], "speaker")
        gen, _ = speaker_models_from(_read("speaker checkpoint", Checkpoint.load, cfg["speaker_ckpt"]))
        y = speaker_forward(a, gen.project(s), p, template, gen)
        hashes["speaker"] = file_sha256(cfg["speaker"])
        hashes["speaker_ckpt"] = file_sha256(cfg["speaker_ckpt"])
    pose = _pose_from(cfg)
    if pose is not None:
        y = apply_head_pose(y, pose)
    if cfg["fps"] != y.fps:
        y = resample(y, cfg["fps"])
    return y, template, hashes


def _translate_frames(portrait: PortraitImage, seq: LandmarkSequence, template, ckpt, out: Path) -> dict:
    gen = load_generator(ckpt)
    size = gen.cfg.image_size
    pixels, lmk = _fit_square(portrait, size)
    proj = Projection.fit(template, lmk)
    for t, frame in enumerate(seq.frames):
        lmk_img = rasterize_landmarks(proj(frame), size=size)
        img = to_image(torch.from_numpy(i2i_forward(pixels, lmk_img, gen)))
        path = out / f"frame_{t:06d}.png"
        if not cv2.imwrite(str(path), cv2.cvtColor(img, cv2.COLOR_RGB2BGR)):
            raise OSError(f"failed to write {path}")
    return {"fps": seq.fps, "n_frames": len(seq), "width": size, "height": size}


def cmd_animate(cfg: dict) -> int:
    _require(cfg, "portrait", "out")
    if cfg["mode"] not in ("warp", "translate"):
        raise UsageError(f"--mode must be 'warp' or 'translate', got {cfg['mode']!r}")
    if cfg["mode"] == "translate" and not cfg.get("i2i_ckpt"):
        raise UsageError("--mode translate needs --i2i-ckpt (train one with train-i2i)")
    if not cfg["fps"] > 0:
        raise UsageError(f"--fps must be positive, got {cfg['fps']}")
    torch.manual_seed(cfg["seed"])
    portrait = _portrait(cfg["portrait"], cfg.get("portrait_landmarks"))
    seq, template, hashes = animate_landmarks(cfg)
    hashes["portrait"] = file_sha256(cfg["portrait"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    if cfg["mode"] == "warp":
        render_animation(portrait, seq, out, rest_frame=template, audio=cfg.get("audio"))
        manifest = json.loads(manifest_path.read_text())
    else:
        i2i = cfg["i2i_ckpt"]
        hashes["i2i_ckpt"] = _read("i2i checkpoint", file_sha256, i2i)
        manifest = _translate_frames(portrait, seq, template, i2i, out)
    save_landmarks(out / "landmarks.lmk", seq)
    manifest["run"] = {
        "command": "animate",
        "version": __version__,
        "seed": cfg["seed"],
        "config": cfg,
        "sha256": hashes,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(seq)} frames to {out}")
    return EXIT_OK


def cmd_pose_edit(cfg: dict) -> int:
    _require(cfg, "landmarks", "out")
    seq = _read("landmarks", load_landmarks, cfg["landmarks"])
    pose = _pose_from(cfg)
    save_landmarks(cfg["out"], seq if pose is None else apply_head_pose(seq, pose))
    return EXIT_OK


def _pose_options(p):
    _opt(p, "--yaw", 0.0, type=float, help="extra yaw in degrees")
    _opt(p, "--pitch", 0.0, type=float, help="extra pitch in degrees")
    _opt(p, "--roll", 0.0, type=float, help="extra roll in degrees")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="speakanim", description="Speaker-aware talking-head animation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = _subparser(sub, "animate", cmd_animate, "animate a portrait from content and speaker embeddings")
    _opt(p, "--portrait", None, help="portrait image (PNG)")
    _opt(p, "--portrait-landmarks", None, help="portrait landmarks in pixels (default: <portrait>.lmk)")
    _opt(p, "--content", None, help="content embedding array file")
    _opt(p, "--speaker", None, help="speaker embedding array file")
    _opt(p, "--content-ckpt", None)
    _opt(p, "--speaker-ckpt", None)
    _opt(p, "--i2i-ckpt", None, help="image-translation checkpoint (translate mode)")
    _opt(p, "--template", None, help="template landmark file used as the static face")
    _opt(p, "--mode", "warp", help="warp | translate")
    _opt(p, "--fps", CONTENT_FRAME_RATE, type=float, help="output frame rate")
    _opt(p, "--seed", 0, type=int)
    _opt(p, "--out", None, help="output directory")
    _opt(p, "--audio", None, help="audio file copied next to the frames")
    _opt(p, "--no-speaker", False, action="store_true", help="content branch only")
    _pose_options(p)

    p = _subparser(sub, "train-content", cmd_train_content, "train the content branch")
    _corpus_options(p)
    _train_options(p, steps=1000, lr=1e-4, batch=32)
    _opt(p, "--lambda-c", 1.0, type=float, help="Laplacian term weight")
    _opt(p, "--out", None, help="output directory")

    p = _subparser(sub, "train-speaker", cmd_train_speaker, "train the speaker-aware branch and its discriminator")
    _corpus_options(p)
    _train_options(p, steps=1000, lr=1e-4, batch=8)
    _opt(p, "--content-ckpt", None, help="trained content-branch checkpoint")
    _opt(p, "--tau-prime", 256, type=int, help="attention window length in frames")
    _opt(p, "--disc-mlp-hidden", "512,256")
    _opt(p, "--lambda-s", 1.0, type=float)
    _opt(p, "--mu-s", 1e-3, type=float, help="adversarial term weight")
    _opt(p, "--disc-warmup", 0, type=int, help="discriminator-only steps before alternation")
    _opt(p, "--out", None, help="output directory")

    p = _subparser(sub, "train-i2i", cmd_train_i2i, "fit the image-translation generator to one portrait pair")
    _opt(p, "--portrait", None, help="source portrait (PNG)")
    _opt(p, "--portrait-landmarks", None)
    _opt(p, "--target", None, help="target frame (PNG) of the same subject")
    _opt(p, "--target-landmarks", None, help="target landmarks in pixels (default: <target>.lmk)")
    _opt(p, "--steps", 500, type=int)
    _opt(p, "--lr", 1e-3, type=float)
    _opt(p, "--lambda-a", 1.0, type=float, help="perceptual term weight")
    _opt(p, "--width-divisor", 1, type=int, help="divide generator widths by this factor")
    _opt(p, "--image-size", 256, type=int)
    _opt(p, "--seed", 0, type=int)
    _opt(p, "--out", None, help="output directory")

    p = _subparser(sub, "eval", cmd_eval, "compute landmark metrics on a corpus split")
    _corpus_options(p)
    _opt(p, "--content-ckpt", None)
    _opt(p, "--speaker-ckpt", None, help="omit for the content-only model")
    _opt(p, "--split", "test", help="test | all")
    _opt(p, "--out", None, help="report file (default: stdout)")

    p = _subparser(sub, "synth-corpus", cmd_synth_corpus, "write a synthetic corpus, template and portrait")
    _opt(p, "--n-speakers", 2, type=int)
    _opt(p, "--clips-per-speaker", 5, type=int)
    _opt(p, "--duration", 8.192, type=float, help="clip length in seconds")
    _opt(p, "--content-dim", 64, type=int)
    _opt(p, "--tau-prime", 256, type=int)
    _opt(p, "--portrait-size", 256, type=int)
    _opt(p, "--seed", 0, type=int)
    _opt(p, "--out", None, help="output directory")

    p = _subparser(sub, "pose-edit", cmd_pose_edit, "apply a head-pose offset to a landmark file")
    _opt(p, "--landmarks", None, help="input landmark file")
    _pose_options(p)
    _opt(p, "--tx", 0.0, type=float, help="translation in face widths")
    _opt(p, "--ty", 0.0, type=float)
    _opt(p, "--tz", 0.0, type=float)
    _opt(p, "--out", None, help="output landmark file")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(ns)
        return ns._run(cfg)
    except InputError as exc:
        print(f"speakanim: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (UsageError, ConfigError, ValueError) as exc:
        print(f"speakanim: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, OSError, RuntimeError) as exc:
        print(f"speakanim: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
