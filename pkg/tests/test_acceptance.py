"""Acceptance criteria, one test each; results are summarized at the end of the run."""

import dataclasses
import time

import numpy as np
import pytest
import torch

import oracles
from conftest import ACCEPTANCE
from helpers import TINY_CONTENT, TINY_SPEAKER, fd_relative_errors, randomize
from speakanim.content import ContentBranch, ContentConfig, content_forward, content_loss
from speakanim.embeddings import ContentEmbedding, SpeakerEmbedding
from speakanim.geometry import (
    HeadPose,
    LandmarkSequence,
    apply_head_pose,
    decompose_head_pose,
    fit_affine,
    laplacian_coords,
    register_to_template,
)
from speakanim.metrics import aggregate, evaluate_clip, lip_metrics, pose_metrics, shoelace_area
from speakanim.nn import landmark_loss, laplacian_operator
from speakanim.renderer import portrait_mesh, psnr, render_animation, triangulate, warp_frame
from speakanim.speaker import (
    Discriminator,
    RealismScore,
    SpeakerConfig,
    SpeakerGenerator,
    generator_loss,
    generator_terms,
    lsgan_loss,
    lsgan_terms,
    speaker_forward,
)
from speakanim.synth import SpeakerStyle, SynthSpec, draw_portrait, face_template, split_clips, synthesize_corpus
from speakanim.training import (
    TrainConfig,
    content_branch_from,
    content_eval_loss,
    retrieval_baseline,
    speaker_models_from,
    train_content,
    train_speaker,
)
from speakanim.translation import (
    FrozenFeatures,
    GeneratorConfig,
    TranslationGenerator,
    i2i_forward,
    i2i_terms,
    rasterize_landmarks,
    train_i2i,
)

STYLES = (SpeakerStyle(3.0, 0.2, 0.2), SpeakerStyle(12.0, 0.7, 1.0))
DESK_CONTENT = ContentConfig(lstm_hidden=64, mlp_hidden=(128, 64))
DESK_SPEAKER = SpeakerConfig(lstm_hidden=64, lstm_layers=1, mlp_hidden=(128, 64), disc_mlp_hidden=(128, 64), tau_prime=64)


def record(n: int, ok: bool, detail: str):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def unit(v):
    return v / np.linalg.norm(v)


def d_rot(a: LandmarkSequence, b: LandmarkSequence, template) -> float:
    return pose_metrics(a, b, template)[2]


# --------------------------------------------------------------------------
# Trained desk-scale models shared by criteria 4-6


@dataclasses.dataclass
class Trained:
    clips: list
    train: list
    test: list
    content: ContentBranch
    gen: SpeakerGenerator


@pytest.fixture(scope="module")
def trained():
    clips = synthesize_corpus(SynthSpec(n_speakers=2, clips_per_speaker=5, styles=STYLES), 0)
    train, val, test = split_clips(clips)
    cres = train_content(train, TrainConfig(learning_rate=1e-3, max_steps=1500, batch_size=32, eval_every=500),
                         DESK_CONTENT, val)
    sres = train_speaker(train, cres.checkpoint,
                         TrainConfig(learning_rate=1e-3, max_steps=600, batch_size=8, eval_every=100),
                         DESK_SPEAKER, val)
    gen, _ = speaker_models_from(sres.last)
    return Trained(clips, train, test, content_branch_from(cres.checkpoint), gen)


def full_output(m: Trained, clip, speaker: SpeakerEmbedding | None = None) -> LandmarkSequence:
    p, _ = content_forward(clip.content, clip.neutral, m.content)
    return speaker_forward(clip.content, m.gen.project(speaker or clip.speaker), p, clip.neutral, m.gen)


# --------------------------------------------------------------------------


def test_criterion_01_gradients():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = {}
    lap = laplacian_operator()

    content = randomize(ContentBranch(TINY_CONTENT).double(), 1)
    a = torch.tensor(rng.normal(size=(4, 8)))
    q = torch.tensor(rng.normal(size=(68, 3)))
    ref = torch.tensor(rng.normal(size=(4, 68, 3)))
    worst["L_c"] = max(fd_relative_errors(lambda: landmark_loss(content(a, q)[0], ref, lap, 1.0), content, per_tensor=20).values())

    gen = randomize(SpeakerGenerator(TINY_SPEAKER).double(), 2)
    disc = randomize(Discriminator(TINY_SPEAKER).double(), 3)
    tp = TINY_SPEAKER.tau_prime
    aw = torch.tensor(rng.normal(size=(2, tp, 8)))
    pw = torch.tensor(rng.normal(size=(2, tp, 68, 3)))
    yw = torch.tensor(rng.normal(size=(2, tp, 68, 3)))
    qw = torch.tensor(rng.normal(size=(2, 68, 3)))
    sw = torch.tensor(rng.normal(size=(2, 256)))

    def gen_loss():
        s128 = gen.projection(sw)
        codes = gen.encode_content(aw)
        y = gen.forward_windows(codes, s128, pw, qw)
        return generator_terms(y, yw, lap, disc(y, codes, s128), 1.0, 0.5)

    for prm in disc.parameters():
        prm.requires_grad_(False)
    worst["L_s"] = max(fd_relative_errors(gen_loss, gen, per_tensor=15).values())
    for prm in disc.parameters():
        prm.requires_grad_(True)
    with torch.no_grad():
        s128 = gen.projection(sw)
        codes = gen.encode_content(aw)
        fake = gen.forward_windows(codes, s128, pw, qw)
    worst["L_gan"] = max(fd_relative_errors(lambda: lsgan_terms(disc(yw, codes, s128), disc(fake, codes, s128)), disc, per_tensor=15).values())

    i2i = TranslationGenerator.initialized(GeneratorConfig().reduced(16, 64), 4).double()
    x = torch.tensor(rng.normal(size=(1, 6, 64, 64)))
    target = torch.tensor(rng.uniform(-1, 1, (1, 3, 64, 64)))
    phi = FrozenFeatures().double()
    worst["i2i"] = max(fd_relative_errors(lambda: i2i_terms(i2i(x), target, phi, 1.0), i2i, per_tensor=3).values())

    elapsed = time.perf_counter() - start
    ok = worst["L_c"] < 1e-4 and worst["L_s"] < 1e-4 and worst["L_gan"] < 1e-4 and worst["i2i"] < 1e-3 and elapsed < 120
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.0f}s"
    record(1, ok, "max relative FD error " + detail)


def test_criterion_02_formula_oracles(template):
    rng = np.random.default_rng(1)
    errs = {}
    for t in (1, 3, 5):
        ref = template[None] + rng.normal(0, 0.05, (t, 68, 3))
        pred = template[None] + rng.normal(0, 0.05, (t, 68, 3))
        ps, rs = LandmarkSequence(pred, 62.5), LandmarkSequence(ref, 62.5)
        r_real, r_fake = rng.normal(size=t), rng.normal(size=t)
        pairs = {
            "content_loss": (content_loss(ps, rs, lambda_c=0.8), oracles.landmark_loss(pred.tolist(), ref.tolist(), 0.8)),
            "generator_loss": (generator_loss(ps, rs, r_fake=RealismScore(r_fake), lambda_s=0.6, mu_s=0.02),
                               oracles.generator(pred.tolist(), ref.tolist(), r_fake.tolist(), 0.6, 0.02)),
            "lsgan_loss": (lsgan_loss(RealismScore(r_real), RealismScore(r_fake)), oracles.lsgan(r_real, r_fake)),
            "lip_metrics": (lip_metrics(ps, rs), oracles.lip_metrics(pred.tolist(), ref.tolist())),
            "position_metrics": (pose_metrics(ps, rs, template)[:2], oracles.position_metrics(pred.tolist(), ref.tolist())),
            "laplacian": (laplacian_coords(pred[0]), oracles.laplacian(pred[0].tolist())),
            "shoelace": (shoelace_area(pred[0, 60:68]), oracles.polygon_area(pred[0, 60:68].tolist())),
        }
        rot = pred.copy()
        for f in rot:
            f[:] = f @ oracles.rot_y(rng.uniform(-20, 20)).T
        pairs["rotation_metrics"] = (pose_metrics(LandmarkSequence(rot, 62.5), rs, template)[2:],
                                     oracles.pose_metrics(rot.tolist(), ref.tolist(), template.tolist()))
        for name, (ours, oracle) in pairs.items():
            err = float(np.max(np.abs(np.asarray(ours, dtype=float) - np.asarray(oracle, dtype=float))))
            errs[name] = max(errs.get(name, 0.0), err)
    worst = max(errs.values())
    record(2, worst < 1e-10, f"{len(errs)} formulas, max abs deviation {worst:.1e}")


def test_criterion_03_content_overfit():
    start = time.perf_counter()
    clips = synthesize_corpus(SynthSpec(n_speakers=1, clips_per_speaker=1), 0)
    res = train_content(clips, TrainConfig(learning_rate=1e-3, max_steps=2000, batch_size=16, eval_every=250),
                        DESK_CONTENT)
    initial = res.val_losses[0][1]
    final = content_eval_loss(content_branch_from(res.checkpoint), clips)
    elapsed = time.perf_counter() - start
    ratio = initial / final
    record(3, ratio >= 100 and elapsed < 300, f"L_c {initial:.4g} -> {final:.4g} ({ratio:.0f}x) in 2000 steps, {elapsed:.0f}s")


def test_criterion_04_speaker_separation(trained, template):
    between, within = [], []
    for clip in trained.test:
        other = next(c for c in trained.clips if c.speaker_id != clip.speaker_id)
        same = next(c for c in trained.clips if c.speaker_id == clip.speaker_id and c.clip_id != clip.clip_id)
        y = full_output(trained, clip)
        between.append(d_rot(y, full_output(trained, clip, other.speaker), template))
        within.append(d_rot(y, full_output(trained, clip, same.speaker), template))
    ratio = np.mean(between) / np.mean(within)
    record(4, ratio > 3, f"D-Rot between speakers {np.mean(between):.3f} deg, same speaker {np.mean(within):.3f} deg, ratio {ratio:.1f}")


def test_criterion_05_ablations(trained, template):
    full, no_speaker, no_content = [], [], []
    for clip in trained.test:
        p, _ = content_forward(clip.content, clip.neutral, trained.content)
        s = trained.gen.project(clip.speaker)
        static = clip.registered.with_frames(np.repeat(clip.neutral[None], len(clip), axis=0))
        full.append(evaluate_clip(speaker_forward(clip.content, s, p, clip.neutral, trained.gen), clip.landmarks, template))
        no_speaker.append(evaluate_clip(p, clip.landmarks, template))
        no_content.append(evaluate_clip(speaker_forward(clip.content, s, static, clip.neutral, trained.gen), clip.landmarks, template))
    f, ns, nc = aggregate(full), aggregate(no_speaker), aggregate(no_content)
    pose_ok = all(getattr(f, k) < getattr(ns, k) for k in ("d_rot", "d_pos"))
    lip_ok = all(getattr(f, k) < getattr(nc, k) for k in ("d_ll", "d_vl", "d_a"))
    detail = (f"D-Rot {f.d_rot:.2f} vs {ns.d_rot:.2f}, D-Pos {f.d_pos:.4f} vs {ns.d_pos:.4f} (no speaker); "
              f"D-LL {f.d_ll:.4f} vs {nc.d_ll:.4f}, D-VL {f.d_vl:.4f} vs {nc.d_vl:.4f}, D-A {f.d_a:.3f} vs {nc.d_a:.3f} (no content)")
    record(5, pose_ok and lip_ok, detail)


def test_criterion_06_random_id_baseline(trained, template):
    model, base = [], []
    for clip in trained.test:
        model.append(d_rot(full_output(trained, clip), clip.landmarks, template))
        base.append(np.mean([d_rot(retrieval_baseline(clip, trained.train, "random_id", seed, template), clip.landmarks, template)
                             for seed in range(3)]))
    record(6, np.mean(base) > np.mean(model), f"D-Rot model {np.mean(model):.2f} deg, retrieve-random-ID {np.mean(base):.2f} deg")


def test_criterion_07_renderer(tmp_path):
    src = draw_portrait(256, 0)
    mesh = portrait_mesh(src)
    value = psnr(warp_frame(src, mesh, mesh.vertices), src.pixels)
    rng = np.random.default_rng(7)
    violations = 0
    for _ in range(100):
        pts = rng.uniform(0, 256, (68, 2))
        violations += oracles.circumcircle_violations(pts, triangulate(pts).triangles)
    seq = LandmarkSequence(np.repeat(face_template()[None], 3, axis=0) + rng.normal(0, 0.01, (3, 68, 3)), 25.0)
    a = render_animation(src, seq, tmp_path / "a")
    b = render_animation(src, seq, tmp_path / "b")
    identical = all(x.read_bytes() == y.read_bytes() for x, y in zip(a, b))
    ok = value > 40 and violations == 0 and identical
    record(7, ok, f"identity PSNR {value:.1f} dB, circumcircle violations {violations} over 100 sets, re-render identical {identical}")


def test_criterion_08_round_trips(template):
    rng = np.random.default_rng(8)
    worst_affine = worst_rigid = worst_angle = 0.0
    for _ in range(20):
        m = np.eye(3) + rng.normal(0, 0.2, (3, 3))
        t = rng.normal(size=3)
        src = template + rng.normal(0, 0.01, template.shape)
        fit = fit_affine(src, src @ m.T + t)
        worst_affine = max(worst_affine, np.abs(fit.linear - m).max(), np.abs(fit.offset - t).max())
        moved = src @ m.T + t
        reg, _ = register_to_template(LandmarkSequence(moved[None], 62.5), src)
        worst_affine = max(worst_affine, np.abs(reg.frames[0] - src).max())

        pose = HeadPose(rng.uniform(-60, 60, 3), rng.normal(0, 0.2, 3))
        moved = apply_head_pose(LandmarkSequence(template[None], 62.5), pose)
        back = decompose_head_pose(moved.frames[0], template)
        worst_angle = max(worst_angle, np.abs(back.rotation - pose.rotation).max())
        worst_rigid = max(worst_rigid, np.abs(back.translation - pose.translation).max())
    ok = worst_affine < 1e-6 and worst_rigid < 1e-6 and worst_angle < 1e-6
    record(8, ok, f"affine {worst_affine:.1e}, translation {worst_rigid:.1e}, angles {worst_angle:.1e} deg")


def test_criterion_09_window_locality(template):
    rng = np.random.default_rng(9)
    content = ContentBranch.initialized(TINY_CONTENT, 0)
    tau = TINY_CONTENT.tau
    values = rng.normal(size=(30, 8))
    base, _ = content_forward(ContentEmbedding(values), template, content)
    content_ok = True
    for t in range(0, 30 - tau, 3):
        bumped = values.copy()
        bumped[:t] += rng.normal(size=(t, 8))
        bumped[t + tau + 1:] += rng.normal(size=bumped[t + tau + 1:].shape)
        out, _ = content_forward(ContentEmbedding(bumped), template, content)
        content_ok &= np.array_equal(out.frames[t], base.frames[t])

    gen = randomize(SpeakerGenerator(TINY_SPEAKER), 5)
    tp = TINY_SPEAKER.tau_prime
    a = ContentEmbedding(rng.normal(size=(4 * tp, 8)))
    p = LandmarkSequence(rng.normal(size=(4 * tp, 68, 3)), 62.5)
    s = gen.project(SpeakerEmbedding(unit(rng.normal(size=256))))
    y0 = speaker_forward(a, s, p, template, gen).frames
    speaker_ok = True
    for w in range(4):
        vals = a.values.copy()
        vals[np.arange(4 * tp) // tp != w] += rng.normal(size=(3 * tp, 8))
        y = speaker_forward(ContentEmbedding(vals), s, p, template, gen).frames
        speaker_ok &= np.array_equal(y[w * tp:(w + 1) * tp], y0[w * tp:(w + 1) * tp])
    record(9, content_ok and speaker_ok, f"content windows unchanged {content_ok}, speaker windows unchanged {speaker_ok}")


def test_criterion_10_i2i():
    torch.manual_seed(0)
    full = TranslationGenerator(GeneratorConfig())
    src, tgt = draw_portrait(256, 0), draw_portrait(256, 1)
    lmk = rasterize_landmarks(tgt.landmarks)
    out = i2i_forward(src.pixels, lmk, full)
    contract = out.shape == (3, 256, 256) and np.abs(out).max() <= 1.0
    del full
    start = time.perf_counter()
    res = train_i2i(src.pixels, lmk, tgt.pixels, GeneratorConfig().reduced(16), steps=500, stop_below=0.05)
    elapsed = time.perf_counter() - start
    ok = contract and res.mae < 0.05 and len(res.losses) <= 500
    record(10, ok, f"output {out.shape} in [{out.min():.2f}, {out.max():.2f}]; widths/16 overfit MAE {res.mae:.4f} "
                   f"after {len(res.losses)} steps, {elapsed:.0f}s")
