import numpy as np
import pytest

from speakanim.corpus import fingerprint, load_corpus, save_corpus
from speakanim.geometry import pose_track, register_to_template
from speakanim.synth import SpeakerStyle, SynthSpec, draw_portrait, face_template, split_clips, synthesize_corpus

SHORT = SynthSpec(n_speakers=2, clips_per_speaker=2, duration=1.024, tau_prime=64)


def test_template_shape():
    t = face_template()
    assert t.shape == (68, 3)
    assert abs(np.linalg.norm(t[16] - t[0]) - 2.0) < 1e-12


def test_deterministic():
    a, b = synthesize_corpus(SHORT, 3), synthesize_corpus(SHORT, 3)
    assert fingerprint(a) == fingerprint(b)
    for x, y in zip(a, b):
        assert np.array_equal(x.landmarks.frames, y.landmarks.frames)
        assert np.array_equal(x.content.values, y.content.values)
    assert fingerprint(synthesize_corpus(SHORT, 4)) != fingerprint(a)


def test_shapes_and_embeddings():
    clips = synthesize_corpus(SHORT, 0)
    assert len(clips) == 4
    for c in clips:
        assert len(c) == SHORT.n_frames == len(c.landmarks) == len(c.registered)
        assert c.content.dim == 64
        assert abs(np.linalg.norm(c.speaker.raw) - 1) < 1e-3
    same = [c.speaker.raw for c in clips if c.speaker_id == 0]
    other = [c.speaker.raw for c in clips if c.speaker_id == 1]
    assert float(same[0] @ same[1]) > float(same[0] @ other[0])


def test_same_content_different_speakers():
    # swapping the style order keeps clip 0's content track and changes only its style
    styles = (SpeakerStyle(3.0, 0.2, 0.0), SpeakerStyle(12.0, 0.8, 0.0))
    spec = SynthSpec(n_speakers=2, clips_per_speaker=1, duration=1.024, tau_prime=64, styles=styles)
    a = synthesize_corpus(spec, 0)
    swapped = SynthSpec(n_speakers=2, clips_per_speaker=1, duration=1.024, tau_prime=64, styles=styles[::-1])
    b = synthesize_corpus(swapped, 0)
    assert np.array_equal(a[0].content.values, b[0].content.values)
    tmpl = face_template()
    reg_a, _ = register_to_template(a[0].landmarks, tmpl)
    reg_b, _ = register_to_template(b[0].landmarks, tmpl)
    lips = np.r_[0:17, 48:68]
    assert np.max(np.abs(reg_a.frames[:, lips] - reg_b.frames[:, lips])) < 1e-6
    rot_a = np.array([p.rotation for p in pose_track(a[0].landmarks, tmpl)])
    rot_b = np.array([p.rotation for p in pose_track(b[0].landmarks, tmpl)])
    assert np.sqrt(np.mean((rot_a - rot_b) ** 2)) > 0.5


def test_zero_style_is_constant_template():
    spec = SynthSpec(
        n_speakers=1, clips_per_speaker=1, duration=1.024, tau_prime=64, articulation=0.0,
        styles=(SpeakerStyle(0.0, 0.5, 0.0),),
    )
    clip = synthesize_corpus(spec, 0)[0]
    assert np.max(np.abs(clip.landmarks.frames - face_template())) < 1e-12


def test_registered_track_matches_ground_truth():
    clip = synthesize_corpus(SHORT, 0)[0]
    reg, _ = register_to_template(clip.landmarks, face_template())
    lips = np.r_[0:17, 48:68]
    assert np.max(np.abs(reg.frames[:, lips] - clip.registered.frames[:, lips])) < 0.05


def test_short_duration_rejected():
    with pytest.raises(ValueError, match="window"):
        synthesize_corpus(SynthSpec(duration=1.0, tau_prime=256), 0)


def test_split_per_speaker():
    clips = synthesize_corpus(SynthSpec(n_speakers=2, clips_per_speaker=5, duration=1.024, tau_prime=64), 0)
    train, val, test = split_clips(clips)
    assert (len(train), len(val), len(test)) == (6, 2, 2)
    for part in (train, val, test):
        assert {c.speaker_id for c in part} == {0, 1}
    assert not {c.clip_id for c in train} & {c.clip_id for c in test}


def test_corpus_round_trip(tmp_path):
    clips = synthesize_corpus(SHORT, 0)
    manifest = save_corpus(clips, tmp_path)
    assert manifest.read_text().splitlines()[0] == "clip_id speaker_id content speaker landmarks"
    back = load_corpus(manifest, face_template())
    assert [c.clip_id for c in back] == [c.clip_id for c in clips]
    for a, b in zip(clips, back):
        assert np.array_equal(a.content.values, b.content.values)
        assert np.array_equal(a.speaker.raw, b.speaker.raw)
        assert np.array_equal(a.landmarks.frames, b.landmarks.frames)
        assert b.speaker_id == a.speaker_id
    assert fingerprint(back) == fingerprint(clips)


def test_corpus_length_mismatch(tmp_path):
    clips = synthesize_corpus(SHORT, 0)
    manifest = save_corpus(clips[:1], tmp_path)
    other = save_corpus(synthesize_corpus(SynthSpec(1, 1, duration=2.048, tau_prime=64), 0), tmp_path / "o")
    text = manifest.read_text().replace("s00_c000.lmk", "o/s00_c000.lmk")
    manifest.write_text(text)
    assert other.exists()
    with pytest.raises(ValueError, match="frames"):
        load_corpus(manifest, face_template())


def test_portrait():
    p = draw_portrait(128, 0)
    assert p.pixels.shape == (128, 128, 3) and p.pixels.dtype == np.uint8
    assert p.landmarks.shape == (68, 2)
    assert np.array_equal(draw_portrait(128, 0).pixels, p.pixels)
