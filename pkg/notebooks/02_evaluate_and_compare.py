"""
Metrics, ablations and retrieval baselines
==========================================

Run after ``01_train_on_synthetic_corpus.py``. The full model is compared
with the content branch alone, with a speaker branch fed a static face, and
with copying head motion from another clip.
"""

# %%
import numpy as np

from speakanim.content import content_forward
from speakanim.metrics import aggregate, evaluate_clip
from speakanim.speaker import speaker_forward
from speakanim.synth import SpeakerStyle, SynthSpec, face_template, split_clips, synthesize_corpus
from speakanim.training import Checkpoint, content_branch_from, retrieval_baseline, speaker_models_from

styles = (SpeakerStyle(3.0, 0.2, 0.2), SpeakerStyle(12.0, 0.7, 1.0))
clips = synthesize_corpus(SynthSpec(n_speakers=2, clips_per_speaker=5, styles=styles), seed=0)
train, _, test = split_clips(clips)
template = face_template()
content = content_branch_from(Checkpoint.load("content.ckpt"))
gen, _ = speaker_models_from(Checkpoint.load("speaker.ckpt"))

# %%
rows = {"full": [], "no speaker": [], "no content": [], "retrieve same ID": [], "retrieve random ID": []}
for clip in test:
    p, _ = content_forward(clip.content, clip.neutral, content)
    s = gen.project(clip.speaker)
    static = clip.registered.with_frames(np.repeat(clip.neutral[None], len(clip), axis=0))
    rows["full"].append(evaluate_clip(speaker_forward(clip.content, s, p, clip.neutral, gen), clip.landmarks, template))
    rows["no speaker"].append(evaluate_clip(p, clip.landmarks, template))
    rows["no content"].append(evaluate_clip(speaker_forward(clip.content, s, static, clip.neutral, gen),
                                            clip.landmarks, template))
    for mode in ("same_id", "random_id"):
        name = "retrieve same ID" if mode == "same_id" else "retrieve random ID"
        rows[name].append(evaluate_clip(retrieval_baseline(clip, train, mode, 0, template), clip.landmarks, template))

# %%
print(f"{'method':20s}" + "".join(f"{k:>9s}" for k in ("D-LL", "D-VL", "D-A", "D-L", "D-V", "D-Rot", "D-Pos")))
for name, reports in rows.items():
    agg = aggregate(reports)
    print(f"{name:20s}" + "".join(f"{v:9.4f}" for v in agg.values().values()))
