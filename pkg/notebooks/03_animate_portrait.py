"""
Animating a portrait and editing head pose
==========================================

Run after ``01_train_on_synthetic_corpus.py``. Predicted landmarks drive a
Delaunay warp of a drawn portrait; a yaw offset turns the head while the
speaker's own motion continues.
"""

# %%
import numpy as np

from speakanim.content import content_forward
from speakanim.geometry import HeadPose, apply_head_pose, pose_track
from speakanim.renderer import render_animation
from speakanim.speaker import speaker_forward
from speakanim.synth import SpeakerStyle, SynthSpec, draw_portrait, face_template, synthesize_corpus
from speakanim.training import Checkpoint, content_branch_from, speaker_models_from

styles = (SpeakerStyle(3.0, 0.2, 0.2), SpeakerStyle(12.0, 0.7, 1.0))
clip = synthesize_corpus(SynthSpec(n_speakers=2, clips_per_speaker=5, styles=styles), seed=0)[-1]
template = face_template()
content = content_branch_from(Checkpoint.load("content.ckpt"))
gen, _ = speaker_models_from(Checkpoint.load("speaker.ckpt"))

p, _ = content_forward(clip.content, template, content)
y = speaker_forward(clip.content, gen.project(clip.speaker), p, template, gen)

# %%
# Yaw is the outermost Euler angle, so adding 10 degrees shifts the whole track by exactly 10.
turned = apply_head_pose(y, HeadPose([10.0, 0.0, 0.0]))
before = np.array([q.yaw for q in pose_track(y, template)])
after = np.array([q.yaw for q in pose_track(turned, template)])
print("yaw shift per frame: min %.6f max %.6f" % ((after - before).min(), (after - before).max()))

# %%
portrait = draw_portrait(256, seed=0)
paths = render_animation(portrait, turned.with_frames(turned.frames[:50]), "frames",
                         rest_frame=template)
print("wrote", len(paths), "frames to", paths[0].parent)
