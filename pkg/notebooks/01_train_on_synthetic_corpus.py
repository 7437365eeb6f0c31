"""
Training both branches on a synthetic two-speaker corpus
========================================================

The corpus generator produces content embeddings, unit-norm speaker
embeddings and 68-point landmark tracks whose head sway depends on the
speaker. We fit the content branch first, then the speaker branch on top
of its frozen predictions.
"""

# %%
import numpy as np

from speakanim.content import ContentConfig
from speakanim.speaker import SpeakerConfig
from speakanim.synth import SpeakerStyle, SynthSpec, split_clips, synthesize_corpus
from speakanim.training import TrainConfig, train_content, train_speaker

# a calm speaker and an animated one
styles = (SpeakerStyle(3.0, 0.2, 0.2), SpeakerStyle(12.0, 0.7, 1.0))
clips = synthesize_corpus(SynthSpec(n_speakers=2, clips_per_speaker=5, styles=styles), seed=0)
train, val, test = split_clips(clips)
print(len(train), "train /", len(val), "val /", len(test), "test clips of", len(clips[0]), "frames")

# %%
# Content branch: per-frame lip and jaw motion on registered landmarks.
content_cfg = ContentConfig(lstm_hidden=64, mlp_hidden=(128, 64))
cres = train_content(train, TrainConfig(learning_rate=1e-3, max_steps=1500, batch_size=32, eval_every=500),
                     content_cfg, val)
for step, loss in cres.val_losses:
    print(f"content step {step:5d}  val L_c {loss:.4f}")

# %%
# Speaker branch: adds head motion and expression on top of the content output.
speaker_cfg = SpeakerConfig(lstm_hidden=64, lstm_layers=1, mlp_hidden=(128, 64),
                            disc_mlp_hidden=(128, 64), tau_prime=64)
sres = train_speaker(train, cres.checkpoint,
                     TrainConfig(learning_rate=1e-3, max_steps=600, batch_size=8, eval_every=200),
                     speaker_cfg, val)
for step, loss in sres.val_losses:
    print(f"speaker step {step:5d}  val L_s {loss:.4f}")
print("last generator / discriminator batch losses:", sres.losses[-1], sres.disc_losses[-1])

# %%
cres.checkpoint.save("content.ckpt")
sres.last.save("speaker.ckpt")
print("saved content.ckpt and speaker.ckpt; mean |y| of first test clip:",
      float(np.abs(test[0].landmarks.frames).mean()))
