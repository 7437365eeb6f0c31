"""Clips and the on-disk corpus manifest.

A manifest is a whitespace-separated text table with the header line::

    clip_id speaker_id content speaker landmarks

Paths are relative to the manifest's directory.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import ContentEmbedding, SpeakerEmbedding, load_embedding, save_embedding
from .geometry import HeadPose, LandmarkSequence, load_landmarks, pose_track, register_to_template, save_landmarks

MANIFEST_COLUMNS = ("clip_id", "speaker_id", "content", "speaker", "landmarks")


@dataclass(frozen=True)
class Clip:
    clip_id: str
    speaker_id: int
    content: ContentEmbedding
    speaker: SpeakerEmbedding
    landmarks: LandmarkSequence  # with head motion
    registered: LandmarkSequence  # pose-free
    poses: list[HeadPose] = field(repr=False)
    neutral: np.ndarray = field(repr=False)  # static face q

    def __iter__(self):
        return iter((self.content, self.speaker, self.landmarks))

    def __len__(self) -> int:
        return len(self.content)


def fingerprint(clips) -> str:
    h = hashlib.sha256()
    for c in clips:
        h.update(c.clip_id.encode())
        h.update(str(c.speaker_id).encode())
        h.update(np.ascontiguousarray(c.content.values).tobytes())
        h.update(np.ascontiguousarray(c.speaker.raw).tobytes())
        h.update(np.ascontiguousarray(c.landmarks.frames).tobytes())
    return h.hexdigest()


def save_corpus(clips, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [" ".join(MANIFEST_COLUMNS)]
    for c in clips:
        names = (f"{c.clip_id}.content.arr", f"{c.clip_id}.speaker.arr", f"{c.clip_id}.lmk")
        save_embedding(out / names[0], c.content)
        save_embedding(out / names[1], c.speaker)
        save_landmarks(out / names[2], c.landmarks)
        rows.append(f"{c.clip_id} {c.speaker_id} {names[0]} {names[1]} {names[2]}")
    path = out / "manifest.txt"
    path.write_text("\n".join(rows) + "\n")
    return path


def load_corpus(manifest, template) -> list[Clip]:
    """Read a manifest; registration and pose tracks are computed against ``template``.

    The static face of each clip is its mean registered frame.
    """
    manifest = Path(manifest)
    lines = [ln.split() for ln in manifest.read_text().splitlines() if ln.strip()]
    if not lines or tuple(lines[0]) != MANIFEST_COLUMNS:
        raise ValueError(f"{manifest}: header must be {' '.join(MANIFEST_COLUMNS)!r}")
    clips = []
    for row in lines[1:]:
        if len(row) != len(MANIFEST_COLUMNS):
            raise ValueError(f"{manifest}: malformed row {row}")
        clip_id, sid, cpath, spath, lpath = row
        base = manifest.parent
        landmarks = load_landmarks(base / lpath)
        content = load_embedding(base / cpath, "content")
        if len(content) != len(landmarks):
            raise ValueError(f"{clip_id}: {len(content)} content frames vs {len(landmarks)} landmark frames")
        registered, _ = register_to_template(landmarks, template)
        clips.append(
            Clip(
                clip_id=clip_id,
                speaker_id=int(sid),
                content=content,
                speaker=load_embedding(base / spath, "speaker"),
                landmarks=landmarks,
                registered=registered,
                poses=pose_track(landmarks, template),
                neutral=registered.frames.mean(axis=0),
            )
        )
    return clips
