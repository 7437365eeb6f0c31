"""68-point facial landmark geometry.

Landmark frames are plain ``(68, 3)`` float arrays (x right, y down, z toward
the camera). Sequences carry a frame rate. Everything here is a pure function
of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

N_POINTS = 68
CANONICAL_FPS = 62.5

# Eye corners, nose bridge and base, jaw endpoints: barely deformed by speech.
STABLE_INDICES = np.array([0, 16, 27, 28, 29, 30, 31, 32, 33, 34, 35, 36, 39, 42, 45])

JAW_LIP_INDICES = np.r_[0:17, 48:68]
INNER_LIP_INDICES = np.arange(60, 68)


class TopologyError(ValueError):
    pass


class RegistrationError(ValueError):
    pass


class PoseError(ValueError):
    pass


def as_frame(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape != (N_POINTS, 3):
        raise ValueError(f"landmark frame must have shape (68, 3), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("landmark frame contains non-finite coordinates")
    return pts


@dataclass(frozen=True)
class LandmarkSequence:
    """Per-frame 68x3 landmark positions sampled at ``fps``."""

    frames: np.ndarray
    fps: float = CANONICAL_FPS

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim == 2:
            frames = frames[None]
        if frames.ndim != 3 or frames.shape[1:] != (N_POINTS, 3):
            raise ValueError(f"frames must have shape (T, 68, 3), got {frames.shape}")
        if len(frames) == 0:
            raise ValueError("landmark sequence must be nonempty")
        if not np.all(np.isfinite(frames)):
            raise ValueError("landmark sequence contains non-finite coordinates")
        if not (np.isfinite(self.fps) and self.fps > 0):
            raise ValueError(f"fps must be positive, got {self.fps}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "fps", float(self.fps))

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, t) -> np.ndarray:
        return self.frames[t]

    @property
    def duration(self) -> float:
        return (len(self) - 1) / self.fps

    def with_frames(self, frames) -> "LandmarkSequence":
        return LandmarkSequence(frames, self.fps)


# --------------------------------------------------------------------------
# Facial part topology

_PARTS = (
    ("jaw", range(0, 17), False),
    ("right_brow", range(17, 22), False),
    ("left_brow", range(22, 27), False),
    ("nose", range(27, 36), False),
    ("right_eye", range(36, 42), True),
    ("left_eye", range(42, 48), True),
    ("outer_lip", range(48, 60), True),
    ("inner_lip", range(60, 68), True),
)


@dataclass(frozen=True)
class PartTopology:
    """Disjoint facial parts, each an open chain or a closed loop."""

    parts: dict[str, tuple[int, ...]]
    closed: dict[str, bool]
    neighbors: dict[int, tuple[int, ...]] = field(init=False)

    def __post_init__(self):
        seen: set[int] = set()
        nbrs: dict[int, tuple[int, ...]] = {}
        for name, idx in self.parts.items():
            if seen.intersection(idx):
                raise TopologyError(f"part {name!r} overlaps another part")
            seen.update(idx)
            n = len(idx)
            for k, i in enumerate(idx):
                adj = []
                if k > 0 or (self.closed[name] and n > 2):
                    adj.append(idx[k - 1])
                if k < n - 1 or (self.closed[name] and n > 2):
                    adj.append(idx[(k + 1) % n])
                nbrs[i] = tuple(dict.fromkeys(adj))
        if not seen <= set(range(N_POINTS)):
            raise TopologyError("part indices must lie in 0..67")
        object.__setattr__(self, "neighbors", nbrs)

    @classmethod
    def default(cls) -> "PartTopology":
        return cls(
            {name: tuple(r) for name, r, _ in _PARTS},
            {name: closed for name, _, closed in _PARTS},
        )

    def edges(self) -> list[tuple[int, int]]:
        return sorted({(min(i, j), max(i, j)) for i, js in self.neighbors.items() for j in js})

    def laplacian_matrix(self) -> np.ndarray:
        """Dense ``(68, 68)`` operator ``I - D^-1 W`` over the part graph."""
        missing = [i for i in range(N_POINTS) if not self.neighbors.get(i)]
        if missing:
            raise TopologyError(f"landmarks without neighbors: {missing}")
        mat = np.eye(N_POINTS)
        for i, js in self.neighbors.items():
            mat[i, list(js)] -= 1.0 / len(js)
        return mat


DEFAULT_TOPOLOGY = PartTopology.default()


def laplacian_coords(frame, topo: PartTopology = DEFAULT_TOPOLOGY) -> np.ndarray:
    """Offset of each landmark from the mean of its in-part neighbors.

    Accepts a single ``(68, 3)`` frame or a ``(T, 68, 3)`` stack.
    """
    pts = np.asarray(frame, dtype=np.float64)
    return np.einsum("ij,...jk->...ik", topo.laplacian_matrix(), pts)


# --------------------------------------------------------------------------
# Affine registration


@dataclass(frozen=True)
class AffineTransform:
    linear: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(3), np.zeros(3))

    def __call__(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.linear.T + self.offset

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.linear))

    def inverse(self) -> "AffineTransform":
        inv = np.linalg.inv(self.linear)
        return AffineTransform(inv, -inv @ self.offset)

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """``self ∘ other``: apply ``other`` first."""
        return AffineTransform(self.linear @ other.linear, self.linear @ other.offset + self.offset)


def _check_spread(pts: np.ndarray, tol: float, exc: type[Exception]):
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] == 0 or sv[-1] / sv[0] < tol:
        raise exc(f"stable landmarks are degenerate (singular values {sv})")


def fit_affine(src, dst, tol: float = 1e-6) -> AffineTransform:
    """Least-squares affine map taking ``src`` points onto ``dst`` points."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    _check_spread(src, tol, RegistrationError)
    design = np.hstack([src, np.ones((len(src), 1))])
    sol, *_ = np.linalg.lstsq(design, dst, rcond=None)
    return AffineTransform(sol[:3].T, sol[3])


def register_to_template(
    seq: LandmarkSequence,
    template,
    per_frame: bool = True,
    indices=STABLE_INDICES,
) -> tuple[LandmarkSequence, list[AffineTransform]]:
    """Affinely map each frame's stable landmarks onto the template.

    With ``per_frame=False`` a single transform is fitted over the whole clip.
    Returns the registered sequence and one transform per frame.
    """
    template = as_frame(template)
    target = template[indices]
    if per_frame:
        transforms = [fit_affine(f[indices], target) for f in seq.frames]
    else:
        src = seq.frames[:, indices].reshape(-1, 3)
        shared = fit_affine(src, np.tile(target, (len(seq), 1)))
        transforms = [shared] * len(seq)
    out = np.stack([tr(f) for tr, f in zip(transforms, seq.frames)])
    return seq.with_frames(out), transforms


# --------------------------------------------------------------------------
# Head pose

EULER_ORDER = "YXZ"  # intrinsic yaw (about y), then pitch (x), then roll (z)


@dataclass(frozen=True)
class HeadPose:
    """Euler angles in degrees (yaw, pitch, roll) and a translation in face widths."""

    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(rot > -180.0) and np.all(rot <= 180.0)):
            raise ValueError(f"pose angles must lie in (-180, 180], got {rot}")
        if not np.all(np.isfinite(trans)):
            raise ValueError("pose translation must be finite")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @property
    def yaw(self) -> float:
        return float(self.rotation[0])

    @property
    def pitch(self) -> float:
        return float(self.rotation[1])

    @property
    def roll(self) -> float:
        return float(self.rotation[2])

    def matrix(self) -> np.ndarray:
        return Rotation.from_euler(EULER_ORDER, self.rotation, degrees=True).as_matrix()


def face_width(frame) -> float:
    frame = np.asarray(frame)
    return float(np.linalg.norm(frame[16] - frame[0]))


def rigid_fit(src, dst) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonal Procrustes: rotation ``R`` and translation with ``R src + t ≈ dst``."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    u, _, vt = np.linalg.svd((dst - cd).T @ (src - cs))
    d = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag([1.0, 1.0, d]) @ vt
    return rot, cd - rot @ cs


def decompose_head_pose(frame, template, indices=STABLE_INDICES) -> HeadPose:
    """Rigid pose taking the template's stable landmarks onto the frame's."""
    frame = as_frame(frame)
    template = as_frame(template)
    _check_spread(template[indices], 1e-6, PoseError)
    _check_spread(frame[indices], 1e-6, PoseError)
    rot, _ = rigid_fit(template[indices], frame[indices])
    angles = Rotation.from_matrix(rot).as_euler(EULER_ORDER, degrees=True)
    angles = np.where(angles <= -180.0, angles + 360.0, angles)
    width = face_width(template)
    if width == 0:
        raise PoseError("template face width is zero")
    shift = frame[indices].mean(axis=0) - template[indices].mean(axis=0)
    return HeadPose(angles, shift / width)


def apply_head_pose(
    seq: LandmarkSequence,
    pose,
    indices=STABLE_INDICES,
) -> LandmarkSequence:
    """Rigidly move every frame about its stable-landmark centroid.

    ``pose`` is one :class:`HeadPose` or a sequence with one pose per frame.
    Translations are scaled by the face width of the first frame.
    """
    poses = [pose] if isinstance(pose, HeadPose) else list(pose)
    if len(poses) not in (1, len(seq)):
        raise ValueError(f"got {len(poses)} poses for {len(seq)} frames")
    if len(poses) == 1:
        poses = poses * len(seq)
    width = face_width(seq.frames[0])
    out = np.empty_like(seq.frames)
    for t, (f, p) in enumerate(zip(seq.frames, poses)):
        center = f[indices].mean(axis=0)
        out[t] = (f - center) @ p.matrix().T + center + p.translation * width
    return seq.with_frames(out)


def pose_track(seq: LandmarkSequence, template) -> list[HeadPose]:
    return [decompose_head_pose(f, template) for f in seq.frames]


# --------------------------------------------------------------------------
# Temporal resampling


def resample(seq: LandmarkSequence, target_fps: float) -> LandmarkSequence:
    """Linear-in-time resampling; endpoints clamp, first frame is kept."""
    if not target_fps > 0:
        raise ValueError(f"target_fps must be positive, got {target_fps}")
    if target_fps == seq.fps:
        return seq
    n_out = int(np.floor(seq.duration * target_fps + 1e-9)) + 1
    src_t = np.arange(len(seq)) / seq.fps
    dst_t = np.arange(n_out) / target_fps
    flat = seq.frames.reshape(len(seq), -1)
    if len(seq) == 1:
        out = np.repeat(flat, n_out, axis=0)
    else:
        pos = np.clip(np.searchsorted(src_t, dst_t, side="right") - 1, 0, len(seq) - 2)
        w = np.clip((dst_t - src_t[pos]) * seq.fps, 0.0, 1.0)[:, None]
        out = flat[pos] * (1.0 - w) + flat[pos + 1] * w
    return LandmarkSequence(out.reshape(n_out, N_POINTS, 3), target_fps)


# --------------------------------------------------------------------------
# Landmark text files

_LMK_MAGIC = "landmarks"


def save_landmarks(path, seq: LandmarkSequence) -> None:
    lines = [f"# {_LMK_MAGIC} version=1 fps={seq.fps!r} n_frames={len(seq)} n_points={N_POINTS}"]
    for f in seq.frames:
        lines.append(" ".join(repr(float(v)) for v in f.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_header(line: str) -> dict[str, str]:
    tokens = line.lstrip("#").split()
    if not tokens or tokens[0] != _LMK_MAGIC:
        raise ValueError(f"not a landmark file header: {line!r}")
    fields = {}
    for tok in tokens[1:]:
        key, sep, value = tok.partition("=")
        if not sep:
            raise ValueError(f"malformed header field {tok!r}")
        fields[key] = value
    for key in ("version", "fps", "n_frames", "n_points"):
        if key not in fields:
            raise ValueError(f"landmark header missing field {key!r}")
    return fields


def load_landmarks(path) -> LandmarkSequence:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty landmark file")
    hdr = _parse_header(lines[0])
    if hdr["version"] != "1":
        raise ValueError(f"unsupported landmark file version {hdr['version']}")
    if int(hdr["n_points"]) != N_POINTS:
        raise ValueError(f"n_points must be 68, got {hdr['n_points']}")
    n_frames = int(hdr["n_frames"])
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != n_frames:
        raise ValueError(f"header declares {n_frames} frames, file has {len(rows)}")
    data = np.array([[float(v) for v in row.split()] for row in rows], dtype=np.float64)
    if data.shape[1] != N_POINTS * 3:
        raise ValueError(f"each frame line needs 204 values, got {data.shape[1]}")
    return LandmarkSequence(data.reshape(n_frames, N_POINTS, 3), float(hdr["fps"]))


def load_template(path) -> np.ndarray:
    seq = load_landmarks(path)
    if len(seq) != 1:
        raise ValueError(f"template file must hold exactly one frame, got {len(seq)}")
    return np.array(seq.frames[0])
