"""Landmark evaluation metrics.

Lip metrics (D-LL, D-VL, D-A) compare pose-free sequences and are normalized
per clip by the reference lip width (max distance between mouth corners 48
and 54) or the maximum reference inner-mouth area. Pose metrics (D-L, D-V,
D-Rot, D-Pos) compare sequences with head motion; distances are normalized by
the reference face width (jaw endpoints 0 and 16 of the first frame).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .geometry import (
    DEFAULT_TOPOLOGY,
    INNER_LIP_INDICES,
    LandmarkSequence,
    PartTopology,
    face_width,
    pose_track,
    register_to_template,
)

LIP_PARTS = ("jaw", "outer_lip", "inner_lip")


class MetricUndefined(ValueError):
    pass


@dataclass(frozen=True)
class MetricReport:
    d_ll: float
    d_vl: float
    d_a: float
    d_l: float
    d_v: float
    d_rot: float
    d_pos: float
    lip_width: float = float("nan")
    mouth_area: float = float("nan")
    face_width: float = float("nan")

    METRICS = ("d_ll", "d_vl", "d_a", "d_l", "d_v", "d_rot", "d_pos")

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.METRICS}


def shoelace_area(polygon) -> float:
    """Unsigned area of a closed 2D polygon given as ``(n, >=2)`` vertices."""
    xy = np.asarray(polygon, dtype=np.float64)[:, :2]
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def mouth_areas(seq: LandmarkSequence) -> np.ndarray:
    return np.array([shoelace_area(f[INNER_LIP_INDICES]) for f in seq.frames])


def _check_pair(pred: LandmarkSequence, ref: LandmarkSequence):
    if pred.frames.shape != ref.frames.shape:
        raise ValueError(f"sequence shapes differ: {pred.frames.shape} vs {ref.frames.shape}")


def _mean_dist(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b, axis=-1).mean()) if a.size else 0.0


def lip_metrics(
    pred: LandmarkSequence,
    ref: LandmarkSequence,
    topo: PartTopology = DEFAULT_TOPOLOGY,
) -> tuple[float, float, float]:
    """D-LL, D-VL and D-A for one clip of registered landmarks."""
    _check_pair(pred, ref)
    idx = np.concatenate([topo.parts[name] for name in LIP_PARTS])
    lip_width = float(np.linalg.norm(ref.frames[:, 54] - ref.frames[:, 48], axis=-1).max())
    if lip_width <= 0:
        raise MetricUndefined("reference lip width is zero")
    p, r = pred.frames[:, idx], ref.frames[:, idx]
    d_ll = _mean_dist(p, r) / lip_width
    d_vl = _mean_dist(np.diff(p, axis=0), np.diff(r, axis=0)) / lip_width
    ref_area = mouth_areas(ref)
    max_area = ref_area.max()
    if max_area <= 0:
        raise MetricUndefined("reference mouth area is zero in every frame")
    d_a = float(np.abs(mouth_areas(pred) - ref_area).mean() / max_area)
    return d_ll, d_vl, d_a


def angle_difference(a, b) -> np.ndarray:
    """Absolute difference of angles in degrees, wrapped to [0, 180]."""
    return np.abs((np.asarray(a) - np.asarray(b) + 180.0) % 360.0 - 180.0)


def pose_metrics(pred: LandmarkSequence, ref: LandmarkSequence, template) -> tuple[float, float, float, float]:
    """D-L, D-V, D-Rot (degrees) and D-Pos for one clip with head motion."""
    _check_pair(pred, ref)
    width = face_width(ref.frames[0])
    if width <= 0:
        raise MetricUndefined("reference face width is zero")
    d_l = _mean_dist(pred.frames, ref.frames) / width
    d_v = _mean_dist(np.diff(pred.frames, axis=0), np.diff(ref.frames, axis=0)) / width
    pp, rp = pose_track(pred, template), pose_track(ref, template)
    rot_p = np.array([x.rotation for x in pp])
    rot_r = np.array([x.rotation for x in rp])
    d_rot = float(angle_difference(rot_p, rot_r).mean())
    trans_p = np.array([x.translation for x in pp])
    trans_r = np.array([x.translation for x in rp])
    d_pos = float(np.linalg.norm(trans_p - trans_r, axis=-1).mean())
    return d_l, d_v, d_rot, d_pos


def evaluate_clip(
    pred: LandmarkSequence,
    ref: LandmarkSequence,
    template,
    topo: PartTopology = DEFAULT_TOPOLOGY,
) -> MetricReport:
    """All metrics for sequences with head motion; lip metrics use registered copies."""
    pred_reg, _ = register_to_template(pred, template)
    ref_reg, _ = register_to_template(ref, template)
    lip = lip_metrics(pred_reg, ref_reg, topo)
    pose = pose_metrics(pred, ref, template)
    return MetricReport(
        *lip,
        *pose,
        lip_width=float(np.linalg.norm(ref_reg.frames[:, 54] - ref_reg.frames[:, 48], axis=-1).max()),
        mouth_area=float(mouth_areas(ref_reg).max()),
        face_width=face_width(ref.frames[0]),
    )


def aggregate(reports) -> MetricReport:
    """Mean of each metric over clips; normalizers are not aggregated."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to aggregate")
    return MetricReport(*(float(np.mean([getattr(r, k) for r in reports])) for k in MetricReport.METRICS))


def format_report(per_clip: dict[str, MetricReport]) -> str:
    names = [f.name for f in fields(MetricReport)]
    lines = ["# metrics version=1 fields=" + ",".join(names)]
    for clip_id, rep in per_clip.items():
        d = asdict(rep)
        lines.append(f"clip {clip_id} " + " ".join(f"{k}={d[k]!r}" for k in names))
    agg = asdict(aggregate(per_clip.values()))
    lines.append("aggregate all " + " ".join(f"{k}={agg[k]!r}" for k in names))
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict[str, MetricReport]:
    out = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        kind, name, *kv = line.split()
        vals = {k: float(v) for k, v in (item.split("=", 1) for item in kv)}
        out[name if kind == "clip" else "__aggregate__"] = MetricReport(**vals)
    return out
