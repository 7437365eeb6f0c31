"""Single-image animation by Delaunay-triangulated texture warping.

The portrait's landmarks plus eight fixed border anchors are triangulated
once; every frame moves the landmark vertices and resamples each triangle
from the source through its affine map (bilinear, clamp-to-edge). Pixel
centers sit at integer coordinates ``(x=col, y=row)``.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from scipy.spatial import Delaunay

from .geometry import LandmarkSequence


class TriangulationError(ValueError):
    pass


@dataclass(frozen=True)
class PortraitImage:
    """RGB pixels ``(H, W, 3)`` and 68 landmarks in pixel coordinates."""

    pixels: np.ndarray
    landmarks: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"portrait must be (H, W, 3), got {px.shape}")
        lmk = np.asarray(self.landmarks, dtype=np.float64)
        if lmk.shape[0] != 68 or lmk.shape[1] not in (2, 3):
            raise ValueError(f"portrait landmarks must be (68, 2) or (68, 3), got {lmk.shape}")
        h, w = px.shape[:2]
        xy = lmk[:, :2]
        if np.any(xy < 0) or np.any(xy[:, 0] > w - 1) or np.any(xy[:, 1] > h - 1):
            raise ValueError("portrait landmarks must lie inside the image")
        object.__setattr__(self, "landmarks", lmk)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (n, 2) rest positions
    triangles: np.ndarray  # (m, 3) vertex indices, counter-clockwise in pixel coordinates
    texcoords: np.ndarray  # (n, 2) source-image positions


@dataclass(frozen=True)
class Projection:
    """Orthographic template-to-pixel map: ``pixel = scale * (x, y) + offset``."""

    scale: float
    offset: np.ndarray

    def __call__(self, frames) -> np.ndarray:
        return np.asarray(frames)[..., :2] * self.scale + self.offset

    @classmethod
    def fit(cls, frame, pixels) -> "Projection":
        """Least-squares scale and offset taking ``frame`` (template units) onto ``pixels``."""
        xy = np.asarray(frame, dtype=np.float64)[:, :2]
        px = np.asarray(pixels, dtype=np.float64)[:, :2]
        cx, cp = xy - xy.mean(0), px - px.mean(0)
        scale = float((cx * cp).sum() / (cx * cx).sum())
        return cls(scale, px.mean(0) - scale * xy.mean(0))


def border_anchors(width: int, height: int) -> np.ndarray:
    """Four corners and four edge midpoints of the image."""
    w, h = width - 1, height - 1
    return np.array(
        [[0, 0], [w / 2, 0], [w, 0], [0, h / 2], [w, h / 2], [0, h], [w / 2, h], [w, h]], dtype=np.float64
    )


# --------------------------------------------------------------------------
# Triangulation


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def incircle(a, b, c, d) -> float:
    """Positive when ``d`` lies inside the circumcircle of the counter-clockwise triangle ``abc``."""
    m = np.array([[p[0] - d[0], p[1] - d[1], (p[0] - d[0]) ** 2 + (p[1] - d[1]) ** 2] for p in (a, b, c)])
    return float(np.linalg.det(m))


def _legalize(pts: np.ndarray, tris: list[list[int]], tol: float) -> list[list[int]]:
    """Edge-flip to a Delaunay triangulation; cocircular ties keep the diagonal at the lowest index."""
    for _ in range(50 * len(tris) + 10):
        edges: dict[tuple[int, int], list[tuple[int, int]]] = {}
        for k, t in enumerate(tris):
            for j in range(3):
                a, b = t[j], t[(j + 1) % 3]
                edges.setdefault((min(a, b), max(a, b)), []).append((k, t[(j + 2) % 3]))
        flipped = False
        for (a, b), adj in sorted(edges.items()):
            if len(adj) != 2:
                continue
            (k1, c), (k2, d) = adj
            t1 = tris[k1]
            i = t1.index(c)
            p, q = t1[(i + 1) % 3], t1[(i + 2) % 3]  # t1 = (c, p, q) counter-clockwise
            val = incircle(pts[c], pts[p], pts[q], pts[d])
            if val > tol:
                flip = True
            elif val >= -tol:
                flip = min(c, d) < min(a, b)
            else:
                flip = False
            if flip and _orient(pts[c], pts[p], pts[d]) > 0 and _orient(pts[c], pts[d], pts[q]) > 0:
                tris[k1] = [c, p, d]
                tris[k2] = [c, d, q]
                flipped = True
                break
        if not flipped:
            return tris
    raise TriangulationError("edge flipping did not converge")


def triangulate(points) -> TriangleMesh:
    """Delaunay triangulation with deterministic tie-breaking.

    Points are ranked lexicographically by ``(x, y)``; among cocircular
    configurations the diagonal touching the lowest-ranked point wins, so the
    triangle set does not depend on input order.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise TriangulationError(f"need at least 3 two-dimensional points, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise TriangulationError("points must be finite")
    centered = pts - pts.mean(0)
    scale = float(np.abs(centered).max())
    if scale == 0 or np.linalg.matrix_rank(centered / scale, tol=1e-9) < 2:
        raise TriangulationError("points are collinear")
    if len(np.unique(pts, axis=0)) != len(pts):
        raise TriangulationError("points must be distinct")
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    ranked = pts[order]
    tri = Delaunay(ranked, qhull_options="Qbb Qc Qz Q12")
    tris = []
    for s in tri.simplices:
        a, b, c = (int(v) for v in s)
        tris.append([a, b, c] if _orient(ranked[a], ranked[b], ranked[c]) > 0 else [a, c, b])
    tris = _legalize(ranked, tris, tol=1e-10 * scale**4)
    canon = []
    for t in tris:
        k = int(np.argmin(t))
        canon.append(tuple(int(order[v]) for v in t[k:] + t[:k]))
    faces = np.array(sorted(canon), dtype=np.int64)
    return TriangleMesh(vertices=pts.copy(), triangles=faces, texcoords=pts.copy())


def _signed_areas(verts: np.ndarray, tris: np.ndarray) -> np.ndarray:
    a, b, c = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def fold_overs(mesh: TriangleMesh, target_vertices) -> int:
    """Number of triangles whose orientation flips between rest and target."""
    rest = _signed_areas(mesh.vertices, mesh.triangles)
    moved = _signed_areas(np.asarray(target_vertices, dtype=np.float64), mesh.triangles)
    return int(np.sum(np.sign(rest) * np.sign(moved) < 0))


# --------------------------------------------------------------------------
# Warping


def bilinear_sample(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample ``image`` at float pixel positions with clamp-to-edge addressing."""
    h, w = image.shape[:2]
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), w - 2) if w > 1 else np.zeros_like(x, dtype=np.int64)
    y0 = np.minimum(np.floor(y).astype(np.int64), h - 2) if h > 1 else np.zeros_like(y, dtype=np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    img = image.astype(np.float64)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def triangle_index_map(vertices: np.ndarray, triangles: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Per-pixel index of the covering triangle (-1 outside); later triangles win on shared edges."""
    h, w = shape
    ids = np.full((h, w), -1, dtype=np.int64)
    for k, (i, j, l) in enumerate(triangles):
        a, b, c = vertices[i], vertices[j], vertices[l]
        det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(det) < 1e-12:
            continue
        lo = np.maximum(np.floor(np.minimum(np.minimum(a, b), c)), 0).astype(int)
        hi = np.minimum(np.ceil(np.maximum(np.maximum(a, b), c)), [w - 1, h - 1]).astype(int)
        if np.any(hi < lo):
            continue
        ys, xs = np.mgrid[lo[1]:hi[1] + 1, lo[0]:hi[0] + 1]
        px, py = xs - a[0], ys - a[1]
        u = (px * (c[1] - a[1]) - py * (c[0] - a[0])) / det
        v = (py * (b[0] - a[0]) - px * (b[1] - a[1])) / det
        eps = 1e-9
        inside = (u >= -eps) & (v >= -eps) & (u + v <= 1 + eps)
        ids[ys[inside], xs[inside]] = k
    return ids


def _affine_to_source(src_tri: np.ndarray, dst_tri: np.ndarray) -> np.ndarray:
    """2x3 matrix taking target-triangle points to source-triangle points."""
    dst = np.c_[dst_tri, np.ones(3)]
    return np.linalg.solve(dst, src_tri).T


def warp_frame(src, mesh: TriangleMesh, target_vertices) -> np.ndarray:
    """Warp ``src`` (a :class:`PortraitImage` or pixel array) so mesh vertices land on ``target_vertices``.

    Pixels not covered by any target triangle keep the source value.
    """
    image = src.pixels if isinstance(src, PortraitImage) else np.asarray(src)
    target = np.asarray(target_vertices, dtype=np.float64)
    if target.shape != mesh.vertices.shape:
        raise ValueError(f"target has {target.shape} vertices, mesh has {mesh.vertices.shape}")
    ids = triangle_index_map(target, mesh.triangles, image.shape[:2])
    mats = np.zeros((len(mesh.triangles), 2, 3))
    for k, t in enumerate(mesh.triangles):
        try:
            mats[k] = _affine_to_source(mesh.texcoords[t], target[t])
        except np.linalg.LinAlgError:
            pass
    out = image.copy()
    ys, xs = np.nonzero(ids >= 0)
    m = mats[ids[ys, xs]]
    sx = m[:, 0, 0] * xs + m[:, 0, 1] * ys + m[:, 0, 2]
    sy = m[:, 1, 0] * xs + m[:, 1, 1] * ys + m[:, 1, 2]
    vals = bilinear_sample(image, sx, sy)
    if np.issubdtype(image.dtype, np.integer):
        info = np.iinfo(image.dtype)
        vals = np.clip(np.rint(vals), info.min, info.max)
    out[ys, xs] = vals.astype(image.dtype)
    return out


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    return float("inf") if mse == 0 else 10.0 * np.log10(peak**2 / mse)


def portrait_mesh(src: PortraitImage) -> TriangleMesh:
    pts = np.vstack([src.landmarks[:, :2], border_anchors(src.width, src.height)])
    return triangulate(pts)


def render_animation(
    src: PortraitImage,
    seq: LandmarkSequence,
    out_dir,
    projection: Projection | None = None,
    rest_frame=None,
    audio=None,
) -> list[Path]:
    """Write ``frame_%06d.png`` for every frame plus ``manifest.json``.

    Landmarks go to pixels by ``projection`` (z dropped); by default it is
    fitted from ``rest_frame`` (or the first frame) onto the portrait's landmarks.
    ``audio``, if given, is copied unchanged next to the frames.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    if projection is None:
        projection = Projection.fit(seq.frames[0] if rest_frame is None else rest_frame, src.landmarks)
    mesh = portrait_mesh(src)
    anchors = border_anchors(src.width, src.height)
    paths, folds = [], []
    for t, frame in enumerate(seq.frames):
        target = np.vstack([projection(frame), anchors])
        folds.append(fold_overs(mesh, target))
        img = warp_frame(src, mesh, target)
        path = out / f"frame_{t:06d}.png"
        if not cv2.imwrite(str(path), cv2.cvtColor(np.ascontiguousarray(img), cv2.COLOR_RGB2BGR)):
            raise OSError(f"failed to write {path}")
        paths.append(path)
    manifest = {
        "fps": seq.fps,
        "n_frames": len(seq),
        "width": src.width,
        "height": src.height,
        "fold_overs": folds,
        "projection": {"scale": projection.scale, "offset": [float(v) for v in projection.offset]},
    }
    if audio is not None:
        dst = out / Path(audio).name
        shutil.copyfile(audio, dst)
        manifest["audio"] = dst.name
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return paths


def read_frame(path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise OSError(f"cannot read image {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)
