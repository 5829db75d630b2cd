"""Homography estimation and automatic label generation.

Future hand detections and contact candidates are projected into the last
observation frame through a chain of frame-to-frame homographies. Frame 0 is
the last observation frame; ``chain[k]`` maps frame ``k + 1`` into frame ``k``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .config import LabelConfig
from .errors import (
    DegenerateConfiguration,
    EmptyTrajectory,
    NoCandidates,
    OutOfRange,
    PointAtInfinity,
    SchemaError,
    ShapeMismatch,
)

DEPTH_EPS = 1e-12
MIN_TRIANGLE_AREA = 1e-6
RANK_TOL = 1e-10
SIDES = ("L", "R")


@dataclass
class HandTrajectory:
    """Future left/right hand locations in normalized last-frame coordinates.

    ``points`` has shape (F, 2, 2) indexed [step, side, xy] with side 0 = left,
    ``visible`` has shape (F, 2).
    """

    points: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2, 2)
        self.visible = np.asarray(self.visible, dtype=bool).reshape(-1, 2)
        if self.points.shape[0] != self.visible.shape[0] or self.horizon < 1:
            raise ShapeMismatch("points and visible must share a horizon >= 1")

    @property
    def horizon(self) -> int:
        return self.points.shape[0]

    @property
    def left(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def right(self) -> np.ndarray:
        return self.points[:, 1]

    def to_dict(self) -> dict:
        return {
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "visible": self.visible.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HandTrajectory":
        pts = np.stack([np.asarray(d["left"], float), np.asarray(d["right"], float)], axis=1)
        return cls(pts, np.asarray(d["visible"], bool))


@dataclass
class FrameDetections:
    frame_index: int
    hand_boxes: dict[str, tuple[float, float, float, float]] = field(default_factory=dict)
    object_boxes: list[tuple[float, float, float, float]] = field(default_factory=list)
    contact_candidates: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        for side, box in self.hand_boxes.items():
            if side not in SIDES:
                raise SchemaError(f"unknown hand side {side!r}")
            _check_box(box)
        if len(self.object_boxes) > 2:
            raise SchemaError("at most two object boxes per frame")
        for box in self.object_boxes:
            _check_box(box)

    def to_dict(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "hand_boxes": [{"side": s, "box": list(b)} for s, b in sorted(self.hand_boxes.items())],
            "object_boxes": [list(b) for b in self.object_boxes],
            "contact_candidates": [list(p) for p in self.contact_candidates],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrameDetections":
        hands: dict[str, tuple] = {}
        for entry in d.get("hand_boxes", []):
            side = entry["side"]
            if side in hands:
                raise SchemaError(f"duplicate {side} hand box in frame {d.get('frame_index')}")
            hands[side] = tuple(float(v) for v in entry["box"])
        return cls(
            frame_index=int(d["frame_index"]),
            hand_boxes=hands,
            object_boxes=[tuple(float(v) for v in b) for b in d.get("object_boxes", [])],
            contact_candidates=[tuple(float(v) for v in p) for p in d.get("contact_candidates", [])],
        )


def _check_box(box):
    if len(box) != 4:
        raise SchemaError(f"box must have 4 values, got {box!r}")
    x1, y1, x2, y2 = box
    if not (x1 < x2 and y1 < y2):
        raise SchemaError(f"box must satisfy x1<x2, y1<y2, got {box!r}")


def box_center(box) -> np.ndarray:
    x1, y1, x2, y2 = box
    return np.array([(x1 + x2) / 2.0, (y1 + y2) / 2.0])


# --- homographies -----------------------------------------------------------


def translation(tx: float, ty: float) -> np.ndarray:
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def normalize_homography(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if abs(m[2, 2]) < DEPTH_EPS:
        raise DegenerateConfiguration("homography has m[2][2] == 0 and cannot be normalized")
    m = m / m[2, 2]
    if abs(np.linalg.det(m)) <= 1e-12:
        raise DegenerateConfiguration("homography is singular")
    return m


def project_points(h: np.ndarray, pts) -> np.ndarray:
    """Apply ``h`` to an (n, 2) array of points with perspective division."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    hom = pts @ h[:, :2].T + h[:, 2]
    depth = hom[:, 2]
    if np.any(np.abs(depth) < DEPTH_EPS):
        raise PointAtInfinity("point maps to the line at infinity")
    return hom[:, :2] / depth[:, None]


def project_point(h: np.ndarray, p) -> np.ndarray:
    return project_points(h, [p])[0]


def reprojection_errors(h: np.ndarray, src, dst) -> np.ndarray:
    src = np.asarray(src, float)
    hom = src @ h[:, :2].T + h[:, 2]
    depth = hom[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.linalg.norm(hom[:, :2] / depth[:, None] - np.asarray(dst, float), axis=1)
    err[np.abs(depth) < DEPTH_EPS] = np.inf
    return np.nan_to_num(err, nan=np.inf)


def compose_chain(hs: Sequence[np.ndarray]) -> np.ndarray:
    """Compose ``hs[0] @ hs[1] @ ... @ hs[-1]``: maps frame n into frame 0."""
    if len(hs) == 0:
        raise ValueError("empty homography chain")
    out = np.eye(3)
    for h in hs:
        out = out @ np.asarray(h, float)
    return normalize_homography(out)


def _hartley(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Similarity transforms moving each point set's centroid to the origin with
    mean distance sqrt(2). Works on (..., n, 2) batches."""
    c = pts.mean(axis=-2, keepdims=True)
    d = np.linalg.norm(pts - c, axis=-1).mean(axis=-1)
    s = np.sqrt(2.0) / np.maximum(d, 1e-300)
    t = np.zeros(pts.shape[:-2] + (3, 3))
    t[..., 0, 0] = s
    t[..., 1, 1] = s
    t[..., 0, 2] = -s * c[..., 0, 0]
    t[..., 1, 2] = -s * c[..., 0, 1]
    t[..., 2, 2] = 1.0
    normed = (pts - c) * s[..., None, None]
    return normed, t


def _design_matrix(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    x, y = src[..., 0], src[..., 1]
    u, v = dst[..., 0], dst[..., 1]
    zero, one = np.zeros_like(x), np.ones_like(x)
    r1 = np.stack([-x, -y, -one, zero, zero, zero, u * x, u * y, u], axis=-1)
    r2 = np.stack([zero, zero, zero, -x, -y, -one, v * x, v * y, v], axis=-1)
    a = np.stack([r1, r2], axis=-2)
    return a.reshape(a.shape[:-3] + (-1, 9))


def _solve_dlt(src: np.ndarray, dst: np.ndarray):
    """Batched normalized DLT. Returns (H, ok) with H of shape (..., 3, 3)."""
    src_n, t1 = _hartley(src)
    dst_n, t2 = _hartley(dst)
    a = _design_matrix(src_n, dst_n)
    _, s, vt = np.linalg.svd(a, full_matrices=True)
    h = vt[..., -1, :].reshape(a.shape[:-2] + (3, 3))
    ok = s[..., 7] > RANK_TOL * s[..., 0]
    m = np.linalg.inv(t2) @ h @ t1
    return m, ok


def _solve_minimal(src: np.ndarray, dst: np.ndarray):
    """Batched exact 4-point fits. The null vector of each 8x9 design matrix
    is given by its signed 8x8 minors, which is cheaper than an SVD."""
    src_n, t1 = _hartley(src)
    dst_n, t2 = _hartley(dst)
    a = _design_matrix(src_n, dst_n)
    cols = np.arange(9)
    minors = np.stack([np.linalg.det(a[..., cols != i]) for i in range(9)], axis=-1)
    h = minors * np.where(cols % 2 == 0, 1.0, -1.0)
    # Hadamard's bound keeps the ratio in [0, 1]; near zero means rank < 8
    bound = np.prod(np.linalg.norm(a, axis=-1), axis=-1)
    ok = np.linalg.norm(h, axis=-1) > RANK_TOL * bound
    m = np.linalg.inv(t2) @ h.reshape(h.shape[:-1] + (3, 3)) @ t1
    return m, ok


def _min_triangle_area(pts: np.ndarray) -> np.ndarray:
    areas = []
    for i, j, k in itertools.combinations(range(4), 3):
        a, b, c = pts[..., i, :], pts[..., j, :], pts[..., k, :]
        cross = (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (
            c[..., 0] - a[..., 0]
        )
        areas.append(0.5 * np.abs(cross))
    return np.min(np.stack(areas, axis=-1), axis=-1)


def estimate_homography(src, dst) -> np.ndarray:
    """Least-squares DLT homography mapping ``src`` onto ``dst``."""
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ShapeMismatch(f"correspondence shapes differ: {src.shape} vs {dst.shape}")
    if len(src) < 4:
        raise DegenerateConfiguration(f"need at least 4 correspondences, got {len(src)}")
    if not (np.isfinite(src).all() and np.isfinite(dst).all()):
        raise ValueError("correspondences must be finite")
    if len(src) == 4 and min(_min_triangle_area(src), _min_triangle_area(dst)) < MIN_TRIANGLE_AREA:
        raise DegenerateConfiguration("three of the four points are collinear")
    m, ok = _solve_dlt(src, dst)
    if not ok:
        raise DegenerateConfiguration("design matrix is rank deficient")
    return normalize_homography(m)


def ransac_homography(
    src,
    dst,
    threshold_px: float = 3.0,
    iterations: int = 2000,
    seed: int = 0,
    chunk: int = 64,
    max_chunk: int = 512,
) -> tuple[np.ndarray, np.ndarray]:
    """Robust homography by 4-point RANSAC followed by a refit on the inliers.

    The best hypothesis has the most inliers; ties go to the lower mean inlier
    error, then to the earliest draw. Draws are evaluated in vectorized chunks
    of growing size; once a hypothesis explains every point, later draws cannot change the
    inlier set and the loop stops.
    """
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    n = len(src)
    if src.shape != dst.shape:
        raise ShapeMismatch("src and dst differ in shape")
    if n < 4:
        raise DegenerateConfiguration(f"need at least 4 correspondences, got {n}")
    if threshold_px <= 0:
        raise ValueError("threshold_px must be positive")
    rng = np.random.default_rng(seed)
    best = None  # (count, mean_err, H, mask)
    done = 0
    while done < iterations:
        m = min(chunk, iterations - done)
        chunk = min(2 * chunk, max_chunk)
        idx = np.argsort(rng.random((m, n)), axis=1)[:, :4]
        done += m
        s4, d4 = src[idx], dst[idx]
        keep = np.minimum(_min_triangle_area(s4), _min_triangle_area(d4)) >= MIN_TRIANGLE_AREA
        if not keep.any():
            continue
        hs, ok = _solve_minimal(s4[keep], d4[keep])
        hs, ok = hs[ok], ok[ok]
        if len(hs) == 0:
            continue
        hom = np.einsum("bij,nj->bni", hs[:, :, :2], src) + hs[:, None, :, 2]
        depth = hom[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            err = np.linalg.norm(hom[..., :2] / depth[..., None] - dst[None], axis=-1)
        err = np.where(np.abs(depth) < DEPTH_EPS, np.inf, np.nan_to_num(err, nan=np.inf))
        inl = err < threshold_px
        counts = inl.sum(axis=1)
        mean_err = np.where(counts > 0, np.where(inl, err, 0.0).sum(axis=1) / np.maximum(counts, 1), np.inf)
        order = np.lexsort((np.arange(len(hs)), mean_err, -counts))
        j = order[0]
        cand = (int(counts[j]), float(mean_err[j]))
        if best is None or cand[0] > best[0] or (cand[0] == best[0] and cand[1] < best[1]):
            best = (cand[0], cand[1], hs[j], inl[j])
        if best[0] == n:
            break
    if best is None or best[0] < 4:
        raise DegenerateConfiguration(f"no valid 4-point sample in {iterations} draws")
    mask = best[3]
    try:
        h = estimate_homography(src[mask], dst[mask])
    except DegenerateConfiguration:
        h = normalize_homography(best[2])
    return h, mask


# --- interpolation ----------------------------------------------------------


def interpolate_trajectory(keyed: Sequence[tuple[float, Sequence[float]]], query_times) -> np.ndarray:
    """Cubic Hermite interpolation with Catmull-Rom tangents.

    Interior tangents are central differences over the neighbouring keys,
    end tangents are one-sided differences.
    """
    if len(keyed) < 2:
        raise ValueError("need at least two keyed points")
    t = np.array([k[0] for k in keyed], float)
    p = np.array([k[1] for k in keyed], float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("key times must be strictly increasing")
    q = np.atleast_1d(np.asarray(query_times, float))
    if np.any(q < t[0] - 1e-12) or np.any(q > t[-1] + 1e-12):
        raise OutOfRange(f"query times must lie in [{t[0]}, {t[-1]}]")
    tangents = np.empty_like(p)
    tangents[0] = (p[1] - p[0]) / (t[1] - t[0])
    tangents[-1] = (p[-1] - p[-2]) / (t[-1] - t[-2])
    tangents[1:-1] = (p[2:] - p[:-2]) / (t[2:] - t[:-2])[:, None]
    spline = CubicHermiteSpline(t, p, tangents, axis=0)
    out = spline(np.clip(q, t[0], t[-1]))
    # exact at the keys
    hit = np.searchsorted(t, q)
    for i, (qi, hi) in enumerate(zip(q, hit)):
        if hi < len(t) and t[hi] == qi:
            out[i] = p[hi]
    return out


def _fill_side(keys: list[tuple[float, np.ndarray]], times: np.ndarray) -> np.ndarray:
    """Evaluate a side's keyed track at ``times``; outside the keyed span the
    nearest key is held."""
    kt = np.array([k[0] for k in keys])
    kp = np.array([k[1] for k in keys])
    out = np.empty((len(times), 2))
    before = times < kt[0]
    after = times > kt[-1]
    out[before] = kp[0]
    out[after] = kp[-1]
    inside = ~(before | after)
    if inside.any():
        if len(keys) == 1:
            out[inside] = kp[0]
        else:
            out[inside] = interpolate_trajectory(keys, times[inside])
    return out


def chain_prefixes(chain: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Cumulative maps from frame k (k = 1..n) into frame 0."""
    out, acc = [], np.eye(3)
    for h in chain:
        acc = acc @ np.asarray(h, float)
        out.append(acc / acc[2, 2])
    return out


def generate_trajectory_labels(
    future: Sequence[FrameDetections],
    chain: Sequence[np.ndarray],
    frame_size: tuple[float, float],
    config: LabelConfig | None = None,
) -> HandTrajectory:
    """Project future hand box centers into the last observation frame.

    ``future[k]`` is the frame reached by ``chain[:k + 1]``; its ``frame_index``
    counts dense-rate frames after the last observation frame. Gaps are filled
    on the dense grid by Hermite interpolation and the result is subsampled to
    the label rate. A side without any detection is returned invisible; if
    neither side has a detection ``EmptyTrajectory`` is raised.
    """
    cfg = config or LabelConfig()
    if len(chain) != len(future):
        raise ShapeMismatch(f"chain has {len(chain)} homographies for {len(future)} future frames")
    idx = np.array([f.frame_index for f in future])
    if len(idx) == 0 or idx[0] < 1 or np.any(np.diff(idx) <= 0):
        raise SchemaError("future frame indices must be positive and strictly increasing")
    sub = cfg.substeps
    horizon = int(idx[-1]) // sub
    if horizon < 1:
        raise SchemaError(f"future span of {idx[-1]} dense frames is shorter than one label step")
    w, h = frame_size
    maps = chain_prefixes(chain)
    dense = np.arange(1, horizon * sub + 1, dtype=float)
    label_rows = np.arange(1, horizon + 1) * sub - 1

    points = np.zeros((horizon, 2, 2))
    visible = np.zeros((horizon, 2), bool)
    for s, side in enumerate(SIDES):
        keys = [
            (float(f.frame_index), project_point(m, box_center(f.hand_boxes[side])))
            for f, m in zip(future, maps)
            if side in f.hand_boxes
        ]
        if not keys:
            continue
        track = _fill_side(keys, dense)
        points[:, s] = track[label_rows] / np.array([w, h])
        visible[:, s] = True
    if not visible.any():
        raise EmptyTrajectory("no hand detections in any future frame")
    return HandTrajectory(points, visible)


def generate_contact_labels(
    contact_frame: FrameDetections,
    chain: Sequence[np.ndarray],
    object_track: Sequence[Sequence[float]] | None,
    frame_size: tuple[float, float],
) -> np.ndarray:
    """Contact candidates projected into the last observation frame.

    ``object_track`` holds the active object's center in last-frame pixel
    coordinates, first entry at rest, last entry at the contact frame. When
    given, projected points are moved back by the object's displacement.
    Returns an (n, 2) array in normalized coordinates clipped to [0, 1].
    """
    cands = np.asarray(contact_frame.contact_candidates, float).reshape(-1, 2)
    if len(cands) == 0:
        raise NoCandidates("contact frame has no contact candidates")
    pts = project_points(compose_chain(chain), cands)
    if object_track is not None and len(object_track) > 0:
        track = np.asarray(object_track, float).reshape(-1, 2)
        pts = pts + (track[0] - track[-1])
    w, h = frame_size
    return np.clip(pts / np.array([w, h]), 0.0, 1.0)


# --- JSON-lines label records ---------------------------------------------


def chain_from_correspondences(records: Sequence[dict], n_frames: int, config: LabelConfig) -> list[np.ndarray]:
    """RANSAC homographies for the pairs (k+1 -> k), k = 0..n_frames-1."""
    by_pair = {(int(r["from"]), int(r["to"])): r for r in records}
    chain = []
    for k in range(n_frames):
        rec = by_pair.get((k + 1, k))
        if rec is None:
            raise SchemaError(f"missing correspondences for frame pair {k + 1}->{k}")
        h, _ = ransac_homography(
            rec["src"],
            rec["dst"],
            threshold_px=config.ransac_threshold,
            iterations=config.ransac_iterations,
            seed=config.ransac_seed + k,
        )
        chain.append(h)
    return chain


def label_record(record: dict, config: LabelConfig | None = None) -> tuple[dict, list[str]]:
    """Turn one clip record into a label record plus a list of warnings.

    Future frames must cover every dense index 1..n so the chain is contiguous.
    """
    cfg = config or LabelConfig()
    try:
        clip_id = record["clip_id"]
        w, h = record["frame_size"]
        future = [FrameDetections.from_dict(f) for f in record["future_frames"]]
        corr = record["correspondences"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed clip record: {exc!r}") from exc
    future.sort(key=lambda f: f.frame_index)
    if [f.frame_index for f in future] != list(range(1, len(future) + 1)):
        raise SchemaError("future_frames must have frame_index 1..n without gaps")
    chain = chain_from_correspondences(corr, len(future), cfg)
    warnings: list[str] = []
    try:
        traj = generate_trajectory_labels(future, chain, (w, h), cfg)
    except EmptyTrajectory:
        warnings.append(f"{clip_id}: EmptyTrajectory (no hand detections)")
        horizon = len(future) // cfg.substeps
        traj = HandTrajectory(np.zeros((max(horizon, 1), 2, 2)), np.zeros((max(horizon, 1), 2), bool))
    for s, side in enumerate(SIDES):
        if traj.visible.any() and not traj.visible[:, s].any():
            warnings.append(f"{clip_id}: EmptyTrajectory for {side} hand (marked invisible)")
    try:
        contacts = generate_contact_labels(future[-1], chain, record.get("active_object_track"), (w, h))
        contacts_out = contacts.tolist()
    except NoCandidates:
        warnings.append(f"{clip_id}: NoCandidates in contact frame")
        contacts_out = []
    return {"clip_id": clip_id, "trajectory": traj.to_dict(), "contacts": contacts_out}, warnings
