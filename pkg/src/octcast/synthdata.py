"""Deterministic synthetic egocentric scenes with exact ground truth.

World coordinates coincide with the pixel coordinates of the last
observation frame, so the analytic hand positions at future label times are
the trajectory labels the geometry pipeline should reproduce. Time is
measured in label steps: observation frames sit at t = -(T-1)..0 and future
frames at t = k / substeps for k = 1..F*substeps. Contact happens at t = F.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import geometry as geo
from .config import LabelConfig, SynthConfig
from .geometry import FrameDetections, HandTrajectory

FEATURE_SEED = 20220404
HAND_BOX = (44.0, 52.0)
MAX_NOUNS = 8
OBJ_SIZE_RANGE = ((40.0, 90.0), (30.0, 70.0))
DEFAULT_HAND_POS = np.array([[0.25, 1.5], [0.75, 1.5]])


@dataclass
class SceneScript:
    seed: int
    T: int
    F: int
    substeps: int
    frame_size: tuple[int, int]
    times: np.ndarray  # (n_frames,)
    world_to_frame: np.ndarray  # (n_frames, 3, 3)
    camera_homographies: np.ndarray  # (n_frames - 1, 3, 3); [i] maps frame i+1 into frame i
    hand_paths: np.ndarray  # (2, n_frames, 2) world
    hand_present: np.ndarray  # (2,)
    hand_detected: np.ndarray  # (2, n_frames)
    object_rects: np.ndarray  # (n_obj, 4) world boxes at rest
    object_offsets: np.ndarray  # (n_obj, n_frames, 2) displacement from rest
    object_classes: np.ndarray  # (n_obj,)
    contact_world: np.ndarray  # (n_c, 2) on the displaced object at contact time
    contact_object: int = 0
    acting_side: int = 0
    action: tuple[int, int] = (0, 0)
    render: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return len(self.times)

    @property
    def last_obs(self) -> int:
        return self.T - 1

    def frame_of_future(self, k: int) -> int:
        """Array index of dense future frame k (1-based)."""
        return self.T - 1 + k

    def oracle_trajectory(self) -> HandTrajectory:
        w, h = self.frame_size
        rows = [self.frame_of_future(j * self.substeps) for j in range(1, self.F + 1)]
        pts = self.hand_paths[:, rows].transpose(1, 0, 2) / np.array([w, h])
        vis = np.repeat(self.hand_present[None, :], self.F, axis=0)
        return HandTrajectory(pts, vis)

    def oracle_contacts(self) -> np.ndarray:
        w, h = self.frame_size
        rest = self.contact_world - self.object_offsets[self.contact_object, -1]
        return np.clip(rest / np.array([w, h]), 0.0, 1.0)


# --- scene simulation ---------------------------------------------------------


def _camera_matrix(params: np.ndarray, center: np.ndarray) -> np.ndarray:
    tx, ty, rot, logs, gx, gy = params
    s = np.exp(logs)
    c, sn = np.cos(rot), np.sin(rot)
    core = np.array([[s * c, -s * sn, 0.0], [s * sn, s * c, 0.0], [gx, gy, 1.0]])
    m = geo.translation(tx, ty) @ geo.translation(*center) @ core @ geo.translation(*(-center))
    return m / m[2, 2]


def _bezier(p: np.ndarray, u: np.ndarray) -> np.ndarray:
    u = u[:, None]
    return (
        (1 - u) ** 3 * p[0]
        + 3 * (1 - u) ** 2 * u * p[1]
        + 3 * (1 - u) * u**2 * p[2]
        + u**3 * p[3]
    )


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x)


def scene_rng(seed: int, index: int | None = None) -> np.random.Generator:
    entropy = [seed] if index is None else [seed, index]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def simulate_scene(seed: int, config: SynthConfig | None = None) -> SceneScript:
    """Draw one scene. Same (seed, config) always gives the same script."""
    cfg = (config or SynthConfig()).validate()
    rng = scene_rng(seed)
    w, h = cfg.frame_size
    size = np.array([w, h], float)
    center = size / 2
    sub = cfg.substeps
    T, F = cfg.T, cfg.F
    times = np.concatenate([np.arange(-(T - 1), 1, dtype=float), np.arange(1, F * sub + 1) / sub])
    n = len(times)

    # camera: smooth bounded motion, identity at t = 0
    scale = np.array([6.0, 4.0, 0.01, 0.01, 2e-6, 2e-6]) * cfg.camera_motion
    vel = rng.uniform(-1, 1, 6) * scale
    amp = rng.uniform(-1, 1, 6) * scale * 2
    omega = rng.uniform(0.3, 0.9, 6)
    phase = rng.uniform(0, 2 * np.pi, 6)
    params = vel * times[:, None] + amp * (np.sin(omega * times[:, None] + phase) - np.sin(phase))
    world_to_frame = np.stack([_camera_matrix(p, center) for p in params])
    world_to_frame[T - 1] = np.eye(3)
    pairs = np.stack(
        [world_to_frame[i] @ np.linalg.inv(world_to_frame[i + 1]) for i in range(n - 1)]
    )
    pairs /= pairs[:, 2:3, 2:3]

    # objects at rest, the first one is the next-active object
    n_obj = cfg.n_objects
    rects, classes = [], []
    for k in range(n_obj):
        ow = rng.uniform(*OBJ_SIZE_RANGE[0])
        oh = rng.uniform(*OBJ_SIZE_RANGE[1])
        if cfg.object_placement == "uniform":
            cx = rng.uniform(ow / 2, w - ow / 2)
            cy = rng.uniform(oh / 2, h - oh / 2)
        else:
            cx = rng.uniform(0.2 * w, 0.8 * w)
            cy = rng.uniform(0.3 * h, 0.7 * h)
        rects.append([cx - ow / 2, cy - oh / 2, cx + ow / 2, cy + oh / 2])
        classes.append(int(rng.integers(cfg.n_nouns)))
    rects = np.array(rects)
    offsets = np.zeros((n_obj, n, 2))
    if rng.random() < cfg.active_prob:
        ang = rng.uniform(0, 2 * np.pi)
        mag = rng.uniform(10.0, 40.0)
        disp = mag * np.array([np.cos(ang), np.sin(ang)])
        offsets[0] = _smoothstep(np.clip(times, 0, None) / F)[:, None] * disp

    # contact points inside the displaced active object
    box = rects[0] + np.tile(offsets[0, -1], 2)
    n_c = int(rng.integers(1, cfg.max_contacts + 1))
    margin = np.minimum(cfg.contact_spread + 2.0, (box[2:] - box[:2]) / 2 - 1.0)
    c0 = rng.uniform(box[:2] + margin, box[2:] - margin)
    r = cfg.contact_spread * np.sqrt(rng.random(n_c))
    a = rng.uniform(0, 2 * np.pi, n_c)
    contacts = c0 + np.stack([r * np.cos(a), r * np.sin(a)], axis=1)
    contacts[0] = c0
    contacts = np.clip(contacts, box[:2] + 1e-3, box[2:] - 1e-3)

    # hands: cubic Bezier over the whole clip, the acting hand ends on contact[0]
    acting = int(rng.integers(2))
    if cfg.acting_side is not None:
        acting = cfg.acting_side
    u = (times - times[0]) / (times[-1] - times[0])
    paths = np.zeros((2, n, 2))
    for side in range(2):
        start = np.array([rng.uniform(0.1, 0.45) + 0.45 * side, rng.uniform(0.75, 0.95)]) * size
        if side == acting:
            end = contacts[0]
        else:
            end = np.array([rng.uniform(0.1, 0.45) + 0.45 * side, rng.uniform(0.55, 0.9)]) * size
        d = end - start
        normal = np.array([-d[1], d[0]]) / max(np.linalg.norm(d), 1e-9)
        bend = rng.uniform(-0.35, 0.35, 2) * np.linalg.norm(d) * cfg.curvature
        p1 = start + d / 3 + bend[0] * normal
        p2 = start + 2 * d / 3 + bend[1] * normal
        paths[side] = _bezier(np.stack([start, p1, p2, end]), u)

    present = rng.random(2) >= cfg.hand_absent_prob
    present[acting] = True
    detected = (rng.random((2, n)) >= cfg.dropout) & present[:, None]

    verb = acting % cfg.n_verbs
    return SceneScript(
        seed=seed,
        T=T,
        F=F,
        substeps=sub,
        frame_size=(w, h),
        times=times,
        world_to_frame=world_to_frame,
        camera_homographies=pairs,
        hand_paths=paths,
        hand_present=present,
        hand_detected=detected,
        object_rects=rects,
        object_offsets=offsets,
        object_classes=np.array(classes),
        contact_world=contacts,
        contact_object=0,
        acting_side=acting,
        action=(int(verb), int(classes[0])),
        render={"n_bg": cfg.n_bg, "outlier_frac": cfg.outlier_frac},
    )


# --- rendering ----------------------------------------------------------------


def _hand_box(c: np.ndarray) -> tuple[float, ...]:
    hw, hh = HAND_BOX[0] / 2, HAND_BOX[1] / 2
    return (c[0] - hw, c[1] - hh, c[0] + hw, c[1] + hh)


def entity_boxes(s: SceneScript, i: int) -> tuple[dict, list]:
    """Detected hand boxes and object boxes in frame ``i`` pixel coordinates."""
    m = s.world_to_frame[i]
    hands = {}
    for side, name in enumerate(geo.SIDES):
        if s.hand_detected[side, i]:
            hands[name] = _hand_box(geo.project_point(m, s.hand_paths[side, i]))
    objs = []
    for k, rect in enumerate(s.object_rects):
        half = (rect[2:] - rect[:2]) / 2
        c = geo.project_point(m, (rect[:2] + rect[2:]) / 2 + s.object_offsets[k, i])
        objs.append(tuple(np.concatenate([c - half, c + half])))
    return hands, objs


def _frame_index(s: SceneScript, i: int) -> int:
    return i - (s.T - 1)


def render_observations(s: SceneScript) -> tuple[list[FrameDetections], list[dict]]:
    """Per-frame detections and per-pair background correspondences.

    Correspondence record ``{from, to, src, dst}`` maps points of frame
    ``from`` (= to + 1) into frame ``to``; frames are indexed relative to the
    last observation frame (observations <= 0, dense future frames >= 1).
    """
    w, h = s.frame_size
    rng = scene_rng(s.seed, 1)
    n_bg = s.render.get("n_bg", 40)
    outlier_frac = s.render.get("outlier_frac", 0.0)
    dets = []
    boxes = []
    for i in range(s.n_frames):
        hands, objs = entity_boxes(s, i)
        cands = []
        if i == s.n_frames - 1:
            cands = [tuple(p) for p in geo.project_points(s.world_to_frame[i], s.contact_world)]
        dets.append(FrameDetections(_frame_index(s, i), hands, objs, cands))
        boxes.append(np.array(list(hands.values()) + objs).reshape(-1, 4))
    corr = []
    n_out = int(round(outlier_frac * n_bg))
    for i in range(s.n_frames - 1):
        src = _background_points(rng, n_bg, (w, h), boxes[i + 1])
        dst = geo.project_points(s.camera_homographies[i], src)
        if n_out:
            bad = rng.choice(n_bg, n_out, replace=False)
            dst[bad] = rng.uniform((0, 0), (w, h), (n_out, 2))
        corr.append(
            {
                "from": _frame_index(s, i + 1),
                "to": _frame_index(s, i),
                "src": src.tolist(),
                "dst": dst.tolist(),
            }
        )
    return dets, corr


def _background_points(rng, n, size, boxes) -> np.ndarray:
    w, h = size
    out = np.empty((0, 2))
    while len(out) < n:
        cand = rng.uniform((0, 0), (w, h), (2 * n, 2))
        inside = np.zeros(len(cand), bool)
        for b in boxes:
            inside |= (cand[:, 0] >= b[0]) & (cand[:, 0] <= b[2]) & (cand[:, 1] >= b[1]) & (cand[:, 1] <= b[3])
        out = np.concatenate([out, cand[~inside]])
    return out[:n]


# --- features -----------------------------------------------------------------


@lru_cache(maxsize=8)
def _feature_maps(d_feat: int):
    rng = np.random.default_rng(FEATURE_SEED)
    maps = {}
    for kind, dim in (("hand", 8), ("object", 8 + MAX_NOUNS), ("global", 10)):
        maps[kind] = (rng.normal(0.0, 1.0, (d_feat, dim)), rng.uniform(-1.0, 1.0, d_feat))
    return maps


def _embed(kind: str, state: np.ndarray, d_feat: int) -> np.ndarray:
    w, b = _feature_maps(d_feat)[kind]
    return np.tanh(2.0 * (w @ state) + b).astype(np.float32)


def entity_state_features(kind: str, state: np.ndarray, d_feat: int = 1024) -> np.ndarray:
    """The fixed random feature map applied to one entity state vector."""
    return _embed(kind, np.asarray(state, float), d_feat)


def featurize(s: SceneScript, t: int, d_feat: int = 1024) -> dict[str, np.ndarray]:
    """Pseudo backbone features of observation frame ``t`` (1-based).

    Returns ``hand`` (2, d_feat), ``object`` (2, d_feat), ``global`` (d_feat)
    and validity flags; undetected entities get zero vectors.
    """
    if not 1 <= t <= s.T:
        raise ValueError(f"observation frame {t} outside 1..{s.T}")
    i = t - 1
    size = np.array(s.frame_size, float)
    hands, objs = entity_boxes(s, i)
    prev_hands, prev_objs = entity_boxes(s, i - 1) if i > 0 else (hands, objs)

    hand_feat = np.zeros((2, d_feat), np.float32)
    hand_valid = np.zeros(2, bool)
    for side, name in enumerate(geo.SIDES):
        if name not in hands:
            continue
        c = geo.box_center(hands[name]) / size
        if name in prev_hands:
            v = c - geo.box_center(prev_hands[name]) / size
        else:
            v = np.zeros(2)
        ident = np.eye(2)[side]
        state = np.concatenate([c, 5.0 * v, ident, [1.0, 0.0]])
        hand_feat[side] = _embed("hand", state, d_feat)
        hand_valid[side] = True

    obj_feat = np.zeros((2, d_feat), np.float32)
    obj_valid = np.zeros(2, bool)
    for k, box in enumerate(objs):
        c = geo.box_center(box) / size
        v = c - geo.box_center(prev_objs[k]) / size
        wh = (np.array(box[2:]) - np.array(box[:2])) / size
        cls = np.eye(MAX_NOUNS)[s.object_classes[k] % MAX_NOUNS]
        state = np.concatenate([c, 5.0 * v, wh, np.eye(2)[k], cls])
        obj_feat[k] = _embed("object", state, d_feat)
        obj_valid[k] = True

    m = s.world_to_frame[i]
    prev = s.world_to_frame[i - 1] if i > 0 else m
    cam = np.concatenate([m[:2].ravel() - np.eye(3)[:2].ravel(), (m - prev)[:2, 2] / size])
    cam[[2, 5]] /= size
    glob_state = np.concatenate([cam, [t / s.T, 1.0]])
    glob = _embed("global", glob_state, d_feat)
    return {
        "hand": hand_feat,
        "object": obj_feat,
        "global": glob,
        "hand_valid": hand_valid,
        "object_valid": obj_valid,
        "hand_boxes": _boxes_array(hands, geo.SIDES, size),
        "object_boxes": _boxes_array(dict(enumerate(objs)), (0, 1), size),
    }


def _boxes_array(boxes: dict, keys, size) -> np.ndarray:
    out = np.zeros((2, 4))
    for j, key in enumerate(keys):
        if key in boxes:
            out[j] = np.asarray(boxes[key]) / np.tile(size, 2)
    return out


# --- training samples -----------------------------------------------------------


@dataclass
class TrainingSample:
    """One clip: observation features/boxes (normalized) plus labels.

    ``features`` holds ``hand`` (2, T, d), ``object`` (2, T, d), ``global``
    (T, d); ``boxes`` holds (2, T, 4) normalized x1y1x2y2 arrays; ``valid``
    holds (2, T) booleans.
    """

    id: str
    T: int
    F: int
    features: dict[str, np.ndarray]
    boxes: dict[str, np.ndarray]
    valid: dict[str, np.ndarray]
    gt_trajectory: HandTrajectory
    gt_contacts: np.ndarray
    action: tuple[int, int] | None = None
    oracle_trajectory: HandTrajectory | None = None
    oracle_contacts: np.ndarray | None = None

    def last_hand_location(self) -> np.ndarray:
        """h_T as (2, 2): box centers in the last observation frame, with the
        default locations for undetected hands."""
        out = DEFAULT_HAND_POS.copy()
        for side in range(2):
            if self.valid["hand"][side, -1]:
                b = self.boxes["hand"][side, -1]
                out[side] = [(b[0] + b[2]) / 2, (b[1] + b[3]) / 2]
        return out

    def truncate(self, t_keep: int) -> "TrainingSample":
        """Keep only the last ``t_keep`` observation frames."""
        if not 1 <= t_keep <= self.T:
            raise ValueError(f"cannot keep {t_keep} of {self.T} frames")
        sl = slice(self.T - t_keep, self.T)
        return TrainingSample(
            id=self.id,
            T=t_keep,
            F=self.F,
            features={
                "hand": self.features["hand"][:, sl],
                "object": self.features["object"][:, sl],
                "global": self.features["global"][sl],
            },
            boxes={k: v[:, sl] for k, v in self.boxes.items()},
            valid={k: v[:, sl] for k, v in self.valid.items()},
            gt_trajectory=self.gt_trajectory,
            gt_contacts=self.gt_contacts,
            action=self.action,
            oracle_trajectory=self.oracle_trajectory,
            oracle_contacts=self.oracle_contacts,
        )


def pipeline_labels(
    s: SceneScript,
    dets: list[FrameDetections],
    corr: list[dict],
    label_cfg: LabelConfig,
) -> tuple[HandTrajectory, np.ndarray]:
    """Run the geometry label pipeline on rendered observations."""
    T = s.T
    future = dets[T:]
    chain = geo.chain_from_correspondences(corr[T - 1:], len(future), label_cfg)
    traj = geo.generate_trajectory_labels(future, chain, s.frame_size, label_cfg)
    # active object track: rest position in the last observation frame and
    # its contact-frame center projected back
    rest = geo.box_center(dets[T - 1].object_boxes[s.contact_object])
    moved = geo.project_point(
        geo.compose_chain(chain), geo.box_center(future[-1].object_boxes[s.contact_object])
    )
    contacts = geo.generate_contact_labels(future[-1], chain, [rest, moved], s.frame_size)
    return traj, contacts


def scene_label_record(s: SceneScript, clip_id: str | None = None) -> dict:
    """The scene's future frames in the label-generation input format."""
    dets, corr = render_observations(s)
    T = s.T
    rect = s.object_rects[s.contact_object]
    rest = (rect[:2] + rect[2:]) / 2
    moved = rest + s.object_offsets[s.contact_object, -1]
    return {
        "clip_id": clip_id or f"scene-{s.seed}",
        "frame_size": list(s.frame_size),
        "future_frames": [d.to_dict() for d in dets[T:]],
        "correspondences": corr[T - 1:],
        "active_object_track": [rest.tolist(), moved.tolist()],
    }


def label_config_for(cfg: SynthConfig, seed: int = 0) -> LabelConfig:
    return LabelConfig(
        ransac_threshold=cfg.ransac_threshold,
        ransac_iterations=cfg.ransac_iterations,
        ransac_seed=seed,
        dense_fps=cfg.dense_fps,
        label_fps=cfg.label_fps,
    ).validate()


def make_sample(seed: int, index: int, config: SynthConfig | None = None) -> TrainingSample:
    cfg = (config or SynthConfig()).validate()
    scene_seed = int(np.random.SeedSequence([seed, index]).generate_state(1)[0])
    s = simulate_scene(scene_seed, cfg)
    dets, corr = render_observations(s)
    traj, contacts = pipeline_labels(s, dets, corr, label_config_for(cfg, scene_seed % 100000))
    frames = [featurize(s, t, cfg.d_feat) for t in range(1, cfg.T + 1)]
    stack = lambda key, axis=1: np.stack([f[key] for f in frames], axis=axis)  # noqa: E731
    return TrainingSample(
        id=f"s{seed}-{index:05d}",
        T=cfg.T,
        F=cfg.F,
        features={"hand": stack("hand"), "object": stack("object"), "global": stack("global", 0)},
        boxes={"hand": stack("hand_boxes"), "object": stack("object_boxes")},
        valid={"hand": stack("hand_valid"), "object": stack("object_valid")},
        gt_trajectory=traj,
        gt_contacts=contacts,
        action=s.action,
        oracle_trajectory=s.oracle_trajectory(),
        oracle_contacts=s.oracle_contacts(),
    )


def make_samples(n: int, seed: int, config: SynthConfig | None = None) -> list[TrainingSample]:
    if n < 1:
        raise ValueError("n must be >= 1")
    return [make_sample(seed, i, config) for i in range(n)]


def build_dataset(n: int, seed: int, config: SynthConfig | None, path) -> int:
    """Generate ``n`` samples and write them to ``path``; returns the count."""
    from .io import write_dataset

    samples = make_samples(n, seed, config)
    write_dataset(samples, path)
    return len(samples)
