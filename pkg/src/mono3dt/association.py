"""Frame-to-frame association and the occlusion-aware tracklet lifecycle.

Matching fuses three affinity channels per tracklet/detection pair:

  * appearance: exp(-L1) over a scaled concatenation of the embedding,
    dimensions, projected center, yaw, and depth;
  * 2D overlap: IoU of the predicted and detected image boxes;
  * 3D overlap: IoU of the projected 3D boxes under depth ordering:
    tracklets closer to the detection's depth layer claim the image area
    they cover from farther ones (claiming only through tracklets
    physically in front), so a detection prefers tracklets in its own
    layer; pairs whose depth gap exceeds the summed footprint bound are
    excluded outright.

The lifecycle separates `occluded` (mostly covered by a nearer tracklet:
motion keeps coasting, features and age freeze) from `lost` (simply
unmatched: the state pins in place and the age runs out).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import motion as motion_mod
from .data import ObjectState, TrackerConfig, TrackRecord, TrackStatus
from .geometry import (
    Box2D,
    BoxBehindCamera,
    PointBehindCamera,
    alpha_to_theta,
    backproject,
    camera_heading,
    iou_2d,
    project_box,
    project_point,
)

MASKED_VALUE = -1e9

# Depth ordering inside the tracker widens the tie layer proportionally to
# depth, matching the sigma = 0.05 * depth monocular noise law the motion
# model assumes: estimated depths of the same object can differ by more
# than a fixed tie at range, and treating them as distinct layers would
# let a tracklet occlude its own detection.
DEPTH_ORDER_TIE_RATE = 0.05


class LengthMismatch(ValueError):
    pass


def affinity_deep(feature_track, feature_det) -> float:
    """exp(-L1) similarity of two equal-length feature vectors, in (0, 1]."""
    a = np.asarray(feature_track, dtype=float).reshape(-1)
    b = np.asarray(feature_det, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise LengthMismatch(f"feature lengths differ: {a.shape[0]} vs {b.shape[0]}")
    return float(np.exp(-np.sum(np.abs(a - b))))


def deep_feature(state: ObjectState, intrinsics, config: TrackerConfig) -> np.ndarray:
    """Concatenated appearance + geometry feature with unit-balancing scales.

    Without scaling, raw depth differences swamp every other component of
    the L1 distance; each block is brought to roughly unit range instead.
    """
    return np.concatenate(
        [
            state.appearance,
            state.dimensions / 10.0,
            state.center_px / intrinsics.image_diagonal,
            [state.yaw / math.pi],
            [state.depth / config.range_max],
        ]
    )


def affinity_2d(track_box: Box2D, det_box: Box2D) -> float:
    return iou_2d(track_box, det_box)


def depth_filter(track_depth, track_dims, det_depth, det_dims) -> bool:
    """Keep a pair only when the depth gap is inside the footprint bound.

    The bound l+w of both objects is a loose reachable-distance envelope
    (it dominates the two footprint diagonals). The gap is symmetric in
    sign, so a detection in front of a tracklet filters like one behind.
    """
    bound = track_dims[0] + track_dims[1] + det_dims[0] + det_dims[1]
    return abs(track_depth - det_depth) < bound


def compose_affinity(a_deep: float, a_2d: float, a_3d: float, config: TrackerConfig) -> float:
    total = config.w_deep + config.w_2d + config.w_3d
    return (config.w_deep * a_deep + config.w_2d * a_2d + config.w_3d * a_3d) / total


# --- rectangle coverage helpers --------------------------------------------


def _clip_rect(rect, base):
    x0 = max(rect[0], base[0])
    y0 = max(rect[1], base[1])
    x1 = min(rect[2], base[2])
    y1 = min(rect[3], base[3])
    if x0 >= x1 or y0 >= y1:
        return None
    return (x0, y0, x1, y1)


def _union_area_within(base, rects) -> float:
    """Area of (union of rects) clipped to the base rectangle.

    Exact via coordinate compression: cell centers of the grid induced by
    all rectangle edges are tested against each rectangle.
    """
    clipped = []
    for rect in rects:
        c = _clip_rect(rect, base)
        if c is not None:
            clipped.append(c)
    if not clipped:
        return 0.0
    xs = sorted({base[0], base[2], *(r[0] for r in clipped), *(r[2] for r in clipped)})
    ys = sorted({base[1], base[3], *(r[1] for r in clipped), *(r[3] for r in clipped)})
    total = 0.0
    for i in range(len(xs) - 1):
        cx = 0.5 * (xs[i] + xs[i + 1])
        w = xs[i + 1] - xs[i]
        for j in range(len(ys) - 1):
            cy = 0.5 * (ys[j] + ys[j + 1])
            for r in clipped:
                if r[0] <= cx <= r[2] and r[1] <= cy <= r[3]:
                    total += w * (ys[j + 1] - ys[j])
                    break
    return total


def _strictly_nearer(depth_far, depth_near, tie_meters, tie_rate) -> bool:
    tie = max(tie_meters, tie_rate * 0.5 * (depth_far + depth_near))
    return depth_far - depth_near > tie


def cover_fractions(boxes, depths, tie_meters: float = 1.0, tie_rate: float = 0.0) -> np.ndarray:
    """Fraction of each box covered by the union of strictly nearer boxes.

    Boxes whose depth gap is within the tie share a layer and do not
    occlude each other; the tie is max(tie_meters, tie_rate * mean depth).
    Zero-area boxes report cover 0.
    """
    n = len(boxes)
    out = np.zeros(n)
    for i in range(n):
        area = boxes[i].area
        if area <= 0.0:
            continue
        occluders = [
            boxes[j].as_tuple()
            for j in range(n)
            if j != i and _strictly_nearer(depths[i], depths[j], tie_meters, tie_rate)
        ]
        if not occluders:
            continue
        covered = _union_area_within(boxes[i].as_tuple(), occluders)
        out[i] = covered / area
    return out


def depth_ordered_overlaps(
    track_boxes,
    track_depths,
    det_box: Box2D,
    det_depth: float,
    tie_meters: float = 1.0,
    tie_rate: float = 0.0,
) -> np.ndarray:
    """Detection-vs-tracklet overlap under depth ordering around the DOI.

    Tracklets closer to the detection's depth layer claim the image area
    they cover from tracklets farther away from it, provided the claimant
    is also physically in front of the tracklet it masks (something behind
    you cannot hide you). The tracklet nearest the detection's own layer
    therefore keeps its full overlap, while tracklets a layer away meet
    the detection only through their unclaimed region, taken over the
    union of that region with the detection box and capped at the plain
    two-box IoU. With no competing layers this equals iou_2d exactly, and
    a tracklet fully claimed by a nearer layer scores 0. The layer tie
    works as in cover_fractions.
    """
    n = len(track_boxes)
    out = np.zeros(n)
    det_rect = det_box.as_tuple()
    det_area = det_box.area
    doi_gap = [abs(track_depths[i] - det_depth) for i in range(n)]
    for i in range(n):
        box = track_boxes[i]
        occluders = [
            track_boxes[j].as_tuple()
            for j in range(n)
            if j != i
            and _strictly_nearer(track_depths[i], track_depths[j], tie_meters, tie_rate)
            and doi_gap[j] < doi_gap[i]
        ]
        if not occluders:
            out[i] = iou_2d(box, det_box)
            continue
        inter_rect = _clip_rect(box.as_tuple(), det_rect)
        if inter_rect is None:
            continue
        inter = (inter_rect[2] - inter_rect[0]) * (inter_rect[3] - inter_rect[1])
        numerator = inter - _union_area_within(inter_rect, occluders)
        if numerator <= 0.0:
            continue
        visible_area = box.area - _union_area_within(box.as_tuple(), occluders)
        denominator = visible_area + det_area - numerator
        if denominator > 0.0:
            out[i] = min(numerator / denominator, iou_2d(box, det_box))
    return out


# --- assignment -------------------------------------------------------------


@dataclass
class AffinityMatrix:
    values: np.ndarray  # (n_tracks, n_detections)
    kept_mask: np.ndarray  # bool, False entries are excluded from assignment
    a_deep: np.ndarray  # appearance component, needed for the blend ratio


def solve_assignment(matrix: AffinityMatrix, accept_threshold: float):
    """Maximum-total-affinity matching over kept entries.

    Returns (pairs, unmatched_track_rows, unmatched_detection_cols); pairs
    whose affinity falls below accept_threshold are dropped to unmatched.
    Dummy zero columns let every row stay unmatched rather than be forced
    through a masked or worthless entry.
    """
    values = np.asarray(matrix.values, dtype=float)
    n, m = values.shape
    if n == 0 or m == 0:
        return [], list(range(n)), list(range(m))
    if not np.all(np.isfinite(values)):
        raise ValueError("affinity matrix contains non-finite entries")
    padded = np.full((n, m + n), 0.0)
    padded[:, :m] = np.where(matrix.kept_mask, values, MASKED_VALUE)
    rows, cols = linear_sum_assignment(padded, maximize=True)
    pairs = []
    matched_rows = set()
    matched_cols = set()
    for r, c in zip(rows, cols):
        if c >= m or not matrix.kept_mask[r, c]:
            continue
        if values[r, c] < accept_threshold:
            continue
        pairs.append((int(r), int(c)))
        matched_rows.add(int(r))
        matched_cols.add(int(c))
    unmatched_tracks = [i for i in range(n) if i not in matched_rows]
    unmatched_dets = [j for j in range(m) if j not in matched_cols]
    return pairs, unmatched_tracks, unmatched_dets


# --- tracklets and lifecycle -------------------------------------------------


@dataclass
class Tracklet:
    id: int
    state: ObjectState
    status: TrackStatus = TrackStatus.BIRTH
    age_since_match: int = 0
    velocity_history: deque = field(default_factory=lambda: deque(maxlen=5))
    motion_state: object = None
    predicted: object = None  # PredictedView, refreshed every frame


def decode_detection(det, pose, intrinsics) -> ObjectState:
    """Reconstruct the world-frame object state a detection encodes."""
    position = backproject(det.center_proj, det.depth, pose, intrinsics)
    yaw_cam = alpha_to_theta(det.yaw_local, float(det.center_proj[0]), intrinsics)
    yaw_world = yaw_cam + camera_heading(pose)
    return ObjectState(
        position=position,
        yaw=yaw_world,
        dimensions=det.dimensions.copy(),
        appearance=det.appearance.copy(),
        velocity=np.zeros(3),
        center_px=det.center_proj.copy(),
        depth=det.depth,
    )


def build_affinity_matrix(tracklets, det_states, det_boxes, det_proj_boxes, intrinsics, config):
    """Affinity values, keep mask, and appearance components for one frame.

    tracklets carry fresh PredictedView objects; det_states are decoded
    detections, det_boxes the raw detector boxes, det_proj_boxes the
    projections of the decoded 3D boxes.
    """
    n = len(tracklets)
    m = len(det_states)
    values = np.zeros((n, m))
    kept = np.zeros((n, m), dtype=bool)
    deep = np.zeros((n, m))
    if n == 0 or m == 0:
        return AffinityMatrix(values, kept, deep)

    track_boxes = [t.predicted.box2d for t in tracklets]
    track_depths = [t.predicted.depth for t in tracklets]
    track_features = []
    for t in tracklets:
        feat_state = t.state.copy()
        feat_state.center_px = t.predicted.center_px
        feat_state.depth = t.predicted.depth
        track_features.append(deep_feature(feat_state, intrinsics, config))

    if config.use_depth_ordering:
        a3d_cols = [
            depth_ordered_overlaps(
                track_boxes,
                track_depths,
                det_proj_boxes[j],
                det_states[j].depth,
                config.ord_tie_meters,
                DEPTH_ORDER_TIE_RATE,
            )
            for j in range(m)
        ]
    else:
        a3d_cols = [
            np.array([iou_2d(track_boxes[i], det_proj_boxes[j]) for i in range(n)])
            for j in range(m)
        ]

    for j in range(m):
        det_feature = deep_feature(det_states[j], intrinsics, config)
        for i in range(n):
            t = tracklets[i]
            if not t.predicted.in_view:
                continue
            if config.use_depth_ordering and not depth_filter(
                track_depths[i], t.state.dimensions, det_states[j].depth, det_states[j].dimensions
            ):
                continue
            kept[i, j] = True
            deep[i, j] = affinity_deep(track_features[i], det_feature)
            a2d = affinity_2d(track_boxes[i], det_boxes[j])
            values[i, j] = compose_affinity(deep[i, j], a2d, a3d_cols[j][i], config)
    return AffinityMatrix(values, kept, deep)


class Tracker:
    """Strictly online tracker: one lifecycle step per frame.

    Output at frame t depends only on frames <= t. Dead tracklets never
    come back and their ids are never reused.
    """

    def __init__(self, config: TrackerConfig, intrinsics, lstm_weights=None):
        config.validate()
        if config.motion_backend == "lstm" and lstm_weights is None:
            raise ValueError("motion_backend 'lstm' requires trained weights")
        self.config = config
        self.intrinsics = intrinsics
        self.lstm_weights = lstm_weights
        self.tracklets: list[Tracklet] = []
        self.next_id = 0

    # -- helpers -------------------------------------------------------------

    def _reproject_state(self, state: ObjectState, pose) -> Box2D:
        try:
            center_px, depth = project_point(state.position, pose, self.intrinsics)
            state.center_px = center_px
            state.depth = depth
            return project_box(state.box3d(), pose, self.intrinsics)
        except (PointBehindCamera, BoxBehindCamera):
            state.depth = float(pose.world_to_camera(state.position)[2])
            return Box2D(0.0, 0.0, 0.0, 0.0)

    def _spawn(self, det, pose) -> Tracklet:
        state = decode_detection(det, pose, self.intrinsics)
        tracklet = Tracklet(
            id=self.next_id,
            state=state,
            status=TrackStatus.TRACKED,
            age_since_match=0,
            motion_state=motion_mod.init_motion_state(
                self.config.motion_backend, state.position, state.depth, det.box2d
            ),
        )
        tracklet.velocity_history.append(np.zeros(3))
        self.next_id += 1
        return tracklet

    # -- lifecycle -------------------------------------------------------------

    def step(self, frame_index: int, detections, pose):
        """Advance one frame: predict, associate, update, spawn, retire.

        Returns the TrackRecords emitted for this frame (tracked and
        occluded tracklets; lost ones coast silently).
        """
        config = self.config
        backend = config.motion_backend
        alive = [t for t in self.tracklets if t.status != TrackStatus.DEAD]

        for t in alive:
            t.predicted = motion_mod.predict_tracklet(
                t, backend, pose, self.intrinsics, self.lstm_weights
            )

        det_states = [decode_detection(d, pose, self.intrinsics) for d in detections]
        det_boxes = [d.box2d for d in detections]
        det_proj_boxes = []
        for d, s in zip(detections, det_states):
            try:
                det_proj_boxes.append(project_box(s.box3d(), pose, self.intrinsics))
            except BoxBehindCamera:
                det_proj_boxes.append(d.box2d)

        matrix = build_affinity_matrix(
            alive, det_states, det_boxes, det_proj_boxes, self.intrinsics, config
        )
        pairs, unmatched_tracks, unmatched_dets = solve_assignment(
            matrix, config.affinity_accept_threshold
        )

        covers = cover_fractions(
            [t.predicted.box2d for t in alive],
            [t.predicted.depth for t in alive],
            config.ord_tie_meters,
            DEPTH_ORDER_TIE_RATE,
        )

        for row, col in pairs:
            t = alive[row]
            det = detections[col]
            obs_state = det_states[col]
            prev_position = t.state.position.copy()
            filtered_pos, new_motion = motion_mod.update_motion_state(
                backend,
                t.predicted,
                obs_state.position,
                obs_state.depth,
                det.box2d,
                prev_position,
                self.lstm_weights,
            )
            blended = motion_mod.blend_update(t.state, obs_state, matrix.a_deep[row, col])
            if filtered_pos is not None:
                blended.position = filtered_pos
            velocity = blended.position - prev_position
            blended.velocity = velocity
            t.state = blended
            if new_motion is not None:
                t.motion_state = new_motion
            t.status = TrackStatus.TRACKED
            t.age_since_match = 0
            t.velocity_history.append(velocity.copy())

        for row in unmatched_tracks:
            t = alive[row]
            occluded = (
                config.use_occlusion_state
                and t.predicted.in_view
                and covers[row] >= config.occlusion_cover_threshold
            )
            if occluded:
                # commit the coasting prediction; features, velocity ring,
                # and age stay frozen until reappearance
                prev_position = t.state.position.copy()
                t.state.position = t.predicted.position.copy()
                t.state.velocity = t.state.position - prev_position
                t.motion_state = t.predicted.motion_state
                t.status = TrackStatus.OCCLUDED
                if t.age_since_match == 0:
                    t.age_since_match = 1
            else:
                # plain lost handling: leave the state pinned where it was
                t.status = TrackStatus.LOST
                t.age_since_match += 1

        records = []
        survivors = []
        for t in alive:
            cam_z = float(pose.world_to_camera(t.state.position)[2])
            out_of_range = cam_z < config.range_min or cam_z > config.range_max
            if t.age_since_match > config.max_lost_age or out_of_range:
                t.status = TrackStatus.DEAD
                continue
            survivors.append(t)

        for col in unmatched_dets:
            t = self._spawn(detections[col], pose)
            survivors.append(t)

        for t in survivors:
            if t.status not in (TrackStatus.TRACKED, TrackStatus.OCCLUDED):
                continue
            box2d = self._reproject_state(t.state, pose)
            if t.status == TrackStatus.OCCLUDED and box2d.area < config.min_emit_box_area:
                continue
            records.append(
                TrackRecord(
                    frame_index=frame_index,
                    track_id=t.id,
                    box3d=t.state.box3d(),
                    velocity=t.state.velocity.copy(),
                    box2d_projected=box2d,
                    status=t.status,
                )
            )
        self.tracklets = survivors
        return records


def run_sequence(sequence, config: TrackerConfig, lstm_weights=None):
    """Track a whole SequenceInput; returns TrackRecords for all frames."""
    tracker = Tracker(config, sequence.intrinsics, lstm_weights)
    records = []
    for frame_index, (pose, dets) in enumerate(zip(sequence.poses, sequence.detections)):
        records.extend(tracker.step(frame_index, dets, pose))
    return records
