"""Two-stage association engine.

Stage 1 matches high-confidence detections against every live track
(tentative, confirmed, and lost) under the fused cost

    cost = (1 - IoU) + w_a * appearance + w_r * rotation

with pairs forbidden when IoU falls below the gate or classes differ.
Stage 2 sweeps the remaining low-confidence detections against the
still-unmatched tentative/confirmed tracks on IoU alone. Unmatched
high-confidence detections found new tracks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import appearance as ap
from . import motion as mo
from .core import (
    BoundingBox,
    Detection,
    FrameDetections,
    Track,
    TrackState,
    TrackerConfig,
    iou_matrix,
)

log = logging.getLogger("drone_assoc.association")

INFEASIBLE = np.inf
_LARGE = 1e9


class FrameOrderError(ValueError):
    """Raised when frames are fed out of order."""


@dataclass(frozen=True)
class AssignmentResult:
    matches: list[tuple[int, int]]
    unmatched_rows: list[int]
    unmatched_cols: list[int]


@dataclass(frozen=True)
class TrackRecord:
    """One output line: a confirmed track observed at a frame."""

    frame: int
    track_id: int
    bbox: BoundingBox
    score: float
    class_id: int


def linear_assignment(cost: np.ndarray) -> AssignmentResult:
    """Minimum-cost one-to-one assignment; +inf entries are never matched.

    Infeasible entries are lifted to a large finite constant so the solver
    always runs, then any match landing on one is dropped afterwards.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost matrix must be 2-dimensional")
    n, m = cost.shape
    if n == 0 or m == 0:
        return AssignmentResult([], list(range(n)), list(range(m)))
    solvable = np.where(np.isfinite(cost), cost, _LARGE)
    rows, cols = linear_sum_assignment(solvable)
    matches = [(int(r), int(c)) for r, c in zip(rows, cols) if np.isfinite(cost[r, c])]
    matched_r = {r for r, _ in matches}
    matched_c = {c for _, c in matches}
    return AssignmentResult(
        matches,
        [r for r in range(n) if r not in matched_r],
        [c for c in range(m) if c not in matched_c],
    )


def build_cost_matrix(
    tracks: Sequence[Track],
    predicted_boxes: np.ndarray,
    detections: Sequence[Detection],
    det_descriptors: Sequence[Optional[np.ndarray]],
    config: TrackerConfig,
) -> np.ndarray:
    """Fused stage-1 cost, shape (len(tracks), len(detections))."""
    cost, _ = _fused_cost(tracks, predicted_boxes, detections, det_descriptors, config)
    return cost


def _fused_cost(
    tracks: Sequence[Track],
    predicted_boxes: np.ndarray,
    detections: Sequence[Detection],
    det_descriptors: Sequence[Optional[np.ndarray]],
    config: TrackerConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Stage-1 cost plus the raw IoU matrix it was built from."""
    if len(tracks) == 0 or len(detections) == 0:
        shape = (len(tracks), len(detections))
        return np.zeros(shape, dtype=np.float64), np.zeros(shape, dtype=np.float64)
    det_boxes = np.stack([d.bbox.as_array() for d in detections])
    ious = iou_matrix(predicted_boxes, det_boxes)
    cost = 1.0 - ious
    if config.w_a > 0:
        cost += config.w_a * _appearance_block(tracks, detections)
    if config.w_r > 0:
        cost += config.w_r * _rotation_block(tracks, det_descriptors)
    _gate(cost, ious, tracks, detections, config.iou_gate)
    return cost, ious


def iou_cost_matrix(
    tracks: Sequence[Track],
    predicted_boxes: np.ndarray,
    detections: Sequence[Detection],
    config: TrackerConfig,
) -> np.ndarray:
    """Stage-2 cost: 1 - IoU with the same gates, no feature terms."""
    if len(tracks) == 0 or len(detections) == 0:
        return np.zeros((len(tracks), len(detections)), dtype=np.float64)
    det_boxes = np.stack([d.bbox.as_array() for d in detections])
    ious = iou_matrix(predicted_boxes, det_boxes)
    cost = 1.0 - ious
    _gate(cost, ious, tracks, detections, config.iou_gate)
    return cost


def _gate(cost, ious, tracks, detections, iou_gate):
    cost[ious < iou_gate] = INFEASIBLE
    t_cls = np.array([t.class_id for t in tracks])
    d_cls = np.array([d.class_id for d in detections])
    cost[t_cls[:, None] != d_cls[None, :]] = INFEASIBLE


def _appearance_block(tracks, detections) -> np.ndarray:
    dims = {d.embedding.shape[0] for d in detections if d.embedding is not None}
    block = np.zeros((len(tracks), len(detections)), dtype=np.float64)
    if not dims:
        return block
    dim = dims.pop()
    has_emb = np.array([d.embedding is not None for d in detections])
    feats = np.stack(
        [d.embedding if d.embedding is not None else np.zeros(dim) for d in detections]
    )
    block = ap.appearance_cost_matrix(list(tracks), feats)
    block[:, ~has_emb] = 0.0
    return block


def _rotation_block(tracks, det_descriptors) -> np.ndarray:
    n, m = len(tracks), len(det_descriptors)
    t_desc = np.zeros((n, 3))
    t_ok = np.zeros(n, dtype=bool)
    for j, t in enumerate(tracks):
        if t.rotation is not None:
            t_desc[j] = t.rotation
            t_ok[j] = True
    d_desc = np.zeros((m, 3))
    d_ok = np.zeros(m, dtype=bool)
    for i, d in enumerate(det_descriptors):
        if d is not None:
            d_desc[i] = d
            d_ok[i] = True
    norms_t = np.linalg.norm(t_desc, axis=1)
    norms_d = np.linalg.norm(d_desc, axis=1)
    denom = norms_t[:, None] * norms_d[None, :]
    denom[denom < 1e-12] = 1.0
    block = 1.0 - (t_desc @ d_desc.T) / denom
    np.clip(block, 0.0, 1.0, out=block)
    block[~t_ok, :] = 0.0
    block[:, ~d_ok] = 0.0
    return block


def lifecycle_step(track: Track, matched: bool, config: TrackerConfig) -> Track:
    """Advance one track through the state table for this frame."""
    if matched:
        track.consecutive_hits += 1
        track.lost_age = 0
        if track.state is TrackState.LOST:
            track.state = TrackState.CONFIRMED
        elif track.state is TrackState.TENTATIVE:
            if track.consecutive_hits >= config.confirm_hits:
                track.state = TrackState.CONFIRMED
        return track
    track.consecutive_hits = 0
    if track.state is TrackState.TENTATIVE:
        track.state = TrackState.REMOVED
    elif track.state is TrackState.CONFIRMED:
        track.state = TrackState.LOST
        track.lost_age = 1
    elif track.state is TrackState.LOST:
        track.lost_age += 1
        if track.lost_age > config.max_lost_age:
            track.state = TrackState.REMOVED
    return track


class Tracker:
    """Holds live tracks and consumes frames in strictly increasing order."""

    def __init__(self, config: Optional[TrackerConfig] = None):
        self.config = config if config is not None else TrackerConfig()
        self.tracks: list[Track] = []
        self.next_id = 1
        self.last_frame = 0
        self._first_frame: Optional[int] = None
        # (frame, IoU of predicted box vs matched detection) per stage-1 match
        self.stage1_match_ious: list[tuple[int, float]] = []

    def associate_frame(
        self, frame_detections: FrameDetections, m: Optional[mo.AffineTransform]
    ) -> list[TrackRecord]:
        """Process one frame; returns the confirmed-track records for it."""
        cfg = self.config
        frame = frame_detections.frame
        if frame <= self.last_frame:
            raise FrameOrderError(
                f"frame {frame} arrived after frame {self.last_frame}"
            )
        if self._first_frame is None:
            self._first_frame = frame
        self.last_frame = frame

        dets = [d for d in frame_detections.detections if d.score >= cfg.theta_low]
        high = [d for d in dets if d.score >= cfg.theta_high]
        low = [d for d in dets if d.score < cfg.theta_high]
        descriptors = self._descriptors(dets) if cfg.w_r > 0 else [None] * len(dets)
        desc_of = {id(d): desc for d, desc in zip(dets, descriptors)}

        m_eff = m if cfg.use_dmp else None
        pool = list(self.tracks)
        predicted = self._predict_pool(pool, m_eff)

        cost, ious = _fused_cost(
            pool, predicted, high, [desc_of[id(d)] for d in high], cfg
        )
        stage1 = linear_assignment(cost)
        for j, i in stage1.matches:
            self.stage1_match_ious.append((frame, float(ious[j, i])))

        leftover_idx = [j for j in stage1.unmatched_rows
                        if pool[j].state is not TrackState.LOST]
        leftovers = [pool[j] for j in leftover_idx]
        leftover_boxes = predicted[leftover_idx] if leftover_idx else np.zeros((0, 4))
        cost2 = iou_cost_matrix(leftovers, leftover_boxes, low, cfg)
        stage2 = linear_assignment(cost2)

        matched = [(pool[j], high[i]) for j, i in stage1.matches]
        matched += [(leftovers[j], low[i]) for j, i in stage2.matches]
        self._batch_motion_update(matched)
        for track, det in matched:
            self._absorb(track, det, desc_of[id(det)], frame)

        for t in pool:
            if t.last_frame != frame:
                lifecycle_step(t, False, cfg)

        for i in stage1.unmatched_cols:
            self._spawn(high[i], desc_of[id(high[i])], frame)

        self.tracks = [t for t in self.tracks if t.state is not TrackState.REMOVED]
        records = [
            TrackRecord(frame, t.track_id, mo.state_to_box(t.motion.mean),
                        t.last_score, t.class_id)
            for t in self.tracks
            if t.state is TrackState.CONFIRMED and t.last_frame == frame
        ]
        log.debug("frame %d: %d dets, %d live tracks, %d emitted",
                  frame, len(dets), len(self.tracks), len(records))
        return records

    # -- internals ---------------------------------------------------------

    def _descriptors(self, dets: Sequence[Detection]) -> list[Optional[np.ndarray]]:
        centers = np.array(
            [d.bbox.center() for d in dets], dtype=np.float64
        ).reshape(-1, 2)
        return mo.frame_descriptors(centers, self.config.radius_R)

    @staticmethod
    def _batch_motion_update(matched: list[tuple[Track, Detection]]) -> None:
        if not matched:
            return
        means = np.stack([t.motion.mean for t, _ in matched])
        covs = np.stack([t.motion.covariance for t, _ in matched])
        means, covs = mo.multi_update(means, covs, [d.bbox for _, d in matched])
        for k, (t, _) in enumerate(matched):
            t.motion = mo.MotionState(means[k], covs[k])

    def _predict_pool(
        self, pool: Sequence[Track], m: Optional[mo.AffineTransform]
    ) -> np.ndarray:
        """Warp+predict every track in place; returns predicted boxes (N, 4)."""
        if not pool:
            return np.zeros((0, 4))
        means = np.stack([t.motion.mean for t in pool])
        covs = np.stack([t.motion.covariance for t in pool])
        means, covs = mo.multi_predict(means, covs, m)
        for k, t in enumerate(pool):
            t.motion = mo.MotionState(means[k], covs[k])
        h = np.maximum(means[:, 3], 1e-3)
        w = np.maximum(means[:, 2] * h, 1e-3)
        return np.column_stack([means[:, 0] - w / 2, means[:, 1] - h / 2, w, h])

    def _absorb(
        self, track: Track, det: Detection, desc: Optional[np.ndarray], frame: int
    ) -> None:
        """Feature, descriptor, and lifecycle effects of a match; the motion
        correction itself happens in _batch_motion_update beforehand."""
        cfg = self.config
        was_lost = track.state is TrackState.LOST
        if det.embedding is not None and det.score >= cfg.theta_high:
            if cfg.use_afs:
                ap.update_local_feature(
                    track, det.embedding, det.score, cfg.theta_high, cfg.alpha_f
                )
                # the bank stays frozen through the frame that re-acquires a
                # lost track; inserts resume once it is confirmed again
                if not was_lost and track.key_bank is not None:
                    ap.maybe_insert_key(
                        track.key_bank, det.embedding, frame, cfg.novelty_threshold
                    )
            else:
                if track.local_feature is None:
                    track.local_feature = det.embedding
                else:
                    track.local_feature = ap.blend_feature(
                        track.local_feature, det.embedding, cfg.alpha_f
                    )
        if desc is not None:
            track.rotation = desc
        track.last_frame = frame
        track.last_score = det.score
        lifecycle_step(track, True, cfg)

    def _spawn(self, det: Detection, desc: Optional[np.ndarray], frame: int) -> None:
        state = (
            TrackState.CONFIRMED if frame == self._first_frame else TrackState.TENTATIVE
        )
        track = Track(
            track_id=self.next_id,
            class_id=det.class_id,
            state=state,
            motion=mo.kalman_init(det.bbox),
            local_feature=det.embedding,
            key_bank=ap.KeyFeatureBank(self.config.key_bank_capacity),
            rotation=desc,
            consecutive_hits=1,
            lost_age=0,
            last_frame=frame,
            last_score=det.score,
        )
        if self.config.use_afs and det.embedding is not None:
            ap.maybe_insert_key(
                track.key_bank, det.embedding, frame, self.config.novelty_threshold
            )
        self.next_id += 1
        self.tracks.append(track)
