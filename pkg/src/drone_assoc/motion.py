"""Motion models: constant-velocity Kalman filter on (cx, cy, a, h),
camera-motion compensation via 2x3 affine warps, and a triangle-based
rotation descriptor over neighboring object centers.

The filter state is [cx, cy, a, h, vcx, vcy, va, vh] where a = w / h.
Noise scales with box height: weight 1/20 on position terms, 1/160 on
velocity terms. Camera compensation always runs before prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import BoundingBox, Track

STD_WEIGHT_POSITION = 1.0 / 20.0
STD_WEIGHT_VELOCITY = 1.0 / 160.0

# smallest box extent reconstructed from a filter state
_MIN_EXTENT = 1e-3

_F = np.eye(8, dtype=np.float64)
_F[:4, 4:] = np.eye(4)
_H = np.eye(4, 8, dtype=np.float64)


class DegenerateTransformError(ValueError):
    """Raised for affine transforms with |det| <= 1e-9."""


class AffineEstimationError(RuntimeError):
    """Raised when no affine can be estimated; callers fall back to identity."""


@dataclass(frozen=True)
class MotionState:
    """Kalman mean (8,) and covariance (8, 8) for one track."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        if self.mean.shape != (8,) or self.covariance.shape != (8, 8):
            raise ValueError("motion state must be mean (8,) and covariance (8, 8)")


@dataclass(frozen=True)
class AffineTransform:
    """2x3 matrix [[a, b, tx], [c, d, ty]] mapping previous-frame points
    to current-frame points."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (2, 3):
            raise ValueError("affine matrix must have shape (2, 3)")
        if not np.all(np.isfinite(m)):
            raise DegenerateTransformError("affine matrix has non-finite entries")
        object.__setattr__(self, "m", m)
        if abs(self.det()) <= 1e-9:
            raise DegenerateTransformError("affine transform is numerically singular")

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    def det(self) -> float:
        m = self.m
        return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])

    @property
    def linear(self) -> np.ndarray:
        return self.m[:, :2]

    @property
    def translation(self) -> np.ndarray:
        return self.m[:, 2]

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        """Transform an (N, 2) point array."""
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.linear.T + self.translation

    def inverse(self) -> "AffineTransform":
        inv = np.linalg.inv(self.linear)
        t = -inv @ self.translation
        return AffineTransform(np.column_stack([inv, t]))


def _measurement(box: BoundingBox) -> np.ndarray:
    cx, cy = box.center()
    return np.array([cx, cy, box.w / box.h, box.h], dtype=np.float64)


def state_to_box(mean: np.ndarray) -> BoundingBox:
    """Reconstruct an xywh box from a filter mean, clamped to positive extent."""
    h = max(float(mean[3]), _MIN_EXTENT)
    w = max(float(mean[2]) * h, _MIN_EXTENT)
    return BoundingBox(float(mean[0]) - w / 2.0, float(mean[1]) - h / 2.0, w, h)


def kalman_init(box: BoundingBox) -> MotionState:
    """Start a filter at a measured box with zero velocity.

    The initial uncertainty scales with box height: doubled position weight
    on the observed components, 10x velocity weight on the unobserved ones.
    """
    z = _measurement(box)
    mean = np.zeros(8, dtype=np.float64)
    mean[:4] = z
    h = z[3]
    std = np.array(
        [
            2 * STD_WEIGHT_POSITION * h,
            2 * STD_WEIGHT_POSITION * h,
            1e-2,
            2 * STD_WEIGHT_POSITION * h,
            10 * STD_WEIGHT_VELOCITY * h,
            10 * STD_WEIGHT_VELOCITY * h,
            1e-5,
            10 * STD_WEIGHT_VELOCITY * h,
        ],
        dtype=np.float64,
    )
    return MotionState(mean, np.diag(std * std))


def _process_noise(h: float) -> np.ndarray:
    std = np.array(
        [
            STD_WEIGHT_POSITION * h,
            STD_WEIGHT_POSITION * h,
            1e-2,
            STD_WEIGHT_POSITION * h,
            STD_WEIGHT_VELOCITY * h,
            STD_WEIGHT_VELOCITY * h,
            1e-5,
            STD_WEIGHT_VELOCITY * h,
        ],
        dtype=np.float64,
    )
    return std * std


def _measurement_noise(h: float) -> np.ndarray:
    std = np.array(
        [
            STD_WEIGHT_POSITION * h,
            STD_WEIGHT_POSITION * h,
            1e-1,
            STD_WEIGHT_POSITION * h,
        ],
        dtype=np.float64,
    )
    return std * std


def kalman_predict(s: MotionState) -> MotionState:
    """One constant-velocity step: mean <- F mean, cov <- F cov F' + Q."""
    mean = _F @ s.mean
    cov = _F @ s.covariance @ _F.T
    cov[np.diag_indices(8)] += _process_noise(float(s.mean[3]))
    return MotionState(mean, cov)


def kalman_update(s: MotionState, box: BoundingBox) -> MotionState:
    """Fold a measured box into the state (standard Kalman correction)."""
    z = _measurement(box)
    r = _measurement_noise(float(s.mean[3]))
    pht = s.covariance @ _H.T
    innov_cov = _H @ pht + np.diag(r)
    gain = np.linalg.solve(innov_cov, pht.T).T
    mean = s.mean + gain @ (z - _H @ s.mean)
    cov = s.covariance - gain @ innov_cov @ gain.T
    cov = (cov + cov.T) * 0.5
    return MotionState(mean, cov)


def multi_update(
    means: np.ndarray, covs: np.ndarray, boxes: Sequence[BoundingBox]
) -> tuple[np.ndarray, np.ndarray]:
    """Batched kalman_update over stacked (N, 8) means and (N, 8, 8) covs.

    One box per state, same order. Kept in lockstep with the per-state
    function by tests.
    """
    means = np.array(means, dtype=np.float64)
    covs = np.array(covs, dtype=np.float64)
    if means.shape[0] == 0:
        return means, covs
    z = np.stack([_measurement(b) for b in boxes])
    h = means[:, 3]
    std = np.column_stack(
        [
            STD_WEIGHT_POSITION * h,
            STD_WEIGHT_POSITION * h,
            np.full_like(h, 1e-1),
            STD_WEIGHT_POSITION * h,
        ]
    )
    pht = covs[:, :, :4]
    innov_cov = pht[:, :4, :].copy()
    idx = np.arange(4)
    innov_cov[:, idx, idx] += std * std
    gain = np.linalg.solve(innov_cov, np.transpose(pht, (0, 2, 1)))
    gain = np.transpose(gain, (0, 2, 1))
    means = means + np.einsum("nij,nj->ni", gain, z - means[:, :4])
    covs = covs - gain @ innov_cov @ np.transpose(gain, (0, 2, 1))
    covs = (covs + np.transpose(covs, (0, 2, 1))) * 0.5
    return means, covs


def _warp_matrix(m: AffineTransform) -> np.ndarray:
    """8x8 linear map applied to the filter state under a viewport affine:
    the linear part acts on position and velocity, h and vh pick up the
    isotropic scale factor, the aspect ratio is left alone."""
    scale = math.sqrt(abs(m.det()))
    t8 = np.eye(8, dtype=np.float64)
    t8[0:2, 0:2] = m.linear
    t8[3, 3] = scale
    t8[4:6, 4:6] = m.linear
    t8[7, 7] = scale
    return t8


def warp_motion_state(s: MotionState, m: AffineTransform) -> MotionState:
    """Re-express a filter state in the coordinates of the next frame."""
    t8 = _warp_matrix(m)
    mean = t8 @ s.mean
    mean[0:2] += m.translation
    cov = t8 @ s.covariance @ t8.T
    return MotionState(mean, cov)


def predict_state(s: MotionState, m: Optional[AffineTransform]) -> MotionState:
    """Camera-compensate (when a transform is given) then predict."""
    if m is not None:
        s = warp_motion_state(s, m)
    return kalman_predict(s)


def predict_tracks(
    tracks: Sequence[Track], m: Optional[AffineTransform]
) -> list[BoundingBox]:
    """Predicted boxes for a set of tracks, without mutating them."""
    return [state_to_box(predict_state(t.motion, m).mean) for t in tracks]


def multi_predict(
    means: np.ndarray, covs: np.ndarray, m: Optional[AffineTransform]
) -> tuple[np.ndarray, np.ndarray]:
    """Batched predict_state over stacked (N, 8) means and (N, 8, 8) covs.

    Matches the per-state functions to floating-point identity in exact
    arithmetic; kept in lockstep by tests.
    """
    means = np.array(means, dtype=np.float64)
    covs = np.array(covs, dtype=np.float64)
    if means.shape[0] == 0:
        return means, covs
    heights = means[:, 3].copy()
    if m is not None:
        t8 = _warp_matrix(m)
        means = means @ t8.T
        means[:, 0:2] += m.translation
        covs = t8 @ covs @ t8.T
        heights = means[:, 3]
    means = means @ _F.T
    covs = _F @ covs @ _F.T
    std = np.column_stack(
        [
            STD_WEIGHT_POSITION * heights,
            STD_WEIGHT_POSITION * heights,
            np.full_like(heights, 1e-2),
            STD_WEIGHT_POSITION * heights,
            STD_WEIGHT_VELOCITY * heights,
            STD_WEIGHT_VELOCITY * heights,
            np.full_like(heights, 1e-5),
            STD_WEIGHT_VELOCITY * heights,
        ]
    )
    idx = np.arange(8)
    covs[:, idx, idx] += std * std
    return means, covs


def apply_affine(box: BoundingBox, m: AffineTransform) -> BoundingBox:
    """Axis-aligned hull of the four transformed corners of a box."""
    corners = np.array(
        [
            [box.x, box.y],
            [box.x + box.w, box.y],
            [box.x, box.y + box.h],
            [box.x + box.w, box.y + box.h],
        ]
    )
    warped = m.apply_points(corners)
    x1, y1 = warped.min(axis=0)
    x2, y2 = warped.max(axis=0)
    return BoundingBox(float(x1), float(y1), float(x2 - x1), float(y2 - y1))


def estimate_affine(
    prev_points: np.ndarray,
    cur_points: np.ndarray,
    rng: Optional[np.random.Generator] = None,
    inlier_threshold: float = 3.0,
    max_iterations: int = 100,
) -> AffineTransform:
    """Robust least-squares affine from matched point pairs.

    Resamples minimal 3-point models up to `max_iterations` times, keeps the
    largest consensus set under `inlier_threshold` (px), and refits on it.
    Raises AffineEstimationError with fewer than 3 pairs or when every
    candidate support is collinear; callers treat that as identity.
    """
    prev = np.asarray(prev_points, dtype=np.float64).reshape(-1, 2)
    cur = np.asarray(cur_points, dtype=np.float64).reshape(-1, 2)
    if prev.shape != cur.shape:
        raise ValueError("point arrays must have matching shapes")
    n = prev.shape[0]
    if n < 3:
        raise AffineEstimationError("need at least 3 point pairs")
    rng = rng if rng is not None else np.random.default_rng(0)

    best_inliers: Optional[np.ndarray] = None
    for _ in range(max_iterations):
        pick = rng.choice(n, size=3, replace=False)
        model = _fit_affine_lstsq(prev[pick], cur[pick])
        if model is None:
            continue
        resid = np.linalg.norm(model.apply_points(prev) - cur, axis=1)
        inliers = resid <= inlier_threshold
        if best_inliers is None or inliers.sum() > best_inliers.sum():
            best_inliers = inliers
        if inliers.sum() == n:
            break

    if best_inliers is None or best_inliers.sum() < 3:
        raise AffineEstimationError("no 3-pair support found for an affine fit")
    refit = _fit_affine_lstsq(prev[best_inliers], cur[best_inliers])
    if refit is None:
        raise AffineEstimationError("consensus points are collinear")
    return refit


def _fit_affine_lstsq(prev: np.ndarray, cur: np.ndarray) -> Optional[AffineTransform]:
    """Exact/least-squares affine fit; None when the system is degenerate."""
    n = prev.shape[0]
    a = np.zeros((2 * n, 6), dtype=np.float64)
    a[0::2, 0:2] = prev
    a[0::2, 2] = 1.0
    a[1::2, 3:5] = prev
    a[1::2, 5] = 1.0
    b = cur.reshape(-1)
    if np.linalg.matrix_rank(a) < 6:
        return None
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    m = np.array([[sol[0], sol[1], sol[2]], [sol[3], sol[4], sol[5]]])
    try:
        return AffineTransform(m)
    except DegenerateTransformError:
        return None


def rotation_descriptor(
    subject: tuple[float, float],
    neighbors: Iterable[tuple[float, float]],
    radius: float,
) -> Optional[np.ndarray]:
    """Triangle shape descriptor of a point among its neighbors.

    Builds the triangle {subject, nearest neighbor, farthest neighbor} over
    neighbors at distance in (0, radius], and returns
    [smallest angle, second-smallest angle, side opposite the largest angle
    divided by radius]. Returns None when fewer than two distinct neighbors
    qualify or the triangle is degenerate (area < 1e-6 px^2).
    """
    p0 = np.asarray(subject, dtype=np.float64)
    pts = np.asarray(list(neighbors), dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] < 2:
        return None
    d = np.linalg.norm(pts - p0, axis=1)
    keep = (d > 0.0) & (d <= radius)
    if keep.sum() < 2:
        return None
    pts = pts[keep]
    d = d[keep]
    order = np.argsort(d, kind="stable")
    p1 = pts[order[0]]
    p2 = pts[order[-1]]

    e1 = p1 - p0
    e2 = p2 - p0
    area = 0.5 * abs(float(e1[0] * e2[1] - e1[1] * e2[0]))
    if area < 1e-6:
        return None

    # side lengths opposite each vertex: s0 faces the subject
    s0 = _edge_length(p1, p2)
    s1 = _edge_length(p0, p2)
    s2 = _edge_length(p0, p1)
    angles = np.array(
        [
            _triangle_angle(s0, s1, s2),
            _triangle_angle(s1, s2, s0),
            _triangle_angle(s2, s0, s1),
        ]
    )
    sides = np.array([s0, s1, s2])
    largest = int(np.argmax(angles))
    two_smallest = np.sort(angles)[:2]
    return np.array(
        [two_smallest[0], two_smallest[1], sides[largest] / radius],
        dtype=np.float64,
    )


def _triangle_angle(opposite: float, b: float, c: float) -> float:
    """Angle opposite the first side, by the law of cosines."""
    cos_a = (b * b + c * c - opposite * opposite) / (2.0 * b * c)
    return math.acos(min(1.0, max(-1.0, cos_a)))


def _edge_length(a: np.ndarray, b: np.ndarray) -> float:
    # spelled out so the batched variant reproduces the same rounding
    dx = float(a[0] - b[0])
    dy = float(a[1] - b[1])
    return math.sqrt(dx * dx + dy * dy)


def frame_descriptors(
    centers: np.ndarray, radius: float
) -> list[Optional[np.ndarray]]:
    """rotation_descriptor of every point in a frame against the others.

    Shares one pairwise-distance matrix across subjects; kept in lockstep
    with the per-subject function by tests. Entries are None under the same
    conditions (fewer than two qualifying neighbors, degenerate triangle).
    """
    pts = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    n = pts.shape[0]
    out: list[Optional[np.ndarray]] = [None] * n
    if n < 3:
        return out
    diff = pts[None, :, :] - pts[:, None, :]
    d = np.linalg.norm(diff, axis=2)
    qual = (d > 0.0) & (d <= radius)
    valid = qual.sum(axis=1) >= 2
    if not valid.any():
        return out

    nearest = np.argmin(np.where(qual, d, np.inf), axis=1)
    # ties on the farthest distance resolve to the last qualifying index
    farthest = n - 1 - np.argmax(np.where(qual, d, -np.inf)[:, ::-1], axis=1)

    p1 = pts[nearest]
    p2 = pts[farthest]
    e1 = p1 - pts
    e2 = p2 - pts
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    valid &= area >= 1e-6

    s0 = _edge_lengths(p1, p2)
    s1 = _edge_lengths(pts, p2)
    s2 = _edge_lengths(pts, p1)
    angles = np.column_stack(
        [
            _triangle_angles(s0, s1, s2),
            _triangle_angles(s1, s2, s0),
            _triangle_angles(s2, s0, s1),
        ]
    )
    sides = np.column_stack([s0, s1, s2])
    two_smallest = np.sort(angles, axis=1)
    opposite = sides[np.arange(n), np.argmax(angles, axis=1)] / radius
    for i in np.nonzero(valid)[0]:
        out[i] = np.array(
            [two_smallest[i, 0], two_smallest[i, 1], opposite[i]], dtype=np.float64
        )
    return out


def _triangle_angles(opposite: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """_triangle_angle over aligned arrays; zero denominators are masked to
    keep degenerate (already-invalid) rows from raising."""
    denom = 2.0 * b * c
    denom = np.where(denom > 0.0, denom, 1.0)
    cos_a = (b * b + c * c - opposite * opposite) / denom
    return np.arccos(np.clip(cos_a, -1.0, 1.0))


def _edge_lengths(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    dx = a[:, 0] - b[:, 0]
    dy = a[:, 1] - b[:, 1]
    return np.sqrt(dx * dx + dy * dy)


def rotation_cost(a: Optional[np.ndarray], b: Optional[np.ndarray]) -> float:
    """1 - cosine similarity between two descriptors, clamped to [0, 1].

    A missing descriptor on either side contributes a neutral 0 cost.
    """
    if a is None or b is None:
        return 0.0
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom < 1e-12:
        return 0.0
    cost = 1.0 - float(np.dot(a, b)) / denom
    return min(1.0, max(0.0, cost))
