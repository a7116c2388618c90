"""Appearance memory for tracks: a confidence-adaptive EMA over the local
feature plus a small LRU bank of historically distinct "key" features.

All features are unit-norm float64 vectors. Cosine similarity is therefore
a plain dot product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Track, normalize


def adaptive_alpha(s: float, theta: float, alpha_f: float) -> float:
    """Blend weight for the previous feature given detection confidence s.

    alpha = alpha_f + (1 - alpha_f) * exp(theta - s), clamped to <= 1. At
    s = theta the weight is exactly 1 (no update from borderline scores);
    it decays monotonically toward alpha_f as confidence grows.
    """
    return min(1.0, alpha_f + (1.0 - alpha_f) * math.exp(theta - s))


def blend_feature(prev: np.ndarray, f: np.ndarray, alpha: float) -> np.ndarray:
    """alpha-weighted average of two unit features, renormalized."""
    return normalize(alpha * prev + (1.0 - alpha) * f)


def update_local_feature(
    track: Track, f: np.ndarray, s: float, theta: float, alpha_f: float
) -> np.ndarray:
    """Fold a matched detection's feature into the track's local feature."""
    alpha = adaptive_alpha(s, theta, alpha_f)
    if track.local_feature is None:
        track.local_feature = np.asarray(f, dtype=np.float64)
    else:
        track.local_feature = blend_feature(track.local_feature, f, alpha)
    return track.local_feature


@dataclass
class BankEntry:
    feature: np.ndarray
    last_used: int


@dataclass
class KeyFeatureBank:
    """Bounded store of distinct appearance snapshots with LRU eviction."""

    capacity: int
    entries: list[BankEntry] = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("bank capacity must be >= 1")

    def features(self) -> list[np.ndarray]:
        return [e.feature for e in self.entries]


def maybe_insert_key(
    bank: KeyFeatureBank, f: np.ndarray, frame: int, novelty_threshold: float
) -> KeyFeatureBank:
    """Insert f as a key feature when it is novel enough, else touch the
    closest entry.

    Novelty is minimum cosine distance to the bank exceeding the threshold.
    Insertion into a full bank evicts the least-recently-used entry (ties
    broken toward the oldest slot). Mutates and returns the bank.
    """
    f = np.asarray(f, dtype=np.float64)
    if not bank.entries:
        bank.entries.append(BankEntry(f, frame))
        return bank
    sims = np.array([float(np.dot(e.feature, f)) for e in bank.entries])
    closest = int(np.argmax(sims))
    if 1.0 - sims[closest] > novelty_threshold:
        if len(bank.entries) >= bank.capacity:
            ages = [e.last_used for e in bank.entries]
            bank.entries.pop(ages.index(min(ages)))
        bank.entries.append(BankEntry(f, frame))
    else:
        bank.entries[closest].last_used = frame
    return bank


def appearance_cost(track: Track, f: Optional[np.ndarray]) -> float:
    """1 - best cosine similarity of f against the track's local feature and
    its key bank, clamped to [0, 1]. Neutral 0 when either side lacks a
    feature."""
    if f is None:
        return 0.0
    gallery = _gallery(track)
    if gallery is None:
        return 0.0
    best = float(np.max(gallery @ f))
    return min(1.0, max(0.0, 1.0 - best))


def appearance_costs(track: Track, feats: np.ndarray) -> np.ndarray:
    """Vectorized appearance_cost of one track against an (M, D) block."""
    gallery = _gallery(track)
    if gallery is None:
        return np.zeros(feats.shape[0], dtype=np.float64)
    best = (gallery @ feats.T).max(axis=0)
    return np.clip(1.0 - best, 0.0, 1.0)


def appearance_cost_matrix(tracks: list[Track], feats: np.ndarray) -> np.ndarray:
    """appearance_costs for many tracks through one stacked matmul.

    Rows follow the track order; tracks without any stored feature get a
    neutral all-zero row. Kept in lockstep with appearance_costs by tests.
    """
    block = np.zeros((len(tracks), feats.shape[0]), dtype=np.float64)
    galleries = [_gallery(t) for t in tracks]
    stacked = [g for g in galleries if g is not None]
    if not stacked:
        return block
    sims = np.vstack(stacked) @ feats.T
    start = 0
    for j, gallery in enumerate(galleries):
        if gallery is None:
            continue
        stop = start + gallery.shape[0]
        block[j] = np.clip(1.0 - sims[start:stop].max(axis=0), 0.0, 1.0)
        start = stop
    return block


def _gallery(track: Track) -> Optional[np.ndarray]:
    feats = []
    if track.local_feature is not None:
        feats.append(track.local_feature)
    if track.key_bank is not None:
        feats.extend(track.key_bank.features())
    if not feats:
        return None
    return np.stack(feats)
