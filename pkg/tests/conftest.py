"""Shared helpers for the test suite."""

import numpy as np
import pytest

from drone_assoc.appearance import BankEntry, KeyFeatureBank
from drone_assoc.core import BoundingBox, Detection, Track, TrackState
from drone_assoc.motion import kalman_init


def unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.normal(0.0, 1.0, dim)
    return v / np.linalg.norm(v)


def make_track(
    bbox=BoundingBox(0.0, 0.0, 10.0, 10.0),
    track_id=1,
    class_id=1,
    state=TrackState.CONFIRMED,
    local_feature=None,
    bank_features=(),
    rotation=None,
) -> Track:
    bank = KeyFeatureBank(capacity=10)
    bank.entries = [BankEntry(np.asarray(f, dtype=np.float64), i)
                    for i, f in enumerate(bank_features)]
    return Track(
        track_id=track_id,
        class_id=class_id,
        state=state,
        motion=kalman_init(bbox),
        local_feature=None if local_feature is None
        else np.asarray(local_feature, dtype=np.float64),
        key_bank=bank,
        rotation=None if rotation is None else np.asarray(rotation, dtype=np.float64),
        consecutive_hits=1,
        last_frame=1,
        last_score=0.9,
    )


def det(x, y, w=10.0, h=10.0, score=0.9, class_id=1, embedding=None) -> Detection:
    return Detection(BoundingBox(x, y, w, h), score, class_id, embedding)


@pytest.fixture
def rng():
    return np.random.default_rng(7)
