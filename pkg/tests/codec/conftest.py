"""
Pytest configuration and shared fixtures for the wire format tests.
"""

import sys
from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path to import modules
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from models import Detection, Frame, Pose

# Hand-assembled packet for golden_frames() sent from golden_pose()
GOLDEN_PACKET = bytes.fromhex(
    # version 1, vehicle 7, 2 frames, base 20 ds, x 150 cm, y -225 cm, z 0, yaw 0
    "01 0700 02 14000000 96000000 1fffffff 0000 0000"
    # offset 0, 1 detection: track 3 at (1000, -50, 0) cm
    "00 0100 0300 e803 ceff 0000"
    # offset 1, 2 detections: track 3 at (1025, -50, 0), track 4 at (-300, 1200, 25)
    "01 0200 0300 0104 ceff 0000 0400 d4fe b004 1900"
)


@pytest.fixture
def golden_pose() -> Pose:
    return Pose(position=(1.5, -2.25, 0.0), yaw=0.0)


@pytest.fixture
def golden_frames() -> list[Frame]:
    return [
        Frame(
            vehicle_id=7,
            timestamp=2.0,
            detections=(Detection(track_id=3, position=(10.0, -0.5, 0.0)),),
        ),
        Frame(
            vehicle_id=7,
            timestamp=2.1,
            detections=(
                Detection(track_id=3, position=(10.25, -0.5, 0.0)),
                Detection(track_id=4, position=(-3.0, 12.0, 0.25)),
            ),
        ),
    ]


def random_window(
    rng: np.random.Generator, max_frames: int = 15, max_objects: int = 30
) -> tuple[list[Frame], Pose]:
    """A tracked window with random gaps, track ids and in-range positions."""
    tick = int(rng.integers(0, 100_000))
    frames = []
    for _ in range(int(rng.integers(0, max_frames + 1))):
        count = int(rng.integers(0, max_objects + 1))
        track_ids = rng.choice(65536, size=count, replace=False)
        positions = rng.uniform(-300.0, 300.0, size=(count, 3))
        frames.append(
            Frame(
                vehicle_id=5,
                timestamp=tick / 10,
                detections=tuple(
                    Detection(
                        track_id=int(t),
                        position=(float(p[0]), float(p[1]), float(p[2])),
                    )
                    for t, p in zip(track_ids, positions, strict=True)
                ),
            )
        )
        tick += int(rng.integers(1, 4))
    x, y = rng.uniform(-10_000.0, 10_000.0, 2)
    pose = Pose(position=(float(x), float(y), 0.0), yaw=float(rng.uniform(-3, 3)))
    return frames, pose


@pytest.fixture
def make_window() -> Callable[[np.random.Generator], tuple[list[Frame], Pose]]:
    return random_window


@pytest.fixture
def golden_packet() -> bytes:
    return GOLDEN_PACKET
