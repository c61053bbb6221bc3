"""
Pytest configuration and shared fixtures for the attention network tests.
"""

import sys
from pathlib import Path

import pytest

# Add parent directory to path to import modules
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from hgat import GraphBatch, SpatioTemporalGAT
from merge import MergedGraph, merge
from models import Action, Command, Detection, Frame, ModelConfig, Pose
from stgraph import build_graph

ORIGIN = Pose(position=(0.0, 0.0, 0.0), yaw=0.0)


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(projection_dim=6, head_dim=3, heads=2, layers=2, mlp_hidden=8)


@pytest.fixture
def tiny_model(tiny_config: ModelConfig) -> SpatioTemporalGAT:
    return SpatioTemporalGAT(tiny_config, seed=3)


@pytest.fixture
def decision_graphs(sample_window: list[Frame], sample_pose: Pose) -> list[MergedGraph]:
    """Ego-only, collaborative, edgeless and single-frame decision graphs."""
    ego_frames = [
        Frame(
            vehicle_id=0,
            timestamp=t,
            detections=(Detection(track_id=9, position=(8.0 + t, -2.0, 0.0)),),
        )
        for t in (1.0, 1.1, 1.2)
    ]
    single = Frame(
        vehicle_id=0,
        timestamp=0.0,
        detections=(
            Detection(track_id=0, position=(6.0, 1.0, 0.0)),
            Detection(track_id=1, position=(-4.0, 3.0, 0.5)),
        ),
    )
    return [
        merge(build_graph(sample_window), [], ORIGIN),
        merge(
            build_graph(ego_frames),
            [(build_graph(sample_window), sample_pose)],
            ORIGIN,
        ),
        merge(build_graph([], source_vehicle=0), [], ORIGIN),
        merge(build_graph([single]), [], ORIGIN),
    ]


@pytest.fixture
def decision_batch(decision_graphs: list[MergedGraph]) -> GraphBatch:
    return GraphBatch.from_graphs(
        decision_graphs,
        [
            Command.LANE_FOLLOW,
            Command.TURN_LEFT,
            Command.GO_STRAIGHT,
            Command.TURN_RIGHT,
        ],
        [Action.BRAKE, Action.GO, Action.GO, Action.BRAKE],
    )
