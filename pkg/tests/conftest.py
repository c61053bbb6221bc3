"""
Pytest configuration and shared fixtures for the V2V STGAT tests.
"""

import sys
from collections.abc import AsyncGenerator
from pathlib import Path

import fastmcp
import pytest
from fastmcp.client import Client, FastMCPTransport

# Add parent directory to path to import modules
sys.path.insert(0, str(Path(__file__).parent.parent))

import server
from models import (
    Detection,
    Episode,
    Frame,
    GraphConfig,
    ModelConfig,
    Pose,
    Scenario,
    ScenarioConfig,
    TrainConfig,
)
from repository import EpisodeRepository
from scenario import simulate_episode


@pytest.fixture
def temp_output_dir(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> Path:
    """Point V2V_STGAT_OUTPUT_DIR at a temporary directory."""
    output = tmp_path / "runs"
    monkeypatch.setenv("V2V_STGAT_OUTPUT_DIR", str(output))
    return output


@pytest.fixture(scope="session")
def short_config() -> ScenarioConfig:
    """Short trials: 40 steps leave 26 decision instants with a 15-frame window."""
    return ScenarioConfig(steps=40, trials=2)


@pytest.fixture(scope="session")
def overtaking_episode(short_config: ScenarioConfig) -> Episode:
    return simulate_episode(Scenario.OVERTAKING, 0, short_config)


@pytest.fixture(scope="session")
def street_crossing_episode(short_config: ScenarioConfig) -> Episode:
    return simulate_episode(Scenario.STREET_CROSSING, 1, short_config)


@pytest.fixture(scope="session")
def small_train_config() -> TrainConfig:
    """Two quick epochs of a small model."""
    return TrainConfig(
        epochs=2,
        batch_size=16,
        graph=GraphConfig(window=15),
        model=ModelConfig(projection_dim=8, head_dim=4, heads=2, mlp_hidden=16),
    )


@pytest.fixture
def episode_dir(
    tmp_path: Path, overtaking_episode: Episode, short_config: ScenarioConfig
) -> Path:
    """A data directory with two overtaking episodes."""
    directory = tmp_path / "episodes"
    repository = EpisodeRepository(directory)
    repository.save(overtaking_episode)
    repository.save(simulate_episode(Scenario.OVERTAKING, 1, short_config))
    return directory


@pytest.fixture
def sample_window() -> list[Frame]:
    """Three frames of two tracks, the second track missing from the middle frame."""
    return [
        Frame(
            vehicle_id=1,
            timestamp=1.0,
            detections=(
                Detection(track_id=0, position=(10.0, 0.0, 0.0)),
                Detection(track_id=1, position=(0.0, 5.0, 0.0)),
            ),
        ),
        Frame(
            vehicle_id=1,
            timestamp=1.1,
            detections=(Detection(track_id=0, position=(10.5, 0.0, 0.0)),),
        ),
        Frame(
            vehicle_id=1,
            timestamp=1.2,
            detections=(
                Detection(track_id=0, position=(11.0, 0.0, 0.0)),
                Detection(track_id=1, position=(0.0, 6.0, 0.0)),
            ),
        ),
    ]


@pytest.fixture
def sample_pose() -> Pose:
    return Pose(position=(12.5, -3.25, 0.0), yaw=0.75)


@pytest.fixture
async def mcp_client() -> AsyncGenerator[Client[FastMCPTransport], None]:
    """MCP client for testing server tools."""
    async with fastmcp.Client(server.mcp) as client:
        yield client
