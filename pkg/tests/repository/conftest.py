"""
Pytest configuration and shared fixtures for episode repository tests.
"""

import sys
from pathlib import Path

import pytest

# Add parent directory to path to import modules
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from models import Episode
from repository import EpisodeRepository, encode_episode

HEADER_SIZE = 44
VEHICLE_SIZE = 5


@pytest.fixture
def repository(tmp_path: Path) -> EpisodeRepository:
    """Repository over an empty temporary directory."""
    return EpisodeRepository(tmp_path / "episodes")


@pytest.fixture
def encoded_episode(overtaking_episode: Episode) -> bytes:
    return encode_episode(overtaking_episode)


@pytest.fixture
def first_step_offset(overtaking_episode: Episode) -> int:
    """Byte offset of the first step record."""
    return HEADER_SIZE + VEHICLE_SIZE * len(overtaking_episode.vehicles)
