"""
On-disk episode repository.

Episodes are stored one per file in a self-describing little-endian binary
layout, with a JSON text export for debugging. File layout:

    header   magic b"V2VE", version u8, scenario u8, command u8, seed u64,
             config hash 16 ASCII bytes, dt f64, steps u32, vehicles u8
    vehicle  per vehicle: id u32, kind u8
    step     action u8, object count u16,
             per object: id u32, kind u8, x y z vx vy heading half_extent f64,
             per vehicle: x y z yaw timestamp f64, detection count u16,
             per detection: track id u32, x y z f64
"""

import logging
import os
import struct
from collections.abc import Iterator
from pathlib import Path
from typing import Any

from errors import ConfigurationError, EpisodeFormatError
from models import (
    Action,
    Command,
    Detection,
    Episode,
    EpisodeSummary,
    Frame,
    ObjectKind,
    Pose,
    Scenario,
    VehicleTrace,
    WorldObject,
)

logger = logging.getLogger(__name__)

MAGIC = b"V2VE"
FORMAT_VERSION = 1
EPISODE_SUFFIX = ".episode"

SCENARIOS = list(Scenario)
KINDS = list(ObjectKind)

_HEADER = struct.Struct("<4sBBBQ16sdIB")
_VEHICLE = struct.Struct("<IB")
_STEP = struct.Struct("<BH")
_OBJECT = struct.Struct("<IB7d")
_POSE = struct.Struct("<5dH")
_DETECTION = struct.Struct("<I3d")


def get_output_dir() -> Path:
    """Default output directory: $V2V_STGAT_OUTPUT_DIR, else ./runs."""
    return Path(os.environ.get("V2V_STGAT_OUTPUT_DIR") or "runs")


def episode_filename(scenario: Scenario, seed: int) -> str:
    return f"{scenario.value}-{seed:06d}{EPISODE_SUFFIX}"


def encode_episode(episode: Episode) -> bytes:
    """Serialize an episode to the binary layout described above."""
    config_hash = episode.config_hash.encode("ascii")[:16].ljust(16, b"\0")
    chunks = [
        _HEADER.pack(
            MAGIC,
            FORMAT_VERSION,
            SCENARIOS.index(episode.scenario),
            int(episode.command),
            episode.seed,
            config_hash,
            episode.dt,
            episode.steps,
            len(episode.vehicles),
        )
    ]
    for vehicle in episode.vehicles:
        chunks.append(_VEHICLE.pack(vehicle.vehicle_id, KINDS.index(vehicle.kind)))

    for step, action in enumerate(episode.expert_actions):
        objects = episode.world[step]
        chunks.append(_STEP.pack(int(action), len(objects)))
        for obj in objects:
            chunks.append(
                _OBJECT.pack(
                    obj.id,
                    KINDS.index(obj.kind),
                    *obj.position,
                    *obj.velocity,
                    obj.heading,
                    obj.half_extent,
                )
            )
        for vehicle in episode.vehicles:
            pose, frame = vehicle.poses[step], vehicle.frames[step]
            chunks.append(
                _POSE.pack(
                    *pose.position, pose.yaw, frame.timestamp, len(frame.detections)
                )
            )
            for detection in frame.detections:
                chunks.append(_DETECTION.pack(detection.track_id, *detection.position))
    return b"".join(chunks)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def read(self, layout: struct.Struct) -> tuple[Any, ...]:
        end = self.offset + layout.size
        if end > len(self.data):
            raise EpisodeFormatError(
                f"Episode truncated at byte {self.offset} (need {layout.size} more)"
            )
        values = layout.unpack_from(self.data, self.offset)
        self.offset = end
        return values


def decode_episode(data: bytes) -> Episode:
    """Parse the binary layout back into an Episode."""
    reader = _Reader(data)
    magic, version, scenario, command, seed, raw_hash, dt, steps, vehicle_count = (
        reader.read(_HEADER)
    )
    if magic != MAGIC:
        raise EpisodeFormatError(f"Not an episode file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise EpisodeFormatError(f"Unsupported episode format version: {version}")
    if scenario >= len(SCENARIOS):
        raise EpisodeFormatError(f"Unknown scenario index: {scenario}")
    if command >= len(Command):
        raise EpisodeFormatError(f"Unknown command index: {command}")

    world: list[list[WorldObject]] = []
    actions: list[Action] = []
    try:
        header = [reader.read(_VEHICLE) for _ in range(vehicle_count)]
        traces = [
            VehicleTrace(vehicle_id=vehicle_id, kind=KINDS[kind])
            for vehicle_id, kind in header
        ]
        for _ in range(steps):
            action, object_count = reader.read(_STEP)
            actions.append(Action(action))
            objects = []
            for _ in range(object_count):
                object_id, kind, x, y, z, vx, vy, heading, half_extent = reader.read(
                    _OBJECT
                )
                objects.append(
                    WorldObject(
                        id=object_id,
                        kind=KINDS[kind],
                        position=(x, y, z),
                        velocity=(vx, vy),
                        heading=heading,
                        half_extent=half_extent,
                    )
                )
            world.append(objects)
            for trace in traces:
                x, y, z, yaw, timestamp, detection_count = reader.read(_POSE)
                trace.poses.append(Pose(position=(x, y, z), yaw=yaw))
                detections = tuple(
                    Detection(track_id=track_id, position=(dx, dy, dz))
                    for track_id, dx, dy, dz in (
                        reader.read(_DETECTION)
                        for _ in range(detection_count)
                    )
                )
                trace.frames.append(
                    Frame(
                        vehicle_id=trace.vehicle_id,
                        timestamp=timestamp,
                        detections=detections,
                    )
                )
    except (ValueError, IndexError) as e:
        if isinstance(e, EpisodeFormatError):
            raise
        raise EpisodeFormatError(
            f"Corrupt episode near byte {reader.offset}: {e}"
        ) from e

    if reader.offset != len(data):
        raise EpisodeFormatError(
            f"{len(data) - reader.offset} trailing bytes after episode"
        )
    return Episode(
        scenario=SCENARIOS[scenario],
        seed=seed,
        config_hash=raw_hash.rstrip(b"\0").decode("ascii"),
        dt=dt,
        command=Command(command),
        world=world,
        vehicles=traces,
        expert_actions=actions,
    )


class EpisodeRepository:
    """A directory of episode files."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)

    def save(self, episode: Episode) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.directory / episode_filename(episode.scenario, episode.seed)
        path.write_bytes(encode_episode(episode))
        logger.debug(f"Wrote {path}")
        return path

    def export_text(self, episode: Episode) -> Path:
        """Write the human-readable JSON export next to the binary file."""
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.directory / (
            episode_filename(episode.scenario, episode.seed) + ".json"
        )
        path.write_text(episode.model_dump_json(indent=2))
        return path

    def paths(self, scenario: Scenario | None = None) -> list[Path]:
        """Episode files sorted by name, so by scenario then seed."""
        if not self.directory.is_dir():
            raise ConfigurationError(f"Data directory not found: {self.directory}")
        prefix = f"{scenario.value}-" if scenario else ""
        pattern = f"{prefix}*{EPISODE_SUFFIX}"
        return sorted(self.directory.glob(pattern))

    @staticmethod
    def load(path: Path) -> Episode:
        try:
            data = Path(path).read_bytes()
        except FileNotFoundError as e:
            raise ConfigurationError(f"Episode file not found: {path}") from e
        return decode_episode(data)

    def episodes(self, scenario: Scenario | None = None) -> Iterator[Episode]:
        for path in self.paths(scenario):
            yield self.load(path)

    def load_all(self, scenario: Scenario | None = None) -> list[Episode]:
        episodes = list(self.episodes(scenario))
        if not episodes:
            raise ConfigurationError(f"No episode files in {self.directory}")
        logger.info(f"Loaded {len(episodes)} episodes from {self.directory}")
        return episodes


def summarize_episode(episode: Episode, path: Path | str = "") -> EpisodeSummary:
    frames = [frame for vehicle in episode.vehicles for frame in vehicle.frames]
    detections = sum(len(frame.detections) for frame in frames)
    brakes = sum(action == Action.BRAKE for action in episode.expert_actions)
    return EpisodeSummary(
        path=str(path),
        scenario=episode.scenario,
        seed=episode.seed,
        command=episode.command,
        steps=episode.steps,
        vehicles=len(episode.vehicles),
        brake_fraction=brakes / episode.steps if episode.steps else 0.0,
        mean_detections=detections / len(frames) if frames else 0.0,
    )
