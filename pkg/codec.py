"""
Compact wire format for sharing a tracked observation window, and a V2V
channel simulator.

Only detections and track ids travel: spatial edges are complete per frame
and temporal edges follow from track ids, so the receiver rebuilds the graph.

Layout, little-endian with no padding:

    header     version u8, vehicle_id u16, frame_count u8,
               base_timestamp u32 (deciseconds),
               pose x i32, y i32 (cm), z i16 (cm), yaw u16 (2*pi/65536)
    frame      offset u8 (deciseconds after base_timestamp), count u16
    detection  track_id u16, x i16, y i16, z i16 (cm, sensor frame)

There is no checksum: decoding rejects packets whose version, frame count,
frame offsets, detection counts or track ids are inconsistent, while a
corrupted vehicle id, timestamp or pose decodes as whatever it now reads.
Integrity is left to the link layer.
"""

import logging
import math
import struct
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from errors import (
    BudgetExceededError,
    DecodeError,
    EncodingError,
    UnsupportedVersionError,
)
from models import ChannelConfig, ChannelName, CodecBenchReport, Detection, Frame, Pose

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAX_FRAMES = 15

HEADER = struct.Struct("<BHBIiihH")
FRAME = struct.Struct("<BH")
DETECTION = struct.Struct("<Hhhh")

YAW_QUANTUM = math.tau / 65536
I16_MAX = 32767
I32_MAX = 2**31 - 1

# payload sizes of the alternative sharing strategies, in bytes (1 KB = 1000 B)
RAW_SHARING_BYTES = 6_000_000
GAT_GRAPH_BYTES = 600
COMPRESSED_FEATURE_BYTES = 510_000


@dataclass(frozen=True)
class WirePacket:
    """A parsed packet."""

    vehicle_id: int
    base_timestamp: int
    pose: Pose
    frames: tuple[Frame, ...] = ()
    version: int = FORMAT_VERSION

    @property
    def frame_count(self) -> int:
        return len(self.frames)


def packet_size(detection_counts: Sequence[int]) -> int:
    """Encoded size of a window with the given per-frame detection counts."""
    return HEADER.size + sum(
        FRAME.size + DETECTION.size * count for count in detection_counts
    )


def _quantize(value: float, limit: int, what: str) -> int:
    quantized = round(value * 100)
    if not -limit <= quantized <= limit:
        raise EncodingError(
            f"{what} {value:.3f} m is outside the +/-{limit / 100} m range"
        )
    return quantized


def _deciseconds(timestamp: float) -> int:
    ticks = round(timestamp * 10)
    if abs(timestamp * 10 - ticks) > 1e-6 or ticks < 0:
        raise EncodingError(f"Timestamp {timestamp} is not a multiple of 0.1 s")
    return ticks


def encode(
    frames: Sequence[Frame], pose: Pose, vehicle_id: int | None = None
) -> bytes:
    """Serialize a tracked window and the sender's pose.

    Args:
        frames: up to 15 time-ordered frames in the sender's frame at ``pose``
        pose: sender pose at the window end
        vehicle_id: defaults to the frames' vehicle id

    Returns:
        The packet bytes
    """
    if len(frames) > MAX_FRAMES:
        raise EncodingError(
            f"{len(frames)} frames exceed the {MAX_FRAMES}-frame window"
        )
    if vehicle_id is None:
        if not frames:
            raise EncodingError("vehicle_id is required for an empty window")
        vehicle_id = frames[0].vehicle_id
    if not 0 <= vehicle_id <= 0xFFFF:
        raise EncodingError(f"Vehicle id {vehicle_id} does not fit in u16")

    ticks = [_deciseconds(frame.timestamp) for frame in frames]
    base = ticks[0] if ticks else 0
    if base > 0xFFFFFFFF:
        raise EncodingError(f"Timestamp {frames[0].timestamp} does not fit in u32")
    yaw = round((pose.yaw % math.tau) / YAW_QUANTUM) % 65536
    chunks = [
        HEADER.pack(
            FORMAT_VERSION,
            vehicle_id,
            len(frames),
            base,
            _quantize(pose.position[0], I32_MAX, "Pose x"),
            _quantize(pose.position[1], I32_MAX, "Pose y"),
            _quantize(pose.position[2], I16_MAX, "Pose z"),
            yaw,
        )
    ]
    previous = -1
    for frame, tick in zip(frames, ticks, strict=True):
        offset = tick - base
        if offset <= previous:
            raise EncodingError("Frame timestamps must strictly increase")
        if offset > 0xFF:
            raise EncodingError(f"Window spans more than 25.5 s ({offset} ds)")
        if len(frame.detections) > 0xFFFF:
            raise EncodingError(f"{len(frame.detections)} detections in one frame")
        previous = offset
        chunks.append(FRAME.pack(offset, len(frame.detections)))
        for detection in frame.detections:
            if detection.track_id > 0xFFFF:
                raise EncodingError(
                    f"Track id {detection.track_id} does not fit in u16"
                )
            x, y, z = detection.position
            chunks.append(
                DETECTION.pack(
                    detection.track_id,
                    _quantize(x, I16_MAX, "Detection x"),
                    _quantize(y, I16_MAX, "Detection y"),
                    _quantize(z, I16_MAX, "Detection z"),
                )
            )
    return b"".join(chunks)


def _unpack(layout: struct.Struct, data: bytes, offset: int) -> tuple[int, ...]:
    if offset + layout.size > len(data):
        raise DecodeError(
            f"Packet truncated: need {layout.size} bytes, {len(data) - offset} left",
            offset,
        )
    values: tuple[int, ...] = layout.unpack_from(data, offset)
    return values


def parse_packet(data: bytes) -> WirePacket:
    """Parse packet bytes, validating every structural constraint."""
    if data[:1] and data[0] != FORMAT_VERSION:
        raise UnsupportedVersionError(data[0])
    version, vehicle_id, frame_count, base, x, y, z, yaw = _unpack(HEADER, data, 0)
    if frame_count > MAX_FRAMES:
        raise DecodeError(f"Frame count {frame_count} exceeds {MAX_FRAMES}", 3)
    pose = Pose(position=(x / 100, y / 100, z / 100), yaw=yaw * YAW_QUANTUM)

    offset = HEADER.size
    previous = -1
    frames = []
    for _ in range(frame_count):
        frame_offset, count = _unpack(FRAME, data, offset)
        if frame_offset <= previous:
            raise DecodeError("Frame offsets must strictly increase", offset)
        previous = frame_offset
        offset += FRAME.size
        detections = []
        seen: set[int] = set()
        for _ in range(count):
            track_id, dx, dy, dz = _unpack(DETECTION, data, offset)
            if track_id in seen:
                raise DecodeError(f"Duplicate track id {track_id} in frame", offset)
            seen.add(track_id)
            detections.append(
                Detection(track_id=track_id, position=(dx / 100, dy / 100, dz / 100))
            )
            offset += DETECTION.size
        frames.append(
            Frame(
                vehicle_id=vehicle_id,
                timestamp=(base + frame_offset) / 10,
                detections=tuple(detections),
            )
        )
    if offset != len(data):
        raise DecodeError(f"{len(data) - offset} trailing bytes", offset)
    return WirePacket(
        vehicle_id=vehicle_id,
        base_timestamp=base,
        pose=pose,
        frames=tuple(frames),
        version=version,
    )


def decode(data: bytes) -> tuple[list[Frame], Pose]:
    packet = parse_packet(data)
    return list(packet.frames), packet.pose


def measure_ps(packet: bytes) -> int:
    """Package size in bytes."""
    return len(packet)


@dataclass(frozen=True)
class Transmission:
    delivered: bytes | None
    latency: float

    @property
    def lost(self) -> bool:
        return self.delivered is None


def transmit(
    packet: bytes, channel: ChannelConfig, rng: np.random.Generator
) -> Transmission:
    """Send one packet: reject if over budget, drop whole with the loss
    probability, else deliver after size * 8 / bandwidth seconds."""
    size = measure_ps(packet)
    if size > channel.max_package_bytes:
        raise BudgetExceededError(size, channel.max_package_bytes, channel.name)
    latency = size * 8 / channel.bandwidth_bps
    if rng.random() < channel.loss_probability:
        return Transmission(delivered=None, latency=latency)
    return Transmission(delivered=packet, latency=latency)


@dataclass
class V2VChannel:
    """A channel with one independent rng stream per (sender, receiver) link.

    Passing ``sequence`` to ``send`` gives each (link, sequence) its own
    stream, so a loss draw does not depend on what was sent before it.
    """

    config: ChannelConfig
    seed: int = 0
    sent: int = 0
    lost: int = 0
    sizes: list[int] = field(default_factory=list)
    latencies: list[float] = field(default_factory=list)
    _links: dict[tuple[int, ...], np.random.Generator] = field(
        default_factory=dict, repr=False
    )

    def link(
        self, sender: int, receiver: int, sequence: int | None = None
    ) -> np.random.Generator:
        key = (sender, receiver) if sequence is None else (sender, receiver, sequence)
        if key not in self._links:
            self._links[key] = np.random.default_rng([self.seed, *key])
        return self._links[key]

    def send(
        self, packet: bytes, sender: int, receiver: int, sequence: int | None = None
    ) -> Transmission:
        result = transmit(packet, self.config, self.link(sender, receiver, sequence))
        self.sent += 1
        self.sizes.append(measure_ps(packet))
        self.latencies.append(result.latency)
        if result.lost:
            self.lost += 1
            logger.debug(f"Packet {sender}->{receiver} lost")
        return result


def bench_report(sizes: Sequence[int], channel: ChannelConfig) -> CodecBenchReport:
    """Package-size statistics and the per-standard feasibility verdict."""
    largest = max(sizes, default=0)
    mean = float(np.mean(sizes)) if sizes else 0.0
    return CodecBenchReport(
        channel=channel,
        packets=len(sizes),
        ps_mean_bytes=mean,
        ps_max_bytes=largest,
        latency_ms_mean=mean * 8 / channel.bandwidth_bps * 1000,
        reduction_vs_compressed=COMPRESSED_FEATURE_BYTES / mean if mean else None,
        fits_dsrc=largest <= ChannelConfig.preset(ChannelName.DSRC).max_package_bytes,
        fits_c_v2x=largest <= ChannelConfig.preset(ChannelName.C_V2X).max_package_bytes,
    )
