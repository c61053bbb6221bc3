"""
Spatiotemporal graphs built from one vehicle's tracked frame window.

Every detection becomes a node. Spatial edges fully connect the detections of
each frame and carry their Euclidean distance; temporal edges link
appearances of the same track and carry the time gap. A missing relation is
represented by a missing edge, never by a zero-weight one.
"""

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from errors import GraphInputError
from models import EdgeKind, Frame, TemporalMode


@dataclass(frozen=True)
class STNode:
    node_id: int
    position: tuple[float, float, float]
    timestamp: float
    track_id: int
    is_ego: bool = False


@dataclass(frozen=True)
class STEdge:
    src: int
    dst: int
    kind: EdgeKind
    attr: float


def _empty_edges() -> tuple[np.ndarray, np.ndarray]:
    return np.zeros((2, 0), dtype=np.int64), np.zeros(0)


@dataclass(frozen=True, eq=False)
class SpatioTemporalGraph:
    """Array-backed graph; ``nodes`` and ``edges`` give record views."""

    positions: np.ndarray
    timestamps: np.ndarray
    track_ids: np.ndarray
    is_ego: np.ndarray
    edge_index: dict[EdgeKind, np.ndarray]
    edge_attr: dict[EdgeKind, np.ndarray]
    source_vehicle: int
    window: tuple[float, float]

    @property
    def num_nodes(self) -> int:
        return len(self.timestamps)

    def num_edges(self, kind: EdgeKind | None = None) -> int:
        if kind is not None:
            return int(self.edge_index.get(kind, _empty_edges()[0]).shape[1])
        return sum(int(index.shape[1]) for index in self.edge_index.values())

    def edges_of(self, kind: EdgeKind) -> tuple[np.ndarray, np.ndarray]:
        if kind not in self.edge_index:
            return _empty_edges()
        return self.edge_index[kind], self.edge_attr[kind]

    @property
    def nodes(self) -> list[STNode]:
        return [
            STNode(
                node_id=i,
                position=(
                    float(self.positions[i, 0]),
                    float(self.positions[i, 1]),
                    float(self.positions[i, 2]),
                ),
                timestamp=float(self.timestamps[i]),
                track_id=int(self.track_ids[i]),
                is_ego=bool(self.is_ego[i]),
            )
            for i in range(self.num_nodes)
        ]

    @property
    def edges(self) -> list[STEdge]:
        return [
            STEdge(src=int(src), dst=int(dst), kind=kind, attr=float(attr))
            for kind, index in self.edge_index.items()
            for (src, dst), attr in zip(index.T, self.edge_attr[kind], strict=True)
        ]


def complete_spatial_edges(
    positions: np.ndarray, timestamps: np.ndarray, members: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise edges between the ``members`` nodes sharing a timestamp.

    Each unordered pair is stored once with src < dst.
    """
    candidates = (
        np.arange(len(timestamps)) if members is None else np.flatnonzero(members)
    )
    sources, targets = [], []
    for timestamp in np.unique(timestamps[candidates]):
        group = candidates[timestamps[candidates] == timestamp]
        upper = np.triu_indices(len(group), k=1)
        sources.append(group[upper[0]])
        targets.append(group[upper[1]])
    if not sources:
        return _empty_edges()
    index = np.vstack([np.concatenate(sources), np.concatenate(targets)])
    index = index.astype(np.int64)
    attr = np.linalg.norm(positions[index[0]] - positions[index[1]], axis=1)
    return index, attr


def temporal_edges(
    timestamps: np.ndarray,
    track_ids: np.ndarray,
    mode: TemporalMode = TemporalMode.CONSECUTIVE,
) -> tuple[np.ndarray, np.ndarray]:
    """Edges from earlier to later appearances of each track."""
    order = np.lexsort((timestamps, track_ids))
    sources: list[int] = []
    targets: list[int] = []
    if mode == TemporalMode.CONSECUTIVE:
        same_track = track_ids[order[:-1]] == track_ids[order[1:]]
        sources = order[:-1][same_track].tolist()
        targets = order[1:][same_track].tolist()
    else:
        for track in np.unique(track_ids):
            appearances = order[track_ids[order] == track]
            for i, earlier in enumerate(appearances):
                for later in appearances[i + 1 :]:
                    sources.append(int(earlier))
                    targets.append(int(later))
    if not sources:
        return _empty_edges()
    index = np.array([sources, targets], dtype=np.int64)
    return index, timestamps[index[1]] - timestamps[index[0]]


def _check_window(frames: Sequence[Frame]) -> None:
    for previous, current in zip(frames, frames[1:], strict=False):
        if current.timestamp <= previous.timestamp:
            raise GraphInputError(
                f"Frame timestamps must strictly increase: "
                f"{previous.timestamp} then {current.timestamp}"
            )
    for frame in frames:
        track_ids = [d.track_id for d in frame.detections]
        if len(set(track_ids)) != len(track_ids):
            raise GraphInputError(
                f"Duplicate track ids in frame at t={frame.timestamp}"
            )


def build_graph(
    frames: Sequence[Frame],
    temporal_mode: TemporalMode = TemporalMode.CONSECUTIVE,
    source_vehicle: int | None = None,
) -> SpatioTemporalGraph:
    """Build the spatiotemporal graph of a time-ordered tracked window.

    Args:
        frames: tracked frames from one vehicle, at most 15
        temporal_mode: link consecutive appearances or every pair of them
        source_vehicle: defaults to the frames' vehicle id

    Returns:
        One node per detection, complete spatial edges per frame and
        temporal edges per track
    """
    _check_window(frames)
    if source_vehicle is None:
        source_vehicle = frames[0].vehicle_id if frames else 0

    positions = np.array(
        [d.position for frame in frames for d in frame.detections], dtype=float
    ).reshape(-1, 3)
    if not np.all(np.isfinite(positions)):
        raise GraphInputError("Detection positions must be finite")
    timestamps = np.array(
        [frame.timestamp for frame in frames for _ in frame.detections], dtype=float
    )
    track_ids = np.array(
        [d.track_id for frame in frames for d in frame.detections], dtype=np.int64
    )

    edge_index: dict[EdgeKind, np.ndarray] = {}
    edge_attr: dict[EdgeKind, np.ndarray] = {}
    edge_index[EdgeKind.SPATIAL], edge_attr[EdgeKind.SPATIAL] = complete_spatial_edges(
        positions, timestamps
    )
    edge_index[EdgeKind.TEMPORAL], edge_attr[EdgeKind.TEMPORAL] = temporal_edges(
        timestamps, track_ids, temporal_mode
    )
    window = (frames[0].timestamp, frames[-1].timestamp) if frames else (0.0, 0.0)
    return SpatioTemporalGraph(
        positions=positions,
        timestamps=timestamps,
        track_ids=track_ids,
        is_ego=np.zeros(len(timestamps), dtype=bool),
        edge_index=edge_index,
        edge_attr=edge_attr,
        source_vehicle=source_vehicle,
        window=window,
    )
