"""
Bring collaborator graphs into the ego frame and merge them into one graph.

Positions move by the planar rigid motion (ego pose)^-1 * (source pose) with
z passed through. The merged graph puts the ego node at the origin, drops
everything within the prune radius of it, coalesces cross-vehicle duplicates
and connects the ego to every remaining node.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from models import EdgeKind, Frame, MergeConfig, Pose
from stgraph import SpatioTemporalGraph, complete_spatial_edges

logger = logging.getLogger(__name__)

EGO_TRACK_ID = -1
TRACK_NAMESPACE_BITS = 32


def rotation_matrix_2d(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def pose_matrix(pose: Pose) -> np.ndarray:
    """Homogeneous 3x3 matrix taking sensor-frame xy to world xy."""
    matrix = np.eye(3)
    matrix[:2, :2] = rotation_matrix_2d(pose.yaw)
    matrix[:2, 2] = pose.position[:2]
    return matrix


def relative_transform(source_pose: Pose, target_pose: Pose) -> np.ndarray:
    """Matrix taking ``source_pose`` sensor coordinates to ``target_pose`` ones."""
    target = pose_matrix(target_pose)
    inverse = np.eye(3)
    inverse[:2, :2] = target[:2, :2].T
    inverse[:2, 2] = -target[:2, :2].T @ target[:2, 2]
    result: np.ndarray = inverse @ pose_matrix(source_pose)
    return result


def transform_points(points: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Apply a planar homogeneous transform to (N, 3) points, z unchanged."""
    moved = points.copy()
    moved[:, :2] = points[:, :2] @ matrix[:2, :2].T + matrix[:2, 2]
    return moved


def transform_graph(
    graph: SpatioTemporalGraph, source_pose: Pose, ego_pose: Pose
) -> SpatioTemporalGraph:
    """Express a graph built in the source vehicle's frame in the ego frame.

    Edge attributes are unchanged: rigid motions preserve distances and time.
    """
    matrix = relative_transform(source_pose, ego_pose)
    return SpatioTemporalGraph(
        positions=transform_points(graph.positions, matrix),
        timestamps=graph.timestamps,
        track_ids=graph.track_ids,
        is_ego=graph.is_ego,
        edge_index=graph.edge_index,
        edge_attr=graph.edge_attr,
        source_vehicle=graph.source_vehicle,
        window=graph.window,
    )


def align_window(
    frames: Sequence[Frame], poses: Sequence[Pose], reference_pose: Pose
) -> list[Frame]:
    """Re-express every frame of a window in the frame of ``reference_pose``.

    Each frame was recorded in the sensor frame of the vehicle's pose at that
    time; aligning to the pose at the window end removes the ego-motion.
    """
    aligned = []
    for frame, pose in zip(frames, poses, strict=True):
        if not frame.detections:
            aligned.append(frame)
            continue
        points = np.array([d.position for d in frame.detections], dtype=float)
        moved = transform_points(points, relative_transform(pose, reference_pose))
        aligned.append(
            frame.model_copy(
                update={
                    "detections": tuple(
                        d.model_copy(update={"position": tuple(float(v) for v in p)})
                        for d, p in zip(frame.detections, moved, strict=True)
                    )
                }
            )
        )
    return aligned


def namespaced_track_ids(vehicle_id: int, track_ids: np.ndarray) -> np.ndarray:
    """Track ids made unique across vehicles: ``vehicle << 32 | track``."""
    tracks = np.asarray(track_ids, dtype=np.int64)
    namespaced: np.ndarray = (vehicle_id << TRACK_NAMESPACE_BITS) | tracks
    return namespaced


@dataclass(frozen=True, eq=False)
class MergedGraph(SpatioTemporalGraph):
    """The decision graph: ego node first, then every kept observation.

    Track ids are namespaced by the vehicle that reported them (see
    ``namespaced_track_ids``); a coalesced node keeps the smallest id among
    its members, so (track id, timestamp) pairs stay unique.
    """

    ego_index: int = 0
    provenance: tuple[frozenset[int], ...] = ()
    skipped: tuple[int, ...] = field(default=())

    @property
    def collaborators_received(self) -> int:
        sources = frozenset[int]().union(*self.provenance)
        return len(sources - {self.source_vehicle})


class _Components:
    """Union-find over nodes; a component never holds two nodes of one graph."""

    def __init__(self, graph_of: np.ndarray):
        self.parent = list(range(len(graph_of)))
        self.graphs = [{int(g)} for g in graph_of]

    def find(self, node: int) -> int:
        while self.parent[node] != node:
            self.parent[node] = self.parent[self.parent[node]]
            node = self.parent[node]
        return node

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb or self.graphs[ra] & self.graphs[rb]:
            return False
        if rb < ra:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.graphs[ra] |= self.graphs[rb]
        return True


def _coalesce(
    positions: np.ndarray,
    timestamps: np.ndarray,
    graph_of: np.ndarray,
    threshold: float,
) -> np.ndarray:
    """Component label per node.

    Nodes closer than ``threshold`` at the same timestamp and from different
    input graphs share a label; closest pairs are joined first.
    """
    components = _Components(graph_of)
    if threshold > 0:
        for timestamp in np.unique(timestamps):
            group = np.flatnonzero(timestamps == timestamp)
            if len(np.unique(graph_of[group])) < 2:
                continue
            upper = np.triu_indices(len(group), k=1)
            a, b = group[upper[0]], group[upper[1]]
            distances = np.linalg.norm(positions[a] - positions[b], axis=1)
            close = (distances < threshold) & (graph_of[a] != graph_of[b])
            for k in np.argsort(distances, kind="stable"):
                if close[k]:
                    components.union(int(a[k]), int(b[k]))
    roots = np.array(
        [components.find(i) for i in range(len(graph_of))], dtype=np.int64
    )
    _, labels = np.unique(roots, return_inverse=True)
    return labels.reshape(-1)


def merge(
    ego_graph: SpatioTemporalGraph,
    collaborators: Sequence[tuple[SpatioTemporalGraph, Pose | None]],
    ego_pose: Pose,
    config: MergeConfig | None = None,
) -> MergedGraph:
    """Merge the ego graph with collaborator graphs into the decision graph.

    Args:
        ego_graph: the ego's window graph, already in the ego frame
        collaborators: (graph in the collaborator's frame, collaborator pose at
            the window end); a missing pose skips that collaborator
        ego_pose: ego pose at the window end
        config: radius, prune and coalescing distances, ego edge type

    Returns:
        The merged graph with the ego node at index 0
    """
    config = config or MergeConfig()
    graphs = [ego_graph]
    skipped = []
    for graph, pose in collaborators:
        if pose is None:
            logger.warning(
                f"No pose for collaborator {graph.source_vehicle}, skipping it"
            )
            skipped.append(graph.source_vehicle)
            continue
        offset = np.subtract(pose.position[:2], ego_pose.position[:2])
        distance = float(np.hypot(*offset))
        if distance > config.radius_m:
            logger.debug(
                f"Collaborator {graph.source_vehicle} is {distance:.1f} m away, "
                f"beyond {config.radius_m} m"
            )
            continue
        graphs.append(transform_graph(graph, pose, ego_pose))

    stacked = _stack(graphs)
    labels = _coalesce(
        stacked.positions, stacked.timestamps, stacked.graph_of, config.coalesce_m
    )
    count = int(labels.max()) + 1 if len(labels) else 0
    sizes = np.bincount(labels, minlength=count).astype(float)
    centroids = np.zeros((count, 3))
    np.add.at(centroids, labels, stacked.positions)
    centroids /= np.maximum(sizes, 1.0)[:, None]
    node_times = np.zeros(count)
    node_times[labels] = stacked.timestamps
    node_tracks = np.full(count, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(node_tracks, labels, stacked.track_ids)
    node_sources: list[frozenset[int]] = [frozenset()] * count
    for node, label in enumerate(labels):
        node_sources[label] = node_sources[label] | stacked.provenance[node]

    kept = np.linalg.norm(centroids, axis=1) >= config.prune_m
    # coalesced row -> merged node index; the ego takes index 0
    new_index = np.cumsum(kept)
    temporal_index = labels[stacked.temporal_index]
    temporal_index = temporal_index[
        :, kept[temporal_index[0]] & kept[temporal_index[1]]
    ]
    if temporal_index.size:
        temporal_index = np.unique(new_index[temporal_index], axis=1)

    window_end = max(g.window[1] for g in graphs)
    positions = np.vstack([np.zeros((1, 3)), centroids[kept]])
    timestamps = np.concatenate([[window_end], node_times[kept]])
    track_ids = np.concatenate([[EGO_TRACK_ID], node_tracks[kept]]).astype(np.int64)
    is_ego = np.zeros(len(timestamps), dtype=bool)
    is_ego[0] = True

    edge_index: dict[EdgeKind, np.ndarray] = {}
    edge_attr: dict[EdgeKind, np.ndarray] = {}
    spatial_index, spatial_attr = complete_spatial_edges(positions, timestamps, ~is_ego)
    others = np.arange(1, len(timestamps), dtype=np.int64)
    ego_index = np.vstack([np.zeros_like(others), others])
    ego_attr = np.linalg.norm(positions[others], axis=1)
    if config.ego_edge_kind == EdgeKind.SPATIAL:
        edge_index[EdgeKind.SPATIAL] = np.hstack([ego_index, spatial_index])
        edge_attr[EdgeKind.SPATIAL] = np.concatenate([ego_attr, spatial_attr])
    else:
        edge_index[EdgeKind.SPATIAL] = spatial_index
        edge_attr[EdgeKind.SPATIAL] = spatial_attr
        edge_index[EdgeKind.EGO] = ego_index
        edge_attr[EdgeKind.EGO] = ego_attr
    edge_index[EdgeKind.TEMPORAL] = temporal_index
    edge_attr[EdgeKind.TEMPORAL] = (
        timestamps[temporal_index[1]] - timestamps[temporal_index[0]]
    )

    return MergedGraph(
        positions=positions,
        timestamps=timestamps,
        track_ids=track_ids,
        is_ego=is_ego,
        edge_index=edge_index,
        edge_attr=edge_attr,
        source_vehicle=ego_graph.source_vehicle,
        window=(min(g.window[0] for g in graphs), window_end),
        ego_index=0,
        provenance=(
            frozenset({ego_graph.source_vehicle}),
            *(p for p, k in zip(node_sources, kept, strict=True) if k),
        ),
        skipped=tuple(skipped),
    )


@dataclass(frozen=True)
class _Stacked:
    positions: np.ndarray
    timestamps: np.ndarray
    track_ids: np.ndarray
    graph_of: np.ndarray
    provenance: list[frozenset[int]]
    temporal_index: np.ndarray


def _stack(graphs: Sequence[SpatioTemporalGraph]) -> _Stacked:
    """Concatenate the non-ego nodes of ``graphs`` with their temporal edges.

    A graph that is already merged keeps its provenance and track ids; its ego
    node is dropped so merging it again rebuilds the same ego node. Other
    graphs get their track ids namespaced by source vehicle.
    """
    positions, timestamps, track_ids, graph_of, temporal = [], [], [], [], []
    provenance: list[frozenset[int]] = []
    offset = 0
    for i, graph in enumerate(graphs):
        keep = ~graph.is_ego
        sources = (
            list(graph.provenance)
            if isinstance(graph, MergedGraph)
            else [frozenset({graph.source_vehicle})] * graph.num_nodes
        )
        positions.append(graph.positions[keep])
        timestamps.append(graph.timestamps[keep])
        tracks = graph.track_ids[keep].astype(np.int64)
        if not isinstance(graph, MergedGraph):
            tracks = namespaced_track_ids(graph.source_vehicle, tracks)
        track_ids.append(tracks)
        graph_of.append(np.full(int(keep.sum()), i, dtype=np.int64))
        provenance += [p for p, k in zip(sources, keep, strict=True) if k]

        rows = np.cumsum(keep) - 1 + offset
        index, _ = graph.edges_of(EdgeKind.TEMPORAL)
        temporal.append(rows[index[:, keep[index[0]] & keep[index[1]]]])
        offset += int(keep.sum())
    return _Stacked(
        positions=np.vstack(positions),
        timestamps=np.concatenate(timestamps),
        track_ids=np.concatenate(track_ids).astype(np.int64),
        graph_of=np.concatenate(graph_of),
        provenance=provenance,
        temporal_index=np.hstack(temporal).astype(np.int64),
    )
