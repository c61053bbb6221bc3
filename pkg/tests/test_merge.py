"""Tests for frame alignment and graph merging."""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path to import modules
sys.path.insert(0, str(Path(__file__).parent.parent))

from assertions import assert_graph_well_formed, edge_set
from merge import (
    EGO_TRACK_ID,
    MergedGraph,
    align_window,
    merge,
    namespaced_track_ids,
    pose_matrix,
    relative_transform,
    transform_graph,
    transform_points,
)
from models import Detection, EdgeKind, Frame, MergeConfig, Pose
from stgraph import SpatioTemporalGraph, build_graph

EGO_POSE = Pose(position=(0.0, 0.0, 0.0), yaw=0.0)


def frame(vehicle: int, t: float, *points: tuple[int, float, float]) -> Frame:
    return Frame(
        vehicle_id=vehicle,
        timestamp=t,
        detections=tuple(
            Detection(track_id=track, position=(x, y, 0.0)) for track, x, y in points
        ),
    )


def world_to_local(pose: Pose, x: float, y: float) -> tuple[float, float]:
    """Where a world point appears in the sensor frame of ``pose``."""
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    dx, dy = x - pose.position[0], y - pose.position[1]
    return c * dx + s * dy, -s * dx + c * dy


def test_relative_transform_composes_to_identity(sample_pose: Pose) -> None:
    other = Pose(position=(-4.0, 7.0, 0.0), yaw=-2.0)
    there = relative_transform(sample_pose, other)
    back = relative_transform(other, sample_pose)
    np.testing.assert_allclose(there @ back, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(
        relative_transform(sample_pose, sample_pose), np.eye(3), atol=1e-12
    )


def test_transform_points_keeps_z(sample_pose: Pose) -> None:
    points = np.array([[1.0, 2.0, 3.0]])
    moved = transform_points(points, pose_matrix(sample_pose))
    assert moved[0, 2] == 3.0
    assert np.linalg.norm(moved[0, :2] - sample_pose.position[:2]) == pytest.approx(
        np.hypot(1.0, 2.0)
    )


def test_transform_graph_preserves_edge_attributes(
    sample_window: list[Frame], sample_pose: Pose
) -> None:
    graph = build_graph(sample_window)
    moved = transform_graph(graph, sample_pose, EGO_POSE)
    _, before = graph.edges_of(EdgeKind.SPATIAL)
    distances = np.linalg.norm(
        moved.positions[[0, 3]] - moved.positions[[1, 4]], axis=1
    )
    np.testing.assert_allclose(distances, before, atol=1e-9)
    np.testing.assert_allclose(
        moved.positions[0, :2],
        pose_matrix(sample_pose)[:2, :2] @ [10.0, 0.0] + sample_pose.position[:2],
    )


def test_align_window_removes_ego_motion() -> None:
    # a parked object at world (20, 5) seen while the vehicle drives and turns
    poses = [
        Pose(position=(0.0, 0.0, 0.0), yaw=0.0),
        Pose(position=(1.0, 0.0, 0.0), yaw=0.1),
        Pose(position=(2.0, 0.2, 0.0), yaw=0.2),
    ]
    frames = [
        frame(1, k / 10, (0, *world_to_local(pose, 20.0, 5.0)))
        for k, pose in enumerate(poses)
    ]
    aligned = align_window(frames, poses, poses[-1])
    expected = world_to_local(poses[-1], 20.0, 5.0)
    for f in aligned:
        assert f.detections[0].position[:2] == pytest.approx(expected)


def test_align_window_keeps_empty_frames() -> None:
    frames = [frame(1, 0.0), frame(1, 0.1)]
    poses = [EGO_POSE, EGO_POSE]
    assert align_window(frames, poses, EGO_POSE) == frames


class TestMerge:
    def test_ego_only(self, sample_window: list[Frame]) -> None:
        merged = merge(build_graph(sample_window), [], EGO_POSE)

        assert isinstance(merged, MergedGraph)
        assert merged.num_nodes == 6
        assert merged.ego_index == 0
        assert merged.is_ego.tolist() == [True] + [False] * 5
        assert merged.track_ids[0] == EGO_TRACK_ID
        assert merged.timestamps[0] == 1.2
        np.testing.assert_array_equal(merged.positions[0], [0.0, 0.0, 0.0])
        ego_edges = {(a, b) for a, b in edge_set(merged, EdgeKind.SPATIAL) if a == 0}
        assert ego_edges == {(0, k) for k in range(1, 6)}
        assert merged.collaborators_received == 0
        assert_graph_well_formed(merged)

    def test_empty_graphs(self) -> None:
        merged = merge(build_graph([], source_vehicle=0), [], EGO_POSE)
        assert merged.num_nodes == 1
        assert merged.num_edges() == 0

    def test_prunes_nodes_near_ego(self) -> None:
        ego = build_graph([frame(0, 0.0, (0, 1.0, 0.5), (1, 8.0, 0.0))])
        merged = merge(ego, [], EGO_POSE)
        assert merged.num_nodes == 2
        np.testing.assert_allclose(merged.positions[1], [8.0, 0.0, 0.0])

    def test_collaborator_transformed_and_coalesced(self) -> None:
        collaborator_pose = Pose(position=(30.0, 10.0, 0.0), yaw=math.pi / 2)
        # both see a car at world (20, 0); the collaborator also sees one at (25, 20)
        ego = build_graph([frame(0, 0.0, (4, 20.0, 0.0))])
        local_car = world_to_local(collaborator_pose, 20.3, 0.0)
        local_other = world_to_local(collaborator_pose, 25.0, 20.0)
        shared = build_graph(
            [frame(1, 0.0, (0, *local_car), (1, *local_other))]
        )

        merged = merge(ego, [(shared, collaborator_pose)], EGO_POSE)

        assert merged.num_nodes == 3
        np.testing.assert_allclose(merged.positions[1], [20.15, 0.0, 0.0], atol=1e-9)
        np.testing.assert_allclose(merged.positions[2], [25.0, 20.0, 0.0], atol=1e-9)
        assert merged.provenance[1] == frozenset({0, 1})
        assert merged.provenance[2] == frozenset({1})
        assert merged.collaborators_received == 1
        assert edge_set(merged, EdgeKind.SPATIAL) == {(0, 1), (0, 2), (1, 2)}
        assert_graph_well_formed(merged)

    def test_same_vehicle_nodes_never_coalesce(self) -> None:
        ego = build_graph([frame(0, 0.0, (0, 10.0, 0.0), (1, 10.5, 0.0))])
        merged = merge(ego, [], EGO_POSE)
        assert merged.num_nodes == 3

    def test_temporal_edges_survive_coalescing(self) -> None:
        ego = build_graph(
            [frame(0, 0.0, (0, 10.0, 0.0)), frame(0, 0.1, (0, 11.0, 0.0))]
        )
        collaborator = build_graph(
            [frame(2, 0.0, (5, 10.2, 0.0)), frame(2, 0.1, (5, 11.2, 0.0))]
        )
        merged = merge(ego, [(collaborator, EGO_POSE)], EGO_POSE)

        assert merged.num_nodes == 3
        assert merged.num_edges(EdgeKind.TEMPORAL) == 1
        index, attr = merged.edges_of(EdgeKind.TEMPORAL)
        assert attr.tolist() == pytest.approx([0.1])
        assert merged.track_ids[index[0, 0]] == 0

    def test_missing_pose_skips_collaborator(
        self, sample_window: list[Frame], caplog: pytest.LogCaptureFixture
    ) -> None:
        ego = build_graph([frame(0, 1.2, (0, 10.0, 0.0))])
        merged = merge(ego, [(build_graph(sample_window), None)], EGO_POSE)

        assert merged.num_nodes == 2
        assert merged.skipped == (1,)
        assert "No pose for collaborator 1" in caplog.text

    def test_collaborator_beyond_radius(self, sample_window: list[Frame]) -> None:
        far = Pose(position=(200.0, 0.0, 0.0), yaw=0.0)
        ego = build_graph([frame(0, 1.2, (0, 10.0, 0.0))])
        merged = merge(
            ego, [(build_graph(sample_window), far)], EGO_POSE, MergeConfig()
        )
        assert merged.num_nodes == 2
        assert merged.collaborators_received == 0

    def test_dedicated_ego_edge_type(self, sample_window: list[Frame]) -> None:
        merged = merge(
            build_graph(sample_window),
            [],
            EGO_POSE,
            MergeConfig(ego_edge_kind=EdgeKind.EGO),
        )
        assert edge_set(merged, EdgeKind.EGO) == {(0, k) for k in range(1, 6)}
        assert all(a != 0 for a, _ in edge_set(merged, EdgeKind.SPATIAL))
        _, attr = merged.edges_of(EdgeKind.EGO)
        np.testing.assert_allclose(
            attr, np.linalg.norm(merged.positions[1:], axis=1)
        )

    def test_idempotent(self, sample_window: list[Frame], sample_pose: Pose) -> None:
        ego = build_graph([frame(0, 1.2, (0, 10.0, 0.0), (1, 10.4, 0.3))])
        once = merge(ego, [(build_graph(sample_window), sample_pose)], EGO_POSE)
        twice = merge(once, [], EGO_POSE)

        np.testing.assert_allclose(twice.positions, once.positions)
        np.testing.assert_array_equal(twice.timestamps, once.timestamps)
        assert twice.provenance == once.provenance
        for kind in (EdgeKind.SPATIAL, EdgeKind.TEMPORAL):
            assert edge_set(twice, kind) == edge_set(once, kind)

    def test_rigid_motion_invariance(self) -> None:
        """Moving the whole world moves every pose but not the merged graph."""
        objects = [(20.0, 3.0), (35.0, -8.0), (12.0, 25.0)]
        ego_pose = Pose(position=(2.0, 1.0, 0.0), yaw=0.3)
        other_pose = Pose(position=(30.0, 12.0, 0.0), yaw=-1.1)

        def build(shift: np.ndarray, turn: float) -> MergedGraph:
            c, s = math.cos(turn), math.sin(turn)

            def moved(pose: Pose) -> Pose:
                x, y = pose.position[:2]
                return Pose(
                    position=(c * x - s * y + shift[0], s * x + c * y + shift[1], 0.0),
                    yaw=pose.yaw + turn,
                )

            graphs: list[SpatioTemporalGraph] = []
            poses = [moved(ego_pose), moved(other_pose)]
            for vehicle, pose in enumerate(poses):
                points = []
                for track, (x, y) in enumerate(objects):
                    wx, wy = c * x - s * y + shift[0], s * x + c * y + shift[1]
                    points.append((track, *world_to_local(pose, wx, wy)))
                graphs.append(build_graph([frame(vehicle, 0.0, *points)]))
            return merge(graphs[0], [(graphs[1], poses[1])], poses[0])

        reference = build(np.zeros(2), 0.0)
        moved_world = build(np.array([500.0, -250.0]), 2.0)

        np.testing.assert_allclose(
            moved_world.positions, reference.positions, atol=1e-9
        )
        for kind in (EdgeKind.SPATIAL, EdgeKind.TEMPORAL):
            assert edge_set(moved_world, kind) == edge_set(reference, kind)
            np.testing.assert_allclose(
                moved_world.edges_of(kind)[1], reference.edges_of(kind)[1], atol=1e-9
            )

    def test_track_ids_unique_across_vehicles(self) -> None:
        # both vehicles call their own, different car track 0
        ego = build_graph(
            [frame(0, 0.0, (0, 10.0, 0.0)), frame(0, 0.1, (0, 11.0, 0.0))]
        )
        collaborator = build_graph(
            [frame(2, 0.0, (0, 40.0, 5.0)), frame(2, 0.1, (0, 41.0, 5.0))]
        )
        merged = merge(ego, [(collaborator, EGO_POSE)], EGO_POSE)

        assert merged.num_nodes == 5
        pairs = list(zip(merged.track_ids.tolist(), merged.timestamps.tolist()))
        assert len(pairs) == len(set(pairs))
        assert sorted(set(merged.track_ids[1:].tolist())) == [
            0,
            int(namespaced_track_ids(2, np.array([0]))[0]),
        ]
        assert_graph_well_formed(merged)

    def test_merging_twice_keeps_track_ids(self) -> None:
        ego = build_graph([frame(0, 0.0, (3, 10.0, 0.0))])
        collaborator = build_graph([frame(1, 0.0, (3, 30.0, 0.0))])
        merged = merge(ego, [(collaborator, EGO_POSE)], EGO_POSE)

        again = merge(merged, [], EGO_POSE)

        np.testing.assert_array_equal(again.track_ids, merged.track_ids)
        assert merged.track_ids[1:].tolist() == [3, (1 << 32) | 3]
