"""Tests for the attention layers, type importance and the action head."""

import dataclasses

import numpy as np
import pytest
import torch

import hgat
from errors import InvariantError, TrainingDivergenceError
from hgat import GraphBatch, SpatioTemporalGAT
from merge import MergedGraph
from models import Action, Command, EdgeKind, ModelConfig


def permute(graph: MergedGraph, order: np.ndarray) -> MergedGraph:
    """The same graph with node ``order[k]`` stored at position ``k``."""
    position_of = np.empty_like(order)
    position_of[order] = np.arange(len(order))
    return dataclasses.replace(
        graph,
        positions=graph.positions[order],
        timestamps=graph.timestamps[order],
        track_ids=graph.track_ids[order],
        is_ego=graph.is_ego[order],
        edge_index={k: position_of[v] for k, v in graph.edge_index.items()},
        ego_index=int(position_of[graph.ego_index]),
        provenance=tuple(graph.provenance[i] for i in order),
    )


def test_batch_layout(
    decision_graphs: list[MergedGraph], decision_batch: GraphBatch
) -> None:
    sizes = [g.num_nodes for g in decision_graphs]

    assert decision_batch.num_graphs == 4
    assert decision_batch.num_nodes == sum(sizes)
    assert decision_batch.ego_index.tolist() == np.cumsum([0, *sizes[:-1]]).tolist()
    assert decision_batch.x[:, 3].sum() == 4
    assert decision_batch.x.dtype == torch.float64
    assert decision_batch.command.sum(1).tolist() == [1.0] * 4
    assert decision_batch.command[1, Command.TURN_LEFT] == 1
    for kind in (EdgeKind.SPATIAL, EdgeKind.TEMPORAL):
        stored = sum(g.num_edges(kind) for g in decision_graphs)
        assert decision_batch.edges[kind].index.shape == (2, 2 * stored)
        assert decision_batch.edges[kind].attr.shape == (2 * stored, 1)


def test_incident_masks(decision_batch: GraphBatch) -> None:
    spatial = decision_batch.incident(EdgeKind.SPATIAL)
    temporal = decision_batch.incident(EdgeKind.TEMPORAL)
    egos = decision_batch.ego_index

    # the edgeless graph's only node touches nothing
    assert not spatial[egos[2]]
    assert not temporal[egos[2]]
    assert not temporal[egos[3] : egos[3] + 3].any()
    assert not decision_batch.incident(EdgeKind.EGO).any()


def test_attention_rows_sum_to_one(
    tiny_config: ModelConfig, decision_batch: GraphBatch
) -> None:
    layer = hgat.EdgeTypeAttention(
        4, tiny_config.heads, tiny_config.head_dim, True, torch.Generator()
    )
    for kind in (EdgeKind.SPATIAL, EdgeKind.TEMPORAL):
        edges = decision_batch.edges[kind]
        _, alpha = layer(decision_batch.x, edges)

        assert alpha.shape == (edges.index.shape[1], tiny_config.heads)
        assert (alpha >= 0).all()
        sums = torch.zeros(
            decision_batch.num_nodes, tiny_config.heads, dtype=alpha.dtype
        ).index_add(0, edges.dst, alpha)
        touched = decision_batch.incident(kind)
        torch.testing.assert_close(sums[touched], torch.ones_like(sums[touched]))
        assert (sums[~touched] == 0).all()


def test_outputs_are_normalized(
    tiny_model: SpatioTemporalGAT, decision_batch: GraphBatch
) -> None:
    prediction = tiny_model(decision_batch)

    assert prediction.probabilities.shape == (4, len(Action))
    torch.testing.assert_close(
        prediction.probabilities.sum(1), torch.ones(4, dtype=torch.float64)
    )
    assert len(prediction.betas) == 2
    for beta in prediction.betas:
        assert beta.shape == (4, 2)
        assert (beta >= 0).all()
        torch.testing.assert_close(beta.sum(1), torch.ones(4, dtype=torch.float64))
    assert prediction.embedding.shape == (4, 3)
    assert set(prediction.attention) == {EdgeKind.SPATIAL, EdgeKind.TEMPORAL}


def test_missing_edge_types_fall_back_to_spatial(
    tiny_model: SpatioTemporalGAT, decision_batch: GraphBatch
) -> None:
    prediction = tiny_model(decision_batch)

    # graph 2 has no edges at all, graph 3 has no temporal edges
    assert prediction.beta_of(2) == {"spatial": 1.0, "temporal": 0.0}
    assert prediction.beta_of(3) == {"spatial": 1.0, "temporal": 0.0}
    assert 0.0 < prediction.beta_of(0)["temporal"] < 1.0


def test_type_importance_ignores_absent_types() -> None:
    generator = torch.Generator().manual_seed(0)
    importance = hgat.TypeImportance(3, generator)
    h = torch.randn(4, 3, dtype=torch.float64, generator=generator)
    graph_index = torch.tensor([0, 0, 1, 1])
    spatial = torch.tensor([False, False, True, True])
    temporal = torch.tensor([True, True, True, True])

    beta = hgat.type_importance(
        [h, h], [spatial, temporal], graph_index, 2, importance.W_b, importance.q
    )

    assert beta[0].tolist() == [0.0, 1.0]
    assert beta[1].tolist() == pytest.approx([0.5, 0.5])


def test_node_permutation_invariance(
    tiny_model: SpatioTemporalGAT, decision_graphs: list[MergedGraph]
) -> None:
    commands = [Command.LANE_FOLLOW] * len(decision_graphs)
    reference = tiny_model(GraphBatch.from_graphs(decision_graphs, commands))

    rng = np.random.default_rng(5)
    shuffled = [permute(g, rng.permutation(g.num_nodes)) for g in decision_graphs]
    permuted = tiny_model(GraphBatch.from_graphs(shuffled, commands))

    torch.testing.assert_close(permuted.probabilities, reference.probabilities)
    torch.testing.assert_close(permuted.beta, reference.beta)


def test_graphs_do_not_interact_in_a_batch(
    tiny_model: SpatioTemporalGAT,
    decision_graphs: list[MergedGraph],
    decision_batch: GraphBatch,
) -> None:
    together = tiny_model(decision_batch).probabilities
    for i, graph in enumerate(decision_graphs):
        command = Command(int(decision_batch.command[i].argmax()))
        alone = tiny_model(GraphBatch.from_graphs([graph], [command])).probabilities
        torch.testing.assert_close(alone[0], together[i])


def test_skipping_an_edge_type(
    tiny_model: SpatioTemporalGAT, decision_batch: GraphBatch
) -> None:
    prediction = tiny_model(decision_batch, skip=frozenset({EdgeKind.TEMPORAL}))
    assert prediction.edge_kinds == (EdgeKind.SPATIAL,)
    assert prediction.beta.tolist() == [[1.0]] * 4
    assert set(prediction.attention) == {EdgeKind.SPATIAL}


def without_temporal_edges(graph: MergedGraph) -> MergedGraph:
    return dataclasses.replace(
        graph,
        edge_index={
            **graph.edge_index,
            EdgeKind.TEMPORAL: np.zeros((2, 0), dtype=np.int64),
        },
        edge_attr={**graph.edge_attr, EdgeKind.TEMPORAL: np.zeros(0)},
    )


def test_deleting_temporal_edges_matches_skipping_them(
    tiny_model: SpatioTemporalGAT,
    decision_graphs: list[MergedGraph],
    decision_batch: GraphBatch,
) -> None:
    skipped = tiny_model(decision_batch, skip=frozenset({EdgeKind.TEMPORAL}))
    stripped = tiny_model(
        GraphBatch.from_graphs(
            [without_temporal_edges(g) for g in decision_graphs],
            [Command(int(c)) for c in decision_batch.command.argmax(1)],
        )
    )

    torch.testing.assert_close(stripped.logits, skipped.logits)
    for full, reduced in zip(stripped.betas, skipped.betas, strict=True):
        torch.testing.assert_close(full[:, :1], reduced)
        assert full[:, 1].tolist() == [0.0] * 4


def test_without_edge_attributes(decision_batch: GraphBatch) -> None:
    config = ModelConfig(projection_dim=6, head_dim=3, heads=2, edge_attributes=False)
    model = SpatioTemporalGAT(config)

    assert all("W_e" not in name for name, _ in model.named_parameters())
    torch.testing.assert_close(
        model(decision_batch).probabilities.sum(1), torch.ones(4, dtype=torch.float64)
    )


def test_ego_edge_type(decision_graphs: list[MergedGraph]) -> None:
    kinds = (EdgeKind.SPATIAL, EdgeKind.TEMPORAL, EdgeKind.EGO)
    model = SpatioTemporalGAT(ModelConfig(edge_kinds=kinds))
    batch = GraphBatch.from_graphs(
        decision_graphs, [Command.LANE_FOLLOW] * 4, edge_kinds=kinds
    )
    assert model(batch).beta.shape == (4, 3)


def test_same_seed_same_weights(tiny_config: ModelConfig) -> None:
    first = SpatioTemporalGAT(tiny_config, seed=1).state_dict()
    second = SpatioTemporalGAT(tiny_config, seed=1).state_dict()
    other = SpatioTemporalGAT(tiny_config, seed=2).state_dict()

    for name, value in first.items():
        torch.testing.assert_close(second[name], value)
    assert not torch.equal(other["W_v.weight"], first["W_v.weight"])


def test_fuse_is_a_per_graph_convex_combination() -> None:
    generator = torch.Generator().manual_seed(0)
    spatial = torch.randn(3, 6, generator=generator, dtype=torch.float64)
    temporal = torch.randn(3, 6, generator=generator, dtype=torch.float64)
    beta = torch.tensor([[1.0, 0.0], [0.25, 0.75]], dtype=torch.float64)
    graph_index = torch.tensor([0, 1, 1])

    fused = hgat.fuse([spatial, temporal], beta, graph_index)

    torch.testing.assert_close(fused[0], spatial[0])
    torch.testing.assert_close(fused[1:], 0.25 * spatial[1:] + 0.75 * temporal[1:])


def test_fuse_equal_embeddings() -> None:
    v = torch.arange(6, dtype=torch.float64).reshape(1, 6)
    beta = torch.tensor([[0.5, 0.5]], dtype=torch.float64)
    torch.testing.assert_close(hgat.fuse([v, v], beta, torch.tensor([0])), v)


def test_decide_breaks_ties_towards_brake() -> None:
    probabilities = torch.tensor([[0.5, 0.5], [0.2, 0.8], [0.9, 0.1]])
    assert hgat.decide(probabilities).tolist() == [
        Action.BRAKE,
        Action.GO,
        Action.BRAKE,
    ]


def test_class_weights() -> None:
    labels = torch.tensor([Action.BRAKE, Action.GO, Action.GO, Action.GO])
    assert hgat.class_weights(labels).tolist() == pytest.approx([2.0, 2 / 3])

    go_only = torch.tensor([Action.GO, Action.GO])
    assert hgat.class_weights(go_only).tolist() == [0.0, 0.5]


class TestLossAndGrads:
    def test_returns_every_parameter(
        self, tiny_model: SpatioTemporalGAT, decision_batch: GraphBatch
    ) -> None:
        loss, grads = hgat.loss_and_grads(tiny_model, decision_batch)
        assert loss.item() > 0
        assert set(grads) == {name for name, _ in tiny_model.named_parameters()}

    def test_requires_labels(
        self, tiny_model: SpatioTemporalGAT, decision_graphs: list[MergedGraph]
    ) -> None:
        batch = GraphBatch.from_graphs(decision_graphs, [Command.LANE_FOLLOW] * 4)
        with pytest.raises(ValueError, match="no labels"):
            hgat.loss_and_grads(tiny_model, batch)

    def test_non_finite_loss(
        self,
        tiny_model: SpatioTemporalGAT,
        decision_batch: GraphBatch,
        monkeypatch: pytest.MonkeyPatch,
    ) -> None:
        monkeypatch.delenv("V2V_STGAT_STRICT", raising=False)
        broken = dataclasses.replace(
            decision_batch, x=torch.full_like(decision_batch.x, float("nan"))
        )
        with pytest.raises(TrainingDivergenceError) as excinfo:
            hgat.loss_and_grads(tiny_model, broken, epoch=4)
        assert excinfo.value.epoch == 4


def test_strict_mode_checks_attention(
    tiny_model: SpatioTemporalGAT, decision_batch: GraphBatch
) -> None:
    assert hgat.strict_mode()
    broken = dataclasses.replace(
        decision_batch, x=torch.full_like(decision_batch.x, float("nan"))
    )
    with pytest.raises(InvariantError):
        tiny_model(broken)
