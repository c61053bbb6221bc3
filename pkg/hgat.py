"""
Heterogeneous spatiotemporal graph attention network.

Nodes are projected by W_v, then every layer runs one multi-head attention
block per edge type, weighs the per-type embeddings by learned type
importance (beta) and fuses them. The ego node's final embedding, joined with
the one-hot route command, goes through a three-layer MLP to brake/go
probabilities.

All tensors are float64.
"""

import logging
import math
import os
from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from errors import CheckpointError, InvariantError, TrainingDivergenceError
from merge import MergedGraph
from models import Action, Command, EdgeKind, ModelConfig

logger = logging.getLogger(__name__)

DTYPE = torch.float64
CHECKPOINT_VERSION = 1
COMMANDS = len(Command)

_activations: ContextVar[list[Tensor] | None] = ContextVar("activations", default=None)


def strict_mode() -> bool:
    """Invariant assertions on every forward pass, enabled by V2V_STGAT_STRICT=1."""
    return os.environ.get("V2V_STGAT_STRICT") == "1"


@contextmanager
def record_activations() -> Iterator[list[Tensor]]:
    """Collect the on/off pattern of every ReLU evaluated inside the block."""
    recorded: list[Tensor] = []
    token = _activations.set(recorded)
    try:
        yield recorded
    finally:
        _activations.reset(token)


def _relu(x: Tensor) -> Tensor:
    recorded = _activations.get()
    if recorded is not None:
        recorded.append((x > 0).detach().clone())
    return F.relu(x)


# Batching


@dataclass(frozen=True)
class EdgeSet:
    """Directed message edges (src -> dst) with a (E, 1) attribute column."""

    index: Tensor
    attr: Tensor

    @property
    def src(self) -> Tensor:
        return self.index[0]

    @property
    def dst(self) -> Tensor:
        return self.index[1]


@dataclass(frozen=True)
class GraphBatch:
    """Several merged graphs stacked into one disjoint graph.

    Every stored edge is used in both directions, so a node's neighbors of a
    type are all nodes sharing an edge of that type with it.
    """

    x: Tensor
    graph_index: Tensor
    ego_index: Tensor
    edges: dict[EdgeKind, EdgeSet]
    command: Tensor
    labels: Tensor | None = None

    @property
    def num_nodes(self) -> int:
        return int(self.x.shape[0])

    @property
    def num_graphs(self) -> int:
        return int(self.ego_index.shape[0])

    def incident(self, kind: EdgeKind) -> Tensor:
        """Mask of nodes with at least one edge of ``kind``."""
        mask = torch.zeros(self.num_nodes, dtype=torch.bool)
        if kind in self.edges:
            mask[self.edges[kind].dst] = True
        return mask

    @classmethod
    def from_graphs(
        cls,
        graphs: Sequence[MergedGraph],
        commands: Sequence[Command],
        labels: Sequence[Action] | None = None,
        edge_kinds: Sequence[EdgeKind] = (EdgeKind.SPATIAL, EdgeKind.TEMPORAL),
    ) -> "GraphBatch":
        features, graph_index, ego_index = [], [], []
        sources: dict[EdgeKind, list[Tensor]] = {kind: [] for kind in edge_kinds}
        attrs: dict[EdgeKind, list[Tensor]] = {kind: [] for kind in edge_kinds}
        offset = 0
        for i, graph in enumerate(graphs):
            positions = torch.as_tensor(graph.positions, dtype=DTYPE).reshape(-1, 3)
            is_ego = torch.as_tensor(graph.is_ego, dtype=DTYPE).reshape(-1, 1)
            features.append(torch.cat([positions, is_ego], dim=1))
            graph_index.append(torch.full((graph.num_nodes,), i, dtype=torch.long))
            ego_index.append(offset + graph.ego_index)
            for kind in edge_kinds:
                index, attr = graph.edges_of(kind)
                index_t = torch.as_tensor(index, dtype=torch.long) + offset
                attr_t = torch.as_tensor(attr, dtype=DTYPE)
                sources[kind].append(torch.cat([index_t, index_t.flip(0)], dim=1))
                attrs[kind].append(torch.cat([attr_t, attr_t]))
            offset += graph.num_nodes

        edges = {
            kind: EdgeSet(
                index=torch.cat(sources[kind], dim=1)
                if sources[kind]
                else torch.zeros((2, 0), dtype=torch.long),
                attr=(
                    torch.cat(attrs[kind])
                    if attrs[kind]
                    else torch.zeros(0, dtype=DTYPE)
                ).reshape(-1, 1),
            )
            for kind in edge_kinds
        }
        command = F.one_hot(
            torch.tensor([int(c) for c in commands], dtype=torch.long), COMMANDS
        ).to(DTYPE)
        return cls(
            x=torch.cat(features) if features else torch.zeros((0, 4), dtype=DTYPE),
            graph_index=torch.cat(graph_index)
            if graph_index
            else torch.zeros(0, dtype=torch.long),
            ego_index=torch.tensor(ego_index, dtype=torch.long),
            edges=edges,
            command=command,
            labels=torch.tensor([int(a) for a in labels], dtype=torch.long)
            if labels is not None
            else None,
        )


# Building blocks


def project(x: Tensor, w_v: nn.Linear) -> Tensor:
    """h_i = W_v x_i, no bias."""
    h: Tensor = w_v(x)
    return h


def edge_attention(
    wh: Tensor, we: Tensor | None, a: Tensor, edges: EdgeSet, num_nodes: int
) -> Tensor:
    """Attention of every message edge, per head; shape (E, heads).

    alpha_ij = softmax_j ReLU(a . [Wh_i || Wh_j || W_e e_ij]) over the
    neighbors j of i, stabilized by subtracting each row's max.
    """
    heads, dim = wh.shape[1], wh.shape[2]
    src, dst = edges.src, edges.dst
    scores = (wh[dst] * a[:, :dim]).sum(-1) + (wh[src] * a[:, dim : 2 * dim]).sum(-1)
    if we is not None:
        scores = scores + (we * a[:, 2 * dim :]).sum(-1)
    scores = _relu(scores)

    row_max = torch.zeros(num_nodes, heads, dtype=wh.dtype).scatter_reduce(
        0,
        dst.unsqueeze(-1).expand(-1, heads),
        scores.detach(),
        reduce="amax",
        include_self=False,
    )
    weights = torch.exp(scores - row_max[dst])
    totals = torch.zeros(num_nodes, heads, dtype=wh.dtype).index_add(0, dst, weights)
    alpha = weights / totals[dst]

    if strict_mode() and alpha.numel():
        sums = torch.zeros(num_nodes, heads, dtype=wh.dtype).index_add(0, dst, alpha)
        has_neighbors = torch.zeros(num_nodes, dtype=torch.bool)
        has_neighbors[dst] = True
        if not torch.allclose(
            sums[has_neighbors], torch.ones_like(sums[has_neighbors]), atol=1e-6
        ):
            raise InvariantError("Attention rows do not sum to 1")
    return alpha


def aggregate(
    wh: Tensor, we: Tensor | None, alpha: Tensor, edges: EdgeSet
) -> Tensor:
    """h_i = ReLU(Wh_i + sum_j alpha_ij (Wh_j + W_e e_ij)); shape (N, heads, dim)."""
    messages = wh[edges.src] if we is None else wh[edges.src] + we
    messages = alpha.unsqueeze(-1) * messages
    summed = torch.zeros_like(wh).index_add(0, edges.dst, messages)
    return _relu(wh + summed)


def type_importance(
    embeddings: Sequence[Tensor],
    masks: Sequence[Tensor],
    graph_index: Tensor,
    num_graphs: int,
    w_b: nn.Linear,
    q: Tensor,
    fallback: int = 0,
) -> Tensor:
    """Per-graph weights of each edge type; shape (graphs, types), rows sum to 1.

    The raw weight of a type is the mean of q . tanh(W_b h_i + b) over the
    nodes incident to that type; a type no node touches gets weight 0. A graph
    without any edge puts all weight on ``fallback``.
    """
    raw = []
    for h, mask in zip(embeddings, masks, strict=True):
        scores = torch.tanh(w_b(h)) @ q
        weight = mask.to(scores.dtype)
        total = torch.zeros(num_graphs, dtype=scores.dtype).index_add(
            0, graph_index, scores * weight
        )
        count = torch.zeros(num_graphs, dtype=scores.dtype).index_add(
            0, graph_index, weight
        )
        mean = total / count.clamp(min=1.0)
        raw.append(torch.where(count > 0, mean, torch.full_like(mean, -math.inf)))
    stacked = torch.stack(raw, dim=1)
    empty = torch.isinf(stacked).all(dim=1)
    if empty.any():
        stacked = stacked.clone()
        stacked[empty, fallback] = 0.0
    beta = torch.softmax(stacked, dim=1)

    if strict_mode():
        ones = torch.ones(num_graphs, dtype=beta.dtype)
        if not torch.allclose(beta.sum(1), ones, atol=1e-9):
            raise InvariantError("Type importance weights do not sum to 1")
    return beta


def fuse(embeddings: Sequence[Tensor], beta: Tensor, graph_index: Tensor) -> Tensor:
    """Per-node convex combination of the per-type embeddings."""
    weights = beta[graph_index]
    fused: Tensor = sum(
        (weights[:, t : t + 1] * h for t, h in enumerate(embeddings)),
        torch.zeros_like(embeddings[0]),
    )
    return fused


def decide(probabilities: Tensor) -> Tensor:
    """Action per row; brake when p_brake >= p_go."""
    brake = probabilities[:, Action.BRAKE] >= probabilities[:, Action.GO]
    return torch.where(brake, int(Action.BRAKE), int(Action.GO))


def _uniform_(tensor: Tensor, fan_in: int, generator: torch.Generator) -> None:
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        tensor.uniform_(-bound, bound, generator=generator)


def _init_linear(layer: nn.Linear, generator: torch.Generator) -> None:
    _uniform_(layer.weight, layer.in_features, generator)
    if layer.bias is not None:
        _uniform_(layer.bias, layer.in_features, generator)


# Modules


class EdgeTypeAttention(nn.Module):
    """Multi-head attention over the edges of one type."""

    def __init__(
        self,
        in_dim: int,
        heads: int,
        head_dim: int,
        edge_attributes: bool,
        generator: torch.Generator,
    ):
        super().__init__()
        self.heads = heads
        self.head_dim = head_dim
        self.W = nn.Linear(in_dim, heads * head_dim, bias=False, dtype=DTYPE)
        self.W_e = (
            nn.Linear(1, heads * head_dim, bias=False, dtype=DTYPE)
            if edge_attributes
            else None
        )
        self.a = nn.Parameter(torch.empty(heads, 3 * head_dim, dtype=DTYPE))
        _init_linear(self.W, generator)
        if self.W_e is not None:
            _init_linear(self.W_e, generator)
        _uniform_(self.a, 3 * head_dim, generator)

    def forward(self, h: Tensor, edges: EdgeSet) -> tuple[Tensor, Tensor]:
        wh = self.W(h).view(-1, self.heads, self.head_dim)
        we = (
            self.W_e(edges.attr).view(-1, self.heads, self.head_dim)
            if self.W_e is not None
            else None
        )
        alpha = edge_attention(wh, we, self.a, edges, h.shape[0])
        return aggregate(wh, we, alpha, edges), alpha


class TypeImportance(nn.Module):
    """q . tanh(W_b h + b), shared across edge types."""

    def __init__(self, dim: int, generator: torch.Generator):
        super().__init__()
        self.W_b = nn.Linear(dim, dim, dtype=DTYPE)
        self.q = nn.Parameter(torch.empty(dim, dtype=DTYPE))
        _init_linear(self.W_b, generator)
        _uniform_(self.q, dim, generator)


@dataclass(frozen=True)
class LayerOutput:
    features: Tensor
    beta: Tensor
    attention: dict[EdgeKind, Tensor]


class HeteroAttentionLayer(nn.Module):
    def __init__(
        self,
        in_dim: int,
        config: ModelConfig,
        final: bool,
        generator: torch.Generator,
    ):
        super().__init__()
        self.final = final
        self.edge_kinds = tuple(config.edge_kinds)
        self.attention = nn.ModuleDict(
            {
                kind.value: EdgeTypeAttention(
                    in_dim,
                    config.heads,
                    config.head_dim,
                    config.edge_attributes,
                    generator,
                )
                for kind in self.edge_kinds
            }
        )
        self.importance = TypeImportance(config.head_dim, generator)

    def forward(
        self, h: Tensor, batch: GraphBatch, skip: frozenset[EdgeKind] = frozenset()
    ) -> LayerOutput:
        kinds = [kind for kind in self.edge_kinds if kind not in skip]
        empty = EdgeSet(
            torch.zeros((2, 0), dtype=torch.long), torch.zeros((0, 1), dtype=DTYPE)
        )
        per_type, alphas = [], {}
        for kind in kinds:
            out, alpha = self.attention[kind.value](h, batch.edges.get(kind, empty))
            per_type.append(out)
            alphas[kind] = alpha

        head_means = [out.mean(dim=1) for out in per_type]
        fallback = kinds.index(EdgeKind.SPATIAL) if EdgeKind.SPATIAL in kinds else 0
        beta = type_importance(
            head_means,
            [batch.incident(kind) for kind in kinds],
            batch.graph_index,
            batch.num_graphs,
            self.importance.W_b,
            self.importance.q,
            fallback,
        )
        if self.final:
            features = fuse(head_means, beta, batch.graph_index)
        else:
            concatenated = [out.flatten(1) for out in per_type]
            features = fuse(concatenated, beta, batch.graph_index)
        return LayerOutput(features=features, beta=beta, attention=alphas)


class ActionHead(nn.Module):
    """Three linear layers over [h'_ego || command], ReLU after the first two."""

    def __init__(self, in_dim: int, hidden: int, generator: torch.Generator):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden, dtype=DTYPE)
        self.fc2 = nn.Linear(hidden, hidden, dtype=DTYPE)
        self.fc3 = nn.Linear(hidden, len(Action), dtype=DTYPE)
        for layer in (self.fc1, self.fc2, self.fc3):
            _init_linear(layer, generator)

    def forward(self, embedding: Tensor, command: Tensor) -> Tensor:
        x = torch.cat([embedding, command], dim=-1)
        logits: Tensor = self.fc3(_relu(self.fc2(_relu(self.fc1(x)))))
        return logits


def predict(
    embedding: Tensor, command: Tensor, head: ActionHead
) -> tuple[Tensor, Tensor]:
    """Logits and brake/go probabilities from the ego embedding and command."""
    logits = head(embedding, command)
    probabilities = torch.softmax(logits, dim=-1)
    if strict_mode() and probabilities.numel():
        ones = torch.ones(probabilities.shape[0], dtype=probabilities.dtype)
        if not torch.allclose(probabilities.sum(-1), ones, atol=1e-9):
            raise InvariantError("Action probabilities do not sum to 1")
    return logits, probabilities


@dataclass(frozen=True)
class Prediction:
    """Network output for a batch of decision graphs."""

    logits: Tensor
    probabilities: Tensor
    embedding: Tensor
    edge_kinds: tuple[EdgeKind, ...]
    betas: tuple[Tensor, ...]
    attention: dict[EdgeKind, Tensor]

    @property
    def beta(self) -> Tensor:
        """Type weights of the last layer, (graphs, types)."""
        return self.betas[-1]

    def actions(self) -> Tensor:
        return decide(self.probabilities)

    def beta_of(self, graph: int = 0) -> dict[str, float]:
        return {
            kind.value: float(self.beta[graph, t])
            for t, kind in enumerate(self.edge_kinds)
        }


class SpatioTemporalGAT(nn.Module):
    """The full decision network."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = config or ModelConfig()
        generator = torch.Generator().manual_seed(seed)
        c = self.config
        self.W_v = nn.Linear(c.input_dim, c.projection_dim, bias=False, dtype=DTYPE)
        _init_linear(self.W_v, generator)
        layers = []
        in_dim = c.projection_dim
        for i in range(c.layers):
            final = i == c.layers - 1
            layers.append(HeteroAttentionLayer(in_dim, c, final, generator))
            in_dim = c.heads * c.head_dim
        self.layers = nn.ModuleList(layers)
        self.head = ActionHead(c.head_dim + COMMANDS, c.mlp_hidden, generator)

    def forward(
        self, batch: GraphBatch, skip: frozenset[EdgeKind] = frozenset()
    ) -> Prediction:
        h = project(batch.x, self.W_v)
        betas, attention = [], {}
        for layer in self.layers:
            output = layer(h, batch, skip)
            h = output.features
            betas.append(output.beta)
            attention = output.attention
        embedding = h[batch.ego_index]
        logits, probabilities = predict(embedding, batch.command, self.head)
        return Prediction(
            logits=logits,
            probabilities=probabilities,
            embedding=embedding,
            edge_kinds=tuple(k for k in self.config.edge_kinds if k not in skip),
            betas=tuple(betas),
            attention=attention,
        )


def class_weights(labels: Tensor) -> Tensor:
    """Inverse-frequency weights N / (classes * N_c); absent classes get 0."""
    counts = torch.bincount(labels, minlength=len(Action)).to(DTYPE)
    weights = labels.numel() / (len(Action) * counts.clamp(min=1.0))
    return torch.where(counts > 0, weights, torch.zeros_like(weights))


def loss_and_grads(
    model: SpatioTemporalGAT,
    batch: GraphBatch,
    weights: Tensor | None = None,
    epoch: int = 0,
) -> tuple[Tensor, dict[str, Tensor]]:
    """Mean cross-entropy of the batch and its gradient for every parameter."""
    if batch.labels is None:
        raise ValueError("The batch has no labels")
    model.zero_grad()
    prediction = model(batch)
    loss = F.cross_entropy(prediction.logits, batch.labels, weight=weights)
    if not torch.isfinite(loss):
        raise TrainingDivergenceError(epoch, f"loss is {loss.item()}")
    loss.backward()
    grads = {}
    for name, parameter in model.named_parameters():
        grad = parameter.grad
        if grad is None:
            grad = torch.zeros_like(parameter)
        if not torch.isfinite(grad).all():
            raise TrainingDivergenceError(epoch, f"non-finite gradient in {name}")
        grads[name] = grad.detach().clone()
    return loss.detach(), grads


# Checkpoints


def save_checkpoint(
    path: Path,
    model: SpatioTemporalGAT,
    config_hash: str,
    metadata: dict[str, Any] | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format_version": CHECKPOINT_VERSION,
            "config": model.config.model_dump(mode="json"),
            "config_hash": config_hash,
            "shapes": {k: list(v.shape) for k, v in model.state_dict().items()},
            "metadata": metadata or {},
            "state_dict": model.state_dict(),
        },
        path,
    )
    logger.info(f"Saved checkpoint to {path}")
    return path


def load_checkpoint(
    path: Path, config: ModelConfig | None = None
) -> tuple[SpatioTemporalGAT, dict[str, Any]]:
    """Load a model; refuses other format versions and mismatched shapes.

    Returns:
        The model and the raw checkpoint payload (metadata, config hash)
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        payload: dict[str, Any] = torch.load(path, weights_only=True)
    except Exception as e:
        raise CheckpointError(f"Unreadable checkpoint {path}: {e}") from e
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"Unsupported checkpoint version {payload.get('format_version')} in {path}"
        )

    model = SpatioTemporalGAT(config or ModelConfig.model_validate(payload["config"]))
    expected = {k: list(v.shape) for k, v in model.state_dict().items()}
    if payload["shapes"] != expected:
        mismatched = sorted(
            k
            for k in set(expected) | set(payload["shapes"])
            if expected.get(k) != payload["shapes"].get(k)
        )
        raise CheckpointError(
            f"Checkpoint {path} does not match the model: {', '.join(mismatched)}"
        )
    model.load_state_dict(payload["state_dict"])
    return model, payload
