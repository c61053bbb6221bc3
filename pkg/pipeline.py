"""
Dataset assembly, imitation-learning training, evaluation and ablations.

A decision instant is every timestep with a full window of history behind it.
For each one the ego builds its own window graph, collaborators encode their
windows and send them over the channel, and whatever arrives is merged into
the decision graph labelled with the expert's action.
"""

import json
import logging
import statistics
import time
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import torch
from pydantic import BaseModel

import codec
from errors import ConfigurationError
from hgat import GraphBatch, SpatioTemporalGAT, class_weights, decide, loss_and_grads
from merge import MergedGraph, align_window, merge
from models import (
    AblationCell,
    AblationMode,
    AblationReport,
    Action,
    Command,
    DataSplit,
    EdgeKind,
    Episode,
    EvalReport,
    Frame,
    LatencyStats,
    ModelConfig,
    Pose,
    Scenario,
    ScenarioMetrics,
    TrainConfig,
    VehicleTrace,
)
from stgraph import SpatioTemporalGraph, build_graph

logger = logging.getLogger(__name__)

EVAL_BATCH = 256
LATENCY_SAMPLES = 50


@dataclass(frozen=True)
class Instance:
    """One decision instant."""

    graph: MergedGraph
    command: Command
    label: Action
    scenario: Scenario
    seed: int
    step: int
    packet_sizes: tuple[int, ...] = ()
    build_ms: float = 0.0


def model_config_for(config: TrainConfig) -> ModelConfig:
    """The model config with an ego edge type added when merging asks for one."""
    kinds = tuple(config.model.edge_kinds)
    if config.merge.ego_edge_kind == EdgeKind.EGO and EdgeKind.EGO not in kinds:
        kinds = (*kinds, EdgeKind.EGO)
    return config.model.model_copy(update={"edge_kinds": kinds})


def window_length(config: TrainConfig, mode: AblationMode) -> int:
    return config.graph.window if mode.temporal else 1


def _aligned_window(
    vehicle: VehicleTrace, step: int, length: int
) -> tuple[list[Frame], Pose]:
    """The window ending at ``step`` in the frame of the vehicle pose then."""
    start = step - length + 1
    frames = vehicle.frames[start : step + 1]
    poses = vehicle.poses[start : step + 1]
    return align_window(frames, poses, vehicle.poses[step]), vehicle.poses[step]


def decision_instant(
    episode: Episode,
    step: int,
    mode: AblationMode,
    config: TrainConfig,
    channel: codec.V2VChannel | None = None,
) -> Instance:
    """Build the merged decision graph of one timestep."""
    started = time.perf_counter()
    length = window_length(config, mode)
    ego = episode.ego
    frames, ego_pose = _aligned_window(ego, step, length)
    ego_graph = build_graph(frames, config.graph.temporal_mode, ego.vehicle_id)

    received: list[tuple[SpatioTemporalGraph, Pose | None]] = []
    sizes: list[int] = []
    if mode.sharing:
        channel = channel or codec.V2VChannel(config.channel, seed=episode.seed)
        for collaborator in episode.collaborators:
            frames, pose = _aligned_window(collaborator, step, length)
            packet = codec.encode(frames, pose, collaborator.vehicle_id)
            sizes.append(codec.measure_ps(packet))
            transmission = channel.send(
                packet, collaborator.vehicle_id, ego.vehicle_id, sequence=step
            )
            if transmission.delivered is None:
                continue
            rx_frames, rx_pose = codec.decode(transmission.delivered)
            graph = build_graph(
                rx_frames, config.graph.temporal_mode, collaborator.vehicle_id
            )
            received.append((graph, rx_pose))

    merged = merge(ego_graph, received, ego_pose, config.merge)
    return Instance(
        graph=merged,
        command=episode.command,
        label=episode.expert_actions[step],
        scenario=episode.scenario,
        seed=episode.seed,
        step=step,
        packet_sizes=tuple(sizes),
        build_ms=(time.perf_counter() - started) * 1000,
    )


def first_decision_step(config: TrainConfig) -> int:
    """Every mode decides from the same instants: those with a full window."""
    return config.graph.window - 1


def episode_instances(
    episode: Episode, mode: AblationMode, config: TrainConfig
) -> list[Instance]:
    channel = codec.V2VChannel(config.channel, seed=episode.seed)
    return [
        decision_instant(episode, step, mode, config, channel)
        for step in range(first_decision_step(config), episode.steps)
    ]


def _episode_instances(
    args: tuple[Episode, AblationMode, TrainConfig],
) -> list[Instance]:
    return episode_instances(*args)


def assemble_dataset(
    episodes: Sequence[Episode],
    mode: AblationMode,
    config: TrainConfig,
    jobs: int = 1,
) -> list[Instance]:
    """Decision instants of every episode, in episode then step order.

    Packet losses are drawn per (episode seed, link, step), so the result
    does not depend on ``jobs`` or on which instants are built.
    """
    work = [(episode, mode, config) for episode in episodes]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_episode_instances, work))
    else:
        chunks = [_episode_instances(args) for args in work]
    instances = [instance for chunk in chunks for instance in chunk]
    brakes = sum(i.label == Action.BRAKE for i in instances)
    logger.info(
        f"Assembled {len(instances)} {mode} instances from {len(episodes)} episodes "
        f"({brakes} brake)"
    )
    if instances and not brakes:
        logger.warning("Dataset has no brake instances")
    return instances


def split_episodes(episodes: Sequence[Episode], split: DataSplit) -> list[Episode]:
    """Per scenario, the first half of the episodes by seed trains, the rest tests."""
    if split == DataSplit.ALL:
        return list(episodes)
    selected = []
    for scenario in Scenario:
        group = sorted(
            (e for e in episodes if e.scenario == scenario), key=lambda e: e.seed
        )
        cut = (len(group) + 1) // 2
        selected += group[:cut] if split == DataSplit.TRAIN else group[cut:]
    return selected


def make_batch(
    instances: Sequence[Instance], edge_kinds: Sequence[EdgeKind]
) -> GraphBatch:
    return GraphBatch.from_graphs(
        [i.graph for i in instances],
        [i.command for i in instances],
        [i.label for i in instances],
        edge_kinds,
    )


@dataclass
class TrainResult:
    model: SpatioTemporalGAT
    losses: list[float] = field(default_factory=list)


def train(instances: Sequence[Instance], config: TrainConfig) -> TrainResult:
    """Fit a fresh model with ADAM; deterministic given ``config.seed``."""
    if not instances:
        raise ConfigurationError("Cannot train on an empty dataset")
    model_config = model_config_for(config)
    model = SpatioTemporalGAT(model_config, seed=config.seed)
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=config.lr,
        betas=(config.beta1, config.beta2),
        eps=config.eps,
    )
    labels = torch.tensor([int(i.label) for i in instances], dtype=torch.long)
    weights = class_weights(labels) if config.class_weights else None
    generator = torch.Generator().manual_seed(config.seed)

    result = TrainResult(model=model)
    model.train()
    for epoch in range(config.epochs):
        order = torch.randperm(len(instances), generator=generator).tolist()
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            chunk = [instances[i] for i in order[start : start + config.batch_size]]
            batch = make_batch(chunk, model_config.edge_kinds)
            loss, _ = loss_and_grads(model, batch, weights, epoch)
            optimizer.step()
            total += loss.item() * len(chunk)
        result.losses.append(total / len(instances))
        logger.info(f"Epoch {epoch + 1}/{config.epochs}: loss {result.losses[-1]:.4f}")
    return result


def compute_metrics(
    labels: Sequence[int], predictions: Sequence[int]
) -> tuple[float | None, float, list[list[int]]]:
    """AD (recall on brake, None without brake instances), EAR and the
    [true][predicted] confusion matrix."""
    confusion = [[0, 0], [0, 0]]
    for truth, predicted in zip(labels, predictions, strict=True):
        confusion[truth][predicted] += 1
    brakes = sum(confusion[Action.BRAKE])
    ad = confusion[Action.BRAKE][Action.BRAKE] / brakes if brakes else None
    correct = confusion[0][0] + confusion[1][1]
    ear = correct / len(labels) if len(labels) else 0.0
    return ad, ear, confusion


@torch.no_grad()
def predict_actions(
    model: SpatioTemporalGAT, instances: Sequence[Instance]
) -> list[int]:
    model.eval()
    actions: list[int] = []
    for start in range(0, len(instances), EVAL_BATCH):
        chunk = instances[start : start + EVAL_BATCH]
        batch = make_batch(chunk, model.config.edge_kinds)
        actions += decide(model(batch).probabilities).tolist()
    return actions


@torch.no_grad()
def measure_latency(
    model: SpatioTemporalGAT, instances: Sequence[Instance]
) -> LatencyStats:
    """Wall-clock graph build and single-decision forward timings."""
    model.eval()
    forward = []
    for instance in instances[:LATENCY_SAMPLES]:
        batch = make_batch([instance], model.config.edge_kinds)
        started = time.perf_counter()
        model(batch)
        forward.append((time.perf_counter() - started) * 1000)
    build = [i.build_ms for i in instances]
    return LatencyStats(
        graph_build_ms_mean=statistics.fmean(build) if build else 0.0,
        graph_build_ms_max=max(build, default=0.0),
        forward_ms_mean=statistics.fmean(forward) if forward else 0.0,
        forward_ms_max=max(forward, default=0.0),
    )


def evaluate(
    model: SpatioTemporalGAT,
    instances: Sequence[Instance],
    mode: AblationMode = AblationMode.FULL,
    config_hash: str = "",
    latency: bool = True,
) -> EvalReport:
    """Per-scenario AD, EAR, package sizes and confusion matrices."""
    predictions = predict_actions(model, instances)
    report = EvalReport(mode=mode, config_hash=config_hash)
    for scenario in Scenario:
        rows = [k for k, i in enumerate(instances) if i.scenario == scenario]
        if not rows:
            continue
        labels = [int(instances[k].label) for k in rows]
        ad, ear, confusion = compute_metrics(labels, [predictions[k] for k in rows])
        sizes = [s for k in rows for s in instances[k].packet_sizes]
        report.scenarios.append(
            ScenarioMetrics(
                scenario=scenario,
                instances=len(rows),
                ad=ad,
                ear=ear,
                ps_mean_bytes=statistics.fmean(sizes) if sizes else 0.0,
                ps_max_bytes=max(sizes, default=0),
                confusion=confusion,
            )
        )
    if latency:
        report.latency = measure_latency(model, instances)
    return report


def _median(values: Iterable[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    return statistics.median(present) if present else None


def run_ablation_matrix(
    episodes: Sequence[Episode],
    config: TrainConfig,
    seeds: Sequence[int],
    modes: Sequence[AblationMode] = tuple(AblationMode),
    edge_ablation: bool = False,
    jobs: int = 1,
) -> AblationReport:
    """AD and EAR for every scenario and mode, one model per training seed.

    Each scenario trains on the first half of its episodes (by seed) and
    tests on the rest. With ``edge_ablation`` a full-mode variant without
    edge-attribute terms is added.
    """
    variants: list[tuple[str, AblationMode, TrainConfig]] = [
        (mode.value, mode, config.model_copy(update={"mode": mode})) for mode in modes
    ]
    if edge_ablation:
        no_attrs = config.model.model_copy(update={"edge_attributes": False})
        variants.append(
            (
                f"{AblationMode.FULL.value}/no-edge-attributes",
                AblationMode.FULL,
                config.model_copy(
                    update={"mode": AblationMode.FULL, "model": no_attrs}
                ),
            )
        )

    report = AblationReport(seeds=list(seeds))
    for scenario in Scenario:
        group = [e for e in episodes if e.scenario == scenario]
        if not group:
            continue
        train_set = split_episodes(group, DataSplit.TRAIN)
        test_set = split_episodes(group, DataSplit.TEST)
        if not test_set:
            raise ConfigurationError(
                f"{scenario} needs at least two episodes to split train and test"
            )
        for label, mode, variant in variants:
            train_data = assemble_dataset(train_set, mode, variant, jobs)
            test_data = assemble_dataset(test_set, mode, variant, jobs)
            cell = AblationCell(scenario=scenario, mode=label)
            for seed in seeds:
                seeded = variant.model_copy(update={"seed": seed})
                model = train(train_data, seeded).model
                metrics = evaluate(model, test_data, mode, latency=False).scenarios[0]
                cell.ad_values.append(metrics.ad)
                cell.ear_values.append(metrics.ear)
                logger.info(
                    f"{scenario} {label} seed {seed}: "
                    f"AD {_fmt(metrics.ad)} EAR {_fmt(metrics.ear)}"
                )
            cell.ad_median = _median(cell.ad_values)
            cell.ear_median = _median(cell.ear_values)
            report.cells.append(cell)
    return report


# Reports


def write_jsonl(path: Path, records: Sequence[BaseModel]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(r.model_dump(mode="json"), sort_keys=True) for r in records]
    path.write_text("".join(f"{line}\n" for line in lines))
    return path


def _fmt(value: float | None, digits: int = 3) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def render_eval_table(report: EvalReport) -> str:
    header = (
        f"{'scenario':<16} {'n':>6} {'AD':>6} {'EAR':>6} "
        f"{'PS mean':>9} {'PS max':>7}"
    )
    lines = [f"mode {report.mode}  config {report.config_hash}", header]
    for m in report.scenarios:
        lines.append(
            f"{m.scenario.value:<16} {m.instances:>6} {_fmt(m.ad):>6} {_fmt(m.ear):>6} "
            f"{m.ps_mean_bytes:>9.1f} {m.ps_max_bytes:>7}"
        )
    return "\n".join(lines) + "\n"


def render_ablation_table(report: AblationReport) -> str:
    modes = list(dict.fromkeys(cell.mode for cell in report.cells))
    scenarios = list(dict.fromkeys(cell.scenario for cell in report.cells))
    cells = {(c.scenario, c.mode): c for c in report.cells}
    width = max([len(m) for m in modes] + [4])
    lines = [
        f"median over seeds {report.seeds}; AD / EAR",
        f"{'mode':<{width}} " + " ".join(f"{s.value:>17}" for s in scenarios),
    ]
    for mode in modes:
        row = []
        for scenario in scenarios:
            cell = cells.get((scenario, mode))
            text = (
                f"{_fmt(cell.ad_median)} / {_fmt(cell.ear_median)}" if cell else "-"
            )
            row.append(f"{text:>17}")
        lines.append(f"{mode:<{width}} " + " ".join(row))
    return "\n".join(lines) + "\n"


def write_eval_report(path: Path, report: EvalReport) -> list[Path]:
    """JSON lines (one per scenario, then a summary without latency) plus text."""
    summary = report.model_copy(update={"latency": LatencyStats()})
    jsonl = write_jsonl(path, [*report.scenarios, summary])
    text = Path(f"{path}.txt")
    text.write_text(render_eval_table(report))
    return [jsonl, text]


def write_ablation_report(path: Path, report: AblationReport) -> list[Path]:
    jsonl = write_jsonl(path, [*report.cells, report])
    text = Path(f"{path}.txt")
    text.write_text(render_ablation_table(report))
    return [jsonl, text]
