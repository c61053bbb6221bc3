"""
V2V STGAT MCP Server.

Provides read-only MCP tools for inspecting generated episodes, measuring
shared package sizes and querying a trained model's brake/go decision.
"""

import logging
from pathlib import Path
from typing import Any

import torch
from fastmcp import FastMCP

import codec
import pipeline
from hgat import SpatioTemporalGAT, load_checkpoint
from models import (
    AblationMode,
    Action,
    ChannelConfig,
    ChannelName,
    CodecBenchReport,
    DecisionResponse,
    EpisodeSummary,
    EpisodesResponse,
    TrainConfig,
)
from repository import EpisodeRepository, get_output_dir, summarize_episode

logging.basicConfig(
    level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(__name__)

mcp = FastMCP[None](
    name="V2V STGAT",
    instructions="""
    Inspects collaborative driving episodes and the decision models trained
    on them. Vehicles share compact spatiotemporal graphs of what they track;
    the ego merges them and a heterogeneous graph attention network decides
    whether to brake.

    Key capabilities:
    - List the episodes in a data directory with their label statistics
    - Summarize a single episode file
    - Measure the package sizes collaborators would share, and whether they
      fit the DSRC and C-V2X budgets
    - Predict the decision at one timestep with a trained checkpoint

    Nothing is written: the server only reads episode files and checkpoints.
    The default data directory comes from the V2V_STGAT_OUTPUT_DIR
    environment variable.
    """,
)

# Loaded checkpoints, keyed by resolved path
_models: dict[Path, tuple[SpatioTemporalGAT, dict[str, Any]]] = {}


def get_model(checkpoint: str) -> tuple[SpatioTemporalGAT, dict[str, Any]]:
    """Load a checkpoint once and reuse it.

    Args:
        checkpoint: Path to a checkpoint written by ``train``

    Returns:
        The model and its checkpoint payload
    """
    path = Path(checkpoint).resolve()
    if path not in _models:
        _models[path] = load_checkpoint(path)
        logger.info(f"Loaded checkpoint {path}")
    return _models[path]


def _data_dir(data_dir: str | None) -> Path:
    return Path(data_dir) if data_dir else get_output_dir() / "episodes"


@mcp.tool()
def list_episodes(data_dir: str | None = None) -> EpisodesResponse:
    """List the episodes in a data directory.

    Each summary includes the scenario, seed, navigation command, number of
    timesteps and vehicles, the fraction of brake labels and the mean number
    of detections per vehicle per frame.

    Args:
        data_dir: Episode directory (default: $V2V_STGAT_OUTPUT_DIR/episodes)

    Returns:
        EpisodesResponse with one summary per episode file
    """
    repository = EpisodeRepository(_data_dir(data_dir))
    return EpisodesResponse(
        episodes=[
            summarize_episode(repository.load(path), path)
            for path in repository.paths()
        ]
    )


@mcp.tool()
def get_episode_summary(path: str) -> EpisodeSummary:
    """Summarize one episode file.

    Args:
        path: Path to a ``.episode`` file

    Returns:
        EpisodeSummary for the file
    """
    return summarize_episode(EpisodeRepository.load(Path(path)), path)


@mcp.tool()
def get_package_sizes(
    data_dir: str | None = None, channel: str = ChannelName.DSRC.value
) -> CodecBenchReport:
    """Measure the packets collaborators would share over the given channel.

    Every decision window of every collaborator is encoded; the report gives
    the mean and largest package size, the mean transfer time, the size
    reduction against compressed feature sharing and whether every packet
    fits the DSRC (200 KB) and C-V2X (720 KB) budgets.

    Args:
        data_dir: Episode directory (default: $V2V_STGAT_OUTPUT_DIR/episodes)
        channel: "DSRC" or "C-V2X"

    Returns:
        CodecBenchReport for the measured packets
    """
    config = ChannelConfig.preset(channel, loss_probability=0.0)
    episodes = EpisodeRepository(_data_dir(data_dir)).load_all()
    train_config = TrainConfig(channel=config)
    sizes = [
        size
        for episode in episodes
        for instance in pipeline.episode_instances(
            episode, AblationMode.FULL, train_config
        )
        for size in instance.packet_sizes
    ]
    return codec.bench_report(sizes, config)


@mcp.tool()
def predict_decision(checkpoint: str, episode_path: str, step: int) -> DecisionResponse:
    """Predict the ego's brake/go decision at one timestep of an episode.

    The merged graph is built exactly as during evaluation, using the
    ablation mode and channel the checkpoint was trained with.

    Args:
        checkpoint: Path to a checkpoint written by ``train``
        episode_path: Path to a ``.episode`` file
        step: Timestep; needs a full window of history before it

    Returns:
        DecisionResponse with the predicted and expert actions, the action
        probabilities and the last layer's edge-type importance
    """
    model, payload = get_model(checkpoint)
    train_config = TrainConfig.model_validate(payload["metadata"].get("train", {}))
    episode = EpisodeRepository.load(Path(episode_path))
    first = pipeline.first_decision_step(train_config)
    if not first <= step < episode.steps:
        raise ValueError(
            f"Step must be between {first} and {episode.steps - 1}, got {step}"
        )

    instance = pipeline.decision_instant(episode, step, train_config.mode, train_config)
    batch = pipeline.make_batch([instance], model.config.edge_kinds)
    model.eval()
    with torch.no_grad():
        prediction = model(batch)
    p_brake, p_go = (float(p) for p in prediction.probabilities[0])
    return DecisionResponse(
        step=step,
        action=Action(int(prediction.actions()[0])),
        expert_action=instance.label,
        p_brake=p_brake,
        p_go=p_go,
        beta=prediction.beta_of(0),
        nodes=instance.graph.num_nodes,
        collaborators_received=instance.graph.collaborators_received,
    )


if __name__ == "__main__":
    mcp.run()
