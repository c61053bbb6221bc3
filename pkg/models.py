"""
Pydantic models for the collaborative decision-making pipeline.

These models describe the simulated world, the per-vehicle observations that
get shared over V2V links, every configuration knob of the pipeline, and the
reports the CLI and the MCP server hand back.
"""

import math
from enum import IntEnum, StrEnum
from typing import Self

from pydantic import BaseModel, ConfigDict, Field, field_validator


class Scenario(StrEnum):
    """Accident-prone intersection scenarios."""

    OVERTAKING = "overtaking"
    LEFT_TURN = "left_turn"
    STREET_CROSSING = "street_crossing"


class Command(IntEnum):
    """High-level route command given to the ego vehicle (one-hot index)."""

    LANE_FOLLOW = 0
    TURN_RIGHT = 1
    TURN_LEFT = 2
    GO_STRAIGHT = 3
    CHANGE_LEFT = 4
    CHANGE_RIGHT = 5


class Action(IntEnum):
    """Ego action. The index doubles as the class label (p1 = brake)."""

    BRAKE = 0
    GO = 1


class ObjectKind(StrEnum):
    EGO = "ego"
    COLLABORATOR = "collaborator"
    TRAFFIC = "traffic"
    OBSTACLE = "obstacle"


class AblationMode(StrEnum):
    """Which observations reach the merged graph.

    NT = no temporal sequence (1-frame window), NS = no sharing (ego only).
    """

    FULL = "full"
    NT_NS = "NT-NS"
    T_NS = "T-NS"
    NT_S = "NT-S"

    @property
    def temporal(self) -> bool:
        return self in (AblationMode.FULL, AblationMode.T_NS)

    @property
    def sharing(self) -> bool:
        return self in (AblationMode.FULL, AblationMode.NT_S)


class ChannelName(StrEnum):
    DSRC = "DSRC"
    C_V2X = "C-V2X"


class TemporalMode(StrEnum):
    CONSECUTIVE = "consecutive"
    ALL_PAIRS = "all_pairs"


class EdgeKind(StrEnum):
    SPATIAL = "spatial"
    TEMPORAL = "temporal"
    EGO = "ego"


class DataSplit(StrEnum):
    ALL = "all"
    TRAIN = "train"
    TEST = "test"


SCENARIO_COMMANDS: dict[Scenario, Command] = {
    Scenario.OVERTAKING: Command.CHANGE_LEFT,
    Scenario.LEFT_TURN: Command.TURN_LEFT,
    Scenario.STREET_CROSSING: Command.GO_STRAIGHT,
}


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.remainder(yaw, math.tau)
    if wrapped <= -math.pi:
        wrapped += math.tau
    return wrapped


# World and observations


class WorldObject(BaseModel):
    """Ground-truth state of one simulated object at one timestep."""

    model_config = ConfigDict(frozen=True)

    id: int = Field(..., description="Unique object identifier within an episode")
    kind: ObjectKind = Field(..., description="Role of the object in the scene")
    position: tuple[float, float, float] = Field(
        ..., description="World position in meters (z is 0 for ground vehicles)"
    )
    velocity: tuple[float, float] = Field(
        (0.0, 0.0), description="Planar world velocity in m/s"
    )
    heading: float = Field(0.0, description="Heading in radians")
    half_extent: float = Field(
        ..., gt=0, description="Bounding radius in meters, used for occlusion"
    )

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)


class Pose(BaseModel):
    """Position and yaw of a vehicle in the world frame (GNSS)."""

    model_config = ConfigDict(frozen=True)

    position: tuple[float, float, float] = Field(
        ..., description="World position in meters"
    )
    yaw: float = Field(0.0, description="Yaw in radians, normalized to (-pi, pi]")

    @field_validator("yaw")
    @classmethod
    def _wrap_yaw(cls, value: float) -> float:
        return normalize_yaw(value)


class Detection(BaseModel):
    """One detected object, expressed in the observing vehicle's sensor frame."""

    model_config = ConfigDict(frozen=True)

    track_id: int = Field(..., ge=0, description="Track identifier from the tracker")
    position: tuple[float, float, float] = Field(
        ..., description="Position in meters in the observer's sensor frame"
    )


class Frame(BaseModel):
    """Everything one vehicle detected at one timestamp."""

    model_config = ConfigDict(frozen=True)

    vehicle_id: int = Field(..., ge=0, description="Observing vehicle")
    timestamp: float = Field(..., ge=0, description="Seconds, multiple of 0.1 s")
    detections: tuple[Detection, ...] = Field(
        default=(), description="Visible objects, track ids unique within the frame"
    )


class VehicleTrace(BaseModel):
    """Per-vehicle recordings of one episode."""

    vehicle_id: int = Field(..., description="World object id of the vehicle")
    kind: ObjectKind = Field(..., description="ego or collaborator")
    poses: list[Pose] = Field(default_factory=list, description="Pose per timestep")
    frames: list[Frame] = Field(
        default_factory=list, description="Tracked frame per timestep"
    )


class Episode(BaseModel):
    """A simulated trial: world trajectory, observations, command and labels."""

    scenario: Scenario = Field(..., description="Which scripted scenario")
    seed: int = Field(..., ge=0, description="Seed the episode was generated from")
    config_hash: str = Field(..., description="Hash of the generating configuration")
    dt: float = Field(0.1, gt=0, description="Timestep in seconds")
    command: Command = Field(..., description="Ego command for the whole trial")
    world: list[list[WorldObject]] = Field(
        default_factory=list, description="All object states per timestep"
    )
    vehicles: list[VehicleTrace] = Field(
        default_factory=list, description="Ego first, then collaborators"
    )
    expert_actions: list[Action] = Field(
        default_factory=list, description="Ground-truth action per timestep"
    )

    @property
    def steps(self) -> int:
        return len(self.expert_actions)

    @property
    def ego(self) -> VehicleTrace:
        return self.vehicles[0]

    @property
    def collaborators(self) -> list[VehicleTrace]:
        return self.vehicles[1:]


# Configuration


class _Config(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SensorConfig(_Config):
    """Oracle detector standing in for image-based detection."""

    range_m: float = Field(60.0, gt=0, le=300.0, description="Detection range")
    fov_deg: float = Field(360.0, gt=0, le=360.0, description="Field of view")
    noise_sigma: float = Field(
        0.1, ge=0, description="Per-axis Gaussian position noise in meters"
    )
    dropout: float = Field(
        0.05, ge=0, lt=1, description="Probability a visible object is missed"
    )


class TrackerConfig(_Config):
    """Greedy nearest-neighbor tracker."""

    gate_m: float = Field(2.5, gt=0, description="Association gating distance")
    max_age: int = Field(
        10, ge=0, description="Frames a track survives without a detection"
    )


class ScenarioConfig(_Config):
    """Synthetic scenario generation."""

    dt: float = Field(0.1, gt=0, description="Simulation timestep in seconds")
    steps: int = Field(300, ge=1, description="Timesteps per trial")
    trials: int = Field(24, ge=1, description="Trials per scenario")
    max_speed: float = Field(20.0, gt=0, description="Speed cap for every object")
    include_hazard: bool = Field(True, description="Spawn the hazard vehicle")
    ttc_horizon: float = Field(3.0, gt=0, description="Expert look-ahead in seconds")
    clearance: float = Field(2.0, gt=0, description="Expert lateral clearance")
    brake_decel: float = Field(6.0, gt=0, description="Ego deceleration on brake")
    go_accel: float = Field(2.0, gt=0, description="Ego acceleration on go")
    sensor: SensorConfig = Field(default_factory=SensorConfig)
    tracker: TrackerConfig = Field(default_factory=TrackerConfig)


class GraphConfig(_Config):
    window: int = Field(15, ge=1, le=15, description="Frames per graph")
    temporal_mode: TemporalMode = Field(
        TemporalMode.CONSECUTIVE, description="Temporal edge density"
    )


class MergeConfig(_Config):
    radius_m: float = Field(150.0, gt=0, description="Collaborator radius")
    prune_m: float = Field(2.0, ge=0, description="Remove nodes this close to ego")
    coalesce_m: float = Field(
        1.0, ge=0, description="Cross-vehicle duplicates closer than this coalesce"
    )
    ego_edge_kind: EdgeKind = Field(
        EdgeKind.SPATIAL, description="Edge type used to connect the ego node"
    )

    @field_validator("ego_edge_kind")
    @classmethod
    def _no_temporal_ego_edges(cls, value: EdgeKind) -> EdgeKind:
        if value == EdgeKind.TEMPORAL:
            raise ValueError("ego edges must be spatial or ego")
        return value


class ChannelConfig(_Config):
    """V2V communication standard."""

    name: ChannelName = Field(ChannelName.DSRC, description="Standard name")
    bandwidth_bps: float = Field(2_000_000.0, gt=0, description="Bits per second")
    max_package_bytes: int = Field(200_000, gt=0, description="Largest packet")
    loss_probability: float = Field(
        0.05, ge=0, le=1, description="Whole-packet loss probability"
    )

    @classmethod
    def preset(
        cls, name: ChannelName | str, loss_probability: float = 0.05
    ) -> Self:
        name = ChannelName(name)
        if name == ChannelName.DSRC:
            return cls(
                name=name,
                bandwidth_bps=2_000_000.0,
                max_package_bytes=200_000,
                loss_probability=loss_probability,
            )
        return cls(
            name=name,
            bandwidth_bps=7_200_000.0,
            max_package_bytes=720_000,
            loss_probability=loss_probability,
        )


class ModelConfig(_Config):
    """Shapes of the heterogeneous attention network."""

    input_dim: int = Field(4, description="[x, y, z, is_ego]")
    projection_dim: int = Field(12, description="Output of W_v")
    head_dim: int = Field(6, description="Per-head output of W")
    heads: int = Field(4, ge=1, description="Attention heads")
    layers: int = Field(2, ge=1, description="Stacked attention layers")
    mlp_hidden: int = Field(32, ge=1, description="Hidden width of the action head")
    edge_attributes: bool = Field(True, description="Use W_e edge-attribute terms")
    edge_kinds: tuple[EdgeKind, ...] = Field(
        (EdgeKind.SPATIAL, EdgeKind.TEMPORAL), description="Relation types"
    )


class TrainConfig(_Config):
    epochs: int = Field(100, ge=1, description="Passes over the training set")
    lr: float = Field(1e-3, gt=0, description="ADAM learning rate")
    beta1: float = Field(0.9, ge=0, lt=1, description="ADAM beta1")
    beta2: float = Field(0.999, ge=0, lt=1, description="ADAM beta2")
    eps: float = Field(1e-8, gt=0, description="ADAM epsilon")
    batch_size: int = Field(32, ge=1, description="Instances per step")
    seed: int = Field(0, ge=0, description="Initialization and shuffling seed")
    mode: AblationMode = Field(AblationMode.FULL, description="Ablation mode")
    class_weights: bool = Field(
        True, description="Inverse-frequency class weights in the loss"
    )
    channel: ChannelConfig = Field(default_factory=ChannelConfig)
    graph: GraphConfig = Field(default_factory=GraphConfig)
    merge: MergeConfig = Field(default_factory=MergeConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)


# Reports


class LatencyStats(BaseModel):
    """Wall-clock timings in milliseconds."""

    graph_build_ms_mean: float = Field(0.0, description="Build + merge per instant")
    graph_build_ms_max: float = Field(0.0, description="Slowest build + merge")
    forward_ms_mean: float = Field(0.0, description="Forward pass per instant")
    forward_ms_max: float = Field(0.0, description="Slowest forward pass")


class ScenarioMetrics(BaseModel):
    scenario: Scenario = Field(..., description="Scenario evaluated")
    instances: int = Field(..., ge=0, description="Decision instants evaluated")
    ad: float | None = Field(
        None, ge=0, le=1, description="Recall on brake; null without brake instances"
    )
    ear: float = Field(..., ge=0, le=1, description="Fraction matching the expert")
    ps_mean_bytes: float = Field(0.0, ge=0, description="Mean shared package size")
    ps_max_bytes: int = Field(0, ge=0, description="Largest shared package")
    confusion: list[list[int]] = Field(
        ..., description="[true][predicted] counts, index 0 = brake"
    )


class EvalReport(BaseModel):
    mode: AblationMode = Field(..., description="Ablation mode of the model")
    config_hash: str = Field(..., description="Hash of the training configuration")
    scenarios: list[ScenarioMetrics] = Field(default_factory=list)
    latency: LatencyStats = Field(default_factory=LatencyStats)


class AblationCell(BaseModel):
    scenario: Scenario
    mode: str = Field(..., description="Ablation mode, or a model variant label")
    ad_values: list[float | None] = Field(default_factory=list, description="Per seed")
    ear_values: list[float] = Field(default_factory=list, description="Per seed")
    ad_median: float | None = None
    ear_median: float | None = None


class AblationReport(BaseModel):
    seeds: list[int] = Field(default_factory=list)
    cells: list[AblationCell] = Field(default_factory=list)


class CodecBenchReport(BaseModel):
    channel: ChannelConfig
    packets: int = Field(0, ge=0, description="Packets measured")
    ps_mean_bytes: float = Field(0.0, ge=0)
    ps_max_bytes: int = Field(0, ge=0)
    latency_ms_mean: float = Field(0.0, ge=0, description="Mean transfer time")
    reduction_vs_compressed: float | None = Field(
        None, description="Compressed-feature reference size over mean PS"
    )
    fits_dsrc: bool = Field(..., description="Largest packet within the DSRC budget")
    fits_c_v2x: bool = Field(..., description="Largest packet within the C-V2X budget")


class RunManifest(BaseModel):
    """Record of one CLI invocation."""

    subcommand: str
    config: dict[str, object] = Field(default_factory=dict)
    config_hash: str = ""
    seeds: list[int] = Field(default_factory=list)
    inputs: list[str] = Field(default_factory=list)
    outputs: list[str] = Field(default_factory=list)
    artifact_hashes: dict[str, str] = Field(default_factory=dict)
    timings: dict[str, float] = Field(default_factory=dict)


# Server responses


class EpisodeSummary(BaseModel):
    path: str
    scenario: Scenario
    seed: int
    command: Command
    steps: int
    vehicles: int = Field(..., description="Ego plus collaborators")
    brake_fraction: float = Field(..., ge=0, le=1)
    mean_detections: float = Field(..., ge=0, description="Per vehicle per frame")


class EpisodesResponse(BaseModel):
    episodes: list[EpisodeSummary] = Field(default_factory=list)


class DecisionResponse(BaseModel):
    step: int
    action: Action
    expert_action: Action
    p_brake: float = Field(..., ge=0, le=1)
    p_go: float = Field(..., ge=0, le=1)
    beta: dict[str, float] = Field(default_factory=dict)
    nodes: int = Field(..., ge=0, description="Nodes in the merged graph")
    collaborators_received: int = Field(..., ge=0)
