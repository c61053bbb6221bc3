"""
Synthetic accident-prone intersection scenarios.

Replaces a full driving simulator with scripted constant-acceleration movers,
a disc-shadowing occlusion model, an oracle detector with noise and dropouts,
a greedy nearest-neighbor tracker, and a time-to-collision expert that labels
every timestep brake or go while driving the ego vehicle.

Object ids are fixed per scene: 0 is the ego, 1 and 2 are collaborators,
3 is the hazard vehicle, and 4+ are obstacles and background traffic.
"""

import logging
import math
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from config import config_hash
from errors import ConfigurationError
from models import (
    SCENARIO_COMMANDS,
    Action,
    Detection,
    Episode,
    Frame,
    ObjectKind,
    Pose,
    Scenario,
    ScenarioConfig,
    SensorConfig,
    TrackerConfig,
    VehicleTrace,
    WorldObject,
)

logger = logging.getLogger(__name__)

EGO_ID = 0
COLLABORATOR_IDS = (1, 2)
HAZARD_ID = 3

LANE = 3.5
CAR_RADIUS = 1.2
TRUCK_RADIUS = 2.5
QUEUED_CAR_RADIUS = 2.0

_SCENARIO_STREAM = {
    Scenario.OVERTAKING: 11,
    Scenario.LEFT_TURN: 23,
    Scenario.STREET_CROSSING: 37,
}


def segment_distances(
    points: np.ndarray, starts: np.ndarray, ends: np.ndarray
) -> np.ndarray:
    """Distance from each point (K, 2) to each segment (M, 2)->(M, 2); shape (K, M)."""
    ab = ends - starts
    ap = points[:, None, :] - starts[None, :, :]
    denom = np.einsum("md,md->m", ab, ab)
    t = np.einsum("kmd,md->km", ap, ab) / np.where(denom > 0, denom, 1.0)
    t = np.clip(t, 0.0, 1.0)
    closest = starts[None, :, :] + t[..., None] * ab[None, :, :]
    distances: np.ndarray = np.linalg.norm(points[:, None, :] - closest, axis=-1)
    return distances


class Route:
    """Planar polyline parametrized by arc length, extrapolated past both ends."""

    def __init__(self, points: Iterable[tuple[float, float]]):
        self.points = np.asarray(list(points), dtype=float)
        if self.points.ndim != 2 or len(self.points) < 2:
            raise ValueError("A route needs at least two points")
        deltas = np.diff(self.points, axis=0)
        self.lengths = np.linalg.norm(deltas, axis=1)
        if np.any(self.lengths <= 0):
            raise ValueError("Route points must be distinct")
        self.directions = deltas / self.lengths[:, None]
        self.cumulative = np.concatenate([[0.0], np.cumsum(self.lengths)])

    @property
    def length(self) -> float:
        return float(self.cumulative[-1])

    def _segment(self, s: float) -> int:
        index = int(np.searchsorted(self.cumulative, s, side="right")) - 1
        return min(max(index, 0), len(self.lengths) - 1)

    def position(self, s: float) -> np.ndarray:
        index = self._segment(s)
        offset = s - self.cumulative[index]
        result: np.ndarray = self.points[index] + offset * self.directions[index]
        return result

    def heading(self, s: float) -> float:
        dx, dy = self.directions[self._segment(s)]
        return math.atan2(dy, dx)

    def slice(self, start: float, end: float) -> np.ndarray:
        """Polyline points covering arc positions [start, end]."""
        inner = [
            self.points[i]
            for i in range(len(self.points))
            if start < self.cumulative[i] < end
        ]
        return np.vstack([self.position(start), *inner, self.position(end)])

    def project(self, point: np.ndarray) -> float:
        """Arc position of the route point closest to ``point``."""
        starts, ends = self.points[:-1], self.points[1:]
        distances = segment_distances(point[None, :2], starts, ends)[0]
        index = int(np.argmin(distances))
        along = float(np.dot(point[:2] - starts[index], self.directions[index]))
        along = min(max(along, 0.0), float(self.lengths[index]))
        return float(self.cumulative[index]) + along


def _arc(
    center: tuple[float, float],
    radius: float,
    start: float,
    end: float,
    pieces: int = 12,
) -> list[tuple[float, float]]:
    angles = np.linspace(start, end, pieces + 1)
    return [
        (center[0] + radius * math.cos(a), center[1] + radius * math.sin(a))
        for a in angles
    ]


@dataclass(frozen=True)
class ScriptedMover:
    """An object following a route with a constant-acceleration speed profile."""

    object_id: int
    kind: ObjectKind
    route: Route
    half_extent: float
    s0: float = 0.0
    speed: float = 0.0
    accel: float = 0.0
    top_speed: float = 0.0
    start_time: float = 0.0

    def arc_state(self, t: float) -> tuple[float, float]:
        tau = max(0.0, t - self.start_time)
        if self.accel <= 0 or self.speed >= self.top_speed:
            return self.s0 + self.speed * tau, self.speed
        ramp = (self.top_speed - self.speed) / self.accel
        if tau <= ramp:
            return (
                self.s0 + self.speed * tau + 0.5 * self.accel * tau**2,
                self.speed + self.accel * tau,
            )
        ramp_distance = self.speed * ramp + 0.5 * self.accel * ramp**2
        return self.s0 + ramp_distance + self.top_speed * (tau - ramp), self.top_speed

    def state(self, t: float) -> WorldObject:
        s, v = self.arc_state(t)
        if t < self.start_time:
            v = 0.0
        return _object_on_route(
            self.object_id, self.kind, self.route, s, v, self.half_extent
        )


def _object_on_route(
    object_id: int,
    kind: ObjectKind,
    route: Route,
    s: float,
    speed: float,
    half_extent: float,
) -> WorldObject:
    x, y = route.position(s)
    heading = route.heading(s)
    return WorldObject(
        id=object_id,
        kind=kind,
        position=(float(x), float(y), 0.0),
        velocity=(speed * math.cos(heading), speed * math.sin(heading)),
        heading=heading,
        half_extent=half_extent,
    )


def _parked(
    object_id: int,
    kind: ObjectKind,
    at: tuple[float, float],
    heading: float,
    half_extent: float,
) -> ScriptedMover:
    ahead = (at[0] + math.cos(heading), at[1] + math.sin(heading))
    return ScriptedMover(object_id, kind, Route([at, ahead]), half_extent)


@dataclass(frozen=True)
class EgoPlan:
    """Where the ego intends to drive and at what speed."""

    route: Route
    cruise_speed: float


@dataclass(frozen=True)
class Scene:
    scenario: Scenario
    plan: EgoPlan
    ego_start: float
    movers: tuple[ScriptedMover, ...]
    collaborator_ids: tuple[int, ...] = COLLABORATOR_IDS
    notes: dict[str, float] = field(default_factory=dict)


def _hazard_start(
    plan: EgoPlan,
    ego_start: float,
    conflict: np.ndarray,
    hazard_route: Route,
    hazard_speed: float,
    offset: float,
) -> float:
    """Hazard start arc so it reaches ``conflict`` ``offset`` s after the ego."""
    ego_arrival = (plan.route.project(conflict) - ego_start) / plan.cruise_speed
    hazard_arrival = max(ego_arrival + offset, 0.5)
    return hazard_route.project(conflict) - hazard_speed * hazard_arrival


def _overtaking(rng: np.random.Generator, config: ScenarioConfig) -> Scene:
    truck_x = rng.uniform(45.0, 60.0)
    cruise = min(rng.uniform(7.0, 10.0), config.max_speed)
    own, oncoming = -LANE / 2, LANE / 2
    plan = EgoPlan(
        Route(
            [
                (0.0, own),
                (truck_x - 15.0, own),
                (truck_x - 8.0, oncoming),
                (truck_x + 8.0, oncoming),
                (truck_x + 15.0, own),
                (truck_x + 800.0, own),
            ]
        ),
        cruise,
    )
    movers = [
        _parked(1, ObjectKind.COLLABORATOR, (truck_x + 25.0, 5.5), math.pi, CAR_RADIUS),
        _parked(2, ObjectKind.COLLABORATOR, (truck_x + 12.0, -5.5), 0.0, CAR_RADIUS),
        _parked(4, ObjectKind.OBSTACLE, (truck_x, own), 0.0, TRUCK_RADIUS),
        ScriptedMover(
            5,
            ObjectKind.TRAFFIC,
            Route([(truck_x + 30.0, own), (truck_x + 900.0, own)]),
            CAR_RADIUS,
            speed=min(rng.uniform(12.0, 15.0), config.max_speed),
        ),
        ScriptedMover(
            6,
            ObjectKind.TRAFFIC,
            Route([(-20.0, oncoming), (-900.0, oncoming)]),
            CAR_RADIUS,
            speed=min(rng.uniform(8.0, 12.0), config.max_speed),
        ),
    ]
    hazard_speed = min(rng.uniform(9.0, 14.0), config.max_speed)
    offset = rng.uniform(-1.5, 2.5)
    if config.include_hazard:
        route = Route([(truck_x + 900.0, oncoming), (truck_x - 900.0, oncoming)])
        conflict = np.array([truck_x, oncoming])
        s0 = _hazard_start(plan, 0.0, conflict, route, hazard_speed, offset)
        movers.append(
            ScriptedMover(
                HAZARD_ID, ObjectKind.TRAFFIC, route, CAR_RADIUS, s0, hazard_speed
            )
        )
    return Scene(Scenario.OVERTAKING, plan, 0.0, tuple(movers))


def _left_turn(rng: np.random.Generator, config: ScenarioConfig) -> Scene:
    radius = 9.0
    northbound, southbound_through = LANE / 2, -1.5 * LANE
    corner = northbound - radius
    start_y = -rng.uniform(50.0, 70.0)
    cruise = min(rng.uniform(7.0, 9.0), config.max_speed)
    plan = EgoPlan(
        Route(
            [
                (northbound, start_y),
                *_arc((corner, corner), radius, 0.0, math.pi / 2),
                (-800.0, LANE / 2),
            ]
        ),
        cruise,
    )
    movers = [
        _parked(1, ObjectKind.COLLABORATOR, (-14.0, -LANE / 2), 0.0, CAR_RADIUS),
        _parked(2, ObjectKind.COLLABORATOR, (14.0, LANE / 2), math.pi, CAR_RADIUS),
        _parked(4, ObjectKind.OBSTACLE, (-LANE / 2, 8.0), -math.pi / 2, TRUCK_RADIUS),
        ScriptedMover(
            5,
            ObjectKind.TRAFFIC,
            Route([(northbound, start_y + 25.0), (northbound, 900.0)]),
            CAR_RADIUS,
            speed=min(rng.uniform(11.0, 14.0), config.max_speed),
        ),
        _parked(6, ObjectKind.TRAFFIC, (-LANE / 2, 14.0), -math.pi / 2, CAR_RADIUS),
    ]
    hazard_speed = min(rng.uniform(9.0, 14.0), config.max_speed)
    offset = rng.uniform(-1.5, 2.5)
    if config.include_hazard:
        route = Route([(southbound_through, 900.0), (southbound_through, -900.0)])
        # where the turn arc crosses the southbound through lane
        crossing = math.acos((southbound_through - corner) / radius)
        conflict = np.array(
            [southbound_through, corner + radius * math.sin(crossing)]
        )
        s0 = _hazard_start(plan, 0.0, conflict, route, hazard_speed, offset)
        movers.append(
            ScriptedMover(
                HAZARD_ID, ObjectKind.TRAFFIC, route, CAR_RADIUS, s0, hazard_speed
            )
        )
    return Scene(Scenario.LEFT_TURN, plan, 0.0, tuple(movers))


def _street_crossing(rng: np.random.Generator, config: ScenarioConfig) -> Scene:
    through, turn_lane = 1.5 * LANE, LANE / 2
    start_y = -rng.uniform(55.0, 75.0)
    cruise = min(rng.uniform(8.0, 11.0), config.max_speed)
    plan = EgoPlan(Route([(through, start_y), (through, 900.0)]), cruise)
    queue_y = [-7.0, -11.5, -16.0, -20.5, -25.0]
    movers = [
        _parked(
            1, ObjectKind.COLLABORATOR, (turn_lane, queue_y[0]), math.pi / 2,
            QUEUED_CAR_RADIUS,
        ),
        _parked(2, ObjectKind.COLLABORATOR, (14.0, LANE / 2), math.pi, CAR_RADIUS),
    ]
    movers += [
        _parked(
            4 + i, ObjectKind.TRAFFIC, (turn_lane, y), math.pi / 2, QUEUED_CAR_RADIUS
        )
        for i, y in enumerate(queue_y[1:])
    ]
    movers += [
        ScriptedMover(
            8,
            ObjectKind.TRAFFIC,
            Route([(-through, 60.0), (-through, -900.0)]),
            CAR_RADIUS,
            speed=min(rng.uniform(8.0, 11.0), config.max_speed),
        ),
        ScriptedMover(
            9,
            ObjectKind.TRAFFIC,
            Route([(through, start_y + 30.0), (through, 900.0)]),
            CAR_RADIUS,
            speed=6.0,
            accel=2.0,
            top_speed=min(14.0, config.max_speed),
        ),
    ]
    hazard_speed = min(rng.uniform(10.0, 15.0), config.max_speed)
    offset = rng.uniform(-1.5, 2.5)
    if config.include_hazard:
        route = Route([(-900.0, -LANE / 2), (900.0, -LANE / 2)])
        conflict = np.array([through, -LANE / 2])
        s0 = _hazard_start(plan, 0.0, conflict, route, hazard_speed, offset)
        movers.append(
            ScriptedMover(
                HAZARD_ID, ObjectKind.TRAFFIC, route, CAR_RADIUS, s0, hazard_speed
            )
        )
    return Scene(Scenario.STREET_CROSSING, plan, 0.0, tuple(movers))


_BUILDERS = {
    Scenario.OVERTAKING: _overtaking,
    Scenario.LEFT_TURN: _left_turn,
    Scenario.STREET_CROSSING: _street_crossing,
}


def parse_scenario(value: Scenario | str) -> Scenario:
    try:
        return Scenario(value)
    except ValueError as e:
        choices = ", ".join(s.value for s in Scenario)
        raise ConfigurationError(
            f"Unknown scenario: {value!r} (expected one of {choices})"
        ) from e


def episode_seed_sequence(scenario: Scenario, seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, _SCENARIO_STREAM[scenario]])


def build_scene(
    scenario: Scenario | str, seed: int, config: ScenarioConfig
) -> Scene:
    """Lay out the scripted scene for (scenario, seed); deterministic."""
    scenario = parse_scenario(scenario)
    layout_stream = episode_seed_sequence(scenario, seed).spawn(1)[0]
    return _BUILDERS[scenario](np.random.default_rng(layout_stream), config)


# Sensing


def line_of_sight(
    world: Sequence[WorldObject], observer_id: int, target_id: int
) -> bool:
    """True iff no other object's disc intersects the observer-target segment."""
    by_id = {obj.id: obj for obj in world}
    observer, target = by_id[observer_id], by_id[target_id]
    occluders = [obj for obj in world if obj.id not in (observer_id, target_id)]
    if not occluders:
        return True
    centers = np.array([obj.position[:2] for obj in occluders])
    radii = np.array([obj.half_extent for obj in occluders])
    distances = segment_distances(
        centers,
        np.array([observer.position[:2]]),
        np.array([target.position[:2]]),
    )[:, 0]
    return bool(np.all(distances >= radii))


def _visible_mask(
    positions: np.ndarray, radii: np.ndarray, observer_index: int
) -> np.ndarray:
    """Occlusion test from one observer to every object (disc shadowing)."""
    n = len(positions)
    origin = positions[observer_index]
    visible = np.zeros(n, dtype=bool)
    for target in range(n):
        if target == observer_index:
            continue
        distances = segment_distances(
            positions, origin[None, :], positions[target][None, :]
        )[:, 0]
        blocking = distances < radii
        blocking[[observer_index, target]] = False
        visible[target] = not blocking.any()
    return visible


def to_sensor_frame(points: np.ndarray, pose: Pose) -> np.ndarray:
    """World positions (K, 3) into the frame of a vehicle at ``pose``."""
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    rel = points - np.asarray(pose.position)
    x = c * rel[:, 0] + s * rel[:, 1]
    y = -s * rel[:, 0] + c * rel[:, 1]
    return np.column_stack([x, y, rel[:, 2]])


def observe(
    world: Sequence[WorldObject],
    observer: Pose,
    sensor: SensorConfig,
    rng: np.random.Generator,
    vehicle_id: int,
    timestamp: float = 0.0,
) -> Frame:
    """Detect every object that is in range, in view, unoccluded and not dropped.

    Detected positions are in the observer's sensor frame with additive
    Gaussian noise. Track ids are provisional (detection order) until
    ``track`` assigns persistent ones.
    """
    if not world:
        return Frame(vehicle_id=vehicle_id, timestamp=timestamp)
    positions = np.array([obj.position for obj in world], dtype=float)
    radii = np.array([obj.half_extent for obj in world])
    ids = [obj.id for obj in world]

    observer_xyz = np.asarray(observer.position, dtype=float)
    if vehicle_id in ids:
        observer_index = ids.index(vehicle_id)
    else:
        positions = np.vstack([positions, observer_xyz])
        radii = np.append(radii, 0.0)
        observer_index = len(positions) - 1
    positions[observer_index] = observer_xyz

    rel = positions[:, :2] - observer_xyz[:2]
    in_range = np.linalg.norm(rel, axis=1) <= sensor.range_m
    if sensor.fov_deg < 360.0:
        bearing = np.arctan2(rel[:, 1], rel[:, 0]) - observer.yaw
        bearing = np.remainder(bearing + math.pi, math.tau) - math.pi
        in_range &= np.abs(bearing) <= math.radians(sensor.fov_deg) / 2
    visible = in_range & _visible_mask(positions[:, :2], radii, observer_index)

    local = to_sensor_frame(positions, observer)
    detections = []
    for index in np.flatnonzero(visible):
        if index >= len(ids) or rng.random() < sensor.dropout:
            continue
        noisy = local[index] + rng.normal(0.0, sensor.noise_sigma, 3)
        detections.append(
            Detection(
                track_id=len(detections),
                position=(float(noisy[0]), float(noisy[1]), float(noisy[2])),
            )
        )
    return Frame(
        vehicle_id=vehicle_id, timestamp=timestamp, detections=tuple(detections)
    )


def track(
    frames: Sequence[Frame], config: TrackerConfig | None = None
) -> list[Frame]:
    """Assign persistent track ids by greedy nearest-neighbor association.

    Each detection is matched to the closest live track within the gate;
    equal distances go to the lower track id. Tracks survive up to
    ``max_age`` missed frames, so an object re-detected within the gate after
    a gap keeps its id.
    """
    config = config or TrackerConfig()
    last_position: dict[int, np.ndarray] = {}
    last_seen: dict[int, int] = {}
    next_id = 0
    tracked = []
    for index, frame in enumerate(frames):
        expired = [t for t, k in last_seen.items() if index - k - 1 > config.max_age]
        for track_id in expired:
            del last_seen[track_id], last_position[track_id]

        positions = [np.asarray(d.position) for d in frame.detections]
        candidates = sorted(
            (float(np.linalg.norm(position - last_position[track_id])), track_id, det)
            for det, position in enumerate(positions)
            for track_id in last_position
            if np.linalg.norm(position - last_position[track_id]) <= config.gate_m
        )
        assigned: dict[int, int] = {}
        taken: set[int] = set()
        for _, track_id, det in candidates:
            if det in assigned or track_id in taken:
                continue
            assigned[det] = track_id
            taken.add(track_id)
        for det in range(len(positions)):
            if det not in assigned:
                assigned[det] = next_id
                next_id += 1

        for det, track_id in assigned.items():
            last_position[track_id] = positions[det]
            last_seen[track_id] = index
        tracked.append(
            frame.model_copy(
                update={
                    "detections": tuple(
                        Detection(track_id=assigned[det], position=d.position)
                        for det, d in enumerate(frame.detections)
                    )
                }
            )
        )
    return tracked


# Expert


def expert_policy(
    world: Sequence[WorldObject],
    plan: EgoPlan,
    horizon: float = 3.0,
    clearance: float = 2.0,
    sample_dt: float = 0.1,
) -> Action:
    """Brake iff a closing object's constant-velocity prediction comes within
    ``clearance`` of the ego's planned path within ``horizon`` seconds.

    The planned path is the route ahead of the ego's current position,
    ``cruise_speed * horizon`` long.
    """
    ego = next(obj for obj in world if obj.kind == ObjectKind.EGO)
    ego_xy = np.asarray(ego.position[:2])
    s = plan.route.project(ego_xy)
    path = plan.route.slice(s, s + plan.cruise_speed * horizon)
    heading = plan.route.heading(s)
    direction = np.array([math.cos(heading), math.sin(heading)])
    planned_velocity = plan.cruise_speed * direction

    taus = np.arange(0.0, horizon + 1e-9, sample_dt)
    for obj in world:
        if obj.kind == ObjectKind.EGO:
            continue
        offset = np.asarray(obj.position[:2]) - ego_xy
        distance = float(np.linalg.norm(offset))
        if distance == 0.0:
            return Action.BRAKE
        velocity = np.asarray(obj.velocity)
        range_rate = float(np.dot(offset, velocity - planned_velocity))
        if range_rate >= 0.0:
            continue
        predicted = np.asarray(obj.position[:2]) + taus[:, None] * velocity
        gaps = segment_distances(predicted, path[:-1], path[1:])
        if gaps.min() < clearance:
            return Action.BRAKE
    return Action.GO


# Episodes


def _world_at(scene: Scene, t: float, ego: WorldObject) -> list[WorldObject]:
    return [ego, *(mover.state(t) for mover in scene.movers)]


def _pose_of(obj: WorldObject) -> Pose:
    return Pose(position=obj.position, yaw=obj.heading)


def simulate_episode(
    scenario: Scenario | str, seed: int, config: ScenarioConfig | None = None
) -> Episode:
    """Run one trial: the expert drives the ego while every connected vehicle
    records and tracks what it can see."""
    config = config or ScenarioConfig()
    scene = build_scene(scenario, seed, config)
    streams = episode_seed_sequence(scene.scenario, seed).spawn(
        2 + len(scene.collaborator_ids)
    )
    vehicle_ids = (EGO_ID, *scene.collaborator_ids)
    sensor_rngs = {
        v: np.random.default_rng(streams[1 + i]) for i, v in enumerate(vehicle_ids)
    }

    s, speed = scene.ego_start, scene.plan.cruise_speed
    world: list[list[WorldObject]] = []
    actions: list[Action] = []
    poses: dict[int, list[Pose]] = {v: [] for v in vehicle_ids}
    raw_frames: dict[int, list[Frame]] = {v: [] for v in vehicle_ids}

    for step in range(config.steps):
        t = step * config.dt
        timestamp = round(t, 3)
        ego = _object_on_route(
            EGO_ID, ObjectKind.EGO, scene.plan.route, s, speed, CAR_RADIUS
        )
        objects = _world_at(scene, t, ego)
        action = expert_policy(
            objects, scene.plan, config.ttc_horizon, config.clearance
        )
        world.append(objects)
        actions.append(action)

        by_id = {obj.id: obj for obj in objects}
        for vehicle in vehicle_ids:
            pose = _pose_of(by_id[vehicle])
            poses[vehicle].append(pose)
            raw_frames[vehicle].append(
                observe(
                    objects,
                    pose,
                    config.sensor,
                    sensor_rngs[vehicle],
                    vehicle,
                    timestamp,
                )
            )

        if action == Action.BRAKE:
            speed = max(0.0, speed - config.brake_decel * config.dt)
        else:
            speed = min(scene.plan.cruise_speed, speed + config.go_accel * config.dt)
        s += speed * config.dt

    vehicles = [
        VehicleTrace(
            vehicle_id=vehicle,
            kind=ObjectKind.EGO if vehicle == EGO_ID else ObjectKind.COLLABORATOR,
            poses=poses[vehicle],
            frames=track(raw_frames[vehicle], config.tracker),
        )
        for vehicle in vehicle_ids
    ]
    brake_steps = sum(a == Action.BRAKE for a in actions)
    logger.debug(
        f"Simulated {scene.scenario} seed {seed}: "
        f"{brake_steps}/{config.steps} brake steps"
    )
    return Episode(
        scenario=scene.scenario,
        seed=seed,
        config_hash=config_hash(config),
        dt=config.dt,
        command=SCENARIO_COMMANDS[scene.scenario],
        world=world,
        vehicles=vehicles,
        expert_actions=actions,
    )


def _simulate_args(args: tuple[Scenario, int, ScenarioConfig]) -> Episode:
    return simulate_episode(*args)


def simulate_episodes(
    scenario: Scenario | str,
    seeds: Sequence[int],
    config: ScenarioConfig | None = None,
    jobs: int = 1,
) -> list[Episode]:
    """Generate several trials, in parallel when ``jobs`` > 1.

    The result follows the order of ``seeds``.
    """
    scenario = parse_scenario(scenario)
    config = config or ScenarioConfig()
    work = [(scenario, seed, config) for seed in seeds]
    if jobs <= 1 or len(work) <= 1:
        return [_simulate_args(args) for args in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_simulate_args, work))


def replay_labels(
    episode: Episode, config: ScenarioConfig | None = None
) -> list[Action]:
    """Recompute the expert labels from the stored world trajectory."""
    config = config or ScenarioConfig()
    scene = build_scene(episode.scenario, episode.seed, config)
    return [
        expert_policy(objects, scene.plan, config.ttc_horizon, config.clearance)
        for objects in episode.world
    ]


def occlusion_intervals(
    episode: Episode, observer_id: int, target_id: int
) -> list[tuple[int, int]]:
    """Maximal [start, end) step runs where ``observer_id`` cannot see ``target_id``."""
    intervals = []
    start: int | None = None
    for step, objects in enumerate(episode.world):
        present = any(obj.id == target_id for obj in objects)
        blocked = present and not line_of_sight(objects, observer_id, target_id)
        if blocked and start is None:
            start = step
        elif not blocked and start is not None:
            intervals.append((start, step))
            start = None
    if start is not None:
        intervals.append((start, len(episode.world)))
    return intervals
