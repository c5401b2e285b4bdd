"""Fixed-timestep microsimulation of the T-junction.

Traffic follows the Intelligent Driver Model with a Krauss-style random speed
reduction.  The ego is either held at the stop line or advanced along its
route with a committed acceleration.  All randomness flows through the
``numpy.random.Generator`` stored on the world, so a seed fixes the whole
trajectory.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .config import DriverParams, SimConfig
from .geometry import EGO, FAR, NEAR, THROUGH_ROUTES, Junction, build_junction


class SimulationFault(RuntimeError):
    """Simulation integrity violation: two vehicle footprints overlap."""


class CollisionError(SimulationFault):
    def __init__(self, message: str, step: int, ids: tuple[str, str]):
        super().__init__(message)
        self.step = step
        self.ids = ids


class Phase(str, Enum):
    WAITING = "waiting"
    CROSSING = "crossing"
    DONE = "done"
    TIMED_OUT = "timed_out"


@dataclass
class VehicleState:
    id: str
    route: str
    s: float
    v: float
    heading: float = 0.0
    length: float = 4.5
    width: float = 2.0
    accel: float = 0.0  # realized acceleration over the last step


@dataclass
class EgoState(VehicleState):
    phase: Phase = Phase.WAITING
    profile_accel: float | None = None


HOLD = None  # ego command: stay at the stop line


@dataclass
class WorldState:
    junction: Junction
    ego: EgoState
    lanes: dict[str, list[VehicleState]]  # per through-route, front vehicle first
    rng: np.random.Generator
    time_step: int = 0
    sim_step: int = 0
    clock_started: bool = False
    presafe_steps: int = 0
    next_id: int = 0
    braking_count: int = 0  # braking traffic vehicles during the last step

    @property
    def traffic(self) -> list[VehicleState]:
        return [v for route in THROUGH_ROUTES for v in self.lanes[route]]

    @property
    def terminal(self) -> bool:
        return self.ego.phase in (Phase.DONE, Phase.TIMED_OUT)

    def add_vehicle(self, veh: VehicleState) -> None:
        """Insert keeping the front-first order of the lane."""
        lane = self.lanes[veh.route]
        i = 0
        while i < len(lane) and lane[i].s > veh.s:
            i += 1
        lane.insert(i, veh)


# --------------------------------------------------------------------- models


def idm_acceleration(me: VehicleState, leader: VehicleState | None, p: DriverParams,
                     v_max: float, b_emergency: float = 9.0) -> float:
    free = 1.0 - (me.v / v_max) ** p.delta_exp
    interaction = 0.0
    if leader is not None:
        gap = leader.s - me.s - leader.length
        if gap <= 0.0:
            raise SimulationFault(
                f"vehicles overlapped: {me.id} has gap {gap:.3f} m to leader {leader.id}")
        dv = me.v - leader.v
        s_star = p.s0 + me.v * p.T_headway + me.v * dv / (2.0 * math.sqrt(p.a_max * p.b_comf))
        interaction = (s_star / gap) ** 2
    a = p.a_max * (free - interaction)
    return min(max(a, -b_emergency), p.a_max)


def krauss_speed(v_desired: float, sigma_imp: float, a_max: float, dt: float,
                 rng: np.random.Generator | None = None, u: float | None = None) -> float:
    """Krauss driver imperfection: a random speed reduction of at most sigma*a_max*dt."""
    if u is None:
        u = rng.random()
    return max(0.0, v_desired - sigma_imp * a_max * dt * u)


def spawn_probability(cfg: SimConfig) -> float:
    return 1.0 - (1.0 - cfg.emission_prob_per_second) ** cfg.dt


# ---------------------------------------------------------------------- world


def new_world(cfg: SimConfig, seed, junction: Junction | None = None,
              warmup: bool = True) -> WorldState:
    junction = junction or build_junction(cfg)
    ego = EgoState("ego", EGO, 0.0, 0.0, heading=junction.ego.heading_at(0.0),
                   length=cfg.vehicle_length, width=cfg.vehicle_width)
    world = WorldState(junction, ego, {r: [] for r in THROUGH_ROUTES}, np.random.default_rng(seed))
    if warmup:
        for _ in range(cfg.warmup_steps):
            _advance_traffic(world, cfg)
            spawn_traffic(world, cfg)
        world.braking_count = 0
    return world


def spawn_traffic(world: WorldState, cfg: SimConfig, rng: np.random.Generator | None = None) -> WorldState:
    rng = rng or world.rng
    p = spawn_probability(cfg)
    draws = rng.random(len(THROUGH_ROUTES))
    for route, u in zip(THROUGH_ROUTES, draws):
        if u >= p:
            continue
        lane = world.lanes[route]
        if lane and not entry_clear(lane[-1], cfg):
            continue
        heading = world.junction.routes[route].heading_at(0.0)
        lane.append(VehicleState(f"t{world.next_id}", route, 0.0, cfg.v_max, heading,
                                 cfg.vehicle_length, cfg.vehicle_width))
        world.next_id += 1
    return world


def entry_clear(last: VehicleState, cfg: SimConfig) -> bool:
    """Whether a vehicle may enter at ``v_max`` behind ``last``.

    Besides the occupancy guard ``s0 + length``, the gap must cover the IDM
    desired gap of the entering vehicle, otherwise a fast insertion behind a
    slow vehicle can end in an overlap even under emergency braking.
    """
    p = cfg.idm
    if last.s < p.s0 + cfg.vehicle_length:
        return False
    gap = last.s - last.length
    dv = cfg.v_max - last.v
    s_star = p.s0 + cfg.v_max * p.T_headway + cfg.v_max * dv / (2.0 * math.sqrt(p.a_max * p.b_comf))
    return gap >= s_star


def _ego_as_far_leader(world: WorldState) -> VehicleState | None:
    ego = world.ego
    if ego.phase != Phase.CROSSING or ego.s < world.junction.far_join_s:
        return None
    return VehicleState(ego.id, FAR, world.junction.ego_far_coordinate(ego.s), ego.v,
                        length=ego.length, width=ego.width)


def _in_range(world: WorldState, veh: VehicleState, sensing_range: float) -> bool:
    x, _ = world.junction.routes[veh.route].xy(veh.s)
    return abs(x) <= sensing_range


def _advance_traffic(world: WorldState, cfg: SimConfig) -> None:
    """IDM + Krauss update of every traffic vehicle, then removal at route end."""
    n = len(world.lanes[NEAR]) + len(world.lanes[FAR])
    noise = world.rng.random(n) if n else ()
    ego_leader = _ego_as_far_leader(world)
    dt, p, v_max = cfg.dt, cfg.idm, cfg.v_max
    k = 0
    braking = 0
    for route in THROUGH_ROUTES:
        lane = world.lanes[route]
        use_ego = route == FAR and ego_leader is not None
        new_v = []
        for i, veh in enumerate(lane):
            leader = lane[i - 1] if i else None
            if use_ego and ego_leader.s > veh.s and (leader is None or ego_leader.s < leader.s):
                leader = ego_leader
            a = idm_acceleration(veh, leader, p, v_max, cfg.b_emergency)
            v_des = min(max(0.0, veh.v + a * dt), v_max)
            v_new = krauss_speed(v_des, cfg.krauss_sigma, p.a_max, dt, u=noise[k])
            new_v.append(v_new)
            k += 1
            # realized acceleration, driver imperfection included
            veh.accel = (v_new - veh.v) / dt
            if veh.accel <= cfg.braking_threshold and _in_range(world, veh, cfg.sensing_range):
                braking += 1
        # positions move only after every vehicle in the lane has seen the old state
        for veh, v in zip(lane, new_v):
            veh.v = v
            veh.s += v * dt
        end = world.junction.routes[route].length
        while lane and lane[0].s > end:
            lane.pop(0)
    world.braking_count = braking


def vehicle_xy(world: WorldState, veh: VehicleState) -> tuple[float, float]:
    return world.junction.routes[veh.route].xy(veh.s)


def _check_collisions(world: WorldState, cfg: SimConfig) -> None:
    radius = cfg.collision_radius
    for route in THROUGH_ROUTES:
        lane = world.lanes[route]
        for a, b in zip(lane, lane[1:]):
            # same lane: exact 1-D footprint test
            if a.s - a.length < b.s:
                raise CollisionError(f"traffic collision between {a.id} and {b.id}",
                                     world.sim_step, (a.id, b.id))
    if world.ego.phase != Phase.CROSSING:
        return
    ex, ey = vehicle_xy(world, world.ego)
    r2 = radius * radius
    for route in THROUGH_ROUTES:
        road = world.junction.routes[route]
        for veh in world.lanes[route]:
            x, y = road.xy(veh.s)
            if (x - ex) ** 2 + (y - ey) ** 2 < r2:
                raise CollisionError(f"ego collided with {veh.id} at step {world.sim_step}",
                                     world.sim_step, (world.ego.id, veh.id))


def step_world(world: WorldState, ego_command: float | None, cfg: SimConfig,
               rng: np.random.Generator | None = None) -> WorldState:
    """Advance the world by one ``dt`` in place and return it.

    ``ego_command`` is ``HOLD`` (None) or an acceleration; once the ego has
    started crossing it keeps its committed acceleration regardless of the
    command.  Raises ``CollisionError`` if any footprints overlap afterwards.
    """
    if world.terminal:
        raise RuntimeError("step_world called on a terminal world")
    if rng is not None:
        world.rng = rng
    ego = world.ego
    if ego.phase == Phase.WAITING and ego_command is not HOLD:
        ego.phase = Phase.CROSSING
        ego.profile_accel = float(ego_command)

    _advance_traffic(world, cfg)
    if ego.phase == Phase.CROSSING:
        ego.v = min(ego.v + ego.profile_accel * cfg.dt, cfg.v_max)
        ego.s += ego.v * cfg.dt
        ego.accel = ego.profile_accel
        route = world.junction.ego
        ego.heading = route.heading_at(min(ego.s, route.length))
    else:
        ego.v = 0.0
    spawn_traffic(world, cfg)

    world.sim_step += 1
    if world.clock_started:
        world.time_step += 1
    else:
        world.presafe_steps += 1

    _check_collisions(world, cfg)
    if ego.phase == Phase.CROSSING and ego.s > world.junction.ego.length:
        ego.phase = Phase.DONE
        return world
    if world.clock_started and world.time_step >= cfg.max_steps:
        ego.phase = Phase.TIMED_OUT
    return world


def min_gap_distance(world: WorldState, cap: float = 50.0) -> float:
    if not world.traffic:
        return cap
    ex, ey = vehicle_xy(world, world.ego)
    best = cap
    for veh in world.traffic:
        x, y = vehicle_xy(world, veh)
        best = min(best, math.hypot(x - ex, y - ey))
    return best
