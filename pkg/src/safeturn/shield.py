"""Prediction shield: per-step action mask and masked action selection."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .config import PredictionConfig, SimConfig, UncertaintyModel
from .geometry import EGO
from .prediction import (COUNTER, AccelProfile, IntervalCounter, predict_ego_envelope,
                         predict_traffic_envelope, zone_occupancy, envelopes_conflict)
from .sim import Phase, VehicleState, WorldState

WAIT = 0
ACCELS = (0.5, 1.0, 1.5)
N_ACTIONS = 1 + len(ACCELS)
ACTION_NAMES = ("wait", "go@0.5", "go@1.0", "go@1.5")


@dataclass(frozen=True)
class ActionMask:
    safe: tuple[bool, bool, bool, bool]

    def __post_init__(self):
        if len(self.safe) != N_ACTIONS or not self.safe[WAIT]:
            raise ValueError("mask needs four entries with wait always safe")

    @property
    def any_go(self) -> bool:
        return any(self.safe[1:])

    def as_array(self) -> np.ndarray:
        return np.array(self.safe, dtype=bool)


def profiles(cfg: SimConfig) -> list[AccelProfile]:
    return [AccelProfile(a, cfg.v_max) for a in ACCELS]


def steps_to_clear(route_length: float, accel: float, v_max: float, dt: float,
                   s0: float = 0.0, v0: float = 0.0) -> int:
    s, v, n = s0, v0, 0
    while s <= route_length:
        v = min(v + accel * dt, v_max)
        s += v * dt
        n += 1
    return n


def default_horizon(world: WorldState, cfg: SimConfig) -> int:
    """Steps until the ego clears its route under the slowest go profile."""
    ego = world.ego
    return _steps_to_clear(world.junction.ego.length, min(ACCELS), cfg.v_max, cfg.dt, ego.s, ego.v)


_steps_to_clear = lru_cache(maxsize=256)(steps_to_clear)


def _shielded_vehicles(world: WorldState, cfg: SimConfig, pcfg: PredictionConfig):
    if pcfg.shield_range is None:
        return list(world.traffic)
    out = []
    for veh in world.traffic:
        x, _ = world.junction.routes[veh.route].point_at(veh.s)
        if abs(float(x)) <= pcfg.shield_range:
            out.append(veh)
    return out


@lru_cache(maxsize=64)
def _ego_occupancy(zone_intervals: tuple, s: float, v: float, T: int, k: float, dt: float,
                   v_max: float, ego_u: tuple, length: float, smear: int) -> np.ndarray:
    """(profile, zone, step) occupancy of the ego tube, dilated by ``smear`` steps.

    Cached: the waiting ego never moves, so this is the same every step.
    """
    ego = VehicleState("ego", EGO, s, v, length=length)
    u = UncertaintyModel(*ego_u)
    occ = []
    for a in ACCELS:
        env = predict_ego_envelope(ego, AccelProfile(a, v_max), T, u, dt)
        occ.append([zone_occupancy(env, own, k) for own in zone_intervals])
    return _dilate_rows(np.array(occ, dtype=bool), smear)


@lru_cache(maxsize=64)
def _traffic_half_widths(T: int, dt: float, k: float, u: tuple) -> tuple[np.ndarray, np.ndarray]:
    tau = (np.arange(T) + 1) * dt
    return tau, k * UncertaintyModel(*u).sigma(tau)


def _dilate_rows(mask: np.ndarray, w: int) -> np.ndarray:
    if w <= 0:
        return mask
    out = mask.copy()
    T = mask.shape[-1]
    for off in range(1, w + 1):
        out[..., off:] |= mask[..., :T - off]
        out[..., :T - off] |= mask[..., off:]
    return out


def _ukey(u: UncertaintyModel) -> tuple:
    return (u.sigma_0, u.c1, u.c2, u.k_margin)


def compute_mask(world: WorldState, T: int | None, cfg: SimConfig, pcfg: PredictionConfig,
                 k: float | None = None, extra_margin: float = 0.0,
                 counter: IntervalCounter | None = COUNTER) -> ActionMask:
    """Mask of go-actions whose ego tube would co-occupy a zone with any traffic tube.

    Every (go-action, vehicle, step) triple is tested exactly once, so the
    counter grows by ``3 * m * T``.  ``extra_margin`` (meters) widens every
    traffic tube, which is how the fixed-margin baseline is built.
    """
    ego = world.ego
    if ego.phase != Phase.WAITING:
        raise ValueError("masks are only computed while the ego waits at the stop line")
    k = pcfg.traffic.k_margin if k is None else k
    T = default_horizon(world, cfg) if T is None else T
    vehicles = _shielded_vehicles(world, cfg, pcfg)
    if counter is not None:
        counter.interval_tests += len(ACCELS) * len(vehicles) * T
    if not vehicles:
        return ActionMask((True, True, True, True))

    table = world.junction.zone_table
    rows = [(veh.s, veh.v, veh.length, zi, lo, hi)
            for veh in vehicles for zi, lo, hi in table.get(veh.route, ())]
    if not rows:
        return ActionMask((True, True, True, True))
    a = np.array(rows)
    tau, half_tr = _traffic_half_widths(T, cfg.dt, k, _ukey(pcfg.traffic))
    means = a[:, 0:1] + a[:, 1:2] * tau
    pad = half_tr + (a[:, 2:3] / 2.0 + extra_margin)
    tr_in = (means - pad <= a[:, 5:6]) & (means + pad >= a[:, 4:5])
    ego_occ = _ego_occupancy(world.junction.ego_zone_intervals, ego.s, ego.v, T, k, cfg.dt,
                             cfg.v_max, _ukey(pcfg.ego), ego.length, pcfg.smear)
    hit = (ego_occ[:, a[:, 3].astype(np.intp), :] & tr_in).any(axis=(1, 2))
    return ActionMask((True, *(not flag for flag in hit)))


def compute_mask_reference(world: WorldState, T: int | None, cfg: SimConfig,
                           pcfg: PredictionConfig, k: float | None = None,
                           extra_margin: float = 0.0) -> ActionMask:
    """Unvectorized mask built from ``envelopes_conflict``, one pair at a time."""
    k = pcfg.traffic.k_margin if k is None else k
    T = default_horizon(world, cfg) if T is None else T
    safe = [True]
    for prof in profiles(cfg):
        ego_env = predict_ego_envelope(world.ego, prof, T, pcfg.ego, cfg.dt)
        ok = True
        for veh in _shielded_vehicles(world, cfg, pcfg):
            zones = world.junction.ego.zones_with(veh.route)
            env = predict_traffic_envelope(veh, T, pcfg.traffic, cfg.dt)
            if envelopes_conflict(ego_env, env, zones, k, pcfg.smear, extra_margin, counter=None):
                ok = False
        safe.append(ok)
    return ActionMask(tuple(safe))


def select_action(q_values, mask: ActionMask, explore: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over the safe actions; greedy ties go to the lowest index."""
    safe = np.flatnonzero(mask.as_array())
    if explore > 0.0 and rng.random() < explore:
        return int(safe[rng.integers(len(safe))])
    q = np.asarray(q_values, dtype=float)
    best = safe[0]
    for a in safe[1:]:
        if q[a] > q[best]:
            best = a
    return int(best)


def accel_of(action: int) -> float:
    if action == WAIT:
        raise ValueError("wait has no acceleration")
    return ACCELS[action - 1]
