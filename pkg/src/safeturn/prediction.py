"""Forward prediction envelopes and the zone co-occupancy test.

An envelope is a per-step predicted arc position with a standard deviation.
Two envelopes conflict when, at (nearly) the same step, both k-sigma tubes
reach into a paired conflict zone.  The tests are counted so that the linear
cost of a mask computation can be checked.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import UncertaintyModel
from .geometry import ConflictZone


@dataclass
class TrajectoryEnvelope:
    means: np.ndarray
    sigmas: np.ndarray
    route: str
    footprint_length: float = 4.5

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        self.sigmas = np.asarray(self.sigmas, dtype=float)
        if self.means.shape != self.sigmas.shape or self.means.ndim != 1:
            raise ValueError("means and sigmas must be 1-D arrays of equal length")

    @property
    def horizon_steps(self) -> int:
        return len(self.means)

    def bounds(self, k: float, extra: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        half = k * self.sigmas + self.footprint_length / 2.0 + extra
        return self.means - half, self.means + half


@dataclass
class AccelProfile:
    accel: float
    target_speed: float

    def __post_init__(self):
        if self.accel <= 0:
            raise ValueError("accel must be strictly positive")


@dataclass
class HighLevelActionSet:
    """Prior-weighted per-step speed profiles for one traffic vehicle."""

    actions: list[tuple[float, np.ndarray]]

    def __post_init__(self):
        if not self.actions:
            raise ValueError("a high-level action set needs at least one action")
        priors = np.array([p for p, _ in self.actions], dtype=float)
        if np.any(priors < 0) or not np.isclose(priors.sum(), 1.0):
            raise ValueError("priors must be non-negative and sum to 1")
        self.actions = [(float(p), np.asarray(v, dtype=float)) for p, v in self.actions]


@dataclass
class IntervalCounter:
    """Counts per-step interval tests; one test per (step, vehicle, action)."""

    interval_tests: int = 0

    def reset(self) -> None:
        self.interval_tests = 0


COUNTER = IntervalCounter()


def _taus(T: int, dt: float) -> np.ndarray:
    return (np.arange(T) + 1) * dt


def predict_traffic_envelope(veh, T: int, u: UncertaintyModel, dt: float) -> TrajectoryEnvelope:
    if T < 1:
        raise ValueError("horizon must be >= 1 step")
    tau = _taus(T, dt)
    return TrajectoryEnvelope(veh.s + veh.v * tau, u.sigma(tau), veh.route, veh.length)


def envelope_from_speeds(s0: float, speeds: np.ndarray, u: UncertaintyModel, dt: float,
                         route: str, footprint: float = 4.5) -> TrajectoryEnvelope:
    speeds = np.asarray(speeds, dtype=float)
    return TrajectoryEnvelope(s0 + np.cumsum(speeds) * dt, u.sigma(_taus(len(speeds), dt)),
                              route, footprint)


def ego_speed_profile(v0: float, prof: AccelProfile, T: int, dt: float) -> np.ndarray:
    return np.minimum(v0 + prof.accel * (np.arange(T) + 1) * dt, prof.target_speed)


def predict_ego_envelope(ego, prof: AccelProfile, T: int, u_ego: UncertaintyModel,
                         dt: float) -> TrajectoryEnvelope:
    if T < 1:
        raise ValueError("horizon must be >= 1 step")
    # the cap also covers an ego already above target speed
    speeds = np.minimum(ego_speed_profile(ego.v, prof, T, dt), max(prof.target_speed, ego.v))
    return envelope_from_speeds(ego.s, speeds, u_ego, dt, ego.route, ego.length)


def zone_occupancy(env: TrajectoryEnvelope, interval: tuple[float, float], k: float,
                   extra: float = 0.0) -> np.ndarray:
    lo, hi = env.bounds(k, extra)
    return (lo <= interval[1]) & (hi >= interval[0])


def _dilate(mask: np.ndarray, w: int) -> np.ndarray:
    if w <= 0 or not mask.any():
        return mask
    idx = np.flatnonzero(mask)
    out = np.zeros_like(mask)
    for off in range(-w, w + 1):
        j = idx + off
        out[j[(j >= 0) & (j < len(mask))]] = True
    return out


def envelopes_conflict(ego_env: TrajectoryEnvelope, traffic_env: TrajectoryEnvelope,
                       zones: list[ConflictZone], k: float, smear: int = 0,
                       extra_margin: float = 0.0, counter: IntervalCounter | None = COUNTER) -> bool:
    """True iff the ego and traffic tubes occupy a paired zone within ``smear`` steps.

    ``zones`` are the ego route's zones with the traffic route.  ``extra_margin``
    (meters) widens the traffic tube only.
    """
    if ego_env.horizon_steps != traffic_env.horizon_steps:
        raise ValueError("envelopes have mismatched horizons")
    if counter is not None:
        counter.interval_tests += ego_env.horizon_steps
    for zone in zones:
        ego_in = zone_occupancy(ego_env, zone.own, k)
        if not ego_in.any():
            continue
        traffic_in = zone_occupancy(traffic_env, zone.other, k, extra_margin)
        if np.any(ego_in & _dilate(traffic_in, smear)):
            return True
    return False


def multimodal_conflict(ego_env: TrajectoryEnvelope, veh, H: HighLevelActionSet,
                        u: UncertaintyModel, zones: list[ConflictZone], k: float,
                        prune_below: float = 0.0, dt: float = 0.2, smear: int = 0,
                        counter: IntervalCounter | None = COUNTER) -> bool:
    """Conflict check against every sufficiently likely high-level action of ``veh``.

    Costs one envelope test per retained action, i.e. linear in |H| and T.
    """
    T = ego_env.horizon_steps
    for prior, speeds in H.actions:
        if prior < prune_below:
            continue
        if len(speeds) < T:
            raise ValueError("speed profile shorter than the ego horizon")
        env = envelope_from_speeds(veh.s, speeds[:T], u, dt, veh.route, veh.length)
        if envelopes_conflict(ego_env, env, zones, k, smear, counter=counter):
            return True
    return False


def constant_velocity_actions(v: float, T: int) -> HighLevelActionSet:
    return HighLevelActionSet([(1.0, np.full(T, float(v)))])
