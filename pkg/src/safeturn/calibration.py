"""Traffic rollouts for checking envelope calibration against the simulator."""
from __future__ import annotations

import numpy as np

from .config import SimConfig, UncertaintyModel
from .prediction import predict_traffic_envelope
from .sim import new_world, step_world


def traffic_rollouts(cfg: SimConfig, n: int, T: int = 25, seed=0, stride: int = 5):
    """Sample ``n`` traffic vehicles and their next ``T`` positions (no ego on the road).

    Every ``stride`` steps each vehicle that will stay on its route for ``T``
    more steps starts a rollout.  Returns ``(start, paths)`` where ``start`` is
    a list of ``(s, v)`` snapshots and ``paths`` has shape (n, T).
    """
    rng = np.random.default_rng(seed)
    starts, paths = [], []
    world = None
    pending: list[tuple[object, float, float, list]] = []
    while len(starts) < n:
        if world is None or world.sim_step > 2000:
            # the ego holds at the stop line and its budget clock never starts
            world = new_world(cfg, int(rng.integers(2**63)), warmup=True)
            pending = []
        if world.sim_step % stride == 0:
            for veh in world.traffic:
                end = world.junction.routes[veh.route].length
                if veh.s + cfg.v_max * cfg.dt * (T + 1) < end:
                    pending.append((veh, veh.s, veh.v, []))
        step_world(world, None, cfg)
        still = []
        for veh, s0, v0, path in pending:
            path.append(veh.s)
            if len(path) == T:
                starts.append((s0, v0))
                paths.append(path)
            else:
                still.append((veh, s0, v0, path))
        pending = still
    return starts[:n], np.array(paths[:n])


def exceedance(cfg: SimConfig, u: UncertaintyModel, k: float, n: int = 10_000, T: int = 25,
               seed=0) -> float:
    """Fraction of rollouts that leave mean +/- k sigma at any step of the horizon."""
    starts, paths = traffic_rollouts(cfg, n, T, seed)
    out = 0
    for (s0, v0), path in zip(starts, paths):
        env = predict_traffic_envelope(_Snap(s0, v0), T, u, cfg.dt)
        if np.any(np.abs(path - env.means) > k * env.sigmas):
            out += 1
    return out / len(paths)


class _Snap:
    __slots__ = ("s", "v", "route", "length")

    def __init__(self, s, v):
        self.s, self.v, self.route, self.length = s, v, "", 0.0
