"""Masked deep Q-learning: state encoding, replay, TD updates, rewards, episodes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .config import AgentConfig, RunConfig, SimConfig
from .geometry import THROUGH_ROUTES
from .network import QNetwork, RMSProp
from .shield import N_ACTIONS, WAIT, ActionMask, accel_of, compute_mask, select_action
from .sim import (HOLD, CollisionError, Phase, WorldState, min_gap_distance, new_world,
                  step_world)

N_BINS = 26
N_CHANNELS = 3
GRID_SHAPE = (len(THROUGH_ROUTES), N_BINS, N_CHANNELS)
STATE_DIM = int(np.prod(GRID_SHAPE)) + 2
D_CAP = 50.0


class ShieldViolation(RuntimeError):
    """A policy returned an action the mask forbids."""


# ------------------------------------------------------------------ encoding


@dataclass
class StateGrid:
    grid: np.ndarray          # (lanes, bins, channels)
    ego_features: np.ndarray  # (speed, arc position), both normalized

    def flat(self) -> np.ndarray:
        return np.concatenate([self.grid.ravel(), self.ego_features])


def lane_bin(x: float, sensing_range: float = 100.0) -> int:
    b = math.floor((x + sensing_range) / (2.0 * sensing_range) * N_BINS)
    return min(max(b, 0), N_BINS - 1)


def encode_state(world: WorldState, cfg: SimConfig) -> StateGrid:
    grid = np.zeros(GRID_SHAPE)
    nearest = np.full(GRID_SHAPE[:2], np.inf)
    for row, route in enumerate(THROUGH_ROUTES):
        road = world.junction.routes[route]
        for veh in world.lanes[route]:
            x, _ = road.xy(veh.s)
            if abs(x) > cfg.sensing_range:
                continue
            b = lane_bin(x, cfg.sensing_range)
            if abs(x) >= nearest[row, b]:
                continue
            nearest[row, b] = abs(x)
            grid[row, b] = (road.heading_at(veh.s) / math.pi, veh.v / cfg.v_max, 1.0)
    ego = world.ego
    length = world.junction.ego.length
    feats = np.array([ego.v / cfg.v_max, min(ego.s, length) / length])
    return StateGrid(grid, feats)


# ------------------------------------------------------------------- rewards


def reward_braking(braking: int, completed: bool, per_vehicle: bool = True) -> float:
    count = braking if per_vehicle else int(braking > 0)
    return -0.1 * count + (1.0 if completed else 0.0)


def reward_margin(outcome: str | None, d: float = D_CAP, z: float = -1.0) -> float:
    """Terminal-only reward: 0.1*(d - 10) on success, ``z`` on timeout."""
    if outcome is None:
        return 0.0
    if outcome == "success":
        return 0.1 * (d - 10.0)
    if outcome == "timeout":
        return z
    raise ValueError(f"unknown outcome {outcome!r}")


@dataclass
class RewardSpec:
    kind: str = "margin"
    z: float = -1.0
    per_vehicle: bool = True

    def step(self, braking: int) -> float:
        if self.kind == "braking":
            return reward_braking(braking, False, self.per_vehicle)
        return 0.0

    def terminal(self, outcome: str, d: float) -> float:
        if self.kind == "braking":
            return 1.0 if outcome == "success" else 0.0
        return reward_margin(outcome, d, self.z)


# -------------------------------------------------------------------- replay


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    next_mask: np.ndarray
    terminal: bool


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    next_masks: np.ndarray
    terminals: np.ndarray

    @classmethod
    def of(cls, transitions: list[Transition]) -> "Batch":
        return cls(np.array([t.state for t in transitions]),
                   np.array([t.action for t in transitions]),
                   np.array([t.reward for t in transitions], dtype=float),
                   np.array([t.next_state for t in transitions]),
                   np.array([t.next_mask for t in transitions], dtype=bool),
                   np.array([t.terminal for t in transitions], dtype=bool))

    def __len__(self) -> int:
        return len(self.actions)


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling (with replacement)."""

    def __init__(self, capacity: int, state_dim: int = STATE_DIM, dtype=np.float32):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim), dtype=dtype)
        self.next_states = np.zeros((capacity, state_dim), dtype=dtype)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_masks = np.zeros((capacity, N_ACTIONS), dtype=bool)
        self.terminals = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._head = 0

    def __len__(self) -> int:
        return self.size

    def add(self, t: Transition) -> None:
        i = self._head
        self.states[i] = t.state
        self.next_states[i] = t.next_state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_masks[i] = t.next_mask
        self.terminals[i] = t.terminal
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} transitions, need {batch_size}")
        idx = rng.integers(self.size, size=batch_size)
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.next_masks[idx], self.terminals[idx])


# ---------------------------------------------------------------- TD update


def td_targets(target_net: QNetwork, batch: Batch, gamma: float) -> np.ndarray:
    q_next = target_net.forward(batch.next_states)
    q_next = np.where(batch.next_masks, q_next, -np.inf).max(axis=1)
    boot = np.where(batch.terminals, 0.0, q_next)
    return batch.rewards + gamma * boot


def td_loss_and_grads(net: QNetwork, target_net: QNetwork, batch: Batch, gamma: float,
                      flat: np.ndarray | None = None):
    """Mean squared TD error on the taken actions and its gradient (list of views)."""
    y = td_targets(target_net, batch, gamma)
    q, cache = net.forward_cache(batch.states)
    rows = np.arange(len(batch))
    err = q[rows, batch.actions] - y
    dq = np.zeros_like(q)
    dq[rows, batch.actions] = 2.0 * err / len(batch)  # cast to the network dtype
    return float(np.mean(err * err)), net.backward(cache, dq, flat)


def td_update(net: QNetwork, target_net: QNetwork, opt: RMSProp, batch: Batch,
              gamma: float, target_sync: int = 500) -> float:
    """One RMSProp step on the masked TD loss; returns the pre-step loss."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    flat = np.empty_like(net.theta)
    loss, _ = td_loss_and_grads(net, target_net, batch, gamma, flat)
    if opt.flat:
        opt.step(net.theta, flat)
    else:
        opt.step(net.params, net._views(flat))
    if opt.t % target_sync == 0:
        target_net.load_params_from(net)
    return loss


# ------------------------------------------------------------------ policies


class Policy(Protocol):
    def act(self, state: np.ndarray, mask: ActionMask, world: WorldState) -> int: ...


@dataclass
class RandomMaskedPolicy:
    rng: np.random.Generator

    def act(self, state, mask, world) -> int:
        return select_action(np.zeros(N_ACTIONS), mask, 1.0, self.rng)


class WaitPolicy:
    def act(self, state, mask, world) -> int:
        return WAIT


@dataclass
class GreedyPolicy:
    net: QNetwork

    def act(self, state, mask, world) -> int:
        return select_action(self.net.q_values(state), mask, 0.0, None)


class DQNLearner:
    """Epsilon-greedy actor and replay-driven learner sharing one network."""

    def __init__(self, acfg: AgentConfig, rng: np.random.Generator, state_dim: int = STATE_DIM):
        self.cfg = acfg
        self.rng = rng
        self.net = QNetwork((state_dim, *acfg.hidden, N_ACTIONS), acfg.leaky_slope, rng)
        self.target = self.net.copy()
        self.opt = RMSProp(self.net.theta, acfg.lr, acfg.rms_decay, acfg.rms_eps)
        self.buffer = ReplayBuffer(acfg.buffer_capacity, state_dim)
        self.epsilon = acfg.eps_start
        self.last_loss = float("nan")

    def set_episode(self, episode: int, total: int) -> float:
        span = max(1.0, self.cfg.eps_anneal_frac * total)
        frac = min(1.0, episode / span)
        self.epsilon = self.cfg.eps_start + frac * (self.cfg.eps_end - self.cfg.eps_start)
        return self.epsilon

    def act(self, state, mask, world) -> int:
        if self.epsilon > 0.0 and self.rng.random() < self.epsilon:
            return select_action(None, mask, 1.0, self.rng)
        return select_action(self.net.q_values(state), mask, 0.0, None)

    def observe(self, t: Transition) -> None:
        self.buffer.add(t)
        if len(self.buffer) < self.cfg.learn_start:
            return
        batch = self.buffer.sample(self.cfg.batch_size, self.rng)
        self.last_loss = td_update(self.net, self.target, self.opt, batch, self.cfg.gamma,
                                   self.cfg.target_sync)


# ------------------------------------------------------------------ episodes


@dataclass
class EpisodeResult:
    seed: object
    outcome: str           # "success" | "timeout"
    ret: float
    d: float
    braking: int
    steps: int             # budget steps consumed
    presafe_steps: int
    go_action: int | None
    mask_history: list = field(default_factory=list)


def run_episode(policy: Policy, seed, rcfg: RunConfig, reward: RewardSpec | None = None,
                junction=None, on_transition: Callable[[Transition], None] | None = None,
                world_factory: Callable[..., WorldState] | None = None) -> EpisodeResult:
    """Play one shielded episode.

    The budget clock starts at the first step the shield allows some go action
    (or once ``max_presafe_steps`` have passed without one).  Waiting steps are
    one transition each; the whole committed crossing is one transition.
    ``world_factory(cfg, seed, junction)`` replaces the default warmed-up world.
    """
    cfg, pcfg, k = rcfg.sim, rcfg.prediction, rcfg.shield_k
    reward = reward or RewardSpec(rcfg.reward, rcfg.z, rcfg.agent.braking_per_vehicle)
    world = (world_factory or new_world)(cfg, seed, junction)
    d, braking, ret = D_CAP, 0, 0.0
    history: list[tuple[int, tuple, int]] = []
    pending = None  # [state, action, accumulated reward]
    go_action = None
    try:
        while not world.terminal:
            cmd = HOLD
            if world.ego.phase == Phase.WAITING:
                mask = compute_mask(world, None, cfg, pcfg, k=k)
                if not world.clock_started:
                    if mask.any_go or world.presafe_steps >= cfg.max_presafe_steps:
                        world.clock_started = True
                    else:
                        step_world(world, HOLD, cfg)
                        continue
                state = encode_state(world, cfg).flat()
                if pending is not None and on_transition is not None:
                    on_transition(Transition(pending[0], pending[1], pending[2], state,
                                             mask.as_array(), False))
                action = policy.act(state, mask, world)
                if not mask.safe[action]:
                    raise ShieldViolation(f"policy chose masked action {action}")
                history.append((world.time_step, mask.safe, action))
                pending = [state, action, 0.0]
                if action != WAIT:
                    go_action = action
                    cmd = accel_of(action)
            step_world(world, cmd, cfg)
            b = world.braking_count
            braking += b
            r = reward.step(b)
            pending[2] += r
            ret += r
            if world.ego.phase in (Phase.CROSSING, Phase.DONE):
                d = min(d, min_gap_distance(world, D_CAP))
    except CollisionError as exc:
        exc.seed = seed
        exc.mask_history = history
        raise
    outcome = "success" if world.ego.phase == Phase.DONE else "timeout"
    r = reward.terminal(outcome, d)
    ret += r
    if on_transition is not None:
        on_transition(Transition(pending[0], pending[1], pending[2] + r, pending[0],
                                 np.ones(N_ACTIONS, dtype=bool), True))
    return EpisodeResult(seed, outcome, ret, d, braking, world.time_step, world.presafe_steps,
                         go_action, history)
