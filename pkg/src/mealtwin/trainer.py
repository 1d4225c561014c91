"""Sandwich training: dispatch first, then steering, then dispatch again.

The two policies are never trained simultaneously.  Phase 1 trains the
dispatching network in an environment without steering.  Phase 2 freezes it
and trains the steering network against greedy dispatching.  Phase 3 freezes
steering and fine-tunes dispatching with a reduced exploration schedule.
Each phase owns fresh learner state (replay buffer, optimizer, target net,
epsilon counter); converged phases stop at their planned episode count,
unconverged ones extend in blocks up to twice the plan.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import json

import numpy as np

from . import dispatch as dsp
from . import steering as steer
from .errors import ConfigError, ContractError, NumericalError
from .rlcore import (
    ACT_LINEAR,
    BATCH_SIZE,
    EPSILON_START,
    GAMMA,
    LEARN_PERIOD_STEPS,
    LEARNING_RATE,
    REPLAY_CAPACITY,
    TARGET_SYNC_DECISIONS,
    Adam,
    QNet,
    ReplayBuffer,
    Transition,
    dispatch_qnet,
    epsilon_schedule,
    learn,
    maybe_sync_target,
    select_action,
    steering_qnet,
)
from .scenario import ScenarioConfig, make_rng
from .simcore import MODE_STRATEGIC, SimState

TRAINING_REPORT_SCHEMA = "mealtwin-training-report/1"

PHASE_DISPATCH = "dispatch"
PHASE_STEERING = "steering"


@dataclass(frozen=True)
class TrainingPlan:
    episodes: Tuple[int, int, int] = (200, 150, 100)
    seed: int = 0
    mode: str = MODE_STRATEGIC
    hidden: int = 32
    output_activation: str = ACT_LINEAR
    learning_rate: float = LEARNING_RATE
    gamma: float = GAMMA
    batch_size: int = BATCH_SIZE
    capacity: int = REPLAY_CAPACITY
    sync_every: int = TARGET_SYNC_DECISIONS
    learn_period: int = LEARN_PERIOD_STEPS
    epsilon_start: float = EPSILON_START
    convergence_window: int = 20
    convergence_threshold: float = 0.05
    extension_block: int = 25
    phase3_epsilon_scale: float = 0.25

    def __post_init__(self) -> None:
        if any(r < 1 for r in self.episodes):
            raise ConfigError("every phase needs at least one episode")
        if len(self.episodes) != 3:
            raise ConfigError("the sandwich has exactly three phases")


@dataclass
class EpisodeRecord:
    index: int
    ret: float
    mean_loss: Optional[float]
    epsilon: float
    learn_updates: int
    dispatch_hash: str
    steering_hash: str


@dataclass
class PhaseReport:
    name: str
    trains: str
    planned: int
    executed: int
    converged: Optional[bool]
    aborted: Optional[str]
    episodes: List[EpisodeRecord] = field(default_factory=list)

    @property
    def returns(self) -> List[float]:
        return [e.ret for e in self.episodes]


@dataclass
class TrainingReport:
    mode: str
    seed: int
    planned_episodes: Tuple[int, int, int]
    phases: List[PhaseReport] = field(default_factory=list)
    wall_clock_s: float = 0.0  # kept in memory; not serialized


def convergence_check(series: List[float], window: int, threshold: float) -> bool:
    """Converged when the last window's mean return moved no more than the
    threshold fraction relative to the previous window's mean."""
    if len(series) < 2 * window:
        raise ContractError(
            f"need at least {2 * window} episodes to test convergence, have {len(series)}"
        )
    prev = float(np.mean(series[-2 * window : -window]))
    last = float(np.mean(series[-window:]))
    return abs(last - prev) <= threshold * abs(prev)


def param_hash(net: QNet) -> str:
    return hashlib.sha256(net.params.tobytes()).hexdigest()[:16]


class _Learner:
    """Mutable per-phase training state for one value network."""

    def __init__(self, net: QNet, plan: TrainingPlan, phase_index: int, epsilon_start: float):
        self.net = net
        self.target = net.clone()
        self.buffer = ReplayBuffer(plan.capacity)
        self.adam = Adam(net.params.size, lr=plan.learning_rate)
        self.rng = make_rng(plan.seed, 91, phase_index)
        self.epsilon_start = epsilon_start
        self.sync_every = plan.sync_every
        self.learn_updates = 0
        self.decisions = 0
        self.env_steps = 0
        self.losses: List[float] = []

    def epsilon(self) -> float:
        return epsilon_schedule(self.learn_updates, start=self.epsilon_start)

    def after_decision(self) -> None:
        self.decisions += 1
        maybe_sync_target(self.net, self.target, self.decisions, self.sync_every)

    def after_env_step(self, plan: TrainingPlan) -> None:
        self.env_steps += 1
        if self.env_steps % plan.learn_period != 0:
            return
        if len(self.buffer) < plan.batch_size:
            return
        batch = self.buffer.sample(plan.batch_size, self.rng)
        loss = learn(self.net, self.target, batch, self.adam, plan.gamma)
        self.learn_updates += 1
        self.losses.append(loss)


class _EpisodeStats:
    def __init__(self) -> None:
        self.ret = 0.0


def _training_dispatch_fn(learner: _Learner, params: dsp.DispatchRewardParams, stats: _EpisodeStats):
    def fn(sim: SimState, oid: int, remaining: List[int]) -> None:
        s, mask = dsp.encode_dispatch_state(sim, oid)
        q = learner.net.forward(s)
        action = select_action(q, mask, learner.epsilon(), sim.rng_policy)
        fleet = sim.config.fleet_size
        sd = float(s[3 + 3 * action]) if action < fleet else None
        raw, removed = dsp.apply_dispatch_decision(sim, oid, action, params, sd_gap=sd)
        s2, mask2, done = dsp.dispatch_next_state(sim, s, action, removed, remaining)
        learner.buffer.push(dsp.make_transition(s, action, raw, s2, mask2, done))
        learner.after_decision()
        stats.ret += raw

    return fn


def _training_steer_fn(learner: _Learner, stats: _EpisodeStats):
    def fn(sim: SimState, cid: int) -> None:
        s, mask = steer.encode_steer_state(sim, cid)
        q = learner.net.forward(s)
        action = select_action(q, mask, learner.epsilon(), sim.rng_policy)
        raw, dest = steer.apply_steer_decision(sim, cid, action)
        s2, mask2 = steer.encode_from_field(sim, sim.gap_field(), dest)
        done = sim.clock == sim.config.shift_minutes - 1
        learner.buffer.push(Transition(s=s, a=action, r=raw, s2=s2, done=done, mask2=mask2))
        learner.after_decision()
        stats.ret += raw

    return fn


def _run_phase(
    report: TrainingReport,
    name: str,
    trains: str,
    planned: int,
    plan: TrainingPlan,
    config: ScenarioConfig,
    predictor,
    learner: _Learner,
    make_dispatch_fn,
    make_steer_fn,
    phase_index: int,
    dispatch_net: QNet,
    steering_net: QNet,
) -> PhaseReport:
    phase = PhaseReport(
        name=name, trains=trains, planned=planned, executed=0, converged=None, aborted=None
    )
    report.phases.append(phase)
    window = plan.convergence_window
    budget = planned
    episode = 0
    while episode < budget:
        stats = _EpisodeStats()
        sim = SimState(
            config,
            mode=plan.mode,
            predictor=predictor,
            seed_key=(plan.seed, phase_index, episode),
        )
        losses_before = len(learner.losses)
        try:
            dispatch_fn = make_dispatch_fn(stats)
            steer_fn = make_steer_fn(stats) if make_steer_fn is not None else None
            for _ in range(config.shift_minutes):
                sim.step(dispatch_fn, steer_fn)
                learner.after_env_step(plan)
            sim.finish()
        except NumericalError as exc:
            phase.aborted = str(exc)
            break
        new_losses = learner.losses[losses_before:]
        phase.episodes.append(
            EpisodeRecord(
                index=episode,
                ret=stats.ret,
                mean_loss=float(np.mean(new_losses)) if new_losses else None,
                epsilon=learner.epsilon(),
                learn_updates=learner.learn_updates,
                dispatch_hash=param_hash(dispatch_net),
                steering_hash=param_hash(steering_net),
            )
        )
        episode += 1
        if episode == budget and len(phase.returns) >= 2 * window:
            phase.converged = convergence_check(
                phase.returns, window, plan.convergence_threshold
            )
            if not phase.converged and budget < 2 * planned:
                budget = min(budget + plan.extension_block, 2 * planned)
    phase.executed = episode
    return phase


def sandwich_train(
    plan: TrainingPlan,
    config: ScenarioConfig,
    predictor=None,
) -> Tuple[QNet, QNet, TrainingReport]:
    """Run the three training phases and return both trained networks."""
    started = time.perf_counter()
    dispatch_net = dispatch_qnet(
        config.fleet_size,
        hidden=plan.hidden,
        output_activation=plan.output_activation,
        rng=make_rng(plan.seed, 7),
    )
    steering_net = steering_qnet(
        output_activation=plan.output_activation, rng=make_rng(plan.seed, 8)
    )
    report = TrainingReport(mode=plan.mode, seed=plan.seed, planned_episodes=plan.episodes)
    reward_params = dsp.DispatchRewardParams()

    learner1 = _Learner(dispatch_net, plan, 0, plan.epsilon_start)
    _run_phase(
        report,
        "phase1",
        PHASE_DISPATCH,
        plan.episodes[0],
        plan,
        config,
        predictor,
        learner1,
        lambda stats: _training_dispatch_fn(learner1, reward_params, stats),
        None,
        0,
        dispatch_net,
        steering_net,
    )

    learner2 = _Learner(steering_net, plan, 1, plan.epsilon_start)
    frozen_dispatch = dsp.ConvDdqnPolicy(dispatch_net, reward_params, epsilon=0.0)
    _run_phase(
        report,
        "phase2",
        PHASE_STEERING,
        plan.episodes[1],
        plan,
        config,
        predictor,
        learner2,
        lambda stats: frozen_dispatch,
        lambda stats: _training_steer_fn(learner2, stats),
        1,
        dispatch_net,
        steering_net,
    )

    learner3 = _Learner(
        dispatch_net, plan, 2, plan.epsilon_start * plan.phase3_epsilon_scale
    )
    frozen_steering = steer.SteerDdqnPolicy(steering_net, epsilon=0.0)
    _run_phase(
        report,
        "phase3",
        PHASE_DISPATCH,
        plan.episodes[2],
        plan,
        config,
        predictor,
        learner3,
        lambda stats: _training_dispatch_fn(learner3, reward_params, stats),
        lambda stats: frozen_steering,
        2,
        dispatch_net,
        steering_net,
    )

    report.wall_clock_s = time.perf_counter() - started
    return dispatch_net, steering_net, report


def report_to_dict(report: TrainingReport) -> dict:
    return {
        "schema": TRAINING_REPORT_SCHEMA,
        "mode": report.mode,
        "seed": report.seed,
        "planned_episodes": list(report.planned_episodes),
        "phases": [
            {
                "name": p.name,
                "trains": p.trains,
                "planned": p.planned,
                "executed": p.executed,
                "converged": p.converged,
                "aborted": p.aborted,
                "episodes": [
                    {
                        "index": e.index,
                        "return": e.ret,
                        "mean_loss": e.mean_loss,
                        "epsilon": e.epsilon,
                        "learn_updates": e.learn_updates,
                        "dispatch_hash": e.dispatch_hash,
                        "steering_hash": e.steering_hash,
                    }
                    for e in p.episodes
                ],
            }
            for p in report.phases
        ],
    }


def save_training_report(path: Path, report: TrainingReport) -> None:
    with open(path, "w") as fh:
        json.dump(report_to_dict(report), fh, sort_keys=True, indent=1)
        fh.write("\n")


def write_return_series(path: Path, report: TrainingReport) -> None:
    """Per-episode return series as CSV: phase,episode,return,epsilon,mean_loss."""
    with open(path, "w") as fh:
        fh.write("phase,episode,return,epsilon,mean_loss\n")
        for p in report.phases:
            for e in p.episodes:
                loss = "" if e.mean_loss is None else repr(e.mean_loss)
                fh.write(f"{p.name},{e.index},{e.ret!r},{e.epsilon!r},{loss}\n")
