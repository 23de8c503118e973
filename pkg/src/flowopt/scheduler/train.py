"""Double DQN training loop over simulator episodes."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..model.types import ProcessDefinition
from ..model.validate import raise_for_violations, validate
from ..neural.optim import AdamState, adam_step
from ..sim.engine import ConfigError, ScenarioConfig, Simulator, StopSimulation
from ..sim.kpis import compute_kpis
from .policy import SchedulerPolicy, SlotPolicy
from .qnet import init_qnet, q_targets_double, q_values, td_loss_and_grads
from .replay import ReplayBuffer, Transition
from .state import EncodingSpec, act_greedy

LOG_FIELDS = ("episode", "steps", "return", "mean_cycle_time", "epsilon")
# appended only when checkpoint selection ran
VALIDATION_FIELD = "validation"


@dataclass
class TrainConfig:
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.5
    target_sync: int = 1000
    batch_size: int = 64
    buffer_size: int = 10_000
    iterations: int = 20_000  # environment steps
    lr: float = 0.001
    hidden: tuple = (64, 64)
    slots: int = 8
    count_cap: float = 20.0
    reward_scale: Optional[float] = None  # None -> 1 / horizon
    # None: discount gamma per decision. A time unit u: discount gamma ** (elapsed / u),
    # so decisions that merely add decision points (Wait) gain no discounting advantage.
    discount_time_unit: Optional[float] = None
    # Every ``select_every`` steps, score the greedy policy on ``select_episodes``
    # held-out episodes and return the best-scoring weights instead of the last ones.
    select_every: Optional[int] = None
    select_episodes: int = 2
    seed: int = 0

    def check(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must be in [0, 1)")
        if self.target_sync < 1:
            raise ConfigError("target_sync must be >= 1")
        if self.batch_size < 1 or self.buffer_size < self.batch_size:
            raise ConfigError("need 1 <= batch_size <= buffer_size")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if not (0.0 <= self.eps_end <= self.eps_start <= 1.0) or not 0.0 < self.eps_fraction <= 1.0:
            raise ConfigError("bad epsilon schedule")
        if self.slots < 1 or self.count_cap <= 0 or self.lr <= 0:
            raise ConfigError("slots, count_cap and lr must be positive")
        if self.reward_scale is not None and not self.reward_scale > 0:
            raise ConfigError("reward_scale must be > 0")
        if self.discount_time_unit is not None and not self.discount_time_unit > 0:
            raise ConfigError("discount_time_unit must be > 0")
        if self.select_every is not None and self.select_every < 1:
            raise ConfigError("select_every must be >= 1")
        if self.select_episodes < 1:
            raise ConfigError("select_episodes must be >= 1")

    def epsilon(self, step: int) -> float:
        span = self.eps_fraction * max(self.iterations, 1)
        frac = min(1.0, step / span)
        return self.eps_start + frac * (self.eps_end - self.eps_start)

    def to_doc(self) -> dict:
        doc = asdict(self)
        doc["hidden"] = list(self.hidden)
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown training keys {sorted(unknown)}")
        doc = dict(doc)
        if "hidden" in doc:
            doc["hidden"] = tuple(doc["hidden"])
        cfg = cls(**doc)
        cfg.check()
        return cfg


@dataclass
class _Learner:
    cfg: TrainConfig
    online: dict
    target: dict
    buffer: ReplayBuffer
    adam: AdamState
    steps: int = 0
    losses: list = field(default_factory=list)

    def observe(self, t: Transition) -> None:
        self.buffer.push(t)
        if len(self.buffer) < self.cfg.batch_size:
            return
        b = self.buffer.sample(self.cfg.batch_size)
        discounts = b["discount"] if self.cfg.discount_time_unit is not None else None
        y = q_targets_double(b["r"], b["s2"], b["done"], b["mask2"], self.online, self.target,
                             self.cfg.gamma, discounts)
        loss, grads = td_loss_and_grads(self.online, b["s"], b["a"], y)
        self.online, self.adam = adam_step(self.online, grads, self.adam)
        self.losses.append(loss)


class _EpsilonGreedyAgent(SlotPolicy):
    """Acts epsilon-greedily, turns consecutive decisions into transitions."""

    name = "training"

    def __init__(self, spec, learner: _Learner, reward_scale: float, rng):
        super().__init__(spec)
        self.learner = learner
        self.scale = reward_scale
        self.rng = rng
        self.prev = None
        self.ep_return = 0.0
        self.ep_steps = 0

    def begin(self, sim):
        self.prev = None
        self.ep_return = 0.0
        self.ep_steps = 0

    def _close(self, now, wait_integral, s2, done, mask2):
        s, a, w, t = self.prev
        r = -(wait_integral - w) * self.scale
        unit = self.learner.cfg.discount_time_unit
        disc = self.learner.cfg.gamma ** ((now - t) / unit) if unit else 1.0
        self.ep_return += r
        self.learner.observe(Transition(s, a, r, s2, done, mask2, disc))

    def choose(self, state, mask, snap):
        ln = self.learner
        cfg = ln.cfg
        if self.prev is not None:
            self._close(snap.now, snap.wait_integral, state, False, mask)
            self.prev = None
        if ln.steps >= cfg.iterations:
            raise StopSimulation
        if self.rng.random() < cfg.epsilon(ln.steps):
            a = int(self.rng.choice(np.flatnonzero(mask)))
        else:
            a = act_greedy(q_values(ln.online, state), mask)
        self.prev = (state, a, snap.wait_integral, snap.now)
        ln.steps += 1
        self.ep_steps += 1
        if ln.steps % cfg.target_sync == 0:
            ln.target = {k: v.copy() for k, v in ln.online.items()}
        return a

    def end(self, sim):
        if self.prev is not None and not sim.stopped:
            n = self.spec.n_actions
            self._close(sim.now, sim.wait_integral, np.zeros(self.spec.size), True, np.zeros(n, dtype=bool))
        self.prev = None


def _episode_seed(cfg: TrainConfig, episode: int) -> int:
    # kept well away from the small seeds used for evaluation
    return 1_000_000 + cfg.seed * 100_000 + episode


def _validation_score(defn, scenario, spec, params, cfg) -> float:
    policy = SchedulerPolicy(spec, params, cfg.hidden)
    cycles = []
    for k in range(cfg.select_episodes):
        sc = scenario.with_seed(2_000_000 + cfg.seed * 100 + k)
        kpis = compute_kpis(Simulator(defn, sc, policy, check=False).run(), defn, scenario.horizon)
        cycles.append(math.inf if kpis.mean_cycle_time is None else kpis.mean_cycle_time)
    return sum(cycles) / len(cycles)


def train_scheduler(defn: ProcessDefinition, scenario: ScenarioConfig,
                    config: Optional[TrainConfig] = None, log_path=None) -> SchedulerPolicy:
    """Train on full simulation episodes until ``config.iterations`` decisions were taken."""
    cfg = config or TrainConfig()
    cfg.check()
    raise_for_violations(validate(defn))
    scenario.check()
    spec = EncodingSpec.from_process(defn, cfg.slots, cfg.count_cap)
    rng = np.random.default_rng(cfg.seed)
    online = init_qnet(spec.size, cfg.hidden, spec.n_actions, rng)
    learner = _Learner(cfg, online, {k: v.copy() for k, v in online.items()},
                       ReplayBuffer(cfg.buffer_size, spec.size, spec.n_actions, cfg.seed + 1),
                       AdamState(lr=cfg.lr))
    scale = cfg.reward_scale if cfg.reward_scale is not None else 1.0 / scenario.horizon
    agent = _EpsilonGreedyAgent(spec, learner, scale, np.random.default_rng(cfg.seed + 2))
    history = []
    episode = 0
    best = (math.inf, None)
    next_check = cfg.select_every
    while learner.steps < cfg.iterations:
        sim = Simulator(defn, scenario.with_seed(_episode_seed(cfg, episode)), agent, check=False)
        log = sim.run()
        if agent.ep_steps == 0:
            break  # no decision instants: nothing to learn from
        kpis = compute_kpis(log, defn, scenario.horizon)
        history.append({"episode": episode, "steps": agent.ep_steps, "return": agent.ep_return,
                        "mean_cycle_time": kpis.mean_cycle_time,
                        "epsilon": cfg.epsilon(learner.steps)})
        episode += 1
        if next_check is not None and (learner.steps >= next_check or learner.steps >= cfg.iterations):
            score = _validation_score(defn, scenario, spec, learner.online, cfg)
            history[-1][VALIDATION_FIELD] = score
            if score < best[0]:
                best = (score, {k: v.copy() for k, v in learner.online.items()})
            next_check = learner.steps + cfg.select_every
    params = best[1] if best[1] is not None else learner.online
    policy = SchedulerPolicy(spec, params, cfg.hidden, history, cfg.to_doc())
    if log_path is not None:
        write_training_log(history, log_path)
    return policy


def training_log_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    fields = LOG_FIELDS
    if any(VALIDATION_FIELD in row for row in history):
        fields += (VALIDATION_FIELD,)
    w.writerow(fields)
    for row in history:
        vals = [row.get(k) for k in fields]
        w.writerow(["" if v is None else (f"{v:.9g}" if isinstance(v, float) else v) for v in vals])
    return buf.getvalue()


def write_training_log(history, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(training_log_csv(history))
