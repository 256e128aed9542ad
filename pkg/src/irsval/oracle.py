"""Beam-search planning over a simulator and the greedy-vs-beam diagnostic.

A ratio of greedy cumulative reward to beam-search cumulative reward close to
one means a one-step greedy recommender already collects (almost) everything a
planner could, i.e. the simulated feedback carries no exploitable long-term effect.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .simulator import Environment, State

NO_EFFECT_THRESHOLD = 0.99
VERDICT_NONE = "no material long-term effects detected; greedy baseline is mandatory"
VERDICT_PRESENT = "long-term effects present"


class Trajectory(NamedTuple):
    state: State
    items: tuple[int, ...]
    rewards: tuple[float, ...]
    total: float


@dataclass(frozen=True)
class BeamResult:
    items: tuple[int, ...]
    reward: float
    rewards: tuple[float, ...] = ()


class NoAdmissibleItem(ValueError):
    pass


def _expand(env: Environment, beam: list[Trajectory], k: int, mask_seen: bool):
    """Best ``k`` extensions of every trajectory, as (key, items, parent, item, rating)."""
    out = []
    for p, traj in enumerate(beam):
        ratings = np.asarray(env.rate_all(traj.state), dtype=np.float64)
        allowed = np.ones(env.num_items, dtype=bool)
        if mask_seen:
            allowed[traj.state.items] = False
        cand = np.flatnonzero(allowed)
        if len(cand) == 0:
            continue
        r = ratings[cand]
        # within one parent the cumulative prefix is shared, so rank by the step reward
        top = np.lexsort((cand, -r))[:k]
        for o in top:
            item = int(cand[o])
            out.append((-(traj.total + r[o]), traj.items + (item,), p, item, float(r[o])))
    return out


def beam_search(env: Environment, state: State, horizon: int, k: int,
                mask_seen: bool = True) -> BeamResult:
    """Keep the ``k`` best partial sequences by cumulative simulated reward.

    Ties are broken by the lexicographically smaller item sequence. With
    ``mask_seen`` an item already present in the state (warm-up or chosen) is
    never recommended again. Per step only the ``k`` survivors get new states.
    """
    if k < 1 or horizon < 1:
        raise ValueError("k and horizon must be >= 1")
    beam = [Trajectory(state, (), (), 0.0)]
    for step in range(horizon):
        cands = _expand(env, beam, k, mask_seen)
        if not cands:
            raise NoAdmissibleItem(f"no admissible extension at step {step}")
        cands.sort(key=lambda c: (c[0], c[1]))
        nxt = []
        for _, items, parent, item, rating in cands[:k]:
            old = beam[parent]
            rewards = old.rewards + (rating,)
            nxt.append(Trajectory(old.state.extended(item, rating), items, rewards,
                                  math.fsum(rewards)))
        beam = nxt
    best = min(beam, key=lambda t: (-t.total, t.items))
    return BeamResult(best.items, best.total, best.rewards)


def greedy_rollout(env: Environment, state: State, horizon: int,
                   mask_seen: bool = True) -> BeamResult:
    return beam_search(env, state, horizon, 1, mask_seen)


@dataclass
class OracleReport:
    horizon: int
    beam_sizes: list[int]
    k_ref: int
    users: list[int]
    rewards: dict[int, list[float]]
    relative: float
    extra: dict = field(default_factory=dict)

    def mean_reward(self, k: int) -> float:
        return math.fsum(self.rewards[k]) / len(self.rewards[k])

    @property
    def verdict(self) -> str:
        return verdict(self.relative)

    def to_dict(self) -> dict:
        out = {
            "T": self.horizon,
            "k": list(self.beam_sizes),
            "k_ref": self.k_ref,
            "users": list(self.users),
            "rewards": {str(k): list(v) for k, v in self.rewards.items()},
            "mean_rw": {str(k): self.mean_reward(k) / self.horizon for k in self.beam_sizes},
            "relative": self.relative,
            "verdict": self.verdict,
        }
        out.update(self.extra)
        return out


def verdict(relative: float, threshold: float = NO_EFFECT_THRESHOLD) -> str:
    return VERDICT_NONE if relative >= threshold else VERDICT_PRESENT


def relative_ratio(greedy: float, beam: float) -> float:
    """Greedy reward over beam reward; NaN when the beam reward is zero."""
    return greedy / beam if beam != 0 else float("nan")


def relative_performance(env: Environment, states: list[State], horizon: int, k_ref: int = 10,
                         beam_sizes=None, mask_seen: bool = True, workers: int = 1) -> OracleReport:
    """Mean greedy (k=1) cumulative reward over mean beam@k_ref cumulative reward."""
    if k_ref < 1:
        raise ValueError("k_ref must be >= 1")
    if not states:
        raise ValueError("empty test set")
    sizes = sorted(set(beam_sizes or ()) | {1, k_ref})

    def run(state):
        return [beam_search(env, state, horizon, k, mask_seen).reward for k in sizes]

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(run, states))
    else:
        rows = [run(s) for s in states]
    rewards = {k: [row[j] for row in rows] for j, k in enumerate(sizes)}
    relative = relative_ratio(math.fsum(rewards[1]), math.fsum(rewards[k_ref]))
    return OracleReport(horizon, sizes, k_ref, [s.user for s in states], rewards, relative)
