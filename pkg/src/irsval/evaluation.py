"""Interactive evaluation protocol: warm up on logged history, recommend for T
steps against a simulator, report RW@T / PR@T / RC@T."""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .agents import ValueGreedyPolicy, ValueModel
from .data import RatingScale, UserHistory
from .simulator import Environment, State

CSV_COLUMNS = ("policy", "T", "rw_mean", "rw_std", "pr_mean", "pr_std",
               "rc_mean", "rc_std", "n_users", "n_seeds")
SWEEP_COLUMNS = ("gamma", "rw_mean", "rw_std")
DEFAULT_GAMMA_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99)
LR_GRID = (0.01, 0.001, 0.0001)
WD_GRID = (0.001, 0.0001, 0.00001)


@dataclass(frozen=True)
class EpisodeResult:
    user: int
    seed: int
    items: tuple[int, ...]
    ratings: tuple[float, ...]
    positives: int
    warmup_positive_items: frozenset = frozenset()


@dataclass(frozen=True)
class Metrics:
    rw: float
    pr: float
    rc: float


def positive_items(env: Environment, state: State, scale: RatingScale,
                   exclude=()) -> frozenset:
    ratings = env.rate_all(state)
    pos = set(np.flatnonzero(ratings > scale.positive_threshold).tolist())
    return frozenset(pos.difference(exclude))


def metrics(episode: EpisodeResult, scale: RatingScale, warmup_positives=None) -> Metrics:
    """rw = mean rating; pr = share of ratings above the threshold; rc = hits over
    the user's positive items at the frozen warm-up state.

    Items that only became positive during the episode are added to the
    denominator so rc stays within [0, 1] for history-dependent simulators.
    """
    T = len(episode.ratings)
    hits = {i for i, r in zip(episode.items, episode.ratings) if r > scale.positive_threshold}
    pos = episode.warmup_positive_items if warmup_positives is None else frozenset(warmup_positives)
    denom = len(pos | hits)
    return Metrics(
        rw=math.fsum(episode.ratings) / T,
        pr=len(hits) / T,
        rc=len(hits) / denom if denom else 0.0,
    )


def run_episode(policy, env: Environment, history: UserHistory, horizon: int = 40,
                warmup: int = 40, seed: int = 0, mask_seen: bool | None = None) -> EpisodeResult:
    """Warm up on the first ``warmup`` logged events, then recommend ``horizon`` items.

    The policy's rng is derived from (seed, user) only, so results do not depend
    on the order or parallelism in which users are processed.
    """
    if len(history) < warmup:
        raise ValueError(f"user {history.user} has {len(history)} < {warmup} logged interactions")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    mask_seen = policy.mask_seen if mask_seen is None else mask_seen
    state = env.reset(history.user, history.items[:warmup], history.ratings[:warmup])
    mask = set(int(i) for i in history.items[:warmup]) if mask_seen else set()
    if mask_seen and env.num_items - len(mask) < horizon:
        raise ValueError(f"only {env.num_items - len(mask)} unmasked items for {horizon} steps")
    warm_pos = positive_items(env, state, env.scale, exclude=mask)
    rng = np.random.default_rng([seed, history.user])
    items, ratings = [], []
    for _ in range(horizon):
        item = policy.act(state, mask, rng)
        rating, state = env.step(state, item)
        items.append(item)
        ratings.append(rating)
        if mask_seen:
            mask.add(item)
    positives = sum(r > env.scale.positive_threshold for r in ratings)
    return EpisodeResult(history.user, seed, tuple(items), tuple(ratings), positives, warm_pos)


def _mean_std(xs: Sequence[float]) -> tuple[float, float]:
    n = len(xs)
    mean = math.fsum(xs) / n
    return mean, math.sqrt(math.fsum((x - mean) ** 2 for x in xs) / n)


@dataclass
class EvalReport:
    policy: str
    horizon: int
    rw: tuple[float, float]
    pr: tuple[float, float]
    rc: tuple[float, float]
    n_users: int
    seeds: list[int]
    skipped_users: int = 0
    per_seed_rw: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "T": self.horizon,
            "rw_mean": self.rw[0], "rw_std": self.rw[1],
            "pr_mean": self.pr[0], "pr_std": self.pr[1],
            "rc_mean": self.rc[0], "rc_std": self.rc[1],
            "n_users": self.n_users,
            "n_seeds": len(self.seeds),
            "seeds": list(self.seeds),
            "skipped_users": self.skipped_users,
            "per_seed_rw_mean": list(self.per_seed_rw),
            "config": self.config,
        }

    def csv_row(self) -> list:
        d = self.to_dict()
        return [d[c] for c in CSV_COLUMNS]


def summarize(name: str, episodes: Sequence[EpisodeResult], scale: RatingScale, horizon: int,
              seeds: Sequence[int], skipped: int = 0) -> EvalReport:
    if not episodes:
        raise ValueError("no episodes to summarize")
    ms = [metrics(e, scale) for e in episodes]
    per_seed = []
    for s in seeds:
        vals = [m.rw for e, m in zip(episodes, ms) if e.seed == s]
        if vals:
            per_seed.append(math.fsum(vals) / len(vals))
    return EvalReport(
        policy=name, horizon=horizon,
        rw=_mean_std([m.rw for m in ms]),
        pr=_mean_std([m.pr for m in ms]),
        rc=_mean_std([m.rc for m in ms]),
        n_users=len({e.user for e in episodes}),
        seeds=list(seeds), skipped_users=skipped, per_seed_rw=per_seed,
    )


def eligible(histories: Sequence[UserHistory], warmup: int) -> tuple[list[UserHistory], int]:
    keep = [h for h in histories if len(h) >= warmup]
    return keep, len(histories) - len(keep)


def run_episodes(policy, env: Environment, histories: Sequence[UserHistory], horizon: int,
                 seed: int, warmup: int = 40, workers: int = 1) -> list[EpisodeResult]:
    def one(h):
        return run_episode(policy, env, h, horizon, warmup, seed)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, histories))
    return [one(h) for h in histories]


def evaluate(policy, env: Environment, histories: Sequence[UserHistory], horizon: int = 40,
             seeds: Sequence[int] = (0,), warmup: int = 40, workers: int = 1) -> EvalReport:
    """Average episode metrics over (user × seed). Users with fewer than
    ``warmup`` logged events are skipped and counted."""
    if not seeds:
        raise ValueError("empty seed list")
    users, skipped = eligible(histories, warmup)
    if not users:
        raise ValueError("no eligible users (all have fewer than warmup interactions)")
    episodes = []
    for s in seeds:
        episodes += run_episodes(policy, env, users, horizon, s, warmup, workers)
    return summarize(policy.name, episodes, env.scale, horizon, seeds, skipped)


def gamma_sweep(train: Callable[[float, int], ValueModel], env: Environment, gammas: Sequence[float],
                histories: Sequence[UserHistory], horizon: int = 40, seeds: Sequence[int] = (0,),
                warmup: int = 40, workers: int = 1, log=None) -> list[tuple[float, EvalReport]]:
    """Train one value model per (gamma, seed) via ``train(gamma, seed)`` with all
    other hyper-parameters fixed; pool each gamma's episodes over seeds."""
    for g in gammas:
        if not 0.0 <= g < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {g}")
    users, skipped = eligible(histories, warmup)
    if not users:
        raise ValueError("no eligible users")
    out = []
    for g in gammas:
        episodes = []
        for s in seeds:
            policy = ValueGreedyPolicy(train(g, s), name=f"gamma={g:g}")
            episodes += run_episodes(policy, env, users, horizon, s, warmup, workers)
        report = summarize(f"gamma={g:g}", episodes, env.scale, horizon, seeds, skipped)
        if log is not None:
            log(f"gamma={g:g} RW@{horizon}={report.rw[0]:.4f} ± {report.rw[1]:.4f}")
        out.append((g, report))
    return out


def select_hyper(train: Callable[[float, float], ValueModel], env: Environment,
                 histories: Sequence[UserHistory], horizon: int = 40, warmup: int = 40,
                 lrs=LR_GRID, wds=WD_GRID, log=None) -> tuple[float, float]:
    """Grid search (lr, wd) by validation RW@T; first best wins on ties."""
    best = None
    for lr in lrs:
        for wd in wds:
            rep = evaluate(ValueGreedyPolicy(train(lr, wd)), env, histories, horizon, (0,), warmup)
            if log is not None:
                log(f"lr={lr:g} wd={wd:g} validation RW@{horizon}={rep.rw[0]:.4f}")
            if best is None or rep.rw[0] > best[0]:
                best = (rep.rw[0], lr, wd)
    return best[1], best[2]
