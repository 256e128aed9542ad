"""User simulators: the environment contract, a matrix-factorization model and a
synthetic environment whose ratings decay with recent same-genre exposure."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from . import persist
from .data import Dataset, RatingScale, Record
from .errors import DataError, NumericalError

MF_MAGIC = b"IRSMFMD\x00"


@dataclass(frozen=True)
class State:
    """Interaction prefix of one user: warm-up history plus simulated feedback."""

    user: int
    events: tuple[tuple[int, float], ...] = ()

    @property
    def items(self) -> list[int]:
        return [i for i, _ in self.events]

    def extended(self, item: int, rating: float) -> "State":
        return State(self.user, self.events + ((int(item), float(rating)),))

    def __len__(self) -> int:
        return len(self.events)


class Environment:
    """Answers "what rating does this user give item a in state s".

    Subclasses implement :meth:`rate_all`; everything else derives from it.
    Transitions are deterministic: the next state is the current one with
    ``(item, rating)`` appended.
    """

    num_items: int
    scale: RatingScale

    def reset(self, user: int, items=(), ratings=()) -> State:
        return State(int(user), tuple((int(i), float(r)) for i, r in zip(items, ratings)))

    def rate_all(self, state: State) -> np.ndarray:
        raise NotImplementedError

    def rate(self, state: State, item: int) -> float:
        return float(self.rate_all(state)[item])

    def step(self, state: State, item: int) -> tuple[float, State]:
        if not 0 <= item < self.num_items:
            raise IndexError(f"item {item} out of range [0, {self.num_items})")
        rating = self.rate(state, item)
        return rating, state.extended(item, rating)


# -- matrix factorization -------------------------------------------------------

@dataclass(frozen=True)
class MFHyper:
    dim: int = 64
    lr: float = 0.01
    l2: float = 0.05
    epochs: int = 20
    seed: int = 0


@dataclass(frozen=True, eq=False)
class MFModel:
    mu: float
    user_bias: np.ndarray
    item_bias: np.ndarray
    user_factors: np.ndarray
    item_factors: np.ndarray
    scale: RatingScale

    @property
    def dim(self) -> int:
        return self.user_factors.shape[1]

    @property
    def num_users(self) -> int:
        return len(self.user_bias)

    @property
    def num_items(self) -> int:
        return len(self.item_bias)

    def raw_predict(self, users, items) -> np.ndarray:
        users = np.asarray(users)
        items = np.asarray(items)
        dots = np.einsum("ij,ij->i", self.user_factors[users], self.item_factors[items])
        return self.mu + self.user_bias[users] + self.item_bias[items] + dots

    def predict_all(self, user: int) -> np.ndarray:
        raw = (self.mu + self.user_bias[user] + self.item_bias
               + self.item_factors @ self.user_factors[user])
        return np.clip(raw, self.scale.min, self.scale.max)


def mf_predict(model: MFModel, user: int, item: int) -> float:
    raw = (model.mu + model.user_bias[user] + model.item_bias[item]
           + float(model.user_factors[user] @ model.item_factors[item]))
    return float(min(max(raw, model.scale.min), model.scale.max))


@numba.njit(cache=True)
def _sgd_epoch(users, items, ratings, order, mu, bu, bi, P, Q, lr, l2):
    d = P.shape[1]
    sq = 0.0
    for n in range(order.shape[0]):
        idx = order[n]
        u = users[idx]
        i = items[idx]
        pred = mu + bu[u] + bi[i]
        for f in range(d):
            pred += P[u, f] * Q[i, f]
        err = ratings[idx] - pred
        if not np.isfinite(err):
            return sq, n
        sq += err * err
        bu[u] += lr * (err - l2 * bu[u])
        bi[i] += lr * (err - l2 * bi[i])
        for f in range(d):
            pu = P[u, f]
            qi = Q[i, f]
            P[u, f] = pu + lr * (err * qi - l2 * pu)
            Q[i, f] = qi + lr * (err * pu - l2 * qi)
    return sq, -1


def mf_train(users, items, ratings, num_users: int, num_items: int,
             scale: RatingScale, hyper: MFHyper = MFHyper(), log=None) -> MFModel:
    """Biased MF fitted by per-sample SGD on squared error.

    The global mean is fixed to the training mean. Item factors start at
    uniform(-0.05, 0.05); user factors and biases start at zero, so an
    untrained model predicts the mean exactly.
    """
    if hyper.dim < 1:
        raise ValueError("dim must be >= 1")
    users = np.ascontiguousarray(users, dtype=np.int64)
    items = np.ascontiguousarray(items, dtype=np.int64)
    ratings = np.ascontiguousarray(ratings, dtype=np.float64)
    if len(users) == 0:
        raise DataError("no training ratings")
    if users.min() < 0 or users.max() >= num_users or items.min() < 0 or items.max() >= num_items:
        raise DataError("user or item index out of bounds")
    rng = np.random.default_rng(hyper.seed)
    mu = float(math.fsum(ratings) / len(ratings))
    bu = np.zeros(num_users)
    bi = np.zeros(num_items)
    P = np.zeros((num_users, hyper.dim))
    Q = rng.uniform(-0.05, 0.05, size=(num_items, hyper.dim))
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(ratings))
        sq, bad = _sgd_epoch(users, items, ratings, order, mu, bu, bi, P, Q, hyper.lr, hyper.l2)
        if bad >= 0 or not np.isfinite(sq):
            sample = int(order[bad]) if bad >= 0 else -1
            raise NumericalError(f"non-finite loss in MF training at epoch {epoch}, sample {sample}")
        if log is not None:
            log(f"epoch {epoch + 1}/{hyper.epochs} train rmse {math.sqrt(sq / len(ratings)):.4f}")
    return MFModel(mu, bu, bi, P, Q, scale)


def rmse(model: MFModel, users, items, ratings) -> float:
    ratings = np.asarray(ratings, dtype=np.float64)
    if len(ratings) == 0:
        raise ValueError("rmse over an empty evaluation set")
    pred = np.clip(model.raw_predict(users, items), model.scale.min, model.scale.max)
    return math.sqrt(math.fsum((pred - ratings) ** 2) / len(ratings))


def chronological_holdout(dataset: Dataset, frac: float = 0.1, users=None):
    """Per-user split: the last ``frac`` of each timeline (at least one event
    for users with two or more) is held out. Returns two (users, items, ratings)
    triples of arrays: (fit, held_out)."""
    fit = ([], [], [])
    held = ([], [], [])
    for u in (range(dataset.num_users) if users is None else users):
        h = dataset.users[u]
        n = len(h)
        n_hold = max(1, int(n * frac)) if n >= 2 else 0
        cut = n - n_hold
        for dst, lo, hi in ((fit, 0, cut), (held, cut, n)):
            dst[0].append(np.full(hi - lo, u, dtype=np.int64))
            dst[1].append(h.items[lo:hi])
            dst[2].append(h.ratings[lo:hi])

    def cat(parts):
        return tuple(np.concatenate(p) if p else np.zeros(0) for p in parts)

    return cat(fit), cat(held)


def save_mf(model: MFModel, path) -> None:
    meta = {"kind": "mf", "dim": model.dim, "mu": model.mu,
            "scale": dataclasses.asdict(model.scale)}
    persist.dump(path, MF_MAGIC, meta, {
        "user_bias": model.user_bias, "item_bias": model.item_bias,
        "user_factors": model.user_factors, "item_factors": model.item_factors,
    })


def load_mf(path) -> MFModel:
    if not Path(path).exists():
        raise DataError(f"model file missing: {path}")
    meta, arr = persist.load(path, MF_MAGIC)
    return MFModel(meta["mu"], arr["user_bias"], arr["item_bias"], arr["user_factors"],
                   arr["item_factors"], RatingScale(**meta["scale"]))


class MFEnvironment(Environment):
    """Static environment: ratings ignore the interaction history."""

    def __init__(self, model: MFModel):
        self.model = model
        self.num_items = model.num_items
        self.scale = model.scale

    def rate_all(self, state: State) -> np.ndarray:
        return self.model.predict_all(state.user)


# -- synthetic long-term environment ---------------------------------------------

@dataclass(frozen=True)
class SyntheticEnvConfig:
    num_users: int = 100
    num_items: int = 200
    num_genres: int = 3
    fatigue: float = 0.0
    window: int = 5
    scale: RatingScale = field(default_factory=lambda: RatingScale(1.0, 5.0, 4.0))
    seed: int = 0

    def __post_init__(self):
        if self.fatigue < 0:
            raise ValueError("fatigue must be >= 0")
        if self.window < 0 or self.num_genres < 1:
            raise ValueError("window must be >= 0 and num_genres >= 1")


class SyntheticEnvironment(Environment):
    """rating = clamp(base[u, a] - fatigue * #(last ``window`` events sharing a's genre)).

    Base utilities are i.i.d. uniform over [scale.min + 1, scale.max]; genres are
    assigned round-robin. With ``fatigue == 0`` ratings are history-independent.
    """

    def __init__(self, config: SyntheticEnvConfig, base_utility=None, genre_of=None):
        self.config = config
        self.scale = config.scale
        if base_utility is None:
            rng = np.random.default_rng(config.seed)
            lo = min(config.scale.min + 1.0, config.scale.max)
            base_utility = rng.uniform(lo, config.scale.max,
                                       size=(config.num_users, config.num_items))
        if genre_of is None:
            genre_of = np.arange(config.num_items) % config.num_genres
        self.base_utility = np.asarray(base_utility, dtype=np.float64)
        self.genre_of = np.asarray(genre_of, dtype=np.int64)
        self.num_items = self.base_utility.shape[1]

    def genre_counts(self, state: State) -> np.ndarray:
        recent = [i for i, _ in state.events[-self.config.window:]] if self.config.window else []
        return np.bincount(self.genre_of[recent], minlength=self.config.num_genres)

    def rate_all(self, state: State) -> np.ndarray:
        base = self.base_utility[state.user]
        if self.config.fatigue == 0.0:
            return np.clip(base, self.scale.min, self.scale.max)
        penalty = self.config.fatigue * self.genre_counts(state)[self.genre_of]
        return np.clip(base - penalty, self.scale.min, self.scale.max)

    def reindexed(self, user_ids, item_ids) -> "SyntheticEnvironment":
        """Environment over a subset/permutation of users and items (dense -> original)."""
        user_ids = np.asarray(user_ids, dtype=np.int64)
        item_ids = np.asarray(item_ids, dtype=np.int64)
        cfg = dataclasses.replace(self.config, num_users=len(user_ids), num_items=len(item_ids))
        return SyntheticEnvironment(cfg, self.base_utility[np.ix_(user_ids, item_ids)],
                                    self.genre_of[item_ids])


def synth_rate(env: SyntheticEnvironment, state: State, item: int) -> float:
    cfg = env.config
    same = 0
    if cfg.fatigue and cfg.window:
        g = env.genre_of[item]
        same = sum(1 for i, _ in state.events[-cfg.window:] if env.genre_of[i] == g)
    value = env.base_utility[state.user, item] - cfg.fatigue * same
    return float(min(max(value, cfg.scale.min), cfg.scale.max))


def generate_synthetic_logs(env: SyntheticEnvironment, length: int, seed: int) -> list[Record]:
    """Logged behaviour from a uniform-random logging policy, one distinct item per step.

    Timestamps are the step index, so chronological order equals logging order.
    """
    if length > env.num_items:
        raise ValueError("log length exceeds the item count")
    rng = np.random.default_rng(seed)
    records: list[Record] = []
    for u in range(env.base_utility.shape[0]):
        state = env.reset(u)
        for t, item in enumerate(rng.permutation(env.num_items)[:length]):
            rating, state = env.step(state, int(item))
            records.append((u, int(item), rating, t))
    return records
