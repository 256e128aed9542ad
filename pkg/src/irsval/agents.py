"""Recommendation policies: Random, POP and a Q-learning recommender trained offline
from logged sequences. With ``gamma == 0`` the Q-learner is a one-step reward
regressor (GreedyRM)."""

from __future__ import annotations

import enum
import math
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from . import persist
from .data import UserHistory
from .errors import DataError, NumericalError
from .simulator import State

AGENT_MAGIC = b"IRSAGNT\x00"
PARAM_NAMES = ("item_emb", "head", "item_bias")


@dataclass(frozen=True)
class AgentHyper:
    dim: int = 32
    history: int = 50
    gamma: float = 0.95
    lr: float = 1e-3
    wd: float = 1e-4
    batch: int = 256
    epochs: int = 10
    grad_clip: float = 5.0
    target_sync: int = 500
    seed: int = 0


# -- transitions ----------------------------------------------------------------

@dataclass(frozen=True)
class Transition:
    state: State
    action: int
    reward: float
    next_state: State
    terminal: bool


@dataclass(frozen=True, eq=False)
class Transitions:
    """Column store of logged transitions.

    Transition ``k`` acts at position ``pos[k]`` of the sequence that begins at
    ``starts[k]`` in the concatenated ``items`` / ``ratings`` arrays; its state is
    the prefix before that position.
    """

    items: np.ndarray
    ratings: np.ndarray
    users: np.ndarray
    starts: np.ndarray
    pos: np.ndarray
    terminal: np.ndarray

    def __len__(self) -> int:
        return len(self.pos)

    @property
    def actions(self) -> np.ndarray:
        return self.items[self.starts + self.pos]

    @property
    def rewards(self) -> np.ndarray:
        return self.ratings[self.starts + self.pos]

    def _state(self, k: int, length: int) -> State:
        s = self.starts[k]
        ev = tuple((int(i), float(r)) for i, r in zip(self.items[s:s + length],
                                                      self.ratings[s:s + length]))
        return State(int(self.users[k]), ev)

    def __getitem__(self, k: int) -> Transition:
        t = int(self.pos[k])
        return Transition(self._state(k, t), int(self.actions[k]), float(self.rewards[k]),
                          self._state(k, t + 1), bool(self.terminal[k]))

    def __iter__(self):
        return (self[k] for k in range(len(self)))


def build_transitions(histories: Iterable[UserHistory], warmup: int = 1) -> Transitions:
    """One transition per logged position after the first ``warmup`` events.

    Rewards are the logged ratings; the last position of each user is terminal.
    """
    if warmup < 1:
        raise ValueError("warmup must be >= 1")
    items, ratings, users, starts, pos, term = [], [], [], [], [], []
    offset = 0
    for h in histories:
        n = len(h)
        if n <= warmup:
            continue
        items.append(h.items)
        ratings.append(h.ratings)
        t = np.arange(warmup, n)
        pos.append(t)
        starts.append(np.full(len(t), offset))
        users.append(np.full(len(t), h.user))
        term.append(t == n - 1)
        offset += n

    def cat(parts, dtype):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype)

    return Transitions(cat(items, np.int64), cat(ratings, np.float64), cat(users, np.int64),
                       cat(starts, np.int64), cat(pos, np.int64), cat(term, bool))


# -- featurizer and value model ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class Windows:
    """Padded last-K item windows for a batch of states."""

    idx: np.ndarray     # (B, K) item indices, 0 where padded
    weight: np.ndarray  # (B, K) min-max normalized feedback, 0 where padded
    valid: np.ndarray   # (B, K) 1.0 for real events

    @property
    def count(self) -> np.ndarray:
        return np.maximum(self.valid.sum(axis=1), 1.0)


def windows_from_transitions(tr: Transitions, sel: np.ndarray, K: int,
                             fmin: float, fmax: float, shift: int = 0) -> Windows:
    """Windows of the states of transitions ``sel``; ``shift=1`` gives next states."""
    end = tr.pos[sel] + shift
    rel = end[:, None] - K + np.arange(K)[None, :]
    valid = rel >= 0
    flat = tr.starts[sel][:, None] + np.maximum(rel, 0)
    idx = np.where(valid, tr.items[flat], 0)
    w = np.where(valid, (tr.ratings[flat] - fmin) / (fmax - fmin), 0.0)
    return Windows(idx, w, valid.astype(np.float64))


def windows_from_states(states: list[State], K: int, fmin: float, fmax: float) -> Windows:
    B = len(states)
    idx = np.zeros((B, K), dtype=np.int64)
    w = np.zeros((B, K))
    valid = np.zeros((B, K))
    for b, s in enumerate(states):
        ev = s.events[-K:] if K else ()
        n = len(ev)
        if n:
            idx[b, K - n:] = [i for i, _ in ev]
            w[b, K - n:] = [(r - fmin) / (fmax - fmin) for _, r in ev]
            valid[b, K - n:] = 1.0
    return Windows(idx, w, valid)


def features(params: dict, win: Windows) -> np.ndarray:
    """phi(s) = [feedback-weighted mean of window embeddings | plain mean]."""
    E = params["item_emb"]
    emb = E[win.idx]
    cnt = win.count[:, None]
    weighted = np.einsum("bk,bkd->bd", win.valid * win.weight, emb) / cnt
    plain = np.einsum("bk,bkd->bd", win.valid, emb) / cnt
    return np.concatenate([weighted, plain], axis=1)


def all_scores(params: dict, win: Windows) -> np.ndarray:
    """(B, n_items) score matrix."""
    u = features(params, win) @ params["head"]
    return u @ params["item_emb"].T + params["item_bias"]


@numba.njit(cache=True)
def _scatter_rows(out, idx, rows):
    """out[idx[n]] += rows[n], in index order (deterministic)."""
    for n in range(idx.shape[0]):
        i = idx[n]
        for f in range(rows.shape[1]):
            out[i, f] += rows[n, f]


def loss_and_grads(params: dict, win: Windows, actions: np.ndarray, targets: np.ndarray,
                   wd: float = 0.0) -> tuple[float, dict]:
    """Mean squared error of score(s, a) against targets, plus (wd/2)·||θ||²."""
    E, H, c = params["item_emb"], params["head"], params["item_bias"]
    B = len(actions)
    d = E.shape[1]
    cnt = win.count
    wv = win.valid * win.weight
    phi = features(params, win)
    u = phi @ H
    ea = E[actions]
    q = np.einsum("bd,bd->b", u, ea) + c[actions]
    res = q - targets
    loss = float(np.mean(res ** 2))
    delta = 2.0 * res / B

    g_c = np.zeros_like(c)
    np.add.at(g_c, actions, delta)
    g_E = np.zeros_like(E)
    _scatter_rows(g_E, np.ascontiguousarray(actions, dtype=np.int64), delta[:, None] * u)
    dea = delta[:, None] * ea
    g_H = phi.T @ dea
    g_phi = dea @ H.T
    g_emb = ((wv / cnt[:, None])[:, :, None] * g_phi[:, None, :d]
             + (win.valid / cnt[:, None])[:, :, None] * g_phi[:, None, d:])
    _scatter_rows(g_E, np.ascontiguousarray(win.idx.ravel(), dtype=np.int64),
                  np.ascontiguousarray(g_emb.reshape(-1, d)))

    grads = {"item_emb": g_E, "head": g_H, "item_bias": g_c}
    if wd:
        for name, p in params.items():
            loss += 0.5 * wd * float(np.sum(p ** 2))
            grads[name] = grads[name] + wd * p
    return loss, grads


@dataclass(eq=False)
class ValueModel:
    item_emb: np.ndarray
    head: np.ndarray
    item_bias: np.ndarray
    gamma: float
    history: int
    feedback_min: float
    feedback_max: float
    popularity: np.ndarray | None = None

    @property
    def params(self) -> dict:
        return {"item_emb": self.item_emb, "head": self.head, "item_bias": self.item_bias}

    @property
    def num_items(self) -> int:
        return len(self.item_bias)

    @property
    def dim(self) -> int:
        return self.item_emb.shape[1]

    def windows(self, states: list[State]) -> Windows:
        return windows_from_states(states, self.history, self.feedback_min, self.feedback_max)

    def scores(self, state: State) -> np.ndarray:
        return all_scores(self.params, self.windows([state]))[0]

    def score(self, state: State, item: int) -> float:
        return float(self.scores(state)[item])


def init_params(num_items: int, dim: int, rng: np.random.Generator, bias: float = 0.0) -> dict:
    return {
        "item_emb": rng.normal(0.0, 0.1, size=(num_items, dim)),
        "head": rng.normal(0.0, 1.0 / math.sqrt(2 * dim), size=(2 * dim, dim)),
        "item_bias": np.full(num_items, float(bias)),
    }


def q_target(transition: Transition, target: ValueModel, gamma: float) -> float:
    if transition.terminal or gamma == 0.0:
        return float(transition.reward)
    return float(transition.reward + gamma * np.max(target.scores(transition.next_state)))


def q_targets(tr: Transitions, sel: np.ndarray, target_params: dict, gamma: float,
              K: int, fmin: float, fmax: float) -> np.ndarray:
    rewards = tr.rewards[sel]
    if gamma == 0.0:
        return rewards.copy()
    nxt = windows_from_transitions(tr, sel, K, fmin, fmax, shift=1)
    best = all_scores(target_params, nxt).max(axis=1)
    return np.where(tr.terminal[sel], rewards, rewards + gamma * best)


class Adam:
    def __init__(self, params: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_global_norm(grads: dict, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def train_value_model(tr: Transitions, num_items: int, feedback_range: tuple[float, float],
                      hyper: AgentHyper = AgentHyper(), popularity=None, log=None,
                      on_batch=None) -> ValueModel:
    """Fit Q(s, a) = phi(s)ᵀ W e_a + c_a to r + gamma·max Q_target(s', ·).

    Shuffled mini-batches, Adam, global-norm gradient clipping and L2 weight
    decay; the target copy is refreshed every ``target_sync`` batches.
    ``on_batch(batch_index, params, target_params)`` is called after each update.
    """
    if not 0.0 <= hyper.gamma < 1.0:
        raise ValueError(f"gamma must be in [0, 1), got {hyper.gamma}")
    if len(tr) == 0:
        raise DataError("no transitions to train on")
    fmin, fmax = feedback_range
    K = hyper.history
    rng = np.random.default_rng(hyper.seed)
    params = init_params(num_items, hyper.dim, rng, bias=float(np.mean(tr.rewards)))
    target = {k: v.copy() for k, v in params.items()}
    opt = Adam(params, hyper.lr)
    n = len(tr)
    batch_no = 0
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, hyper.batch):
            sel = order[lo:lo + hyper.batch]
            y = q_targets(tr, sel, target, hyper.gamma, K, fmin, fmax)
            win = windows_from_transitions(tr, sel, K, fmin, fmax)
            loss, grads = loss_and_grads(params, win, tr.actions[sel], y, hyper.wd)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite loss at batch {batch_no} (epoch {epoch})")
            clip_global_norm(grads, hyper.grad_clip)
            opt.step(params, grads)
            batch_no += 1
            total += loss * len(sel)
            if hyper.target_sync and batch_no % hyper.target_sync == 0:
                target = {k: v.copy() for k, v in params.items()}
            if on_batch is not None:
                on_batch(batch_no, params, target)
        if log is not None:
            log(f"epoch {epoch + 1}/{hyper.epochs} loss {total / n:.5f}")
    return ValueModel(params["item_emb"], params["head"], params["item_bias"], hyper.gamma,
                      K, fmin, fmax, None if popularity is None else np.asarray(popularity))


def save_value_model(model: ValueModel, path) -> None:
    meta = {"kind": "value_model", "gamma": model.gamma, "history": model.history,
            "dim": model.dim, "feedback_min": model.feedback_min,
            "feedback_max": model.feedback_max}
    arrays = dict(model.params)
    if model.popularity is not None:
        arrays["popularity"] = np.asarray(model.popularity, dtype=np.int64)
    persist.dump(path, AGENT_MAGIC, meta, arrays)


def load_value_model(path) -> ValueModel:
    if not Path(path).exists():
        raise DataError(f"model file missing: {path}")
    meta, arr = persist.load(path, AGENT_MAGIC)
    return ValueModel(arr["item_emb"], arr["head"], arr["item_bias"], meta["gamma"],
                      meta["history"], meta["feedback_min"], meta["feedback_max"],
                      arr.get("popularity"))


# -- policies -------------------------------------------------------------------

class PolicyKind(enum.Enum):
    RANDOM = "random"
    POP = "pop"
    VALUE_GREEDY = "value_greedy"


@dataclass(frozen=True)
class PolicySpec:
    kind: PolicyKind
    mask_seen: bool = True


def _candidates(num_items: int, mask) -> np.ndarray:
    allowed = np.ones(num_items, dtype=bool)
    if mask:
        allowed[list(mask)] = False
    cand = np.flatnonzero(allowed)
    if len(cand) == 0:
        raise ValueError("no candidate items left after masking")
    return cand


def masked_argmax(scores: np.ndarray, mask) -> int:
    """Argmax over unmasked items; ties go to the lowest item index."""
    cand = _candidates(len(scores), mask)
    return int(cand[np.argmax(scores[cand])])


class RandomPolicy:
    kind = PolicyKind.RANDOM

    def __init__(self, num_items: int, name: str = "Random", mask_seen: bool = True):
        self.num_items = num_items
        self.name = name
        self.mask_seen = mask_seen

    def act(self, state: State, mask, rng: np.random.Generator) -> int:
        cand = _candidates(self.num_items, mask)
        return int(cand[rng.integers(len(cand))])


class PopPolicy:
    kind = PolicyKind.POP

    def __init__(self, popularity, name: str = "POP", mask_seen: bool = True):
        self.popularity = np.asarray(popularity, dtype=np.float64)
        self.num_items = len(self.popularity)
        self.name = name
        self.mask_seen = mask_seen

    def act(self, state: State, mask, rng=None) -> int:
        return masked_argmax(self.popularity, mask)


class ValueGreedyPolicy:
    """Recommends the unmasked item with the highest score. ``scorer`` is anything
    with ``scores(state) -> array`` and ``num_items``."""

    kind = PolicyKind.VALUE_GREEDY

    def __init__(self, scorer, name: str = "ValueGreedy", mask_seen: bool = True):
        self.scorer = scorer
        self.num_items = scorer.num_items
        self.name = name
        self.mask_seen = mask_seen

    def act(self, state: State, mask, rng=None) -> int:
        return masked_argmax(self.scorer.scores(state), mask)


def build_policy(spec: PolicySpec, num_items: int, popularity=None, model: ValueModel | None = None,
                 name: str | None = None):
    if spec.kind is PolicyKind.RANDOM:
        return RandomPolicy(num_items, name or "Random", spec.mask_seen)
    if spec.kind is PolicyKind.POP:
        if popularity is None:
            raise ValueError("POP needs a popularity table")
        return PopPolicy(popularity, name or "POP", spec.mask_seen)
    if model is None:
        raise ValueError("ValueGreedy requires a trained ValueModel")
    return ValueGreedyPolicy(model, name or "ValueGreedy", spec.mask_seen)


def act(policy, state: State, mask, rng: np.random.Generator) -> int:
    return policy.act(state, mask, rng)
