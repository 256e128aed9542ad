"""Rating-log ingestion: parsing, k-core filtering, densification, user splits."""

from __future__ import annotations

import dataclasses
import enum
import io
import math
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, NamedTuple

import numpy as np

from . import persist
from .errors import DataError, ParseError

Record = tuple[int, int, float, int]

CSV_HEADER = "userId,movieId,rating,timestamp"
DATASET_MAGIC = b"IRSDATA\x00"

_RATING_RE = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")


class RatingFormat(enum.Enum):
    DOUBLE_COLON = "doublecolon"
    CSV = "csv"
    TSV = "tsv"

    @property
    def separator(self) -> str:
        return {"doublecolon": "::", "csv": ",", "tsv": "\t"}[self.value]

    @classmethod
    def parse(cls, name: str) -> "RatingFormat":
        key = name.strip().lower().replace("_", "").replace("-", "")
        aliases = {"dat": "doublecolon", "dc": "doublecolon", "doublecolon": "doublecolon",
                   "csv": "csv", "tsv": "tsv", "tab": "tsv"}
        if key not in aliases:
            raise ValueError(f"unknown rating format {name!r}")
        return cls(aliases[key])


@dataclass(frozen=True)
class RatingScale:
    min: float
    max: float
    positive_threshold: float

    def __post_init__(self):
        if not (self.min < self.positive_threshold <= self.max):
            raise ValueError(
                f"invalid rating scale: need min < positive_threshold <= max, got {self}")

    def clamp(self, x):
        return np.clip(x, self.min, self.max)


class Interaction(NamedTuple):
    item: int
    rating: float
    timestamp: int


@dataclass(frozen=True, eq=False)
class UserHistory:
    """One user's time-ordered log, stored column-wise."""

    user: int
    items: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray

    def __len__(self) -> int:
        return len(self.items)

    @property
    def interactions(self) -> list[Interaction]:
        return [Interaction(int(i), float(r), int(t))
                for i, r, t in zip(self.items, self.ratings, self.timestamps)]


@dataclass(frozen=True)
class Split:
    train: tuple[int, ...]
    validation: tuple[int, ...]
    test: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class Dataset:
    users: tuple[UserHistory, ...]
    num_items: int
    scale: RatingScale
    item_popularity: np.ndarray
    user_ids: np.ndarray  # dense -> raw
    item_ids: np.ndarray

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def num_interactions(self) -> int:
        return sum(len(u) for u in self.users)

    @property
    def user_index(self) -> dict[int, int]:
        return {int(raw): dense for dense, raw in enumerate(self.user_ids)}

    @property
    def item_index(self) -> dict[int, int]:
        return {int(raw): dense for dense, raw in enumerate(self.item_ids)}

    def with_training_users(self, train: Iterable[int]) -> "Dataset":
        """Copy whose popularity table counts only the given users' interactions."""
        pop = np.zeros(self.num_items, dtype=np.int64)
        for u in train:
            np.add.at(pop, self.users[u].items, 1)
        return dataclasses.replace(self, item_popularity=pop)


@dataclass(frozen=True)
class DatasetStats:
    num_users: int
    num_items: int
    num_interactions: int
    avg_interactions: float

    def table(self, name: str = "dataset") -> str:
        head = f"{'Dataset':<12}{'# Users':>10}{'# Items':>10}{'# Int':>12}{'Avg.Int':>10}"
        row = (f"{name:<12}{self.num_users:>10,}{self.num_items:>10,}"
               f"{self.num_interactions:>12,}{self.avg_interactions:>10.2f}")
        return f"{head}\n{row}"


# -- parsing -----------------------------------------------------------------

def _parse_uint(field: str, what: str, line_no: int, text: str) -> int:
    if not field.isascii() or not field.isdigit():
        raise ParseError(line_no, text, f"{what} must be a non-negative integer")
    return int(field)


def _iter_lines(source) -> Iterable[bytes]:
    if isinstance(source, (bytes, bytearray)):
        return io.BytesIO(source)
    if isinstance(source, str):
        return io.BytesIO(source.encode("utf-8"))
    return source


def parse_ratings(source: BinaryIO | bytes | str, fmt: RatingFormat | str) -> list[Record]:
    """Parse a rating log into ``(user, item, rating, timestamp)`` tuples in file order.

    Blank lines are skipped. A CSV header line is accepted only as the first line.
    """
    fmt = RatingFormat.parse(fmt) if isinstance(fmt, str) else fmt
    sep = fmt.separator
    out: list[Record] = []
    for line_no, raw in enumerate(_iter_lines(source), start=1):
        try:
            text = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw
        except UnicodeDecodeError:
            raise ParseError(line_no, repr(raw), "invalid UTF-8") from None
        text = text.rstrip("\r\n")
        if not text.strip():
            continue
        if line_no == 1 and fmt is RatingFormat.CSV and text.strip() == CSV_HEADER:
            continue
        fields = text.split(sep)
        if len(fields) != 4:
            reason = "missing field" if len(fields) < 4 else "too many fields"
            raise ParseError(line_no, text, f"{reason} (expected 4, got {len(fields)})")
        user = _parse_uint(fields[0], "user", line_no, text)
        item = _parse_uint(fields[1], "item", line_no, text)
        if not _RATING_RE.fullmatch(fields[2]):
            raise ParseError(line_no, text, "rating must be a decimal number")
        rating = float(fields[2])
        ts = _parse_uint(fields[3], "timestamp", line_no, text)
        out.append((user, item, rating, ts))
    return out


def _format_rating(r: float) -> str:
    return str(int(r)) if float(r).is_integer() and abs(r) < 1e15 else repr(float(r))


def format_ratings(records: Iterable[Record], fmt: RatingFormat | str, header: bool = False) -> bytes:
    """Inverse of :func:`parse_ratings`."""
    fmt = RatingFormat.parse(fmt) if isinstance(fmt, str) else fmt
    sep = fmt.separator
    lines = [CSV_HEADER] if header and fmt is RatingFormat.CSV else []
    lines += [sep.join((str(u), str(i), _format_rating(r), str(t))) for u, i, r, t in records]
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


def read_ratings_file(path, fmt: RatingFormat | str) -> list[Record]:
    with open(path, "rb") as fh:
        return parse_ratings(fh, fmt)


# -- filtering and densification ----------------------------------------------

def k_core_filter(records: Sequence[Record], k: int) -> list[Record]:
    """Drop users and items with fewer than ``k`` interactions, repeated to a fixpoint."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not records:
        return []
    _, uinv = np.unique(np.fromiter((r[0] for r in records), np.int64, len(records)),
                        return_inverse=True)
    _, iinv = np.unique(np.fromiter((r[1] for r in records), np.int64, len(records)),
                        return_inverse=True)
    keep = np.ones(len(records), dtype=bool)
    while True:
        ucount = np.bincount(uinv[keep], minlength=uinv.max() + 1)
        icount = np.bincount(iinv[keep], minlength=iinv.max() + 1)
        new_keep = keep & (ucount[uinv] >= k) & (icount[iinv] >= k)
        if new_keep.sum() == keep.sum():
            break
        keep = new_keep
    return [rec for rec, kp in zip(records, keep) if kp]


def build_dataset(records: Sequence[Record], scale: RatingScale) -> Dataset:
    """Densify ids by first appearance and group into per-user timelines.

    Each timeline is sorted by timestamp; equal timestamps keep file order.
    """
    user_map: dict[int, int] = {}
    item_map: dict[int, int] = {}
    per_user: list[list[tuple[int, int, float]]] = []
    for rec in records:
        raw_u, raw_i, rating, ts = rec
        if not (scale.min <= rating <= scale.max):
            raise DataError(f"rating outside scale [{scale.min}, {scale.max}]: {rec}")
        u = user_map.setdefault(raw_u, len(user_map))
        i = item_map.setdefault(raw_i, len(item_map))
        if u == len(per_user):
            per_user.append([])
        per_user[u].append((ts, i, rating))
    users = []
    for u, events in enumerate(per_user):
        events.sort(key=lambda e: e[0])  # stable: ties stay in file order
        users.append(UserHistory(
            user=u,
            items=np.array([e[1] for e in events], dtype=np.int64),
            ratings=np.array([e[2] for e in events], dtype=np.float64),
            timestamps=np.array([e[0] for e in events], dtype=np.int64),
        ))
    num_items = len(item_map)
    pop = np.zeros(num_items, dtype=np.int64)
    for h in users:
        np.add.at(pop, h.items, 1)
    return Dataset(
        users=tuple(users),
        num_items=num_items,
        scale=scale,
        item_popularity=pop,
        user_ids=np.array(list(user_map), dtype=np.int64),
        item_ids=np.array(list(item_map), dtype=np.int64),
    )


def split_users(num_users: int, fractions=(0.85, 0.05, 0.10), seed: int = 0) -> Split:
    """Seeded shuffle then contiguous slicing.

    Sizes: train = round(n * f_train), validation = floor(n * f_val), test = rest.
    """
    if isinstance(num_users, Dataset):
        num_users = num_users.num_users
    if num_users < 3:
        raise DataError(f"need at least 3 users to split, got {num_users}")
    if len(fractions) != 3 or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ValueError(f"fractions must be three values summing to 1, got {fractions}")
    perm = np.random.default_rng(seed).permutation(num_users)
    n_train = int(round(num_users * fractions[0]))
    n_val = int(math.floor(num_users * fractions[1] + 1e-9))
    n_val = min(n_val, num_users - n_train)
    return Split(
        train=tuple(int(u) for u in perm[:n_train]),
        validation=tuple(int(u) for u in perm[n_train:n_train + n_val]),
        test=tuple(int(u) for u in perm[n_train + n_val:]),
    )


def compute_stats(dataset: Dataset) -> DatasetStats:
    n_users = dataset.num_users
    n_int = dataset.num_interactions
    avg = n_int / n_users if n_users else 0.0
    return DatasetStats(n_users, dataset.num_items, n_int, avg)


# -- persistence -------------------------------------------------------------

def save_dataset(dataset: Dataset, path) -> None:
    lengths = np.array([len(u) for u in dataset.users], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)

    def cat(attr, dtype):
        parts = [getattr(u, attr) for u in dataset.users]
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype)

    meta = {
        "kind": "dataset",
        "num_items": dataset.num_items,
        "num_users": dataset.num_users,
        "scale": dataclasses.asdict(dataset.scale),
    }
    persist.dump(path, DATASET_MAGIC, meta, {
        "user_ids": dataset.user_ids.astype(np.int64),
        "item_ids": dataset.item_ids.astype(np.int64),
        "offsets": offsets,
        "items": cat("items", np.int64),
        "ratings": cat("ratings", np.float64),
        "timestamps": cat("timestamps", np.int64),
        "item_popularity": dataset.item_popularity.astype(np.int64),
    })


def load_dataset(path) -> Dataset:
    if not Path(path).exists():
        raise DataError(f"dataset file missing: {path}")
    meta, arr = persist.load(path, DATASET_MAGIC)
    off = arr["offsets"]
    users = tuple(
        UserHistory(u, arr["items"][off[u]:off[u + 1]], arr["ratings"][off[u]:off[u + 1]],
                    arr["timestamps"][off[u]:off[u + 1]])
        for u in range(meta["num_users"])
    )
    return Dataset(
        users=users,
        num_items=meta["num_items"],
        scale=RatingScale(**meta["scale"]),
        item_popularity=arr["item_popularity"],
        user_ids=arr["user_ids"],
        item_ids=arr["item_ids"],
    )
