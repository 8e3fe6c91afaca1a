"""Dataset loading, rating-matrix assembly, and cold-start splits.

Two loaders ship: the MovieLens-1M ``.dat`` dump (``::``-separated,
latin-1) and the BookCrossing ``.csv`` dump (semicolon-separated, quoted,
latin-1).  Both deduplicate repeated (user, item) ratings keeping the last
occurrence.  BookCrossing is additionally filtered to the fixed point of
"every user has >= 20 ratings and every item >= 20 raters".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import DataFormatError, ParameterError, ReferentialError

CACHE_FORMAT_VERSION = 1

# Implicit BookCrossing feedback (a recorded 0) enters the rating matrix at
# the midpoint of the explicit 1..10 scale.
BX_IMPLICIT_FILL = 5.5


@dataclass
class RatingMatrix:
    """Sparse n x m ratings as parallel (user, item, value) arrays.

    ``values`` keeps raw ratings; BookCrossing implicit feedback stays 0
    here and is mapped to ``implicit_fill`` only when exporting the sparse
    matrix used by the trainer.
    """

    shape: tuple[int, int]
    user_idx: np.ndarray
    item_idx: np.ndarray
    values: np.ndarray
    scale: tuple[float, float]
    implicit_fill: float | None = None

    def __post_init__(self):
        self.user_idx = np.asarray(self.user_idx, dtype=np.int64)
        self.item_idx = np.asarray(self.item_idx, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if not (len(self.user_idx) == len(self.item_idx) == len(self.values)):
            raise ParameterError("rating triple arrays must have equal length")
        keys = self.user_idx * np.int64(self.shape[1]) + self.item_idx
        if len(np.unique(keys)) != len(keys):
            raise ParameterError("duplicate (user, item) rating pair")

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    @property
    def sparsity(self) -> float:
        """Fraction of the n x m grid without a rating, in [0, 1]."""
        n, m = self.shape
        return 1.0 - self.nnz / float(n * m)

    def matrix_values(self) -> np.ndarray:
        """Values entering the rating matrix (implicit entries filled)."""
        if self.implicit_fill is None:
            return self.values
        return np.where(self.values == 0.0, self.implicit_fill, self.values)

    def to_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.matrix_values(), (self.user_idx, self.item_idx)), shape=self.shape
        )


@dataclass
class Dataset:
    """Ratings plus raw per-user and per-item attribute records.

    ``user_demo`` and ``item_side`` are keyed by external id; positions in
    ``user_ids`` / ``item_ids`` define the dense 0-based indices.
    """

    name: str
    user_ids: list
    item_ids: list
    ratings: RatingMatrix
    user_demo: dict = field(default_factory=dict)
    item_side: dict = field(default_factory=dict)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_ratings(self) -> int:
        return self.ratings.nnz

    def stats(self) -> dict:
        return {
            "name": self.name,
            "users": self.n_users,
            "items": self.n_items,
            "ratings": self.n_ratings,
            "sparsity_pct": round(100.0 * self.ratings.sparsity, 4),
        }

    def rated_items_by_user(self) -> list[np.ndarray]:
        """Per-user arrays of rated item indices."""
        order = np.argsort(self.ratings.user_idx, kind="stable")
        bounds = np.searchsorted(
            self.ratings.user_idx[order], np.arange(self.n_users + 1)
        )
        items = self.ratings.item_idx[order]
        return [items[bounds[u] : bounds[u + 1]] for u in range(self.n_users)]


@dataclass(frozen=True)
class SplitSpec:
    """Cold-start split: a seeded fraction of users becomes the test set."""

    cold_fraction: float
    seed: int
    repeats: int = 1

    def __post_init__(self):
        if not (0.0 < self.cold_fraction < 1.0):
            raise ParameterError(
                f"cold_fraction={self.cold_fraction} must be in (0, 1)"
            )
        if self.repeats < 1:
            raise ParameterError("repeats must be >= 1")


def _dedup_keep_last(users, items, values):
    """Keep the last occurrence of each (user, item) pair, in first-seen order."""
    seen = {}
    for i, key in enumerate(zip(users, items)):
        seen[key] = i
    keep = sorted(seen.values())
    return [users[i] for i in keep], [items[i] for i in keep], [values[i] for i in keep]


def load_movielens(ratings_path, users_path, movies_path) -> Dataset:
    """Load a MovieLens-1M style dump.

    The item universe is the full id range 1..max(movie id), so ids absent
    from ``movies.dat`` still occupy a column; no user or item filtering
    is applied.
    """
    user_demo = {}
    with open(users_path, encoding="latin-1") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("::")
            if len(parts) != 5:
                raise DataFormatError(
                    f"expected 5 '::' fields, got {len(parts)}",
                    path=str(users_path),
                    line=lineno,
                )
            uid_s, gender, age, occupation, zipcode = parts
            uid = _parse_int(uid_s, users_path, lineno, "user id")
            user_demo[uid] = {
                "gender": gender,
                "age": age,
                "occupation": occupation,
                "zip": zipcode,
            }
    if not user_demo:
        raise DataFormatError("no users parsed", path=str(users_path))

    item_side = {}
    max_item = 0
    with open(movies_path, encoding="latin-1") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("::")
            if len(parts) != 3:
                raise DataFormatError(
                    f"expected 3 '::' fields, got {len(parts)}",
                    path=str(movies_path),
                    line=lineno,
                )
            mid = _parse_int(parts[0], movies_path, lineno, "movie id")
            item_side[mid] = {"title": parts[1], "genres": parts[2].split("|")}
            max_item = max(max_item, mid)
    if not item_side:
        raise DataFormatError("no movies parsed", path=str(movies_path))

    users, items, values = [], [], []
    with open(ratings_path, encoding="latin-1") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("::")
            if len(parts) != 4:
                raise DataFormatError(
                    f"expected 4 '::' fields, got {len(parts)}",
                    path=str(ratings_path),
                    line=lineno,
                )
            uid = _parse_int(parts[0], ratings_path, lineno, "user id")
            mid = _parse_int(parts[1], ratings_path, lineno, "movie id")
            rating = _parse_float(parts[2], ratings_path, lineno, "rating")
            if uid not in user_demo:
                raise ReferentialError(
                    f"rating references unknown user id {uid}",
                    path=str(ratings_path),
                    line=lineno,
                )
            if not (1 <= mid <= max_item):
                raise ReferentialError(
                    f"rating references unknown movie id {mid}",
                    path=str(ratings_path),
                    line=lineno,
                )
            if not (1.0 <= rating <= 5.0):
                raise DataFormatError(
                    f"rating {rating} outside 1..5",
                    path=str(ratings_path),
                    line=lineno,
                )
            users.append(uid)
            items.append(mid)
            values.append(rating)
    if not users:
        raise DataFormatError("ratings file is empty", path=str(ratings_path))
    users, items, values = _dedup_keep_last(users, items, values)

    user_ids = sorted(user_demo)
    item_ids = list(range(1, max_item + 1))
    u_pos = {u: i for i, u in enumerate(user_ids)}
    ratings = RatingMatrix(
        shape=(len(user_ids), len(item_ids)),
        user_idx=np.array([u_pos[u] for u in users]),
        item_idx=np.array(items) - 1,
        values=np.array(values),
        scale=(1.0, 5.0),
    )
    return Dataset(
        name="movielens-1m",
        user_ids=user_ids,
        item_ids=item_ids,
        ratings=ratings,
        user_demo=user_demo,
        item_side=item_side,
    )


def _parse_int(text, path, lineno, what):
    try:
        return int(text)
    except ValueError:
        raise DataFormatError(f"bad {what}: {text!r}", path=str(path), line=lineno) from None


def _parse_float(text, path, lineno, what):
    try:
        return float(text)
    except ValueError:
        raise DataFormatError(f"bad {what}: {text!r}", path=str(path), line=lineno) from None


def _read_bx_rows(path, min_fields):
    """Rows of a semicolon-separated, double-quoted latin-1 csv file.

    The canonical dumps carry a header row, detected by a non-numeric or
    quoted first cell named like a column.
    """
    import csv

    rows = []
    with open(path, encoding="latin-1", newline="") as f:
        reader = csv.reader(f, delimiter=";", quotechar='"', escapechar="\\")
        for lineno, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if lineno == 1 and row and row[0].strip().lower() in (
                "user-id",
                "isbn",
            ):
                continue
            if len(row) < min_fields:
                raise DataFormatError(
                    f"expected >= {min_fields} ';' fields, got {len(row)}",
                    path=str(path),
                    line=lineno,
                )
            rows.append((lineno, row))
    return rows


def filter_to_fixpoint(users, items, min_count=20):
    """Boolean mask keeping ratings whose user has >= min_count ratings and
    whose item has >= min_count raters, iterated until stable."""
    users = np.asarray(users)
    items = np.asarray(items)
    keep = np.ones(len(users), dtype=bool)
    while True:
        _, u_inv, u_cnt = np.unique(users[keep], return_inverse=True, return_counts=True)
        drop_u = u_cnt[u_inv] < min_count
        kept_idx = np.flatnonzero(keep)
        keep[kept_idx[drop_u]] = False

        _, i_inv, i_cnt = np.unique(items[keep], return_inverse=True, return_counts=True)
        drop_i = i_cnt[i_inv] < min_count
        kept_idx = np.flatnonzero(keep)
        keep[kept_idx[drop_i]] = False
        if not drop_u.any() and not drop_i.any():
            return keep


def load_bookcrossing(ratings_path, users_path, books_path, min_count=20) -> Dataset:
    """Load a BookCrossing style dump and filter to the >= ``min_count``
    fixed point.

    Implicit feedback (rating 0) is kept as an interaction; it counts
    toward the filters and enters the rating matrix at the explicit-scale
    midpoint.
    """
    raw_users, raw_items, raw_values = [], [], []
    for lineno, row in _read_bx_rows(ratings_path, 3):
        uid = _parse_int(row[0], ratings_path, lineno, "user id")
        isbn = row[1].strip()
        rating = _parse_float(row[2], ratings_path, lineno, "rating")
        if not isbn:
            raise DataFormatError("empty ISBN", path=str(ratings_path), line=lineno)
        if not (0.0 <= rating <= 10.0):
            raise DataFormatError(
                f"rating {rating} outside 0..10", path=str(ratings_path), line=lineno
            )
        raw_users.append(uid)
        raw_items.append(isbn)
        raw_values.append(rating)
    if not raw_users:
        raise DataFormatError("ratings file is empty", path=str(ratings_path))
    raw_users, raw_items, raw_values = _dedup_keep_last(raw_users, raw_items, raw_values)

    keep = filter_to_fixpoint(raw_users, raw_items, min_count=min_count)
    users = np.array(raw_users)[keep]
    items = np.array(raw_items)[keep]
    values = np.array(raw_values, dtype=np.float64)[keep]
    if len(users) == 0:
        raise DataFormatError(
            f"no ratings survive the >= {min_count} filter", path=str(ratings_path)
        )

    user_ids = sorted(set(users.tolist()))
    item_ids = sorted(set(items.tolist()))
    u_pos = {u: i for i, u in enumerate(user_ids)}
    i_pos = {b: i for i, b in enumerate(item_ids)}

    user_demo = {}
    for lineno, row in _read_bx_rows(users_path, 3):
        uid = _parse_int(row[0], users_path, lineno, "user id")
        if uid in u_pos:
            user_demo[uid] = {"location": row[1], "age": row[2]}
    item_side = {}
    for lineno, row in _read_bx_rows(books_path, 5):
        isbn = row[0].strip()
        if isbn in i_pos:
            item_side[isbn] = {
                "title": row[1],
                "author": row[2],
                "year": row[3],
                "publisher": row[4],
            }

    ratings = RatingMatrix(
        shape=(len(user_ids), len(item_ids)),
        user_idx=np.array([u_pos[u] for u in users.tolist()]),
        item_idx=np.array([i_pos[b] for b in items.tolist()]),
        values=values,
        scale=(0.0, 10.0),
        implicit_fill=BX_IMPLICIT_FILL,
    )
    return Dataset(
        name="bookcrossing",
        user_ids=user_ids,
        item_ids=item_ids,
        ratings=ratings,
        user_demo=user_demo,
        item_side=item_side,
    )


def split_cold_start(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Remove a seeded sample of users, together with all their ratings,
    into a cold-start test dataset.

    Test users keep their demographic records (the cold-start inputs);
    both halves share the full item universe.
    """
    n = dataset.n_users
    n_test = int(round(spec.cold_fraction * n))
    if n_test < 1:
        raise ParameterError("cold fraction selects no users")
    if n_test >= n:
        raise ParameterError("cold fraction leaves the training set empty")
    rng = np.random.default_rng(spec.seed)
    test_pos = np.sort(rng.permutation(n)[:n_test])
    is_test = np.zeros(n, dtype=bool)
    is_test[test_pos] = True
    return (
        _take_users(dataset, np.flatnonzero(~is_test)),
        _take_users(dataset, test_pos),
    )


def subsample_users(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Seeded user subsample (items untouched); used by benchmarks."""
    if not (0.0 < fraction <= 1.0):
        raise ParameterError(f"fraction={fraction} must be in (0, 1]")
    if fraction == 1.0:
        return dataset
    n = dataset.n_users
    count = max(1, int(round(fraction * n)))
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.permutation(n)[:count])
    return _take_users(dataset, keep)


def _take_users(dataset: Dataset, positions: np.ndarray) -> Dataset:
    old_to_new = -np.ones(dataset.n_users, dtype=np.int64)
    old_to_new[positions] = np.arange(len(positions))
    mask = old_to_new[dataset.ratings.user_idx] >= 0
    user_ids = [dataset.user_ids[p] for p in positions]
    ratings = replace(
        dataset.ratings,
        shape=(len(positions), dataset.n_items),
        user_idx=old_to_new[dataset.ratings.user_idx[mask]],
        item_idx=dataset.ratings.item_idx[mask],
        values=dataset.ratings.values[mask],
    )
    return Dataset(
        name=dataset.name,
        user_ids=user_ids,
        item_ids=dataset.item_ids,
        ratings=ratings,
        user_demo={u: dataset.user_demo[u] for u in user_ids if u in dataset.user_demo},
        item_side=dataset.item_side,
    )


def save_dataset_cache(dataset: Dataset, path) -> None:
    """Persist a Dataset to a versioned ``.npz`` container (bit-exact).

    Record keys are stored as typed arrays (not JSON object keys) so
    integer ids and numeric-looking string ids survive the round trip
    unchanged.
    """
    np.savez_compressed(
        path,
        format_version=np.int64(CACHE_FORMAT_VERSION),
        name=np.str_(dataset.name),
        user_ids=np.array(dataset.user_ids),
        item_ids=np.array(dataset.item_ids),
        user_idx=dataset.ratings.user_idx,
        item_idx=dataset.ratings.item_idx,
        values=dataset.ratings.values,
        scale=np.array(dataset.ratings.scale, dtype=np.float64),
        implicit_fill=np.float64(
            np.nan if dataset.ratings.implicit_fill is None else dataset.ratings.implicit_fill
        ),
        user_demo_keys=np.array(list(dataset.user_demo.keys())),
        user_demo_values=np.str_(json.dumps(list(dataset.user_demo.values()))),
        item_side_keys=np.array(list(dataset.item_side.keys())),
        item_side_values=np.str_(json.dumps(list(dataset.item_side.values()))),
    )


def load_dataset_cache(path) -> Dataset:
    with np.load(path, allow_pickle=False) as z:
        version = int(z["format_version"])
        if version != CACHE_FORMAT_VERSION:
            raise DataFormatError(
                f"cache format version {version} != {CACHE_FORMAT_VERSION}",
                path=str(path),
            )
        name = str(z["name"])
        user_ids = z["user_ids"].tolist()
        item_ids = z["item_ids"].tolist()
        fill = float(z["implicit_fill"])
        ratings = RatingMatrix(
            shape=(len(user_ids), len(item_ids)),
            user_idx=z["user_idx"],
            item_idx=z["item_idx"],
            values=z["values"],
            scale=tuple(z["scale"].tolist()),
            implicit_fill=None if np.isnan(fill) else fill,
        )
        user_demo = dict(
            zip(z["user_demo_keys"].tolist(), json.loads(str(z["user_demo_values"])))
        )
        item_side = dict(
            zip(z["item_side_keys"].tolist(), json.loads(str(z["item_side_values"])))
        )
    return Dataset(
        name=name,
        user_ids=user_ids,
        item_ids=item_ids,
        ratings=ratings,
        user_demo=user_demo,
        item_side=item_side,
    )
