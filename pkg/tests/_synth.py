"""Synthetic raw dumps and toy datasets shared across test modules.

The canonical MovieLens-1M / BookCrossing archives are not redistributable
with the repo, so the statistic-bearing tests synthesize dumps that are
exact on the published counts: 6040 users / 3952 items / 1,000,209 ratings
for MovieLens and a filter fixed point of 2151 / 6830 / 180,595 for
BookCrossing.
"""

from __future__ import annotations

import math
import os
from pathlib import Path

import numpy as np

from hashcf.datasets import Dataset, RatingMatrix

ML_GENRES = [
    "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime",
    "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical",
    "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
]

_WORDS = [
    f"{a}{b}" for a in ("sil", "ver", "gol", "den", "mar", "ble", "sto", "ne",
                        "riv", "er", "sky", "lar", "moon", "beam", "oak", "fern")
    for b in ("wood", "fall", "gate", "peak", "vale", "mist", "song", "wind",
              "light", "shade", "brook", "field", "stone", "ridge", "glen", "bay")
]


def write_movielens_dump(root, n_users=6040, max_item=3952, n_ratings=1_000_209, seed=101):
    """Write a MovieLens-1M shaped dump with exactly the requested counts."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    ages = [1, 18, 25, 35, 45, 50, 56]
    with open(root / "users.dat", "w", encoding="latin-1") as f:
        for uid in range(1, n_users + 1):
            gender = "MF"[uid % 2]
            age = ages[uid % len(ages)]
            occ = uid % 21
            f.write(f"{uid}::{gender}::{age}::{occ}::{uid % 90000:05d}\n")

    with open(root / "movies.dat", "w", encoding="latin-1") as f:
        for mid in range(1, max_item + 1):
            w1 = _WORDS[mid % len(_WORDS)]
            w2 = _WORDS[(mid * 7 + 3) % len(_WORDS)]
            genres = sorted(
                {ML_GENRES[mid % 18], ML_GENRES[(mid * 5 + 2) % 18], ML_GENRES[(mid * 11 + 7) % 18]}
            )
            f.write(f"{mid}::The {w1.title()} {w2.title()} ({1930 + mid % 70})::{'|'.join(genres)}\n")

    # exact rating count: distribute n_ratings over users, distinct items
    # per user via coprime strides
    base, extra = divmod(n_ratings, n_users)
    steps = [s for s in range(1, 200, 2) if math.gcd(s, max_item) == 1]
    lines = []
    for uid in range(1, n_users + 1):
        count = base + (1 if uid <= extra else 0)
        step = steps[uid % len(steps)]
        start = (uid * 53) % max_item
        items = (start + step * np.arange(count)) % max_item + 1
        values = rng.choice([1, 2, 3, 4, 5], size=count, p=[0.05, 0.1, 0.25, 0.35, 0.25])
        stamp = 956704000 + uid
        lines.extend(
            f"{uid}::{it}::{rv}::{stamp}" for it, rv in zip(items.tolist(), values.tolist())
        )
    with open(root / "ratings.dat", "w", encoding="latin-1") as f:
        f.write("\n".join(lines) + "\n")
    return root / "ratings.dat", root / "users.dat", root / "movies.dat"


def write_bookcrossing_dump(root, n_users=2151, n_items=6830, n_ratings=180_595, seed=202):
    """Write a BookCrossing shaped dump whose >=20 filter fixed point has
    exactly the requested counts, plus a removable fringe sub-graph."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    user_ids = [1000 + i for i in range(n_users)]
    isbns = [f"B{j:06d}" for j in range(n_items)]

    pairs = []
    seen = set()
    # phase A: every item gets exactly 20 distinct raters
    for j in range(n_items):
        for t in range(20):
            u = (j * 20 + t) % n_users
            pairs.append((u, j))
            seen.add(u * n_items + j)
    # phase B: round-robin extra pairs up to the exact total
    need = n_ratings - len(pairs)
    if need < 0:
        raise ValueError("n_ratings below the phase-A floor")
    stride = 1
    while need > 0:
        added_this_round = 0
        for u in range(n_users):
            if need == 0:
                break
            j = (u * 97 + stride * 389) % n_items
            key = u * n_items + j
            if key not in seen:
                seen.add(key)
                pairs.append((u, j))
                need -= 1
                added_this_round += 1
        stride += 1
        if added_this_round == 0 and stride > 10 * n_items:
            raise RuntimeError("pair generation stalled")

    values = rng.integers(1, 11, size=len(pairs))
    implicit = rng.random(len(pairs)) < 0.12
    values = np.where(implicit, 0, values)

    # fringe sub-graph the filter must remove: 120 users with 5-6 ratings
    # each on 80 low-degree items plus one well-rated bridge item that only
    # falls once its raters are gone
    fringe_users = [50000 + i for i in range(120)]
    fringe_isbns = [f"F{j:04d}" for j in range(80)]
    fringe = []
    for i, fu in enumerate(fringe_users):
        for t in range(5):
            fringe.append((fu, fringe_isbns[(i * 5 + t) % 80]))
    bridge = "F9999"
    for i, fu in enumerate(fringe_users[:25]):
        fringe.append((fu, bridge))

    countries = ["usa", "canada", "united kingdom", "germany", "spain", "france"]
    with open(root / "BX-Book-Ratings.csv", "w", encoding="latin-1") as f:
        f.write('"User-ID";"ISBN";"Book-Rating"\n')
        for (u, j), v in zip(pairs, values.tolist()):
            f.write(f'"{user_ids[u]}";"{isbns[j]}";"{v}"\n')
        for fu, fi in fringe:
            f.write(f'"{fu}";"{fi}";"{int(rng.integers(0, 11))}"\n')

    with open(root / "BX-Users.csv", "w", encoding="latin-1") as f:
        f.write('"User-ID";"Location";"Age"\n')
        for i, uid in enumerate(user_ids + fringe_users):
            country = countries[i % len(countries)] if i % 17 else "elbonia"
            if i % 23 == 0:
                age = "NULL"
            elif i % 29 == 0:
                age = "212"
            else:
                age = str(12 + (i * 7) % 80)
            f.write(f'"{uid}";"city {i % 50}, state, {country}";"{age}"\n')

    with open(root / "BX-Books.csv", "w", encoding="latin-1") as f:
        f.write(
            '"ISBN";"Book-Title";"Book-Author";"Year-Of-Publication";"Publisher"\n'
        )
        for j, isbn in enumerate(isbns + fringe_isbns + [bridge]):
            w1 = _WORDS[j % len(_WORDS)]
            w2 = _WORDS[(j * 13 + 5) % len(_WORDS)]
            author = f"{_WORDS[j % 41].title()} {_WORDS[j % 97].title()}"
            pub = f"{_WORDS[j % 29].title()} Press"
            f.write(
                f'"{isbn}";"The {w1.title()} of {w2.title()}";"{author}";'
                f'"{1950 + j % 55}";"{pub}"\n'
            )
    return (
        root / "BX-Book-Ratings.csv",
        root / "BX-Users.csv",
        root / "BX-Books.csv",
    )


def make_dataset(
    n_users=8,
    n_items=6,
    triples=None,
    name="movielens-toy",
    seed=0,
    demo=True,
    side=True,
) -> Dataset:
    """Small in-memory dataset for unit tests."""
    rng = np.random.default_rng(seed)
    user_ids = list(range(1, n_users + 1))
    item_ids = list(range(1, n_items + 1))
    if triples is None:
        triples = []
        for u in range(n_users):
            rated = rng.permutation(n_items)[: max(1, n_items // 2)]
            for it in rated.tolist():
                triples.append((u, it, float(rng.integers(1, 6))))
    user_demo = {}
    if demo:
        ages = ["1", "18", "25", "35", "45", "50", "56"]
        for uid in user_ids:
            user_demo[uid] = {
                "gender": "MF"[uid % 2],
                "age": ages[uid % len(ages)],
                "occupation": str(uid % 5),
                "zip": "00000",
            }
    item_side = {}
    if side:
        for mid in item_ids:
            item_side[mid] = {
                "title": f"Movie {_WORDS[mid % len(_WORDS)]}",
                "genres": sorted({ML_GENRES[mid % 6], ML_GENRES[(mid * 3 + 1) % 6]}),
            }
    users = np.array([t[0] for t in triples], dtype=np.int64)
    items = np.array([t[1] for t in triples], dtype=np.int64)
    values = np.array([t[2] for t in triples], dtype=np.float64)
    ratings = RatingMatrix(
        shape=(n_users, n_items),
        user_idx=users,
        item_idx=items,
        values=values,
        scale=(1.0, 5.0),
    )
    return Dataset(
        name=name,
        user_ids=user_ids,
        item_ids=item_ids,
        ratings=ratings,
        user_demo=user_demo,
        item_side=item_side,
    )


def planted_instance(n=200, m=120, r=16, d_views=(24, 40), noise=0.05, seed=0):
    """Separable synthetic problem: ratings are exact inner products of
    planted +/-1 codes and the views are noisy linear images of the
    planted user codes."""
    rng = np.random.default_rng(seed)
    B_star = np.where(rng.standard_normal((r, n)) >= 0, 1.0, -1.0)
    D_star = np.where(rng.standard_normal((r, m)) >= 0, 1.0, -1.0)
    S = B_star.T @ D_star
    views = []
    for d in d_views:
        M = rng.standard_normal((d, r)) / np.sqrt(r)
        views.append(M @ B_star + noise * rng.standard_normal((d, n)))
    return B_star, D_star, S, views


def dataset_from_dense(S, name="planted", scale=None):
    """Wrap a dense rating matrix in a Dataset (no demographic records)."""
    n, m = S.shape
    users, items = np.nonzero(S)
    values = S[users, items]
    if scale is None:
        scale = (float(values.min()), float(values.max()))
    ratings = RatingMatrix(
        shape=(n, m), user_idx=users, item_idx=items, values=values, scale=scale
    )
    return Dataset(
        name=name,
        user_ids=list(range(n)),
        item_ids=list(range(m)),
        ratings=ratings,
        user_demo={},
        item_side={},
    )


def canonical_data_dir() -> Path | None:
    """Directory with the real MovieLens/BookCrossing dumps, if configured."""
    root = os.environ.get("HASHCF_DATA_DIR")
    if root and Path(root).is_dir():
        return Path(root)
    return None
