"""User content-feature views: one-hot demographics and a bag-of-words
interaction-preference view reduced with PCA.

Encoders are fitted on a training dataset and serialize with the model so
unseen users can be encoded at inference.  Categories never seen at fit
time map to all-zero groups; a missing attribute zeroes its whole group.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .datasets import Dataset
from .errors import ParameterError
from .linalg import PcaBasis, pca_reduce

DEMO_VIEW = 0
INTERACTION_VIEW = 1

_TOKEN_RE = re.compile(r"[a-z0-9]+")

# Location country tokens rarer than this collapse into "other".
MIN_COUNTRY_USERS = 5


@dataclass
class FeatureBlock:
    """One content view: a d x n matrix whose columns are users."""

    view_index: int
    data: np.ndarray
    encoder: str

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def n_users(self) -> int:
        return self.data.shape[1]


def _ml_demo_attrs(record: dict) -> dict:
    return {
        "gender": record.get("gender", ""),
        "age": record.get("age", ""),
        "occupation": record.get("occupation", ""),
    }


def _bx_demo_attrs(record: dict) -> dict:
    country = ""
    location = record.get("location", "")
    if location:
        country = location.split(",")[-1].strip().lower()
    age = ""
    raw_age = str(record.get("age", "")).strip()
    try:
        years = float(raw_age)
        if 0 <= years <= 100:
            age = f"{min(int(years) // 10, 9)}0s"
    except ValueError:
        pass
    return {"country": country, "age": age}


def demo_attributes(dataset_name: str, record: dict) -> dict:
    """Normalize a raw demographic record to categorical tokens."""
    if dataset_name.startswith("bookcrossing"):
        return _bx_demo_attrs(record)
    return _ml_demo_attrs(record)


@dataclass
class DemographicEncoder:
    """Per-attribute one-hot groups with a frozen vocabulary.

    ``fallback`` names an attribute's catch-all category (BookCrossing
    country); attributes without one map unseen values to zeros.
    """

    dataset_name: str
    attributes: list[str]
    vocab: dict[str, list[str]]
    fallback: dict[str, str]

    @classmethod
    def fit(cls, dataset: Dataset) -> "DemographicEncoder":
        records = [
            demo_attributes(dataset.name, dataset.user_demo.get(u, {}))
            for u in dataset.user_ids
        ]
        attributes = sorted(records[0].keys()) if records else []
        vocab = {}
        fallback = {}
        for attr in attributes:
            counts = {}
            for rec in records:
                value = rec.get(attr, "")
                if value:
                    counts[value] = counts.get(value, 0) + 1
            if attr == "country":
                kept = sorted(v for v, c in counts.items() if c >= MIN_COUNTRY_USERS)
                if len(kept) < len(counts):
                    kept.append("other")
                vocab[attr] = kept
                if "other" in kept:
                    fallback[attr] = "other"
            else:
                vocab[attr] = sorted(counts)
        return cls(dataset.name, attributes, vocab, fallback)

    @property
    def dim(self) -> int:
        return sum(len(v) for v in self.vocab.values())

    def transform_records(self, records: list[dict]) -> np.ndarray:
        """Raw one-hot columns (0/1 entries), one per record."""
        out = np.zeros((self.dim, len(records)), dtype=np.float64)
        for col, record in enumerate(records):
            attrs = demo_attributes(self.dataset_name, record)
            offset = 0
            for attr in self.attributes:
                cats = self.vocab[attr]
                value = attrs.get(attr, "")
                if value:
                    if value not in cats and attr in self.fallback:
                        value = self.fallback[attr]
                    if value in cats:
                        out[offset + cats.index(value), col] = 1.0
                offset += len(cats)
        return out

    def transform(self, dataset: Dataset) -> np.ndarray:
        return self.transform_records(
            [dataset.user_demo.get(u, {}) for u in dataset.user_ids]
        )

    def to_dict(self) -> dict:
        return {
            "dataset_name": self.dataset_name,
            "attributes": self.attributes,
            "vocab": self.vocab,
            "fallback": self.fallback,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DemographicEncoder":
        return cls(d["dataset_name"], d["attributes"], d["vocab"], d["fallback"])


def encode_demographics(dataset: Dataset) -> tuple[FeatureBlock, DemographicEncoder]:
    """Fit and apply the one-hot demographic view."""
    if not dataset.user_demo:
        raise ParameterError("dataset has no demographic records")
    encoder = DemographicEncoder.fit(dataset)
    block = FeatureBlock(DEMO_VIEW, encoder.transform(dataset), "one-hot")
    return block, encoder


def item_labels(record: dict) -> list[str]:
    """Namespaced label tokens of one item's attribute record.

    Genre labels stay whole; free-text fields contribute lowercase word
    tokens.  Namespacing keeps a genre from colliding with a title word.
    """
    labels = []
    for genre in record.get("genres", []):
        if genre:
            labels.append("genre:" + genre)
    for key in ("title", "author", "publisher"):
        text = record.get(key, "")
        if text:
            labels.extend(f"{key}:{tok}" for tok in _TOKEN_RE.findall(text.lower()))
    return sorted(set(labels))


def interaction_bag(dataset: Dataset, label_vocab: list[str] | None = None):
    """Raw per-user bag-of-words over the label sets of rated items.

    Returns the sparse d x n count matrix and the vocabulary.  A label
    counts once per rated item carrying it; users without ratings get a
    zero column.
    """
    per_item = [
        item_labels(dataset.item_side.get(item, {})) for item in dataset.item_ids
    ]
    if label_vocab is None:
        label_vocab = sorted({lab for labs in per_item for lab in labs})
    pos = {lab: i for i, lab in enumerate(label_vocab)}

    rows, cols = [], []
    users = dataset.ratings.user_idx
    items = dataset.ratings.item_idx
    for u, it in zip(users.tolist(), items.tolist()):
        for lab in per_item[it]:
            idx = pos.get(lab)
            if idx is not None:
                rows.append(idx)
                cols.append(u)
    bag = sp.csr_matrix(
        (np.ones(len(rows)), (rows, cols)),
        shape=(len(label_vocab), dataset.n_users),
        dtype=np.float64,
    )
    return bag, label_vocab


@dataclass
class InteractionEncoder:
    """Bag-of-words label vocabulary plus the fitted PCA basis."""

    label_vocab: list[str]
    basis: PcaBasis

    @property
    def dim(self) -> int:
        return self.basis.dim

    def bag_from_history(self, item_records: list[dict]) -> np.ndarray:
        """Raw count vector for one user's rated-item records."""
        pos = {lab: i for i, lab in enumerate(self.label_vocab)}
        vec = np.zeros(len(self.label_vocab))
        for record in item_records:
            for lab in item_labels(record):
                idx = pos.get(lab)
                if idx is not None:
                    vec[idx] += 1.0
        return vec

    def transform_history(self, item_records: list[dict]) -> np.ndarray:
        """Projected column (dim,) for one user's rating history."""
        return self.basis.project(self.bag_from_history(item_records)[:, None])[:, 0]

    def transform(self, dataset: Dataset) -> np.ndarray:
        bag, _ = interaction_bag(dataset, self.label_vocab)
        return self.basis.project(bag)


def encode_interaction_preference(
    dataset: Dataset, target_dim: int = 128
) -> tuple[FeatureBlock, InteractionEncoder]:
    """Fit and apply the interaction-preference view (bag-of-words of
    rated-item labels, PCA-reduced)."""
    if not dataset.item_side:
        raise ParameterError("dataset has no item side records")
    bag, vocab = interaction_bag(dataset)
    reduced, basis = pca_reduce(bag, target_dim)
    block = FeatureBlock(INTERACTION_VIEW, reduced, "bag-of-words+PCA")
    return block, InteractionEncoder(vocab, basis)


def l2_normalize_columns(X: np.ndarray) -> np.ndarray:
    """Scale each column to unit L2 norm; zero columns stay zero."""
    norms = np.linalg.norm(X, axis=0)
    return X / np.where(norms > 0.0, norms, 1.0)


@dataclass
class ViewEncoders:
    """Everything needed to rebuild the training views for a new user."""

    demo: DemographicEncoder
    interaction: InteractionEncoder
    normalized: bool = True

    def encode_user(self, demo_record: dict, item_records: list[dict] | None):
        """Columns (one per view) for a single user.

        ``item_records`` is the user's rating-history side info; ``None``
        leaves the interaction view all-zero (the feature-missing case).
        """
        demo_col = self.demo.transform_records([demo_record])[:, 0]
        if item_records is None:
            inter_col = np.zeros(self.interaction.dim)
        else:
            inter_col = self.interaction.transform_history(item_records)
        if self.normalized:
            demo_col = l2_normalize_columns(demo_col[:, None])[:, 0]
            inter_col = l2_normalize_columns(inter_col[:, None])[:, 0]
        return [demo_col, inter_col]

    def to_dict(self) -> dict:
        return {
            "demo": self.demo.to_dict(),
            "interaction_vocab": self.interaction.label_vocab,
            "normalized": self.normalized,
        }


def prepare_views(
    dataset: Dataset, target_dim: int = 128, normalize: bool = True
) -> tuple[list[np.ndarray], ViewEncoders]:
    """Build the two training views for a dataset.

    Returns ``[demographics, interaction-preference]`` as dense d_m x n
    matrices (column-normalized when ``normalize``) plus the fitted
    encoders.
    """
    demo_block, demo_enc = encode_demographics(dataset)
    inter_block, inter_enc = encode_interaction_preference(dataset, target_dim)
    views = [demo_block.data, inter_block.data]
    if normalize:
        views = [l2_normalize_columns(v) for v in views]
    return views, ViewEncoders(demo_enc, inter_enc, normalized=normalize)
