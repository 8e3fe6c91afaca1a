"""Multi-view binary hash codes for cold-start collaborative filtering.

Fuses heterogeneous user content features into +/-1 hash codes through a
low-rank self-weighted objective, trains user/item codes against the
rating matrix with an augmented-Lagrangian discrete optimizer, generates
feature-adaptive codes for unseen users, and evaluates top-k retrieval
in Hamming space.
"""

from .coldstart import ColdStartBatch, encode_new_user, generate_user_codes
from .datasets import (
    Dataset,
    RatingMatrix,
    SplitSpec,
    load_bookcrossing,
    load_dataset_cache,
    load_movielens,
    save_dataset_cache,
    split_cold_start,
)
from .encoders import FeatureBlock, ViewEncoders, prepare_views
from .evaluate import (
    BenchRecord,
    EvalReport,
    PositiveRule,
    accuracy_at_k,
    baseline_popularity,
    baseline_random,
    bench_scaling,
    hamming_score,
    positive_rule_for,
    top_k_items,
)
from .model_io import load_model, save_model
from .solver import Hyperparams, TrainedModel, train

__version__ = "0.1.0"

__all__ = [
    "BenchRecord",
    "ColdStartBatch",
    "Dataset",
    "EvalReport",
    "FeatureBlock",
    "Hyperparams",
    "PositiveRule",
    "RatingMatrix",
    "SplitSpec",
    "TrainedModel",
    "ViewEncoders",
    "accuracy_at_k",
    "baseline_popularity",
    "baseline_random",
    "bench_scaling",
    "encode_new_user",
    "generate_user_codes",
    "hamming_score",
    "load_bookcrossing",
    "load_dataset_cache",
    "load_model",
    "load_movielens",
    "positive_rule_for",
    "prepare_views",
    "save_dataset_cache",
    "save_model",
    "split_cold_start",
    "top_k_items",
    "train",
    "__version__",
]
