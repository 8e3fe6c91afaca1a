"""Feature-adaptive hash codes for users the trainer never saw.

Codes come from the trained per-view projections alone: alternate
closed-form simplex weights (one per view, from the per-view residual
norms) with a sign snap of the weighted fused projection, until the codes
stop changing.  A view can be absent; its all-zero block then draws a
large residual, hence a large weight, hence a small 1/weight coefficient,
letting the present views dominate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .fusion import MU_FLOOR
from .solver import TrainedModel, sign_pm


@dataclass
class ColdStartBatch:
    """Codes for a batch of unseen users.

    ``zero_projection`` flags users whose fused projection vanished; their
    codes defaulted to all +1.
    """

    X_u: list[np.ndarray]
    B_u: np.ndarray
    mu_u: np.ndarray
    zero_projection: np.ndarray

    @property
    def n_users(self) -> int:
        return self.B_u.shape[1]


def generate_user_codes(
    model: TrainedModel,
    X_u,
    max_iters: int = 20,
    tol: float = 0.0,
    objective_trace: list | None = None,
) -> ColdStartBatch:
    """Self-weighted alternating code generation for a batch of users.

    ``X_u`` holds one d_m x n_u matrix per view, encoded with the model's
    encoders (missing views as all-zero blocks).  Starts from the sign of
    the uniformly weighted fused projection; stops when the codes repeat,
    when the weighted-residual objective improves by at most ``tol``, or
    after ``max_iters`` alternations.  ``objective_trace`` (if given)
    collects the objective after every alternation.
    """
    if len(X_u) != len(model.W):
        raise ParameterError(f"expected {len(model.W)} views, got {len(X_u)}")
    for Wm, Xm in zip(model.W, X_u):
        if Xm.shape[0] != Wm.shape[1]:
            raise ParameterError(
                f"view dim {Xm.shape[0]} does not match projection dim {Wm.shape[1]}"
            )
    proj = [Wm @ Xm for Wm, Xm in zip(model.W, X_u)]
    fused = sum(proj)
    zero = np.linalg.norm(fused, axis=0) == 0.0
    B_u = sign_pm(fused)
    mu = np.full(len(proj), 1.0 / len(proj))
    prev_obj = None
    for _ in range(max_iters):
        h = np.array([np.linalg.norm(B_u - p) for p in proj])
        total = h.sum()
        mu = h / total if total > 0.0 else np.full(len(proj), 1.0 / len(proj))
        fused = sum(p / max(w, MU_FLOOR) for p, w in zip(proj, mu))
        B_next = sign_pm(fused)
        obj = float(sum(np.linalg.norm(B_next - p) for p in proj) ** 2)
        if objective_trace is not None:
            objective_trace.append(obj)
        if np.array_equal(B_next, B_u):
            break
        B_u = B_next
        if tol > 0.0 and prev_obj is not None and prev_obj - obj <= tol:
            break
        prev_obj = obj
    return ColdStartBatch(
        X_u=list(X_u),
        B_u=B_u,
        mu_u=mu,
        zero_projection=zero,
    )


def encode_new_user(
    model: TrainedModel, demo_record: dict, rating_history: list[dict] | None = None
) -> ColdStartBatch:
    """Code for a single user given a raw demographic record and an
    optional rating history (the side-info records of rated items).

    Unknown demographic categories encode to zeros; a missing history
    leaves the interaction view all-zero and the self-weighting
    down-weights it.
    """
    if not demo_record:
        raise ParameterError("empty demographic record")
    if model.encoders is None:
        raise ParameterError("model carries no encoders")
    cols = model.encoders.encode_user(demo_record, rating_history)
    return generate_user_codes(model, [c[:, None] for c in cols])


def weighted_residual_objective(model: TrainedModel, X_u, B_u) -> float:
    """Cold-start objective with the weights at their closed-form optimum:
    the squared sum of per-view residual norms."""
    h = sum(np.linalg.norm(B_u - Wm @ Xm) for Wm, Xm in zip(model.W, X_u))
    return float(h**2)
