"""Multi-view fusion state and its closed-form updates.

A consensus representation H is tied to per-view linear projections W^(m)
through self-balancing weights mu on the probabilistic simplex; trailing
eigenvector bases V^(m) carry a low-rank penalty on each projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .linalg import RIDGE, RIDGE_TRIGGER, EigenPair, trailing_eigvecs

# Weights below this are clamped before any 1/mu; a perfectly fitting view
# would otherwise blow up its own coefficient.
MU_FLOOR = 1e-12


@dataclass
class FusionState:
    """Continuous fusion variables.

    H is r x n; W holds one r x d_m matrix per view; mu lives on the
    simplex; V holds one r x (r - rank_budget) orthonormal basis per view
    (empty columns until the first projection solve).
    """

    H: np.ndarray
    W: list[np.ndarray]
    mu: np.ndarray
    V: list[np.ndarray]
    rank_budget: int
    gamma: float

    @property
    def r(self) -> int:
        return self.H.shape[0]

    @property
    def n_views(self) -> int:
        return len(self.W)

    def validate(self, atol: float = 1e-10) -> None:
        if self.rank_budget > self.r:
            raise ParameterError(f"rank_budget {self.rank_budget} > r {self.r}")
        if np.any(self.mu < -atol) or abs(self.mu.sum() - 1.0) > atol:
            raise ParameterError("mu is not on the probabilistic simplex")
        for V in self.V:
            if V.shape[1] and np.linalg.norm(V.T @ V - np.eye(V.shape[1])) > 1e-8:
                raise ParameterError("V columns are not orthonormal")


def view_residual_norms(H, W, X_views) -> np.ndarray:
    return np.array(
        [np.linalg.norm(H - Wm @ Xm) for Wm, Xm in zip(W, X_views)]
    )


def update_weights(H, W, X_views) -> np.ndarray:
    """Closed-form simplex weights: each view's weight is its residual
    norm over the total.  All-zero residuals fall back to uniform."""
    h = view_residual_norms(H, W, X_views)
    total = h.sum()
    if total == 0.0:
        return np.full(len(X_views), 1.0 / len(X_views))
    return h / total


def gram_eigs(X_views) -> list[EigenPair]:
    """Eigendecompositions of each view's Gram matrix X X^T.

    The projection solve reuses these across iterations: rescaling by
    1/mu shifts eigenvalues but never eigenvectors.
    """
    out = []
    for X in X_views:
        nu, Q = np.linalg.eigh(X @ X.T)
        out.append(EigenPair(values=np.maximum(nu, 0.0), vectors=Q))
    return out


def update_projections(H, X_views, mu, V, gamma, gram=None) -> list[np.ndarray]:
    """Per-view stationary point of the weighted residual plus low-rank
    penalty: solves gamma V V^T W + W (X X^T) / mu = (H X^T) / mu.

    Well-posed systems are solved exactly; a ridge enters the eigenvalue
    denominators only when the smallest pair sum is negligible.
    """
    mu = np.maximum(np.asarray(mu, dtype=np.float64), MU_FLOOR)
    if gram is None:
        gram = gram_eigs(X_views)
    W_new = []
    for m, X in enumerate(X_views):
        Vm = V[m]
        if gamma > 0.0 and Vm.shape[1] > 0:
            lam, U = np.linalg.eigh(gamma * (Vm @ Vm.T))
        else:
            r = H.shape[0]
            lam, U = np.zeros(r), np.eye(r)
        nu, Q = gram[m].values, gram[m].vectors
        C = (H @ X.T) / mu[m]
        denom = lam[:, None] + nu[None, :] / mu[m]
        pair_min = denom.min()
        pair_max = denom.max()
        if pair_min <= RIDGE_TRIGGER * max(1.0, abs(pair_max)):
            denom = denom + 2.0 * RIDGE
        W_new.append(U @ ((U.T @ C @ Q) / denom) @ Q.T)
    return W_new


def update_lowrank_basis(W, rank_budget: int) -> list[np.ndarray]:
    """Trailing eigenvectors of each W W^T beyond the rank budget."""
    out = []
    for Wm in W:
        r = Wm.shape[0]
        if rank_budget > r:
            raise ParameterError(f"rank_budget {rank_budget} > r {r}")
        out.append(trailing_eigvecs(Wm @ Wm.T, r - rank_budget))
    return out


def lowrank_penalty(W, V) -> float:
    total = 0.0
    for Wm, Vm in zip(W, V):
        if Vm.shape[1]:
            G = Vm.T @ Wm
            total += float(np.sum(G * G))
    return total


def fusion_objective(state: FusionState, X_views) -> float:
    """Weighted squared residuals plus the low-rank penalty."""
    h = view_residual_norms(state.H, state.W, X_views)
    mu = np.maximum(state.mu, MU_FLOOR)
    value = float(np.sum(h**2 / mu))
    if state.gamma > 0.0:
        value += state.gamma * lowrank_penalty(state.W, state.V)
    return value
