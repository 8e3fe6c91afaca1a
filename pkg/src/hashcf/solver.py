"""Offline training: alternating updates over fusion variables, binary
codes, and the split orthogonal rotation.

One pass updates, in order: view weights, projections, rotation, the
consensus representation, item then user codes, the low-rank bases, the
auxiliary rotation, and its multiplier.  The rating matrix enters every
product through its truncated SVD factors, so no dense n x m buffer is
ever formed.  Shared products (Gram matrices, SVD-factor contractions)
are computed once per iteration and threaded through the update calls;
every update function also works standalone when the cached products are
omitted.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import fusion as fus
from .datasets import Dataset
from .errors import DivergenceError, ParameterError
from .linalg import RIDGE, TruncatedSvd, orthogonal_procrustes, truncated_svd


def sign_pm(X) -> np.ndarray:
    """Elementwise sign into {-1, +1}; zeros round up to +1."""
    return np.where(np.asarray(X) >= 0.0, 1.0, -1.0)


@dataclass(frozen=True)
class Hyperparams:
    """Balance parameters and sizes of one training run.

    ``alpha`` weighs the rating reconstruction, ``beta`` the code/rotation
    consistency, ``gamma`` the low-rank penalty; ``lam`` is the fixed
    augmented-Lagrangian weight.  ``o`` (SVD rank) and ``rank_budget``
    default from the data shape via :meth:`resolved`.
    """

    alpha: float = 1e3
    beta: float = 10.0
    gamma: float = 1.0
    lam: float = 1.0
    r: int = 32
    rank_budget: int | None = None
    o: int | None = None
    max_iters: int = 50
    tol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.r < 1:
            raise ParameterError("code length r must be >= 1")
        if self.lam <= 0:
            raise ParameterError("lam must be > 0")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ParameterError("alpha, beta, gamma must be >= 0")
        if self.tol <= 0:
            raise ParameterError("tol must be > 0")
        if self.max_iters < 1:
            raise ParameterError("max_iters must be >= 1")

    def resolved(self, n: int, m: int) -> "Hyperparams":
        """Fill shape-dependent defaults for an n x m rating matrix."""
        o = self.o if self.o is not None else min(128, n, m)
        if not (1 <= o <= min(n, m)):
            raise ParameterError(f"svd rank o={o} outside 1..{min(n, m)}")
        k = self.rank_budget if self.rank_budget is not None else self.r // 2
        if not (0 <= k <= self.r):
            raise ParameterError(f"rank_budget {k} outside 0..{self.r}")
        return replace(self, o=o, rank_budget=k)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "lambda": self.lam,
            "r": self.r,
            "rank_budget": self.rank_budget,
            "o": self.o,
            "max_iters": self.max_iters,
            "tol": self.tol,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


@dataclass
class SolverState:
    """Discrete codes plus the split-rotation bookkeeping."""

    B: np.ndarray
    D: np.ndarray
    R: np.ndarray
    Z_R: np.ndarray
    G_R: np.ndarray
    lam: float
    svdS: TruncatedSvd

    def validate(self, atol: float = 1e-10) -> None:
        r = self.R.shape[0]
        if not np.all(np.abs(self.B) == 1.0) or not np.all(np.abs(self.D) == 1.0):
            raise ParameterError("B and D entries must be exactly +/-1")
        for name, Q in (("R", self.R), ("Z_R", self.Z_R)):
            if np.linalg.norm(Q.T @ Q - np.eye(r)) >= atol:
                raise ParameterError(f"{name} is not orthogonal within {atol}")


@dataclass
class TrainedModel:
    """Deployable bundle: projections, item codes, rotation, train codes.

    The stored projections are composed with the final rotation
    (``R @ W_fusion``), so a fused view projection lands directly in the
    same code space as the item codes ``D``.
    """

    W: list[np.ndarray]
    D: np.ndarray
    R: np.ndarray
    B: np.ndarray
    hyper: Hyperparams
    encoders: object = None
    dataset_tag: str = ""

    @property
    def r(self) -> int:
        return self.R.shape[0]

    @property
    def n_items(self) -> int:
        return self.D.shape[1]


def _seeded_orthogonal(rng, r):
    Q, Rf = np.linalg.qr(rng.standard_normal((r, r)))
    return Q * np.sign(np.diag(Rf))


def init_state(views, svdS: TruncatedSvd, hyper: Hyperparams):
    """Seeded deterministic starting point.

    H is Gaussian, R the orthogonal factor of a Gaussian, the auxiliary
    rotation starts equal to R with a zero multiplier, weights uniform,
    projections zero (bases stay empty until the first solve), and both
    code matrices are sign patterns.
    """
    n = views[0].shape[1]
    m = svdS.source_shape[1]
    r = hyper.r
    rng = np.random.default_rng(hyper.seed)
    H = rng.standard_normal((r, n))
    R = _seeded_orthogonal(rng, r)
    fstate = fus.FusionState(
        H=H,
        W=[np.zeros((r, X.shape[0])) for X in views],
        mu=np.full(len(views), 1.0 / len(views)),
        V=[np.empty((r, 0)) for _ in views],
        rank_budget=hyper.rank_budget if hyper.rank_budget is not None else r // 2,
        gamma=hyper.gamma,
    )
    sstate = SolverState(
        B=sign_pm(R @ H),
        D=sign_pm(rng.standard_normal((r, m))),
        R=R,
        Z_R=R.copy(),
        G_R=np.zeros((r, r)),
        lam=hyper.lam,
        svdS=svdS,
    )
    return fstate, sstate


def _scaled_item_factor(D, svdS):
    """D Q_o^T Sigma_o as an r x o block (the only S-coupling on the item
    side)."""
    return (D @ svdS.right.T) * svdS.singulars


def rotation_target(
    state: SolverState, H, B, hyper: Hyperparams, HHt=None, DDt=None, DQS=None, PH=None
) -> np.ndarray:
    """The trace target whose Procrustes polar factor is the new rotation,
    assembled in factored order (largest intermediate is r x max(n, m))."""
    if HHt is None:
        HHt = H @ H.T
    if DDt is None:
        DDt = state.D @ state.D.T
    if DQS is None:
        DQS = _scaled_item_factor(state.D, state.svdS)
    if PH is None:
        PH = state.svdS.left.T @ H.T
    C = 2.0 * hyper.alpha * (DQS @ PH)
    C -= hyper.alpha * DDt @ state.Z_R @ HHt
    C += 2.0 * hyper.beta * (B @ H.T)
    C += hyper.lam * state.Z_R - state.G_R
    return C


def update_rotation(state: SolverState, H, B, hyper: Hyperparams, **products) -> np.ndarray:
    return orthogonal_procrustes(rotation_target(state, H, B, hyper, **products))


def update_H(
    state: SolverState, fstate: fus.FusionState, views, hyper, WX=None, DDt=None, DQS=None
) -> np.ndarray:
    """Exact minimizer of the quadratic consensus subproblem."""
    r = hyper.r
    inv_mu = 1.0 / np.maximum(fstate.mu, fus.MU_FLOOR)
    if DDt is None:
        DDt = state.D @ state.D.T
    if DQS is None:
        DQS = _scaled_item_factor(state.D, state.svdS)
    A = (inv_mu.sum() + hyper.beta) * np.eye(r)
    A += hyper.alpha * (state.R.T @ DDt @ state.R)
    if WX is None:
        WX = [Wm @ X for Wm, X in zip(fstate.W, views)]
    rhs = np.zeros((r, views[0].shape[1]))
    for m in range(len(views)):
        rhs += inv_mu[m] * WX[m]
    rhs += hyper.alpha * ((state.R.T @ DQS) @ state.svdS.left.T)
    rhs += hyper.beta * (state.R.T @ state.B)
    return np.linalg.solve(A, rhs)


def update_B(R, H, RH=None) -> np.ndarray:
    return sign_pm(R @ H if RH is None else RH)


def item_factor_argument(R, H, svdS: TruncatedSvd, HHt=None) -> np.ndarray:
    """Unquantized least-squares item factor.

    The left pseudo-inverse of (H^T R^T) collapses to R (H H^T)^-1 H for
    an orthogonal rotation; a ridge enters only if H H^T is rank
    deficient.  Products run left-to-right so nothing exceeds r x max(o, m).
    """
    if HHt is None:
        HHt = H @ H.T
    eigs = np.linalg.eigvalsh(HHt)
    if eigs[0] <= 1e-10 * max(1.0, eigs[-1]):
        HHt = HHt + RIDGE * np.eye(HHt.shape[0])
    M = R @ np.linalg.solve(HHt, H)
    return ((M @ svdS.left) * svdS.singulars) @ svdS.right


def update_D(R, H, svdS: TruncatedSvd, HHt=None) -> np.ndarray:
    """Sign snap of the least-squares item factor."""
    return sign_pm(item_factor_argument(R, H, svdS, HHt=HHt))


def update_ZR(state: SolverState, H, hyper: Hyperparams, HHt=None, DDt=None) -> np.ndarray:
    if HHt is None:
        HHt = H @ H.T
    if DDt is None:
        DDt = state.D @ state.D.T
    C = -hyper.alpha * DDt @ state.R @ HHt
    C += hyper.lam * state.R + state.G_R
    return orthogonal_procrustes(C)


def update_GR(state: SolverState) -> np.ndarray:
    return state.G_R + state.lam * (state.R - state.Z_R)


def objective(
    fstate, sstate, views, hyper: Hyperparams, WX=None, HHt=None, DDt=None, RH=None
) -> float:
    """Full training objective, with the rating term expanded through the
    SVD factors so the cost stays O(max(n, m) * r * o)."""
    svdS = sstate.svdS
    if WX is None:
        WX = [Wm @ X for Wm, X in zip(fstate.W, views)]
    h = np.array([np.linalg.norm(fstate.H - wx) for wx in WX])
    inv_mu = 1.0 / np.maximum(fstate.mu, fus.MU_FLOOR)
    value = float(np.sum(h**2 * inv_mu))

    # || S - H^T R^T D ||^2 = ||S||^2 - 2 tr(S^T H^T R^T D) + ||H^T R^T D||^2
    if HHt is None:
        HHt = fstate.H @ fstate.H.T
    if DDt is None:
        DDt = sstate.D @ sstate.D.T
    PH = svdS.left.T @ fstate.H.T
    RtDQ = sstate.R.T @ (sstate.D @ svdS.right.T)
    cross = float(np.sum(svdS.singulars * np.einsum("or,ro->o", PH, RtDQ)))
    quad = float(np.sum((sstate.R.T @ DDt @ sstate.R) * HHt))
    value += hyper.alpha * (svdS.squared_frobenius() - 2.0 * cross + quad)

    if RH is None:
        RH = sstate.R @ fstate.H
    value += hyper.beta * float(np.sum((sstate.B - RH) ** 2))
    value += hyper.gamma * fus.lowrank_penalty(fstate.W, fstate.V)
    alm = sstate.R - sstate.Z_R + sstate.G_R / hyper.lam
    value += 0.5 * hyper.lam * float(np.sum(alm**2))
    return value


def _check_finite(step: str, *arrays) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise DivergenceError(f"non-finite values after step '{step}'", step=step)


def _run_step(step: str, fn):
    """Run one update, converting numerical blow-ups into divergence
    errors that name the step."""
    try:
        return fn()
    except np.linalg.LinAlgError as exc:
        raise DivergenceError(f"step '{step}' failed: {exc}", step=step) from exc


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    seconds: float
    constraint_gap: float


def train(
    dataset: Dataset,
    views,
    hyper: Hyperparams,
    progress_sink=None,
    encoders=None,
) -> TrainedModel:
    """Run the full alternating optimization on a training dataset.

    ``views`` are the dense d_m x n feature views aligned with the
    dataset's users.  Stops when the relative objective change drops below
    ``hyper.tol`` or after ``hyper.max_iters`` passes.  Per-iteration
    records go to ``progress_sink`` (a callable) when given.
    """
    S = dataset.ratings.to_csr()
    n, m = S.shape
    if views[0].shape[1] != n:
        raise ParameterError("views and dataset disagree on user count")
    hyper = hyper.resolved(n, m)
    svdS = truncated_svd(S, hyper.o)
    fstate, sstate = init_state(views, svdS, hyper)
    gram = _run_step("view_gram", lambda: fus.gram_eigs(views))

    # products carried across steps; suffix says which variables they match
    WX = [Wm @ X for Wm, X in zip(fstate.W, views)]
    HHt = fstate.H @ fstate.H.T
    DDt = sstate.D @ sstate.D.T
    DQS = _scaled_item_factor(sstate.D, sstate.svdS)
    PH = sstate.svdS.left.T @ fstate.H.T

    prev = objective(fstate, sstate, views, hyper, WX=WX, HHt=HHt, DDt=DDt)
    if progress_sink is not None:
        progress_sink(IterationRecord(0, prev, 0.0, _gap(sstate)))

    for it in range(1, hyper.max_iters + 1):
        t0 = time.perf_counter()

        h = np.array([np.linalg.norm(fstate.H - wx) for wx in WX])
        total = h.sum()
        fstate.mu = (
            h / total if total > 0.0 else np.full(len(views), 1.0 / len(views))
        )
        _check_finite("weights", fstate.mu)

        fstate.W = _run_step(
            "projections",
            lambda: fus.update_projections(
                fstate.H, views, fstate.mu, fstate.V, hyper.gamma, gram=gram
            ),
        )
        _check_finite("projections", *fstate.W)

        sstate.R = _run_step(
            "rotation",
            lambda: update_rotation(
                sstate, fstate.H, sstate.B, hyper, HHt=HHt, DDt=DDt, DQS=DQS, PH=PH
            ),
        )
        _check_finite("rotation", sstate.R)

        WX = [Wm @ X for Wm, X in zip(fstate.W, views)]
        fstate.H = _run_step(
            "consensus",
            lambda: update_H(sstate, fstate, views, hyper, WX=WX, DDt=DDt, DQS=DQS),
        )
        _check_finite("consensus", fstate.H)
        HHt = fstate.H @ fstate.H.T

        sstate.D = _run_step(
            "codes", lambda: update_D(sstate.R, fstate.H, svdS, HHt=HHt)
        )
        RH = sstate.R @ fstate.H
        sstate.B = update_B(sstate.R, fstate.H, RH=RH)
        _check_finite("codes", sstate.B, sstate.D)
        DDt = sstate.D @ sstate.D.T
        DQS = _scaled_item_factor(sstate.D, sstate.svdS)

        fstate.V = _run_step(
            "lowrank_basis",
            lambda: fus.update_lowrank_basis(fstate.W, fstate.rank_budget),
        )
        _check_finite("lowrank_basis", *fstate.V)

        sstate.Z_R = _run_step(
            "auxiliary_rotation",
            lambda: update_ZR(sstate, fstate.H, hyper, HHt=HHt, DDt=DDt),
        )
        _check_finite("auxiliary_rotation", sstate.Z_R)

        sstate.G_R = update_GR(sstate)
        _check_finite("multiplier", sstate.G_R)

        PH = sstate.svdS.left.T @ fstate.H.T
        value = objective(
            fstate, sstate, views, hyper, WX=WX, HHt=HHt, DDt=DDt, RH=RH
        )
        if not np.isfinite(value):
            raise DivergenceError("objective became non-finite", step="objective")
        seconds = time.perf_counter() - t0
        if progress_sink is not None:
            progress_sink(IterationRecord(it, value, seconds, _gap(sstate)))
        rel = abs(value - prev) / max(abs(prev), 1.0)
        prev = value
        if rel < hyper.tol:
            break

    return TrainedModel(
        W=[sstate.R @ Wm for Wm in fstate.W],
        D=sstate.D,
        R=sstate.R,
        B=sstate.B,
        hyper=hyper,
        encoders=encoders,
        dataset_tag=dataset.name,
    )


def _gap(sstate: SolverState) -> float:
    return float(np.linalg.norm(sstate.R - sstate.Z_R))
