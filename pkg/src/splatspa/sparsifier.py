"""Alternating optimize/sparsify machinery for opacity sparsification.

The training objective is augmented with a split variable ``z`` (an
exactly sparse copy of the activated opacities ``a``), a dual multiplier
``lam`` and a quadratic penalty (delta/2) ||a - z + lam||^2. The three
update rules:

  * coupling gradient  delta * (a - z + lam)   added to dL/da each step,
  * sparsify step      z <- proj_{||z||_0 <= kappa}(a + lam)  (keep the
    top-kappa entries, zero the rest),
  * multiplier update  lam <- lam + a - z.

The outer loop is considered converged once ||a - z||^2 <= epsilon or the
outer-iteration count exceeds ``max_outer``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidBudgetError, InvalidParameterError, ShapeMismatchError


@dataclass
class ProjectionCriterion:
    """How the sparsify step ranks entries: by magnitude of the projected
    vector (default) or by caller-supplied per-splat importance scores."""

    kind: str = "magnitude"
    scores: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("magnitude", "external-score"):
            raise InvalidParameterError(f"unknown projection criterion: {self.kind}")
        if self.kind == "external-score" and self.scores is None:
            raise InvalidParameterError("external-score criterion needs a score vector")


MAGNITUDE = ProjectionCriterion()


@dataclass
class SparsifierState:
    """Split-variable bundle threaded through training.

    ``z`` and ``lam`` always match the cloud length (including splats not
    yet physically removed). ``outer_count`` and ``converged`` track the
    outer loop so a checkpointed run resumes identically.
    """

    z: np.ndarray
    lam: np.ndarray
    delta: float
    kappa: int
    epsilon: float
    max_outer: int
    sparsify_interval: int
    outer_count: int = 0
    converged: bool = False


def init_state(a, delta, kappa, epsilon, max_outer, sparsify_interval):
    """Fresh state: z is a copy of the activated opacities, lam is zero."""
    a = np.asarray(a, dtype=np.float64)
    if kappa > a.shape[0]:
        raise InvalidBudgetError(f"kappa ({kappa}) exceeds vector length ({a.shape[0]})")
    if delta <= 0.0:
        raise InvalidParameterError("delta must be positive")
    return SparsifierState(
        z=a.copy(), lam=np.zeros_like(a), delta=float(delta), kappa=int(kappa),
        epsilon=float(epsilon), max_outer=int(max_outer),
        sparsify_interval=int(sparsify_interval),
    )


def _check_len(a, state):
    if a.shape[0] != state.z.shape[0]:
        raise ShapeMismatchError(
            f"opacity vector length {a.shape[0]} != state length {state.z.shape[0]}")


def top_k_indices(values, k):
    """Indices of the k largest entries, descending, ties broken by lower
    index. k == 0 returns an empty selection."""
    values = np.asarray(values)
    order = np.argsort(-values, kind="stable")
    return order[:k]


def coupling_gradient(a, state):
    """delta * (a - z + lam): the penalty's gradient w.r.t. the opacities."""
    a = np.asarray(a, dtype=np.float64)
    _check_len(a, state)
    return state.delta * (a - state.z + state.lam)


def sparsify_step(a, state, criterion=None):
    """Project v = a + lam onto the kappa-sparse set; stores and returns z.

    With the magnitude criterion the result is the closest kappa-sparse
    vector to v in the Euclidean sense; external scores pick the support
    instead while the kept values still come from v.
    """
    criterion = criterion or MAGNITUDE
    a = np.asarray(a, dtype=np.float64)
    _check_len(a, state)
    v = a + state.lam
    if criterion.kind == "magnitude":
        keys = np.abs(v)
    else:
        scores = np.asarray(criterion.scores, dtype=np.float64)
        _check_len(scores, state)
        keys = scores
    z = np.zeros_like(v)
    keep = top_k_indices(keys, state.kappa)
    z[keep] = v[keep]
    state.z = z
    return z


def multiplier_update(a, state):
    """lam <- lam + a - z; stores and returns the updated multiplier."""
    a = np.asarray(a, dtype=np.float64)
    _check_len(a, state)
    state.lam = state.lam + (a - state.z)
    return state.lam


def residual(a, state):
    """Squared feasibility gap ||a - z||^2."""
    a = np.asarray(a, dtype=np.float64)
    _check_len(a, state)
    d = a - state.z
    return float(np.dot(d, d))


def converged(state, a, outer_count):
    """True once the residual is within epsilon or the outer cap is passed."""
    return residual(a, state) <= state.epsilon or outer_count > state.max_outer


def penalty_terms(a, state):
    """(quadratic penalty, dual-norm term): (delta/2)||a - z + lam||^2 and
    (delta/2)||lam||^2. The latter is constant within each update and is
    reported both ways in training logs."""
    a = np.asarray(a, dtype=np.float64)
    _check_len(a, state)
    r = a - state.z + state.lam
    return (0.5 * state.delta * float(np.dot(r, r)),
            0.5 * state.delta * float(np.dot(state.lam, state.lam)))


def compact_state(state, keep_indices):
    """Drop rows of z and lam with the same index mapping as a cloud prune."""
    keep = np.asarray(keep_indices, dtype=np.int64)
    state.z = state.z[keep].copy()
    state.lam = state.lam[keep].copy()
    return state
