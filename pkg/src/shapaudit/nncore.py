"""Dense numerical core: focal loss, Adam, and a finite-difference gradient checker.

Matrices throughout the package are 2-D C-contiguous float64 numpy arrays,
all values finite.  Reductions are plain sequential numpy reductions, so
identical inputs give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_FLOOR = 1e-12


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Validate and return x as a finite 2-D float64 array."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    check_finite(arr, name)
    return arr


def check_finite(arr: np.ndarray, name: str = "array") -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class FocalLossParams:
    """Focusing exponent gamma >= 0 and per-class weights alpha in (0, 1]."""

    gamma: float = 2.0
    alpha: tuple = ()  # empty = 1.0 for every class

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        for a in self.alpha:
            if not (0.0 < a <= 1.0):
                raise ValueError(f"alpha entries must be in (0, 1], got {a}")

    def alpha_vector(self, n_classes: int) -> np.ndarray:
        if not self.alpha:
            return np.ones(n_classes)
        if len(self.alpha) != n_classes:
            raise ValueError(f"alpha has {len(self.alpha)} entries for {n_classes} classes")
        return np.asarray(self.alpha, dtype=np.float64)


def focal_loss(probabilities: np.ndarray, labels: np.ndarray, params: FocalLossParams):
    """Mean focal loss over samples, plus its gradient w.r.t. pre-softmax logits.

    loss_i = -alpha_t * (1 - p_t)^gamma * log(p_t) with p_t the probability
    assigned to the true class.  gamma=0 and alpha=1 reduce to mean
    categorical cross-entropy.  p_t is clamped to [1e-12, 1-1e-12] before
    the log.

    Returns (loss, dloss/dlogits) where the gradient has the shape of
    `probabilities` and already includes the 1/n averaging.
    """
    p = as_matrix(probabilities, "probabilities")
    y = np.asarray(labels)
    n, n_classes = p.shape
    if y.shape != (n,):
        raise ValueError(f"labels must have shape ({n},), got {y.shape}")
    if np.any(y < 0) or np.any(y >= n_classes):
        raise ValueError("label out of range")
    row_sums = p.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-9):
        raise ValueError("probability rows must sum to 1 within 1e-9")

    alpha = params.alpha_vector(n_classes)[y]
    gamma = params.gamma
    rows = np.arange(n)
    p_t = np.clip(p[rows, y], PROB_FLOOR, 1.0 - PROB_FLOOR)
    one_minus = 1.0 - p_t
    log_p = np.log(p_t)
    losses = -alpha * one_minus**gamma * log_p
    loss = float(losses.mean())

    # d loss_i / d p_t, then chain through the softmax Jacobian
    # d/dp_t[(1-p)^g log p] = -g (1-p)^(g-1) log p + (1-p)^g / p
    if gamma == 0.0:
        dl_dpt = -alpha / p_t
    else:
        dl_dpt = alpha * (gamma * one_minus ** (gamma - 1.0) * log_p - one_minus**gamma / p_t)
    onehot = np.zeros_like(p)
    onehot[rows, y] = 1.0
    grad = dl_dpt[:, None] * p_t[:, None] * (onehot - p) / n
    return loss, grad


@dataclass
class AdamState:
    """Adam optimizer state for one list of parameter arrays."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0 or self.epsilon <= 0:
            raise ValueError("lr and epsilon must be positive")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must be in (0, 1)")

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8) -> "AdamState":
        st = cls(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)
        st.m = [np.zeros_like(p) for p in params]
        st.v = [np.zeros_like(p) for p in params]
        return st


def adam_step(params: list, grads: list, state: AdamState) -> None:
    """One bias-corrected Adam update, in place on `params` and `state`."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state slots must have equal length")
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape} vs grad {g.shape}")
        check_finite(g, "gradient")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


def gradient_check(fn, analytic_grad: np.ndarray, x0: np.ndarray, h: float = 1e-5,
                   coords=None, kink_tol: float = 1e-3):
    """Max relative error between an analytic gradient and central differences.

    `fn(x) -> (value, preactivations)` evaluates the scalar function at a
    flat parameter vector and also reports every ReLU pre-activation it
    encountered (flat array; empty for smooth functions).  A coordinate is
    excluded when perturbing it moves some pre-activation across zero or
    within `kink_tol` of zero, since the central difference straddles a
    kink there.

    Relative error is |g_a - g_fd| / max(1, |g_fd|).  Returns
    (max_rel_error, n_checked, n_excluded).
    """
    if not (1e-7 <= h <= 1e-3):
        raise ValueError(f"h must be in [1e-7, 1e-3], got {h}")
    x0 = np.asarray(x0, dtype=np.float64)
    g = np.asarray(analytic_grad, dtype=np.float64)
    if g.shape != x0.shape:
        raise ValueError("analytic gradient shape mismatch")
    if coords is None:
        coords = range(x0.size)
    max_err = 0.0
    n_checked = 0
    n_excluded = 0
    for k in coords:
        xp = x0.copy()
        xp[k] += h
        fp, zp = fn(xp)
        xm = x0.copy()
        xm[k] -= h
        fm, zm = fn(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value when perturbing coordinate {k}")
        zp = np.asarray(zp, dtype=np.float64)
        zm = np.asarray(zm, dtype=np.float64)
        if zp.size:
            moved = zp != zm
            if np.any(moved):
                zpm, zmm = zp[moved], zm[moved]
                crossed = np.any(zpm * zmm <= 0.0)
                near = min(np.abs(zpm).min(), np.abs(zmm).min()) < kink_tol
                if crossed or near:
                    n_excluded += 1
                    continue
        g_fd = (fp - fm) / (2.0 * h)
        err = abs(g[k] - g_fd) / max(1.0, abs(g_fd))
        max_err = max(max_err, err)
        n_checked += 1
    return max_err, n_checked, n_excluded
