"""Class-weighted linear rankers (logistic and hinge loss).

Both losses minimise

    J(w, b) = 0.5 * ||w||^2 + C * sum_i c_i * loss(y_i * (w . x_i + b))

with an unpenalised bias and labels in {-1, +1}. All solvers start from zero
and are deterministic given their inputs and seed.

* logistic, narrow inputs (few columns): damped Newton with Armijo
  backtracking.
* logistic, wide inputs: full-batch L-BFGS with Armijo backtracking.
* hinge, narrow inputs: Newton's method on quadratically smoothed hinges
  whose width shrinks towards zero, with an exact line search, finished by
  an active-set solve of the exact optimality conditions.
* hinge, wide inputs: dual coordinate descent over the box-constrained dual;
  the equality constraint that an unpenalised bias induces is enforced with
  an augmented Lagrangian whose multiplier is the bias.
"""

from __future__ import annotations

import hashlib
import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit

from ._dualcd import dual_cd_epochs
from .errors import DimensionMismatch, NonFinite, SingleClassInput, UsageError
from .metrics import neg_log_loss
from .temporal import inner_cv_splits

LOSSES = ("logistic", "hinge")
DEFAULT_C_GRID = (0.01, 0.1, 0.5, 1.0, 2.5, 5.0, 10.0, 20.0)

# smoothing widths for the Newton hinge continuation, widest first
_HINGE_SMOOTHING = (0.1, 1e-2, 1e-4, 1e-6, 1e-8)
# inputs with at most this many columns use the dense Newton solvers
NEWTON_MAX_DIM = 512
# augmented-Lagrangian penalty, relative to the mean squared row norm
_DUAL_RHO = 0.3
_DUAL_EPOCHS_PER_STEP = 10


@dataclass(frozen=True)
class ModelConfig:
    loss: str = "logistic"
    C: float = 1.0
    class_weighting: str = "balanced"
    max_iters: int = 1000
    tol: float = 1e-6

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise UsageError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if not self.C > 0:
            raise UsageError("C must be positive")
        if not self.tol > 0:
            raise UsageError("tol must be positive")
        if self.class_weighting not in ("balanced", "none"):
            raise UsageError("class_weighting must be 'balanced' or 'none'")
        if self.max_iters < 1:
            raise UsageError("max_iters must be at least 1")


def default_grid(losses: Sequence[str] = LOSSES, Cs: Sequence[float] = DEFAULT_C_GRID, **kwargs) -> list:
    return [ModelConfig(loss=loss, C=float(C), **kwargs) for loss in losses for C in Cs]


@dataclass(frozen=True)
class TrainedLinearModel:
    weights: np.ndarray
    bias: float
    config: ModelConfig
    train_fingerprint: str = ""
    iterations: int = 0
    converged: bool = False

    @property
    def dim(self) -> int:
        return self.weights.size


# --------------------------------------------------------------------------
# objective


def _signed(y) -> np.ndarray:
    y = np.asarray(y)
    if y.dtype == bool or set(np.unique(y)).issubset({0, 1}):
        return np.where(y.astype(bool), 1.0, -1.0)
    return y.astype(float)


def _check_dims(X, w, y=None, sample_weights=None):
    if X.ndim != 2 or X.shape[1] != w.size:
        raise DimensionMismatch(f"matrix has {X.shape[-1]} columns, weights have {w.size}")
    if y is not None and y.size != X.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} rows but {y.size} labels")
    if sample_weights is not None and np.size(sample_weights) != X.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} rows but {np.size(sample_weights)} sample weights")


def _loss_and_slope(margins: np.ndarray, loss: str, smoothing: float = 0.0):
    """Per-sample loss and its derivative with respect to the margin."""
    if loss == "logistic":
        return np.logaddexp(0.0, -margins), -expit(-margins)
    gap = 1.0 - margins
    if smoothing <= 0.0:
        # subgradient 0 at margin exactly 1
        return np.maximum(gap, 0.0), np.where(gap > 0.0, -1.0, 0.0)
    mu = smoothing
    quad = (gap > 0.0) & (gap < mu)
    lin = gap >= mu
    values = np.where(lin, gap - mu / 2.0, np.where(quad, gap * gap / (2.0 * mu), 0.0))
    slopes = np.where(lin, -1.0, np.where(quad, -gap / mu, 0.0))
    return values, slopes


def _objective(params, X, y, cw, C, loss, smoothing=0.0):
    w, b = params[:-1], params[-1]
    margins = y * (X @ w + b)
    values, slopes = _loss_and_slope(margins, loss, smoothing)
    coef = C * cw * slopes * y
    J = 0.5 * float(w @ w) + C * float(cw @ values)
    grad = np.empty_like(params)
    grad[:-1] = w + X.T @ coef
    grad[-1] = coef.sum()
    return J, grad


def objective_and_gradient(weights, bias, X, y, sample_weights, config: ModelConfig):
    """Objective value and gradient; the bias derivative is the last entry."""
    w = np.asarray(weights, dtype=float)
    y = _signed(y)
    cw = np.asarray(sample_weights, dtype=float)
    _check_dims(X, w, y, cw)
    if np.any(cw <= 0):
        raise UsageError("sample weights must be positive")
    return _objective(np.append(w, float(bias)), X, y, cw, config.C, config.loss)


def class_weights(y, weighting: str = "balanced") -> np.ndarray:
    """Per-sample weights n / (2 n_class) for ``balanced``, else ones."""
    pos = _signed(y) > 0
    n = pos.size
    if weighting == "none":
        return np.ones(n)
    n_pos = int(pos.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassInput("both classes are needed for class weighting")
    return np.where(pos, n / (2.0 * n_pos), n / (2.0 * n_neg))


# --------------------------------------------------------------------------
# optimiser


def _lbfgs(fun, x0, gtol, max_iters, memory=10):
    """Minimise ``fun`` (returning value, gradient); returns (x, f, g, iters, converged)."""
    x = x0.copy()
    f, g = fun(x)
    if not math.isfinite(f):
        raise NonFinite(0)
    S, Y, RHO = deque(maxlen=memory), deque(maxlen=memory), deque(maxlen=memory)
    it = 0
    while it < max_iters:
        if np.max(np.abs(g)) <= gtol:
            return x, f, g, it, True
        q = g.copy()
        alphas = []
        for s, yv, rho in zip(reversed(S), reversed(Y), reversed(RHO)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * yv
        if S:
            q *= (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
        else:
            q /= max(1.0, np.linalg.norm(g))
        for (s, yv, rho), a in zip(zip(S, Y, RHO), reversed(alphas)):
            q += s * (a - rho * (yv @ q))
        d = -q
        slope = g @ d
        if not slope < 0:
            S.clear(); Y.clear(); RHO.clear()
            d = -g / max(1.0, np.linalg.norm(g))
            slope = g @ d
        step = 1.0
        while True:
            x_new = x + step * d
            f_new, g_new = fun(x_new)
            if math.isfinite(f_new) and f_new <= f + 1e-4 * step * slope:
                break
            step *= 0.5
            if step < 1e-20:
                # no further decrease representable
                return x, f, g, it, False
        it += 1
        s = x_new - x
        yv = g_new - g
        sy = s @ yv
        if sy > 1e-12 * (s @ s):
            S.append(s); Y.append(yv); RHO.append(1.0 / sy)
        x, f, g = x_new, f_new, g_new
        if not math.isfinite(f):
            raise NonFinite(it)
    return x, f, g, it, bool(np.max(np.abs(g)) <= gtol)


def _logistic_newton(X, y, cw, C, gtol, max_iters):
    """Damped Newton for narrow inputs; returns (params, iterations, converged)."""
    dense = X.toarray() if sp.issparse(X) else X
    n, d = dense.shape
    A = np.hstack([dense, np.ones((n, 1))])
    reg = np.ones(d + 1)
    reg[-1] = 0.0
    costs = C * cw

    def value(theta):
        w = theta[:-1]
        return 0.5 * float(w @ w) + float(costs @ np.logaddexp(0.0, -y * (A @ theta)))

    theta = np.zeros(d + 1)
    f = value(theta)
    iters = 0
    while iters < max_iters:
        m = y * (A @ theta)
        sig = expit(-m)
        grad = reg * theta - A.T @ (costs * sig * y)
        if np.max(np.abs(grad)) <= gtol:
            return theta, iters, True
        H = (A.T * (costs * sig * (1.0 - sig))) @ A
        H[np.diag_indices_from(H)] += reg + 1e-12
        try:
            step = -cho_solve(cho_factor(H), grad)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(H, grad, rcond=None)[0]
        slope = float(grad @ step)
        t = 1.0
        while True:
            trial = theta + t * step
            f_trial = value(trial)
            if f_trial <= f + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        if not np.all(np.isfinite(trial)):
            raise NonFinite(iters)
        theta, f = trial, f_trial
        iters += 1
    return theta, iters, False


def _smoothed_hinge_slope(gap, mu):
    return np.where(gap >= mu, -1.0, np.where(gap > 0.0, -gap / mu, 0.0))


def _exact_step(lin, quad, gap, delta, costs, mu):
    """Minimizer along a direction of the smoothed hinge objective.

    The directional derivative is ``lin + t * quad`` plus one term per sample
    that is linear in ``t`` while that sample's gap lies strictly inside
    (0, mu) and constant elsewhere. Sorting the entry and exit points gives
    the derivative at every kink; the root is interpolated on its segment.
    """
    d0 = lin + float((costs * delta) @ _smoothed_hinge_slope(gap, mu))
    if d0 >= 0.0:
        return 0.0
    moving = delta != 0.0
    g, dl, c = gap[moving], delta[moving], costs[moving]
    r0, r1 = g / dl, (g - mu) / dl
    t_in, t_out = np.maximum(np.minimum(r0, r1), 0.0), np.maximum(r0, r1)
    live = t_out > t_in
    weight = c[live] * dl[live] ** 2 / mu
    times = np.concatenate([t_in[live], t_out[live]])
    change = np.concatenate([weight, -weight])
    order = np.argsort(times, kind="stable")
    times, change = times[order], change[order]
    # slope on the segment that ends at times[k]
    slope = quad + np.concatenate([[0.0], np.cumsum(change)[:-1]])
    seg = np.diff(np.concatenate([[0.0], times]))
    at_kink = d0 + np.cumsum(slope * seg)
    k = int(np.searchsorted(at_kink >= 0.0, True))
    if k == times.size:
        tail = quad + float(change.sum()) if times.size else quad
        start, value = (float(times[-1]), float(at_kink[-1])) if times.size else (0.0, d0)
        return start - value / tail if tail > 0.0 else start
    start = float(times[k - 1]) if k else 0.0
    value = float(at_kink[k - 1]) if k else d0
    return start - value / float(slope[k]) if slope[k] > 0.0 else start


def _hinge_kkt_finish(A, y, costs, reg, theta, mu, tol, rounds=5):
    """Active-set solve of the exact hinge optimality conditions.

    Samples within ``mu`` of the margin start on it and the rest on the side
    they are on. Each round solves the equality system for that partition and
    moves violators across; the result is returned only once the partition is
    self-consistent. Gives up with ``None`` when a round moves more samples
    than there are parameters, since the partition is then far off.
    """
    m = y * (A @ theta)
    on = np.abs(1.0 - m) <= mu
    inside = (m < 1.0) & ~on
    p = A.shape[1]
    scale = tol * max(1.0, float(np.max(costs)))
    seen = set()
    for _ in range(rounds):
        state = (on.tobytes(), inside.tobytes())
        if state in seen:
            return None
        seen.add(state)
        idx = np.flatnonzero(on)
        B = (A[idx] * y[idx, None]).T
        K = np.zeros((p + idx.size, p + idx.size))
        K[:p, :p] = np.diag(reg)
        K[:p, p:] = -B
        K[p:, :p] = B.T
        rhs = np.concatenate([A[inside].T @ (costs[inside] * y[inside]), np.ones(idx.size)])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(sol)):
            return None
        exact, alpha = sol[:p], sol[p:]
        m = y * (A @ exact)
        low, high = alpha < -scale, alpha > costs[idx] + scale
        outside = ~on & ~inside
        wrong_in, wrong_out = inside & (m > 1.0 + tol), outside & (m < 1.0 - tol)
        moves = int(low.sum() + high.sum() + wrong_in.sum() + wrong_out.sum())
        if moves == 0:
            return exact
        if moves > p:
            return None
        on[idx[low | high]] = False
        inside[idx[high]] = True
        on |= wrong_in | wrong_out
        inside &= ~wrong_in
    return None


def _hinge_newton(X, y, costs, tol, max_iters):
    """Newton continuation on smoothed hinges; returns (params, iterations, converged).

    The line search is exact, see :func:`_exact_step`. After each smoothing
    level an exact active-set solve is attempted; converged means either that
    it satisfied the hinge optimality conditions or that the smoothed gradient
    fell below the tolerance at the finest level.
    """
    dense = X.toarray() if sp.issparse(X) else X
    n, d = dense.shape
    A = np.hstack([dense, np.ones((n, 1))])
    reg = np.ones(d + 1)
    reg[-1] = 0.0
    theta = np.zeros(d + 1)
    margins = np.zeros(n)
    # at the origin every sample is on the linear part of each smoothed hinge
    gtol = tol * max(1.0, float(np.max(np.abs(A.T @ (costs * y)))))
    iters, converged = 0, False
    for mu in _HINGE_SMOOTHING:
        converged = False
        while iters < max_iters:
            gap = 1.0 - margins
            grad = reg * theta + A.T @ (costs * _smoothed_hinge_slope(gap, mu) * y)
            if np.max(np.abs(grad)) <= gtol:
                converged = True
                break
            curv = np.where((gap > 0.0) & (gap < mu), costs / mu, 0.0)
            active = curv > 0
            H = (A[active].T * curv[active]) @ A[active]
            H[np.diag_indices_from(H)] += reg + 1e-10
            try:
                step = -cho_solve(cho_factor(H), grad)
            except np.linalg.LinAlgError:
                step = -np.linalg.lstsq(H, grad, rcond=None)[0]
            delta = y * (A @ step)
            quad, lin = float(reg @ (step * step)), float(reg @ (theta * step))
            t = _exact_step(lin, quad, gap, delta, costs, mu)
            theta = theta + t * step
            margins = margins + t * delta
            iters += 1
            if not np.all(np.isfinite(theta)):
                raise NonFinite(iters)
        if converged and mu < _HINGE_SMOOTHING[0]:
            exact = _hinge_kkt_finish(A, y, costs, reg, theta, mu, tol)
            if exact is not None:
                return exact, iters, True
    return theta, iters, converged


def _hinge_dual(X, y, costs, tol, max_iters, seed):
    """Dual coordinate descent with an augmented Lagrangian for the bias.

    The dual is min 0.5 ||sum a_i y_i x_i||^2 - sum a_i over 0 <= a_i <= costs_i
    with sum a_i y_i = 0. Each outer step runs epochs of coordinate descent on
    the augmented dual, then moves the multiplier; at the solution the
    multiplier equals the primal bias. ``max_iters`` bounds the total number
    of epochs. Converged means the duality gap is at most ``tol`` times
    max(1, primal objective) and the equality residual is at most ``tol``.
    """
    X = sp.csr_matrix(X)
    n, d = X.shape
    sq = np.asarray(X.multiply(X).sum(axis=1)).ravel()
    rho = _DUAL_RHO * max(float(sq.mean()), 1e-12)
    alpha = np.zeros(n)
    w = np.zeros(d)
    resid = np.zeros(1)
    mult = 0.0
    state = np.array([np.random.SeedSequence(seed).generate_state(1, np.uint64)[0] | np.uint64(1)], dtype=np.uint64)
    y = np.ascontiguousarray(y, dtype=float)
    costs = np.ascontiguousarray(costs, dtype=float)
    inner_tol = tol
    epochs, converged = 0, False
    while epochs < max_iters:
        used, violation = dual_cd_epochs(
            X.indptr, X.indices, X.data, y, costs, sq + rho, alpha, w, resid,
            mult, rho, state, min(_DUAL_EPOCHS_PER_STEP, max_iters - epochs), inner_tol,
        )
        epochs += used
        mult += rho * resid[0]
        if not math.isfinite(mult) or not np.all(np.isfinite(w)):
            raise NonFinite(epochs)
        half_sq = 0.5 * float(w @ w)
        primal = half_sq + float(costs @ np.maximum(0.0, 1.0 - y * (X @ w + mult)))
        gap = primal - (float(alpha.sum()) - half_sq)
        if gap <= tol * max(1.0, primal) and abs(resid[0]) <= tol:
            converged = True
            break
        if violation <= inner_tol:
            inner_tol *= 0.1
    return np.append(w, mult), epochs, converged


def fingerprint(X, y, sample_weights, config: ModelConfig) -> str:
    h = hashlib.sha256()
    if sp.issparse(X):
        X = sp.csr_matrix(X)
        for arr in (X.data, X.indices, X.indptr):
            h.update(np.ascontiguousarray(arr).tobytes())
    else:
        h.update(np.ascontiguousarray(X, dtype=float).tobytes())
    h.update(str(X.shape).encode())
    h.update(np.ascontiguousarray(y, dtype=float).tobytes())
    h.update(np.ascontiguousarray(sample_weights, dtype=float).tobytes())
    h.update(repr(sorted(asdict(config).items())).encode())
    return h.hexdigest()[:16]


def _as_matrix(X):
    if sp.issparse(X):
        return sp.csr_matrix(X, dtype=float)
    return np.asarray(X, dtype=float)


def train(X, y, config: ModelConfig = ModelConfig(), sample_weights=None, seed: int = 0) -> TrainedLinearModel:
    """Fit a linear model from the zero vector.

    ``sample_weights`` multiply the class weights implied by
    ``config.class_weighting``. Convergence: gradient infinity-norm at most
    ``tol`` times max(1, initial gradient infinity-norm), or ``max_iters``
    iterations. For hinge loss the convergence test is solver specific, see
    :func:`_hinge_newton` and :func:`_hinge_dual`. ``seed`` only drives the
    coordinate order of the dual solver.
    """
    X = _as_matrix(X)
    y = _signed(y)
    if X.ndim != 2 or y.size != X.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} rows but {y.size} labels")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise SingleClassInput("training labels contain a single class")
    cw = class_weights(y, config.class_weighting)
    if sample_weights is not None:
        sample_weights = np.asarray(sample_weights, dtype=float)
        _check_dims(X, np.zeros(X.shape[1]), y, sample_weights)
        if np.any(sample_weights <= 0):
            raise UsageError("sample weights must be positive")
        cw = cw * sample_weights

    x0 = np.zeros(X.shape[1] + 1)
    if config.loss == "logistic":
        _, g0 = _objective(x0, X, y, cw, config.C, "logistic")
        gtol = config.tol * max(1.0, float(np.max(np.abs(g0))))
        if X.shape[1] <= NEWTON_MAX_DIM:
            x, iters, converged = _logistic_newton(X, y, cw, config.C, gtol, config.max_iters)
        else:
            x, _, _, iters, converged = _lbfgs(
                lambda p: _objective(p, X, y, cw, config.C, "logistic"), x0, gtol, config.max_iters
            )
    else:
        if X.shape[1] <= NEWTON_MAX_DIM:
            x, iters, converged = _hinge_newton(X, y, config.C * cw, config.tol, config.max_iters)
        else:
            x, iters, converged = _hinge_dual(X, y, config.C * cw, config.tol, config.max_iters, seed)
        # keep the origin if the solver never improved on it
        exact = lambda p: _objective(p, X, y, cw, config.C, "hinge")[0]
        if not exact(x) <= exact(x0):
            x = x0
    return TrainedLinearModel(
        weights=x[:-1].copy(),
        bias=float(x[-1]),
        config=config,
        train_fingerprint=fingerprint(X, y, cw, config),
        iterations=iters,
        converged=converged,
    )


def decision_scores(model: TrainedLinearModel, X) -> np.ndarray:
    X = _as_matrix(X)
    _check_dims(X, model.weights)
    return np.asarray(X @ model.weights).ravel() + model.bias


def score_to_probability(score):
    """Logistic link; exact for logistic models, an uncalibrated link for hinge."""
    return expit(score)


# --------------------------------------------------------------------------
# model selection


@dataclass(frozen=True)
class GridResult:
    best: ModelConfig
    losses: tuple  # (config, mean validation log loss) in grid order


def grid_search(train_keys: Sequence, features, effective_labels, grid: Sequence[ModelConfig],
                k: int = 5, seed: int = 0) -> GridResult:
    """Pick the config with the lowest mean validation log loss.

    ``features`` rows are aligned with ``train_keys``. Ties go to the smaller
    C, then to the earlier grid entry.
    """
    grid = list(grid)
    if not grid:
        raise UsageError("empty hyper-parameter grid")
    keys = list(train_keys)
    X = _as_matrix(features)
    if X.shape[0] != len(keys):
        raise DimensionMismatch(f"{X.shape[0]} feature rows for {len(keys)} keys")
    row = {key: i for i, key in enumerate(keys)}
    y = np.array([bool(effective_labels[key]) for key in keys])
    splits = [
        (np.array([row[key] for key in tr]), np.array([row[key] for key in va]))
        for tr, va in inner_cv_splits(keys, effective_labels, k, seed)
    ]
    results = []
    for config in grid:
        fold_losses = []
        for tr, va in splits:
            model = train(X[tr], y[tr], config, seed=seed)
            p = score_to_probability(decision_scores(model, X[va]))
            fold_losses.append(neg_log_loss(p, y[va]))
        results.append((config, float(np.mean(fold_losses))))
    best_i = min(range(len(results)), key=lambda i: (results[i][1], results[i][0].C, i))
    return GridResult(results[best_i][0], tuple(results))


# --------------------------------------------------------------------------
# persistence


def export_model(model: TrainedLinearModel) -> str:
    c = model.config
    lines = [
        f"loss={c.loss}",
        f"C={c.C!r}",
        f"class_weighting={c.class_weighting}",
        f"max_iters={c.max_iters}",
        f"tol={c.tol!r}",
        f"dimensionality={model.dim}",
        f"fingerprint={model.train_fingerprint}",
        f"bias={model.bias!r}",
        "weights:",
    ]
    lines.extend(repr(float(v)) for v in model.weights)
    return "\n".join(lines) + "\n"


def import_model(text: str) -> TrainedLinearModel:
    header, _, body = text.partition("weights:\n")
    meta = dict(line.split("=", 1) for line in header.splitlines() if line)
    weights = np.array([float(v) for v in body.split()], dtype=float)
    if weights.size != int(meta["dimensionality"]):
        raise DimensionMismatch("weight count disagrees with header")
    config = ModelConfig(
        loss=meta["loss"], C=float(meta["C"]), class_weighting=meta["class_weighting"],
        max_iters=int(meta["max_iters"]), tol=float(meta["tol"]),
    )
    return TrainedLinearModel(weights, float(meta["bias"]), config, meta["fingerprint"])
