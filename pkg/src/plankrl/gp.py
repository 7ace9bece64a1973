"""Gaussian-process regression with a squared-exponential ARD kernel.

One ``GpModel`` is a plain immutable value: training inputs, targets,
hyperparameters and the precomputed Cholesky factor / weight vector it
needs to answer posterior queries.  Hyperparameters are fit by minimizing
the negative log marginal likelihood in log-parameter space with L-BFGS-B
and multiple restarts.

Conventions:

* the prior mean is zero;
* the noise parameter enters the Gram diagonal as a variance
  (``noise_std ** 2``), plus a jitter of ``1e-8 * signal_std**2`` that is
  escalated tenfold (up to ``1e-2 * signal_std**2``) if the factorization
  fails;
* an empty model (no training rows) is a valid prior and predicts
  ``(0, signal_std**2)`` everywhere.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.spatial.distance import cdist

from .errors import ContractViolationError, FittingFailedError, IllConditionedKernelError

JITTER_BASE = 1e-8
JITTER_MAX = 1e-2
DEFAULT_MAX_POINTS = 600
DEFAULT_RESTARTS = 4

SERIAL_VERSION = "gpmodel-v1"


@dataclass(frozen=True)
class Hyperparams:
    """SE-ARD kernel hyperparameters.

    ``lengthscales`` holds one positive scale per input dimension,
    ``signal_std`` the prior standard deviation of the latent function and
    ``noise_std`` the observation noise standard deviation (0 is allowed,
    the jitter floor then carries the conditioning).
    """

    lengthscales: np.ndarray
    signal_std: float
    noise_std: float

    def __post_init__(self):
        ls = np.asarray(self.lengthscales, dtype=float).reshape(-1)
        object.__setattr__(self, "lengthscales", ls)
        if ls.size == 0 or np.any(ls <= 0) or not np.all(np.isfinite(ls)):
            raise ContractViolationError("lengthscales must be finite and strictly positive")
        if not (self.signal_std > 0 and np.isfinite(self.signal_std)):
            raise ContractViolationError("signal_std must be finite and strictly positive")
        if not (self.noise_std >= 0 and np.isfinite(self.noise_std)):
            raise ContractViolationError("noise_std must be finite and non-negative")

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    def to_log_vector(self) -> np.ndarray:
        """Pack as [log lengthscales..., log signal_std, log noise_std]."""
        noise = max(self.noise_std, 1e-12)
        return np.concatenate([np.log(self.lengthscales), [np.log(self.signal_std), np.log(noise)]])

    @classmethod
    def from_log_vector(cls, v: np.ndarray) -> "Hyperparams":
        v = np.asarray(v, dtype=float)
        return cls(np.exp(v[:-2]), float(np.exp(v[-2])), float(np.exp(v[-1])))


def kernel_eval(x, x2, hyper: Hyperparams) -> float:
    """SE-ARD covariance between two input vectors."""
    x = np.asarray(x, dtype=float).reshape(-1)
    x2 = np.asarray(x2, dtype=float).reshape(-1)
    if x.size != hyper.dim or x2.size != hyper.dim:
        raise ContractViolationError(
            f"kernel input dimension {x.size}/{x2.size} does not match hyperparameters ({hyper.dim})"
        )
    r = (x - x2) / hyper.lengthscales
    return hyper.signal_std**2 * float(np.exp(-0.5 * np.dot(r, r)))


def kernel_matrix(X, X2, hyper: Hyperparams) -> np.ndarray:
    """Noise-free covariance matrix between the rows of X (N,D) and X2 (M,D)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if X.shape[1] != hyper.dim or X2.shape[1] != hyper.dim:
        raise ContractViolationError("kernel matrix input dimension mismatch")
    if X.shape[0] == 0 or X2.shape[0] == 0:
        return np.zeros((X.shape[0], X2.shape[0]))
    return _kernel_from_scaled(X / hyper.lengthscales, X2 / hyper.lengthscales, hyper.signal_std)


def _kernel_from_scaled(Xs: np.ndarray, Xs2: np.ndarray, signal_std: float) -> np.ndarray:
    return signal_std**2 * np.exp(-0.5 * cdist(Xs, Xs2, "sqeuclidean"))


def _gram_cholesky(X: np.ndarray, hyper: Hyperparams):
    """Cholesky of K + (noise_std^2 + jitter) I with jitter escalation.

    Returns (L, K_noise_free, jitter_used).
    """
    K = kernel_matrix(X, X, hyper)
    n = K.shape[0]
    sigma2 = hyper.noise_std**2
    jitter = JITTER_BASE * hyper.signal_std**2
    jitter_cap = JITTER_MAX * hyper.signal_std**2
    while True:
        Ky = K + (sigma2 + jitter) * np.eye(n)
        try:
            L = scipy.linalg.cholesky(Ky, lower=True)
        except scipy.linalg.LinAlgError:
            L = None
        if L is not None and np.all(np.isfinite(L)):
            return L, K, jitter
        if jitter >= jitter_cap:
            raise IllConditionedKernelError(
                f"Gram factorization failed at jitter {jitter:.3e} (n={n}, "
                f"signal_std={hyper.signal_std:.3e}, noise_std={hyper.noise_std:.3e})"
            )
        jitter *= 10.0


@dataclass(frozen=True)
class GpModel:
    """A trained SE-ARD Gaussian process (immutable).

    ``alpha`` is ``(K + noise^2 I)^{-1} targets`` and ``chol`` the lower
    Cholesky factor of the noisy Gram matrix; both are precomputed so that
    posterior queries are cheap and repeatable.
    """

    inputs: np.ndarray
    targets: np.ndarray
    hyper: Hyperparams
    alpha: np.ndarray
    chol: np.ndarray
    jitter: float
    max_points: int = DEFAULT_MAX_POINTS
    inputs_scaled: np.ndarray | None = None  # inputs / lengthscales, cached for queries

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.hyper.dim

    @classmethod
    def prior(cls, hyper: Hyperparams, max_points: int = DEFAULT_MAX_POINTS) -> "GpModel":
        """Empty model: zero-mean prior with the given hyperparameters."""
        d = hyper.dim
        return cls(
            inputs=np.zeros((0, d)),
            targets=np.zeros(0),
            hyper=hyper,
            alpha=np.zeros(0),
            chol=np.zeros((0, 0)),
            jitter=JITTER_BASE * hyper.signal_std**2,
            max_points=max_points,
        )

    @classmethod
    def build(cls, inputs, targets, hyper: Hyperparams, max_points: int = DEFAULT_MAX_POINTS) -> "GpModel":
        """Factorize and cache solves for the given dataset (no fitting)."""
        X = np.atleast_2d(np.asarray(inputs, dtype=float))
        y = np.asarray(targets, dtype=float).reshape(-1)
        if X.shape[0] != y.size:
            raise ContractViolationError("inputs/targets row count mismatch")
        if X.shape[0] == 0:
            return cls.prior(hyper, max_points)
        if X.shape[1] != hyper.dim:
            raise ContractViolationError("input dimension does not match hyperparameters")
        if X.shape[0] > max_points:
            # Anchor the oldest third and slide the rest: a pure recency
            # window forgets the early exploration coverage, which wrecks
            # value estimates wherever the current policy no longer roams.
            anchor = max_points // 3
            recent = max_points - anchor
            keep = np.concatenate([np.arange(anchor), np.arange(X.shape[0] - recent, X.shape[0])])
            X = X[keep]
            y = y[keep]
        L, _, jitter = _gram_cholesky(X, hyper)
        alpha = scipy.linalg.cho_solve((L, True), y)
        return cls(
            inputs=X,
            targets=y,
            hyper=hyper,
            alpha=alpha,
            chol=L,
            jitter=jitter,
            max_points=max_points,
            inputs_scaled=X / hyper.lengthscales,
        )


def posterior(model: GpModel, x) -> tuple[float, float]:
    """Posterior mean and variance at a single query point."""
    mean, var = posterior_batch(model, np.asarray(x, dtype=float).reshape(1, -1))
    return float(mean[0]), float(var[0])


def posterior_batch(model: GpModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance at each row of X (M,D).

    Variances are clipped to [0, signal_std^2]; the upper end is the prior
    variance and the lower end absorbs round-off from the solve.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    sf2 = model.hyper.signal_std**2
    if X.shape[1] != model.dim:
        raise ContractViolationError("query dimension does not match model")
    if model.n == 0:
        m = X.shape[0]
        return np.zeros(m), np.full(m, sf2)
    scaled = model.inputs_scaled
    if scaled is None:
        scaled = model.inputs / model.hyper.lengthscales
    ks = _kernel_from_scaled(scaled, X / model.hyper.lengthscales, model.hyper.signal_std)
    mean = ks.T @ model.alpha
    v = scipy.linalg.solve_triangular(model.chol, ks, lower=True)
    var = sf2 - np.einsum("nm,nm->m", v, v)
    return mean, np.clip(var, 0.0, sf2)


def add_observations(model: GpModel, new_inputs, new_targets) -> GpModel:
    """Extend the training set, keeping hyperparameters fixed.

    Equivalent to rebuilding on the concatenated dataset; when the total
    exceeds ``max_points``, the oldest third is anchored and the rest is a
    recency window (see GpModel.build).
    """
    Xn = np.asarray(new_inputs, dtype=float)
    if Xn.size == 0:
        return model
    Xn = np.atleast_2d(Xn)
    yn = np.asarray(new_targets, dtype=float).reshape(-1)
    if Xn.shape[1] != model.dim:
        raise ContractViolationError("new input dimension does not match model")
    if Xn.shape[0] != yn.size:
        raise ContractViolationError("new inputs/targets row count mismatch")
    X = np.vstack([model.inputs, Xn]) if model.n else Xn
    y = np.concatenate([model.targets, yn]) if model.n else yn
    return GpModel.build(X, y, model.hyper, max_points=model.max_points)


def replace_observation(model: GpModel, row: int, target: float) -> GpModel:
    """Overwrite one training target and refresh the cached solves."""
    y = model.targets.copy()
    y[row] = target
    alpha = scipy.linalg.cho_solve((model.chol, True), y)
    return replace(model, targets=y, alpha=alpha)


def negative_log_marginal_likelihood(inputs, targets, hyper: Hyperparams) -> tuple[float, np.ndarray]:
    """NLL of the data under the GP prior, with its gradient.

    The gradient is taken with respect to the log-hyperparameter vector
    [log lengthscales..., log signal_std, log noise_std].
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).reshape(-1)
    n = y.size
    if n < 1:
        raise ContractViolationError("NLL needs at least one observation")
    L, K, _ = _gram_cholesky(X, hyper)
    alpha = scipy.linalg.cho_solve((L, True), y)
    nll = 0.5 * float(y @ alpha) + float(np.sum(np.log(np.diag(L)))) + 0.5 * n * np.log(2 * np.pi)

    # A = d(NLL)/dK, so each partial is sum(A * dK/dtheta).
    Kinv = scipy.linalg.cho_solve((L, True), np.eye(n))
    A = 0.5 * (Kinv - np.outer(alpha, alpha))
    grad = np.empty(hyper.dim + 2)
    Xs = X / hyper.lengthscales
    AK = A * K
    for d in range(hyper.dim):
        sq = np.subtract.outer(Xs[:, d], Xs[:, d]) ** 2
        grad[d] = np.sum(AK * sq)
    grad[hyper.dim] = 2.0 * np.sum(AK)
    grad[hyper.dim + 1] = 2.0 * hyper.noise_std**2 * np.trace(A)
    return nll, grad


def _initial_hyper_heuristic(X: np.ndarray, y: np.ndarray) -> Hyperparams:
    """Data-scale initialization: lengthscales from input spread, signal from target spread."""
    ls = np.std(X, axis=0)
    ls = np.where(ls > 1e-3, ls, 1.0)
    sf = float(np.std(y))
    if not sf > 1e-6:
        sf = 1.0
    return Hyperparams(ls, sf, 0.1 * sf)


def fit(
    inputs,
    targets,
    init: Hyperparams | None = None,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    max_points: int = DEFAULT_MAX_POINTS,
    maxiter: int = 200,
    noise_floor: float = 0.01,
) -> GpModel:
    """Fit hyperparameters by multi-restart NLL minimization and build the model.

    The first restart starts exactly at ``init``; the rest perturb it
    log-uniformly.  The restart with the lowest final NLL wins, so the
    result is deterministic in (data, init, restarts, seed).  noise_floor
    bounds the fitted noise_std from below as a fraction of the target
    spread; callers fitting intrinsically noisy targets should raise it,
    since a near-zero noise solution turns the GP into an erratic
    interpolator.
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).reshape(-1)
    if X.shape[0] != y.size:
        raise ContractViolationError("inputs/targets row count mismatch")
    if X.shape[0] < 2:
        raise ContractViolationError("fitting needs at least two observations")
    if restarts < 1:
        raise ContractViolationError("restarts must be >= 1")
    if X.shape[0] > max_points:
        X = X[-max_points:]
        y = y[-max_points:]
    if init is None:
        init = _initial_hyper_heuristic(X, y)
    if init.dim != X.shape[1]:
        raise ContractViolationError("init hyperparameter dimension does not match data")

    v0 = init.to_log_vector()
    # Data-driven box keeps the optimizer away from the degenerate
    # delta-kernel solution (all lengthscales at some tiny floor, data
    # explained as iid noise) that plain NLL often falls into.
    x_scale = np.maximum(np.std(X, axis=0), 1e-3)
    y_scale = max(float(np.std(y)), 0.1 * float(np.mean(np.abs(y))), 1e-6)
    bounds = [(np.log(0.05 * s), np.log(1e2 * s)) for s in x_scale]
    bounds.append((np.log(0.05 * y_scale), np.log(20.0 * y_scale)))
    bounds.append((np.log(max(noise_floor, 1e-5) * y_scale), np.log(2.0 * y_scale)))
    v0 = np.clip(v0, [b[0] for b in bounds], [b[1] for b in bounds])

    def objective(v):
        try:
            nll, grad = negative_log_marginal_likelihood(X, y, Hyperparams.from_log_vector(v))
        except IllConditionedKernelError:
            return np.inf, np.zeros_like(v)
        if not np.isfinite(nll):
            return np.inf, np.zeros_like(v)
        return nll, grad

    rng = np.random.default_rng(seed)
    best_v, best_nll = None, np.inf
    failures = []
    for r in range(restarts):
        start = v0 if r == 0 else v0 + rng.uniform(-1.0, 1.0, size=v0.size)
        start = np.clip(start, [b[0] for b in bounds], [b[1] for b in bounds])
        if not np.isfinite(objective(start)[0]):
            failures.append(f"restart {r}: infeasible start")
            continue
        res = scipy.optimize.minimize(
            objective, start, jac=True, method="L-BFGS-B", bounds=bounds, options={"maxiter": maxiter}
        )
        if np.isfinite(res.fun) and res.fun < best_nll:
            best_nll, best_v = float(res.fun), res.x.copy()
    if best_v is None:
        raise FittingFailedError(f"all {restarts} restarts failed: {failures}")
    return GpModel.build(X, y, Hyperparams.from_log_vector(best_v), max_points=max_points)


def _fmt(x: float) -> str:
    return repr(float(x))


def save_text(model: GpModel, stream: io.TextIOBase | None = None) -> str:
    """Serialize to the versioned field-tagged text format (see README)."""
    out = io.StringIO()
    out.write(f"{SERIAL_VERSION}\n")
    out.write(f"dim {model.dim}\n")
    out.write(f"n {model.n}\n")
    out.write(f"max_points {model.max_points}\n")
    out.write("lengthscales " + " ".join(_fmt(v) for v in model.hyper.lengthscales) + "\n")
    out.write(f"signal_std {_fmt(model.hyper.signal_std)}\n")
    out.write(f"noise_std {_fmt(model.hyper.noise_std)}\n")
    for i in range(model.n):
        row = " ".join(_fmt(v) for v in model.inputs[i])
        out.write(f"row {row} | {_fmt(model.targets[i])}\n")
    text = out.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def load_text(text: str) -> GpModel:
    """Parse the text format and rebuild the cached solves."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != SERIAL_VERSION:
        got = lines[0].strip() if lines else "<empty>"
        raise ContractViolationError(f"unknown gp model format: expected {SERIAL_VERSION!r}, got {got!r}")
    fields = {}
    rows = []
    for ln in lines[1:]:
        key, _, rest = ln.partition(" ")
        if key == "row":
            xs, _, t = rest.partition("|")
            rows.append((np.array([float(v) for v in xs.split()]), float(t)))
        else:
            fields[key] = rest.strip()
    dim = int(fields["dim"])
    n = int(fields["n"])
    hyper = Hyperparams(
        np.array([float(v) for v in fields["lengthscales"].split()]),
        float(fields["signal_std"]),
        float(fields["noise_std"]),
    )
    if hyper.dim != dim:
        raise ContractViolationError("lengthscale count does not match dim")
    if len(rows) != n:
        raise ContractViolationError(f"expected {n} rows, found {len(rows)}")
    if n == 0:
        return GpModel.prior(hyper, max_points=int(fields["max_points"]))
    X = np.vstack([r[0] for r in rows])
    y = np.array([r[1] for r in rows])
    if X.shape[1] != dim:
        raise ContractViolationError("row width does not match dim")
    return GpModel.build(X, y, hyper, max_points=int(fields["max_points"]))
