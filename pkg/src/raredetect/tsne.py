"""Exact stochastic neighbor embedding with perplexity-calibrated bandwidths.

Two output kernels are available. ``student_t`` is the usual t-SNE
objective (symmetrized joint input probabilities, heavy-tailed output
kernel). ``paper_sne`` keeps per-sample conditional distributions on both
sides and uses a Gaussian output kernel with fixed bandwidth ``1/sqrt(2)``,
so the output similarity is ``exp(-||tau_i - tau_j||^2)``.
"""

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from ._random import make_rng

VARIANTS = ("student_t", "paper_sne")

# The Gaussian output kernel has unbounded linear attraction; with early
# exaggeration, steps above ~0.05 oscillate and diverge. Row-normalized
# conditionals make that bound independent of the sample count.
DEFAULT_LEARNING_RATES = {"student_t": 200.0, "paper_sne": 0.01}

PERPLEXITY_RTOL = 1e-4
MAX_BISECTIONS = 100
# calibration stops well inside the advertised tolerance
_SEARCH_RTOL = 1e-6


class CalibrationWarning(UserWarning):
    """A bandwidth could not be calibrated to the requested perplexity."""


class TsneDivergenceError(RuntimeError):
    def __init__(self, iteration, cost_trace):
        super().__init__(f"non-finite values at iteration {iteration}; last costs {cost_trace[-5:]}")
        self.iteration = iteration
        self.cost_trace = cost_trace


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    output_dim: int = 2
    iterations: int = 1000
    learning_rate: float = None
    momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch: int = 250
    early_exaggeration: float = 12.0
    exaggeration_iterations: int = 250
    kernel_variant: str = "student_t"
    init_std: float = 1e-4
    min_gain: float = 0.01
    method: str = "exact"
    seed: int = 0

    def validate(self, n_samples=None):
        if self.kernel_variant not in VARIANTS:
            raise ValueError(f"kernel_variant must be one of {VARIANTS}")
        if self.method != "exact":
            raise ValueError("only the exact O(n^2) method is implemented")
        if self.perplexity <= 0:
            raise ValueError("perplexity must be positive")
        if self.output_dim < 1:
            raise ValueError("output_dim must be >= 1")
        if self.iterations < 1 or self.effective_learning_rate <= 0:
            raise ValueError("iterations and learning_rate must be positive")
        if n_samples is not None and self.perplexity >= n_samples - 1:
            raise ValueError(
                f"perplexity {self.perplexity} must be below the neighbor count {n_samples - 1}"
            )

    @property
    def effective_learning_rate(self):
        if self.learning_rate is not None:
            return self.learning_rate
        return DEFAULT_LEARNING_RATES[self.kernel_variant]

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class NeighborEmbedding:
    tau: np.ndarray
    bandwidths: np.ndarray
    final_cost: float
    initial_cost: float
    config: TsneConfig
    sample_ids: tuple = ()
    cost_trace: tuple = field(default=(), repr=False)

    def sidecar(self):
        """JSON-ready metadata written next to the coordinate CSV."""
        return {
            "config": self.config.to_dict(),
            "sample_ids": list(self.sample_ids),
            "bandwidths": self.bandwidths.tolist(),
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "cost_trace": [list(t) for t in self.cost_trace],
        }

    def sidecar_json(self):
        return json.dumps(self.sidecar(), indent=1)


def _entropy_and_rows(sq, beta):
    """Row distributions ``exp(-beta * sq)`` normalized, and their entropy in nats.

    ``sq`` must be shifted so each row's minimum is 0, which keeps the
    normalizer >= 1.
    """
    w = np.exp(-sq * beta[:, None])
    z = w.sum(axis=1)
    p = w / z[:, None]
    h = np.log(z) + beta * (sq * p).sum(axis=1)
    return h, p


def _calibrate_rows(sq_dists, perplexity):
    """Vectorized bisection on the precision ``beta = 1 / (2 h^2)`` per row.

    Returns ``(h, rows, failed, zero)``: ``failed`` flags rows whose target
    perplexity was not reached, ``zero`` rows whose distances are all zero.
    """
    sq = np.asarray(sq_dists, dtype=np.float64)
    r, m = sq.shape
    shifted = sq - sq.min(axis=1, keepdims=True)
    target = np.log(perplexity)
    tol = _SEARCH_RTOL * perplexity

    # rows equidistant up to rounding are uniform for every bandwidth
    flat = shifted.max(axis=1) <= 1e-12 * sq.max(axis=1)
    shifted[flat] = 0.0
    spread = shifted.mean(axis=1)
    beta = np.where(flat, 0.5, 1.0 / np.where(flat, 1.0, spread))
    lo = np.zeros(r)
    hi = np.full(r, np.inf)
    done = flat.copy()

    for _ in range(MAX_BISECTIONS):
        active = ~done
        if not active.any():
            break
        h, _ = _entropy_and_rows(shifted[active], beta[active])
        perp = np.exp(h)
        idx = np.flatnonzero(active)
        ok = np.abs(perp - perplexity) <= tol
        done[idx[ok]] = True
        # entropy too high -> distribution too flat -> increase beta
        up = (h > target) & ~ok
        down = (h < target) & ~ok
        iu, idn = idx[up], idx[down]
        lo[iu] = beta[iu]
        beta[iu] = np.where(np.isinf(hi[iu]), beta[iu] * 2.0, np.sqrt(beta[iu] * hi[iu]))
        hi[idn] = beta[idn]
        beta[idn] = np.where(lo[idn] == 0, beta[idn] / 2.0, np.sqrt(beta[idn] * lo[idn]))

    h_nats, rows = _entropy_and_rows(shifted, beta)
    failed = np.abs(np.exp(h_nats) - perplexity) > PERPLEXITY_RTOL * perplexity
    zero = flat & (sq.max(axis=1) == 0)
    bandwidth = 1.0 / np.sqrt(2.0 * beta)
    bandwidth[zero] = 1.0
    return bandwidth, rows, failed, zero


def _check_perplexity(perplexity, m):
    if m < 2:
        raise ValueError("need at least 2 neighbors")
    if not perplexity < m:
        raise ValueError(f"perplexity {perplexity} must be below the neighbor count {m}")
    if perplexity <= 0:
        raise ValueError("perplexity must be positive")


def calibrate_bandwidth(squared_distances, perplexity):
    """Find the Gaussian bandwidth whose neighbor distribution has the target perplexity.

    Parameters
    ----------
    squared_distances : array_like, shape (m,)
        Squared distances from one sample to each of its ``m`` candidate
        neighbors (the sample itself excluded).
    perplexity : float
        Target effective number of neighbors, ``< m``.

    Returns
    -------
    h : float
        Bandwidth of the kernel ``exp(-d^2 / (2 h^2))``.
    p_row : ndarray, shape (m,)
        Neighbor probabilities at ``h``.
    """
    sq = np.asarray(squared_distances, dtype=np.float64)
    if sq.ndim != 1:
        raise ValueError("squared_distances must be 1-D")
    if not np.all(np.isfinite(sq)) or np.any(sq < 0):
        raise ValueError("squared distances must be finite and non-negative")
    _check_perplexity(perplexity, len(sq))
    h, rows, failed, zero = _calibrate_rows(sq[None, :], perplexity)
    if zero[0]:
        warnings.warn("all distances are zero; using a uniform row with h=1", CalibrationWarning, stacklevel=2)
    elif failed[0]:
        warnings.warn(
            f"perplexity {perplexity} unreachable; returning the boundary row", CalibrationWarning, stacklevel=2
        )
    return float(h[0]), rows[0]


def _off_diagonal(square):
    n = square.shape[0]
    return square[~np.eye(n, dtype=bool)].reshape(n, n - 1)


def _conditionals(pi, perplexity):
    pi = np.asarray(pi, dtype=np.float64)
    if pi.ndim != 2:
        raise ValueError("pi must be 2-D")
    n = pi.shape[0]
    if n < 3:
        raise ValueError("need at least 3 samples")
    _check_perplexity(perplexity, n - 1)
    sq = cdist(pi, pi, "sqeuclidean")
    h, rows, failed, zero = _calibrate_rows(_off_diagonal(sq), perplexity)
    if zero.any():
        warnings.warn(f"{int(zero.sum())} rows with all-zero distances set uniform", CalibrationWarning, stacklevel=3)
    if (failed & ~zero).any():
        warnings.warn(
            f"perplexity {perplexity} unreachable for {int((failed & ~zero).sum())} rows",
            CalibrationWarning,
            stacklevel=3,
        )
    P = np.zeros((n, n))
    P[~np.eye(n, dtype=bool)] = rows.ravel()
    return P, h


def conditional_matrix(pi, perplexity):
    """Perplexity-calibrated conditional neighbor probabilities ``P[i, j] = p(j | i)``.

    Rows sum to one and the diagonal is zero.
    """
    return _conditionals(pi, perplexity)[0]


def _sq_dist(tau):
    s = np.sum(tau * tau, axis=1)
    d = s[:, None] + s[None, :] - 2.0 * (tau @ tau.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def _sne_log_q(tau):
    n = tau.shape[0]
    logits = -cdist(tau, tau, "sqeuclidean")
    np.fill_diagonal(logits, -np.inf)
    mx = logits.max(axis=1, keepdims=True)
    log_z = mx + np.log(np.exp(logits - mx).sum(axis=1, keepdims=True))
    log_q = logits - log_z
    return log_q, n


def _joint_p(P_rows):
    n = P_rows.shape[0]
    return (P_rows + P_rows.T) / (2.0 * n)


def _student_w(tau):
    w = 1.0 / (1.0 + _sq_dist(tau))
    np.fill_diagonal(w, 0.0)
    return w


def _kl(p, log_q):
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - log_q[mask])))


def tsne_cost(P_rows, tau, kernel_variant="student_t"):
    """KL objective for output coordinates ``tau`` given input conditionals ``P_rows``.

    ``paper_sne`` returns the sum over samples of KL(P_i || Q_i) with Gaussian
    output conditionals; ``student_t`` returns KL(p || q) between the
    symmetrized joint input distribution and the Student-t joint output
    distribution. Zero-probability input terms contribute nothing.
    """
    P_rows = np.asarray(P_rows, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if kernel_variant == "paper_sne":
        log_q, _ = _sne_log_q(tau)
        return _kl(P_rows, log_q)
    if kernel_variant == "student_t":
        w = _student_w(tau)
        with np.errstate(divide="ignore"):
            log_q = np.log(w) - np.log(w.sum())
        return _kl(_joint_p(P_rows), log_q)
    raise ValueError(f"unknown kernel_variant {kernel_variant!r}")


def _grad_from_weights(S, tau, scale):
    return scale * (S.sum(axis=1)[:, None] * tau - S @ tau)


def tsne_gradient(P_rows, tau, kernel_variant="student_t", exaggeration=1.0):
    """Gradient of :func:`tsne_cost` with respect to ``tau``.

    With ``exaggeration != 1`` the input probabilities are scaled inside the
    attraction term only, which is how early exaggeration is applied.
    """
    P_rows = np.asarray(P_rows, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if kernel_variant == "paper_sne":
        log_q, _ = _sne_log_q(tau)
        M = exaggeration * P_rows - np.exp(log_q)
        return _grad_from_weights(M + M.T, tau, 2.0)
    if kernel_variant == "student_t":
        w = _student_w(tau)
        q = w / w.sum()
        S = (exaggeration * _joint_p(P_rows) - q) * w
        return _grad_from_weights(S, tau, 4.0)
    raise ValueError(f"unknown kernel_variant {kernel_variant!r}")


def fit_tsne(pi, config=None, sample_ids=None):
    """Embed the rows of ``pi`` by gradient descent on :func:`tsne_cost`.

    Uses the standard recipe: Gaussian initialization with small spread,
    early exaggeration, a momentum switch and per-coordinate adaptive gains.
    The run is fully determined by ``config.seed``.
    """
    config = config or TsneConfig()
    pi = np.asarray(pi, dtype=np.float64)
    n = pi.shape[0]
    if n < 5:
        raise ValueError("need at least 5 samples")
    config.validate(n)

    P, bandwidths = _conditionals(pi, config.perplexity)
    variant = config.kernel_variant
    learning_rate = config.effective_learning_rate
    rng = make_rng(config.seed)
    Y = rng.normal(0.0, config.init_std, size=(n, config.output_dim))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)

    initial_cost = tsne_cost(P, Y, variant)
    trace = [(0, initial_cost)]
    for it in range(config.iterations):
        exaggerate = it < config.exaggeration_iterations
        alpha = config.early_exaggeration if exaggerate else 1.0
        momentum = config.momentum if it < config.momentum_switch else config.final_momentum

        grad = tsne_gradient(P, Y, variant, exaggeration=alpha)
        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, config.min_gain, out=gains)
        update = momentum * update - learning_rate * gains * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)

        if not np.all(np.isfinite(Y)):
            raise TsneDivergenceError(it + 1, trace)
        if (it + 1) % 50 == 0 or it + 1 == config.iterations:
            cost = tsne_cost(P, Y, variant)
            trace.append((it + 1, cost))
            if not np.isfinite(cost):
                raise TsneDivergenceError(it + 1, trace)

    final_cost = trace[-1][1]
    ids = tuple(sample_ids) if sample_ids is not None else tuple(str(i) for i in range(n))
    Y.setflags(write=False)
    return NeighborEmbedding(
        tau=Y,
        bandwidths=bandwidths,
        final_cost=float(final_cost),
        initial_cost=float(initial_cost),
        config=config,
        sample_ids=ids,
        cost_trace=tuple(trace),
    )
