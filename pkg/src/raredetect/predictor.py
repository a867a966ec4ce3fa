"""Inverse-distance K-NN regression of presence probabilities for unseen samples."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pca import PcaModel, project

ZERO_DISTANCE = 1e-12
TIE_TOLERANCE = 1e-9


class UnstableNeighborsError(ValueError):
    """The K-th and (K+1)-th neighbors are tied, so the gradient is undefined."""


@dataclass(frozen=True)
class Predictor:
    """Deployable scorer: PCA projection plus reference ``(pi, q)`` couples.

    ``pca`` may be ``None``, in which case neighbors are searched directly in
    the input feature space.
    """

    pca: PcaModel
    reference_pi: np.ndarray
    reference_q: np.ndarray
    k: int = 3
    condition_names: tuple = ()
    reference_ids: tuple = ()
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pi = np.asarray(self.reference_pi, dtype=np.float64)
        q = np.asarray(self.reference_q, dtype=np.float64)
        if pi.ndim != 2 or q.ndim != 2 or len(pi) != len(q):
            raise ValueError("reference_pi and reference_q must be 2-D with equal row counts")
        if len(pi) == 0:
            raise ValueError("empty reference set")
        if not 1 <= self.k <= len(pi):
            raise ValueError(f"k must be in [1, {len(pi)}]")
        if np.any((q < 0) | (q > 1)):
            raise ValueError("reference probabilities must lie in [0, 1]")
        if self.condition_names and len(self.condition_names) != q.shape[1]:
            raise ValueError("condition_names does not match reference_q columns")
        object.__setattr__(self, "reference_pi", pi)
        object.__setattr__(self, "reference_q", q)
        object.__setattr__(self, "condition_names", tuple(self.condition_names))
        object.__setattr__(self, "reference_ids", tuple(self.reference_ids))

    @property
    def n_features(self):
        return self.pca.p if self.pca is not None else self.reference_pi.shape[1]

    def _project(self, gamma):
        gamma = np.asarray(gamma, dtype=np.float64)
        if gamma.shape[-1] != self.n_features:
            raise ValueError(f"expected vectors of length {self.n_features}, got {gamma.shape[-1]}")
        return project(self.pca, gamma) if self.pca is not None else gamma

    def to_dict(self):
        return {
            "pca": self.pca.to_dict() if self.pca is not None else None,
            "k": self.k,
            "condition_names": list(self.condition_names),
            "reference_ids": list(self.reference_ids),
            "reference_pi": self.reference_pi.tolist(),
            "reference_q": self.reference_q.tolist(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            pca=PcaModel.from_dict(d["pca"]) if d.get("pca") else None,
            reference_pi=np.array(d["reference_pi"], dtype=np.float64),
            reference_q=np.array(d["reference_q"], dtype=np.float64),
            k=int(d["k"]),
            condition_names=tuple(d.get("condition_names", ())),
            reference_ids=tuple(d.get("reference_ids", ())),
            metadata=d.get("metadata", {}),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def condition_index(self, name):
        try:
            return self.condition_names.index(name)
        except ValueError:
            raise KeyError(f"unknown condition {name!r}") from None


def _neighbors(ref, pi, k):
    """Indices (sorted by distance, ties by row index) and distances of the k nearest rows."""
    d = np.sqrt(np.sum((ref - pi) ** 2, axis=1))
    order = np.lexsort((np.arange(len(d)), d))
    return order, d


def _regress(q_ref, dist):
    zero = dist < ZERO_DISTANCE
    if zero.any():
        return q_ref[zero].mean(axis=0)
    w = 1.0 / dist
    return (w @ q_ref) / w.sum()


def predict(predictor, gamma):
    """Presence probabilities for every condition at feature vector ``gamma``.

    The K nearest references in the projected space are averaged with
    weights ``1 / distance``. References at (numerically) zero distance take
    over the prediction: their plain mean is returned.
    """
    pi = predictor._project(gamma)
    if pi.ndim != 1:
        raise ValueError("predict takes one vector; use predict_batch for matrices")
    order, d = _neighbors(predictor.reference_pi, pi, predictor.k)
    nn = order[: predictor.k]
    return _regress(predictor.reference_q[nn], d[nn])


def predict_batch(predictor, matrix):
    """Row-wise :func:`predict`; results are identical to individual calls."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    out = np.empty((len(matrix), predictor.reference_q.shape[1]))
    for i, row in enumerate(matrix):
        out[i] = predict(predictor, row)
    return out


def prediction_gradient(predictor, gamma, n):
    """Gradient of the predicted probability for condition ``n`` w.r.t. ``gamma``.

    The neighbor set is held fixed. The gradient is chained through the
    linear projection, so directions orthogonal to every component get zero.

    Raises
    ------
    UnstableNeighborsError
        If the K-th and (K+1)-th neighbors are within ``TIE_TOLERANCE``.
    ValueError
        If a neighbor sits at zero distance, where the weights are singular.
    """
    if isinstance(n, str):
        n = predictor.condition_index(n)
    pi = predictor._project(gamma)
    k = predictor.k
    order, d = _neighbors(predictor.reference_pi, pi, k)
    if len(order) > k and d[order[k]] - d[order[k - 1]] <= TIE_TOLERANCE:
        tied = [int(i) for i in order if abs(d[i] - d[order[k - 1]]) <= TIE_TOLERANCE]
        raise UnstableNeighborsError(f"neighbor set is unstable: references {tied} are tied at the K-th distance")
    nn = order[:k]
    dist = d[nn]
    if np.any(dist < ZERO_DISTANCE):
        raise ValueError("gradient undefined: a neighbor lies at zero distance")

    q = predictor.reference_q[nn, n]
    w = 1.0 / dist
    W = w.sum()
    q_hat = (w @ q) / W
    offsets = pi - predictor.reference_pi[nn]
    # d(1/d_k)/d(pi) = -(pi - pi_k) / d_k^3
    dw = -offsets / (dist**3)[:, None]
    grad_pi = ((q - q_hat) @ dw) / W
    if predictor.pca is None:
        return grad_pi
    return grad_pi @ predictor.pca.components
