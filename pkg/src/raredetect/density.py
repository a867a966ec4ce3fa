"""Per-condition Parzen densities in the embedding and presence probabilities.

Two kernel normalizations are supported. The *paper* form uses
``(2 pi)^(-1/2) exp(-||x||^2 / 2)`` for any dimension, exactly as written for
the scalar kernel. The *normalized* form multiplies by
``(2 pi)^(-(d-1)/2) h^(-d)`` so each density integrates to one in ``d``
dimensions. Because positive and negative densities use different
bandwidths, the two forms give different presence probabilities; fitted
models default to the normalized form.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp


class DensityUnderflowWarning(UserWarning):
    """Both densities vanished; the class prior was used instead."""


def scott_bandwidth(count, dim):
    """Scott's rule bandwidth ``count ** (-1 / (dim + 4))``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return float(count) ** (-1.0 / (dim + 4))


def _log_norm(h, dim, normalized):
    if normalized:
        return -0.5 * dim * math.log(2.0 * math.pi) - dim * math.log(h)
    return -0.5 * math.log(2.0 * math.pi)


def density_at(points, h, tau, normalized=False):
    """Parzen estimate at ``tau``: mean of Gaussian kernels of bandwidth ``h``.

    With ``normalized=False`` the kernel is ``(2 pi)^(-1/2) exp(-||x||^2/2)``
    evaluated at ``x = (tau - point) / h``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    tau = np.asarray(tau, dtype=np.float64)
    if len(points) < 1 or h <= 0:
        raise ValueError("need at least one point and h > 0")
    x = (tau - points) / h
    k = np.exp(-0.5 * np.sum(x * x, axis=1))
    return float(math.exp(_log_norm(h, points.shape[1], normalized)) * k.mean())


def log_density(points, h, taus, normalized=True):
    """Log Parzen density at each row of ``taus``; stays finite far from the data."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    taus = np.atleast_2d(np.asarray(taus, dtype=np.float64))
    sq = (
        np.sum(taus * taus, axis=1)[:, None]
        + np.sum(points * points, axis=1)[None, :]
        - 2.0 * taus @ points.T
    )
    np.maximum(sq, 0.0, out=sq)
    return (
        logsumexp(-0.5 * sq / (h * h), axis=1)
        - math.log(len(points))
        + _log_norm(h, points.shape[1], normalized)
    )


def presence_probability(F, F_bar, prior=0.5):
    """``F / (F + F_bar)``; falls back to ``prior`` with a warning when both are zero."""
    if F < 0 or F_bar < 0:
        raise ValueError("densities must be non-negative")
    total = F + F_bar
    if total == 0:
        warnings.warn("both densities are zero; returning the class prior", DensityUnderflowWarning, stacklevel=2)
        return float(prior)
    return float(F / total)


@dataclass(frozen=True)
class ConditionModel:
    index: int
    name: str
    positive_points: np.ndarray
    negative_points: np.ndarray
    h_pos: float
    h_neg: float
    normalized: bool = True
    frequent: bool = False

    @property
    def dim(self):
        return self.positive_points.shape[1]

    @property
    def prior(self):
        n_pos = len(self.positive_points)
        return n_pos / (n_pos + len(self.negative_points))

    def log_densities(self, taus):
        lf = log_density(self.positive_points, self.h_pos, taus, self.normalized)
        lfb = log_density(self.negative_points, self.h_neg, taus, self.normalized)
        return lf, lfb

    def probability(self, taus):
        """Presence probability at each row of ``taus`` and a fallback flag per row.

        Computed as ``F / (F + F_bar)`` in log space, so it is exact where
        the direct ratio would underflow to 0/0.
        """
        lf, lfb = self.log_densities(taus)
        both_zero = np.isneginf(lf) & np.isneginf(lfb)
        with np.errstate(invalid="ignore"):
            q = np.exp(lf - np.logaddexp(lf, lfb))
        q = np.where(both_zero, self.prior, q)
        return np.clip(q, 0.0, 1.0), both_zero

    def to_dict(self):
        return {
            "n": self.index,
            "name": self.name,
            "h_pos": self.h_pos,
            "h_neg": self.h_neg,
            "normalized": self.normalized,
            "frequent": self.frequent,
            "pos": self.positive_points.tolist(),
            "neg": self.negative_points.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            index=int(d["n"]),
            name=d["name"],
            positive_points=np.array(d["pos"], dtype=np.float64),
            negative_points=np.array(d["neg"], dtype=np.float64),
            h_pos=float(d["h_pos"]),
            h_neg=float(d["h_neg"]),
            normalized=bool(d.get("normalized", True)),
            frequent=bool(d.get("frequent", False)),
        )


@dataclass(frozen=True)
class ReferenceProbabilities:
    """Exact presence probabilities at the reference samples.

    ``q`` has one column per fitted condition (``condition_names``); conditions
    that could not be modelled are listed in ``omitted`` with the reason.
    """

    sample_ids: tuple
    condition_names: tuple
    q: np.ndarray
    fallback: np.ndarray = field(repr=False, default=None)
    omitted: tuple = ()

    def write_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["sample_id", *self.condition_names])
            for sid, row in zip(self.sample_ids, self.q):
                writer.writerow([sid, *(repr(float(v)) for v in row)])


def fit_condition_models(embedding, labels, condition_names=None, M=None, normalized=True):
    """Fit positive/negative densities for every condition on the reference embedding.

    Parameters
    ----------
    embedding : NeighborEmbedding or ndarray
        Reference coordinates, one row per reference sample.
    labels : array_like, shape (n, N)
        Binary labels aligned with the embedding rows.
    condition_names : sequence of str, optional
    M : int, optional
        Number of frequent conditions; only recorded on the models.
    normalized : bool
        Kernel normalization, see the module docstring.

    Returns
    -------
    models : list of ConditionModel
    reference : ReferenceProbabilities
    """
    tau = np.asarray(getattr(embedding, "tau", embedding), dtype=np.float64)
    ids = tuple(getattr(embedding, "sample_ids", ()) or (str(i) for i in range(len(tau))))
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.shape[0] != tau.shape[0]:
        raise ValueError("labels must be an (n_reference, N) matrix aligned with the embedding")
    N = labels.shape[1]
    names = tuple(condition_names) if condition_names is not None else tuple(f"c{i + 1}" for i in range(N))
    dim = tau.shape[1]

    models, columns, flags, omitted = [], [], [], []
    for n in range(N):
        pos = labels[:, n] == 1
        n_pos = int(pos.sum())
        n_neg = len(pos) - n_pos
        if n_pos == 0 or n_neg == 0:
            omitted.append((names[n], "no positive reference samples" if n_pos == 0 else "no negative reference samples"))
            continue
        model = ConditionModel(
            index=n,
            name=names[n],
            positive_points=tau[pos].copy(),
            negative_points=tau[~pos].copy(),
            h_pos=scott_bandwidth(n_pos, dim),
            h_neg=scott_bandwidth(n_neg, dim),
            normalized=normalized,
            frequent=M is not None and n < M,
        )
        q, flag = model.probability(tau)
        models.append(model)
        columns.append(q)
        flags.append(flag)

    q = np.column_stack(columns) if columns else np.zeros((len(tau), 0))
    fallback = np.column_stack(flags) if flags else np.zeros((len(tau), 0), dtype=bool)
    reference = ReferenceProbabilities(
        sample_ids=ids,
        condition_names=tuple(m.name for m in models),
        q=q,
        fallback=fallback,
        omitted=tuple(omitted),
    )
    return models, reference
