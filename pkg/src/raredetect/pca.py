"""Principal component reduction of the feature space."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class PcaModel:
    """Mean and orthonormal component rows (descending eigenvalue order)."""

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    warnings: tuple = field(default=(), compare=False)

    @property
    def p(self):
        return self.components.shape[1]

    @property
    def p_prime(self):
        return self.components.shape[0]

    def to_dict(self):
        return {
            "p": int(self.p),
            "p_prime": int(self.p_prime),
            "mean": self.mean.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "components": self.components.tolist(),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d):
        components = np.array(d["components"], dtype=np.float64).reshape(d["p_prime"], d["p"])
        return cls(
            mean=np.array(d["mean"], dtype=np.float64),
            components=components,
            eigenvalues=np.array(d["eigenvalues"], dtype=np.float64),
            warnings=tuple(d.get("warnings", ())),
        )

    def save(self, path):
        # json writes floats with repr(), which round-trips doubles exactly
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_pca(matrix, n_components):
    """Fit the top ``n_components`` principal axes of ``matrix``.

    Eigenvalues are those of the sample covariance (divisor ``n - 1``),
    obtained from the SVD of the centered data. Each component is signed so
    that its largest-magnitude entry is positive. Requests beyond
    ``min(P, n)`` are clamped and the clamp is recorded in ``warnings``.
    """
    X = np.asarray(matrix, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("matrix must be 2-D")
    n, p = X.shape
    if n < 2:
        raise ValueError("need at least 2 samples to fit PCA")
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    notes = []
    limit = min(p, n)
    if n_components > limit:
        notes.append(f"requested {n_components} components, clamped to {limit}")
        n_components = limit

    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    eigenvalues = s**2 / (n - 1)
    components = vt[:n_components].copy()
    eigenvalues = eigenvalues[:n_components].copy()
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(len(components)), idx])
    signs[signs == 0] = 1.0
    components *= signs[:, None]
    eigenvalues = np.maximum(eigenvalues, 0.0)
    for a in (mean, components, eigenvalues):
        a.setflags(write=False)
    return PcaModel(mean=mean, components=components, eigenvalues=eigenvalues, warnings=tuple(notes))


def project(model, gamma):
    """Project one vector (length P) or a batch (b x P) onto the components."""
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.shape[-1] != model.p:
        raise ValueError(f"expected vectors of length {model.p}, got {gamma.shape[-1]}")
    return (gamma - model.mean) @ model.components.T
