"""Synthetic Gaussian-cluster datasets with frequent and rare conditions.

Each condition is an isotropic Gaussian cluster whose mean sits on a sphere
of radius ``separation * std`` around the origin, where the normal samples
live. Cluster directions are orthonormal whenever the dimension allows, so
every pair of condition means is ``separation * std * sqrt(2)`` apart.
"""

import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ._random import make_rng


@dataclass(frozen=True)
class SynthSpec:
    P: int = 50
    n_frequent: int = 5
    n_rare: int = 3
    frequent_samples: int = 200
    rare_samples: int = 10
    normal_samples: int = 200
    separation: float = 8.0
    std: float = 1.0
    label_noise: float = 0.0
    cooccurrence: float = 0.0
    seed: int = 0

    def validate(self):
        counts = (self.P, self.n_frequent + self.n_rare, self.frequent_samples, self.rare_samples)
        if min(counts) < 1 or self.n_frequent < 0 or self.n_rare < 0 or self.normal_samples < 0:
            raise ValueError("all counts must be >= 1")
        if self.separation <= 0 or self.std <= 0:
            raise ValueError("separation and std must be positive")
        if not (0 <= self.label_noise <= 1 and 0 <= self.cooccurrence <= 1):
            raise ValueError("label_noise and cooccurrence must be in [0, 1]")

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SynthData:
    sample_ids: list
    patient_ids: list
    features: np.ndarray
    labels: np.ndarray
    condition_names: list
    clusters: list

    def features_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_id", "patient_id", *(f"f{j}" for j in range(self.features.shape[1]))])
        for sid, pid, row in zip(self.sample_ids, self.patient_ids, self.features):
            w.writerow([sid, pid, *(repr(float(v)) for v in row)])
        return buf.getvalue()

    def labels_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_id", *self.condition_names, "is_normal"])
        for sid, row in zip(self.sample_ids, self.labels):
            w.writerow([sid, *(int(v) for v in row), int(not row.any())])
        return buf.getvalue()

    def clusters_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_id", "cluster"])
        for sid, c in zip(self.sample_ids, self.clusters):
            w.writerow([sid, c])
        return buf.getvalue()

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {
            "features": directory / "features.csv",
            "labels": directory / "labels.csv",
            "clusters": directory / "clusters.csv",
        }
        paths["features"].write_text(self.features_csv(), encoding="utf-8")
        paths["labels"].write_text(self.labels_csv(), encoding="utf-8")
        paths["clusters"].write_text(self.clusters_csv(), encoding="utf-8")
        return paths


def _directions(rng, count, dim):
    raw = rng.normal(size=(dim, count))
    if count <= dim:
        q, r = np.linalg.qr(raw)
        return (q * np.sign(np.diag(r))).T
    return (raw / np.linalg.norm(raw, axis=0)).T


def generate(spec):
    """Draw a dataset from ``spec``.

    Co-occurring samples (a fraction ``cooccurrence`` of each condition's
    draw) sit midway between their condition's mean and the next
    condition's mean and carry both labels. Label noise flips each label
    independently with probability ``label_noise``. Patients own one or two
    consecutive samples.
    """
    spec.validate()
    rng = make_rng(spec.seed)
    n_cond = spec.n_frequent + spec.n_rare
    names = [f"frequent_{i + 1}" for i in range(spec.n_frequent)]
    names += [f"rare_{i + 1}" for i in range(spec.n_rare)]
    counts = [spec.frequent_samples] * spec.n_frequent + [spec.rare_samples] * spec.n_rare
    means = _directions(rng, n_cond, spec.P) * spec.separation * spec.std

    feats, labs, clusters = [], [], []
    for c, count in enumerate(counts):
        n_co = int(round(spec.cooccurrence * count)) if n_cond > 1 else 0
        for i in range(count):
            label = np.zeros(n_cond, dtype=np.int8)
            label[c] = 1
            center = means[c]
            cluster = names[c]
            if i < n_co:
                other = (c + 1) % n_cond
                center = (means[c] + means[other]) / 2.0
                label[other] = 1
                cluster = f"{names[c]}+{names[other]}"
            feats.append(center + rng.normal(scale=spec.std, size=spec.P))
            labs.append(label)
            clusters.append(cluster)
    for _ in range(spec.normal_samples):
        feats.append(rng.normal(scale=spec.std, size=spec.P))
        labs.append(np.zeros(n_cond, dtype=np.int8))
        clusters.append("normal")

    features = np.array(feats)
    labels = np.array(labs, dtype=np.int8)
    if spec.label_noise > 0:
        flips = rng.random(labels.shape) < spec.label_noise
        labels = np.where(flips, 1 - labels, labels).astype(np.int8)

    n = len(features)
    sample_ids = [f"s{i:05d}" for i in range(n)]
    patient_ids = []
    p = 0
    i = 0
    while i < n:
        size = 1 + int(rng.integers(0, 2))
        for _ in range(min(size, n - i)):
            patient_ids.append(f"p{p:05d}")
        i += size
        p += 1
    return SynthData(sample_ids, patient_ids, features, labels, names, clusters)
