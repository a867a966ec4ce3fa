"""
Synthetic frequent and rare conditions
======================================

Draw a Gaussian-cluster dataset where a handful of conditions are frequent
and a few are rare, write it in the CSV layout the rest of the package
reads, and load it back.
"""

import tempfile
from pathlib import Path

import numpy as np

from raredetect import SynthSpec, generate, load_dataset

spec = SynthSpec(P=20, n_frequent=3, n_rare=2, frequent_samples=100, rare_samples=8, normal_samples=100)
data = generate(spec)
print("features:", data.features.shape)
print("positives per condition:", dict(zip(data.condition_names, data.labels.sum(axis=0))))

# every condition mean sits separation * std away from the normal cluster
for name in data.condition_names:
    members = data.features[np.array(data.clusters) == name]
    print(f"{name:12s} |mean| = {np.linalg.norm(members.mean(axis=0)):.2f}")

out = Path(tempfile.mkdtemp())
paths = data.write(out)
dataset = load_dataset(paths["features"], paths["labels"])

# loading reorders conditions by decreasing frequency
print(dataset.condition_names, dataset.frequencies.tolist())
print("normals:", int(dataset.normal_mask().sum()))
