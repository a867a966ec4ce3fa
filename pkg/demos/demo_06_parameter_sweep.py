"""
Sensitivity to the number of neighbors and embedding dimension
==============================================================

Vary one parameter at a time around the defaults and record the average
cross-validation AUC.
"""

from raredetect import SynthSpec, assign_splits, build_balanced_subset, generate, parameter_sweep, protocol_folds
from raredetect.dataset import Dataset
from raredetect.evaluation import ModelConfig

data = generate(SynthSpec(P=30, n_frequent=4, n_rare=2, frequent_samples=150, rare_samples=10))
dataset = Dataset.from_arrays(data.sample_ids, data.patient_ids, data.features, data.labels, data.condition_names)
balanced = build_balanced_subset(dataset, 4, seed=0)
splits = assign_splits(dataset, balanced, seed=0)
folds = protocol_folds(splits, dataset, 10, seed=0)

rows = parameter_sweep(
    dataset, splits, folds, {"k": [1, 3, 9], "psecond": [2, 3]}, ModelConfig(M=4, tsne_iterations=500)
)
print(f"{'param':8s} {'value':>6s} {'AUC':>8s} {'rare AUC':>9s}")
for row in rows:
    print(f"{row['param']:8s} {row['value']!s:>6s} {row['avg_auc']:8.4f} {row['avg_auc_rare']:9.4f}")
