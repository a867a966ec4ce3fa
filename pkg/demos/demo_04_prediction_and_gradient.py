"""
Scoring unseen samples and their sensitivity
============================================

Learn on a reference set, then score new feature vectors by inverse-distance
K-NN regression in PCA space. The gradient of a score with respect to the
input features shows which feature directions move the prediction.
"""

import numpy as np

from raredetect import ModelConfig, SynthSpec, fit_reference, generate, predict_batch, prediction_gradient

data = generate(SynthSpec(P=30, n_frequent=3, n_rare=1, frequent_samples=80, rare_samples=10, normal_samples=80))
r = np.random.default_rng(1)
order = r.permutation(len(data.features))
ref, new = order[:220], order[220:]

fit = fit_reference(
    data.features[ref],
    data.labels[ref],
    [data.sample_ids[i] for i in ref],
    data.condition_names,
    ModelConfig(n_pca=10, perplexity=20, M=3),
)
predictor = fit.predictor

scores = predict_batch(predictor, data.features[new])
for name, col in zip(predictor.condition_names, scores.T):
    truth = data.labels[new, data.condition_names.index(name)]
    print(f"{name:12s} mean score on positives {col[truth == 1].mean():.2f}, negatives {col[truth == 0].mean():.2f}")

gamma = data.features[new[0]] + 0.01
grad = prediction_gradient(predictor, gamma, "rare_1")
top = np.argsort(-np.abs(grad))[:5]
print("most influential features for rare_1:", top.tolist())
