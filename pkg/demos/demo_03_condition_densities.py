"""
Presence probabilities from Parzen densities
============================================

Fit one positive and one negative density per condition on 2-D reference
coordinates and turn them into presence probabilities. Bandwidths follow
Scott's rule.
"""

import numpy as np

from raredetect import density_at, fit_condition_models, presence_probability, scott_bandwidth

r = np.random.default_rng(0)
positives = r.normal([0, 0], 0.5, size=(12, 2))
negatives = r.normal([3, 0], 1.0, size=(80, 2))
tau = np.vstack([positives, negatives])
labels = np.r_[np.ones(12), np.zeros(80)].astype(int)[:, None]

print("h for 12 positives:", scott_bandwidth(12, 2))
print("h for 80 negatives:", scott_bandwidth(80, 2))

# the scalar-form kernel, evaluated directly
F = density_at(positives, scott_bandwidth(12, 2), [0.0, 0.0])
F_bar = density_at(negatives, scott_bandwidth(80, 2), [0.0, 0.0])
print("q at the origin (unnormalized kernel):", presence_probability(F, F_bar))

models, reference = fit_condition_models(tau, labels, ["lesion"])
model = models[0]
for x in (-1.0, 0.0, 1.5, 3.0, 6.0):
    q, _ = model.probability(np.array([[x, 0.0]]))
    print(f"q({x:+.1f}, 0) = {q[0]:.3f}")

print("mean q on positives:", reference.q[:12, 0].mean().round(3))
print("mean q on negatives:", reference.q[12:, 0].mean().round(3))
