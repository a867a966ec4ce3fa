"""
PCA projection and neighbor embedding
=====================================

Reduce feature vectors with PCA, then embed them in two dimensions with a
perplexity-calibrated stochastic neighbor embedding. Both output kernels
are shown.
"""

import numpy as np

from raredetect import SynthSpec, TsneConfig, conditional_matrix, fit_pca, fit_tsne, generate, project

data = generate(SynthSpec(P=50, n_frequent=3, n_rare=1, frequent_samples=60, rare_samples=10, normal_samples=60))
X = data.features

pca = fit_pca(X, 10)
pi = project(pca, X)
print("explained variance of the kept components:", np.round(pca.eigenvalues, 2))

# each row of P has perplexity 30, the effective number of neighbors
P = conditional_matrix(pi, 30.0)
row = P[0][P[0] > 0]
print("perplexity of row 0:", np.exp(-(row * np.log(row)).sum()))

for variant in ("student_t", "paper_sne"):
    emb = fit_tsne(pi, TsneConfig(kernel_variant=variant, seed=0))
    print(f"{variant}: cost {emb.initial_cost:.3f} -> {emb.final_cost:.3f}")

    # same-cluster share among the 5 nearest output neighbors
    labels = np.array(data.clusters)
    d = ((emb.tau[:, None] - emb.tau[None]) ** 2).sum(-1)
    np.fill_diagonal(d, np.inf)
    nn = np.argsort(d, axis=1)[:, :5]
    print("  neighbor purity:", np.mean(labels[nn] == labels[:, None]).round(3))
