"""Arrival shapes and the composite process distance.

Two experiments can have equal volume yet opposite traffic dynamics (one
ramps up, one ramps down).  This script builds their normalized shape
curves, compares DTW against plain pointwise distance, and shows how the
composite distance blends warped-shape similarity with traffic scale.
"""

import numpy as np

from localeb import (
    SimilarityConfig,
    dtw_distance,
    make_two_cluster_corpus,
    normalized_shape,
    pairwise_distance_matrix,
)
from localeb.synthetic import TwoClusterConfig

config = SimilarityConfig(grid_size=200)
series, truths = make_two_cluster_corpus(
    seed=7, config=TwoClusterConfig(n_experiments=12)
)
features = [normalized_shape(s, config) for s in series]
clusters = {t.experiment_id: t.cluster for t in truths}

print("=== 1. Normalized shape curves ===")
print("Each curve integrates to 1 over normalized time, so only the *pattern*")
print("of arrivals remains; totals live separately in log n.")
for s, f in list(zip(series, features))[:4]:
    head = " ".join(f"{v:.2f}" for v in f.shape[::40])
    print(f"{s.experiment_id} ({clusters[s.experiment_id]:>9}): n={f.n:6.0f}  "
          f"shape samples: {head}")

print()
print("=== 2. DTW absorbs small time shifts; pointwise distance does not ===")
base = features[0].shape
shifted = np.roll(base, 8)  # same pattern, started slightly later
pointwise = float(((base - shifted) ** 2).sum())
warped = dtw_distance(base, shifted, band_fraction=0.1)
print(f"pointwise squared distance: {pointwise:8.4f}")
print(f"banded DTW distance:        {warped:8.4f}")

print()
print("=== 3. Composite distance separates the clusters ===")
matrix, norms = pairwise_distance_matrix(features, config)
print(f"normalizers: median DTW = {norms.med_dtw:.4f}, MAD log n = {norms.mad_log_n:.4f}")
ids = [s.experiment_id for s in series]
within, across = [], []
for i in range(len(ids)):
    for j in range(i + 1, len(ids)):
        bucket = within if clusters[ids[i]] == clusters[ids[j]] else across
        bucket.append(matrix[i, j])
print(f"mean distance within a cluster:  {np.mean(within):.3f}")
print(f"mean distance across clusters:   {np.mean(across):.3f}")
print("Process features alone already know which experiments are comparable.")
