"""The full semi-synthetic evaluation pipeline at desk scale.

Generates a two-cluster snapshot corpus, fits the piecewise-constant arrival
models, simulates bootstrap replicates, runs every estimator on each
replicate, and scores them against the long-horizon references.  This is a
small-B version of what the `localeb reproduce` command does.
"""

import time

from localeb import (
    CLASSICAL,
    RAW,
    MethodKey,
    SimilarityConfig,
    fit_nhpp,
    make_two_cluster_corpus,
    normalized_shape,
    pairwise_distance_matrix,
    run_bootstrap,
    score_methods,
)
from localeb.synthetic import TwoClusterConfig

t0 = time.time()

print("=== 1. Generate a corpus and fit the arrival models ===")
series, truths = make_two_cluster_corpus(
    seed=20260810, config=TwoClusterConfig(n_experiments=40, source_noise=False)
)
models = [fit_nhpp(s) for s in series]
print(f"{len(models)} experiments; volumes "
      f"{min(m.n for m in models):.0f}..{max(m.n for m in models):.0f} arrivals")

print()
print("=== 2. Process features and distances (computed once) ===")
config = SimilarityConfig()
features = [normalized_shape(s, config) for s in series]
distances, norms = pairwise_distance_matrix(features, config)
print(f"{distances.shape[0]}x{distances.shape[1]} composite matrix, "
      f"median DTW {norms.med_dtw:.3f}")

print()
print("=== 3. Bootstrap replicates and estimators ===")
methods = [
    RAW,
    CLASSICAL,
    MethodKey("outcome-only", q=10),
    MethodKey("process-only", q=10, rho=0.75),
    MethodKey("cfshn", q=10, rho=0.75, m0=30),
]
store = run_bootstrap(
    models, methods, b_replicates=100, master_seed=20260810,
    distance_matrices={0.75: distances}, n_folds=5, mode="pilot-split", workers=2,
)
print(f"store: {store.n_replicates} replicates x {len(store.methods)} methods "
      f"x {len(store.ids)} experiments")

print()
print("=== 4. Score against the long-horizon references ===")
scores = score_methods(store)
print(f"{'method':<14} {'q':>3} {'MSE':>11} {'reduction':>10} {'win rate':>9}  95% CI")
for s in scores:
    q = "" if s.q is None else s.q
    print(f"{s.method:<14} {q:>3} {s.mse:11.4e} {s.reduction_pct:9.1f}% "
          f"{s.win_rate_pct:8.1f}%  [{s.ci_low:.3e}, {s.ci_high:.3e}]")

print()
print(f"done in {time.time() - t0:.1f}s; the hybrid selector combines the")
print("process filter's stability with the outcome refinement's precision.")
