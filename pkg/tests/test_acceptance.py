"""Acceptance suite: every release criterion with its stated tolerance.

Each test prints one PASS line when its criterion holds (run with ``-s`` to
see them); a failing criterion fails the corresponding test.
"""

import time

import numpy as np
import pytest

from localeb.cli import main
from localeb.evaluation import (
    mixture_dominance_check,
    random_spec_battery,
    score_methods,
)
from localeb.neighborhoods import FoldedOutcomes
from localeb.semisynth import (
    CLASSICAL,
    RAW,
    MethodKey,
    fit_nhpp,
    run_bootstrap,
)
from localeb.shrinkage import MixturePriorSpec, fit_random_effects, shrink
from localeb.similarity import SimilarityConfig, dtw_distance, normalized_shape, pairwise_distance_matrix
from localeb.synthetic import TwoClusterConfig, make_two_cluster_corpus

from conftest import series_from_grid
from test_shrinkage import reml_grid_oracle
from test_similarity import dtw_unconstrained_oracle


def test_criterion_1_oracle_dominance_closed_form():
    spec = MixturePriorSpec(
        weights=(0.5, 0.5), means=(-1.0, 1.0), tau2s=(0.0, 0.0),
        feature_informativeness=1.0,
    )
    t0 = time.time()
    report = mixture_dominance_check(spec, v=1.0, mc_draws=1_000_000, seed=101)
    elapsed = time.time() - t0
    # zero within-type variance makes both MSEs exact (their MC error is 0)
    assert abs(report.mse_global - 1.0) <= max(3.0 * report.mcse_gap, 1e-9)
    assert abs(report.mse_local - 0.0) <= max(3.0 * report.mcse_gap, 1e-9)
    assert report.gap == pytest.approx(1.0, abs=1e-9)  # Var of type means
    assert elapsed < 10.0
    print(
        f"\nPASS criterion 1: closed-form dominance (mse_glob={report.mse_global:.6f}, "
        f"mse_loc={report.mse_local:.6f}, gap={report.gap:.6f}, {elapsed:.2f}s)"
    )


def test_criterion_2_oracle_dominance_general():
    spec = MixturePriorSpec(
        weights=(0.5, 0.5), means=(-1.0, 1.0), tau2s=(1.0, 1.0),
        feature_informativeness=1.0,
    )
    report = mixture_dominance_check(spec, v=1.0, mc_draws=1_000_000, seed=102)
    assert abs(report.gap - 0.25) <= 3.0 * report.mcse_gap
    assert report.passed

    degenerate = MixturePriorSpec(weights=(1.0,), means=(0.3,), tau2s=(0.8,))
    report_deg = mixture_dominance_check(degenerate, v=1.0, mc_draws=1_000_000, seed=103)
    assert abs(report_deg.gap) <= 3.0 * max(report_deg.mcse_gap, 1e-12)
    assert report_deg.passed
    print(
        f"\nPASS criterion 2: general dominance (gap={report.gap:.5f} ~ 0.25 "
        f"+/- {3 * report.mcse_gap:.5f}; degenerate gap={report_deg.gap:.2e})"
    )


def test_criterion_3_gap_lower_bound_battery():
    t0 = time.time()
    battery = random_spec_battery(20, seed=104)
    worst_margin = np.inf
    for spec, v in battery:
        report = mixture_dominance_check(spec, v=v, mc_draws=200_000, seed=105)
        margin = report.gap - (report.theoretical_gap_lower_bound - 3.0 * report.mcse_gap)
        worst_margin = min(worst_margin, margin)
        assert margin >= 0.0
    elapsed = time.time() - t0
    assert elapsed < 60.0
    print(
        f"\nPASS criterion 3: gap lower bound on 20 random specs "
        f"(worst margin {worst_margin:.2e}, {elapsed:.1f}s)"
    )


def test_criterion_4_reml_matches_grid_oracle():
    rng = np.random.default_rng(106)
    fallbacks = 0
    worst_mu = worst_tau2 = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 21))
        tau = rng.uniform(0.0, 1.5)
        theta = rng.normal(0.0, tau, size=n)
        v = rng.uniform(0.2, 2.0, size=n)
        y = theta + rng.normal(0.0, np.sqrt(v))
        fit = fit_random_effects(y, v)
        fallbacks += fit.method_used == "ml-fallback"
        mu_o, tau2_o = reml_grid_oracle(y, v)
        worst_mu = max(worst_mu, abs(fit.mu_hat - mu_o))
        worst_tau2 = max(worst_tau2, abs(fit.tau2_hat - tau2_o))
        assert abs(fit.mu_hat - mu_o) <= 1e-3
        assert abs(fit.tau2_hat - tau2_o) <= 1e-3
    print(
        f"\nPASS criterion 4: REML vs grid oracle on 100 instances "
        f"(worst |dmu|={worst_mu:.2e}, worst |dtau2|={worst_tau2:.2e}, "
        f"ML fallback rate {fallbacks}/100)"
    )


def test_criterion_5_dtw_oracle_and_band_monotonicity():
    rng = np.random.default_rng(107)
    alphas = [0.0, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0]
    for _ in range(200):
        n = int(rng.integers(1, 51))
        x, y = rng.random(n), rng.random(n)
        assert dtw_distance(x, y, 1.0) == dtw_unconstrained_oracle(list(x), list(y))
        costs = [dtw_distance(x, y, a) for a in alphas]
        assert all(c1 >= c2 for c1, c2 in zip(costs, costs[1:]))
    print("\nPASS criterion 5: banded DTW exact vs brute force on 200 pairs; band monotone")


def test_criterion_6_pipeline_method_ordering():
    # two-cluster corpus, noise-free source so the reference equals the true
    # effect; pilot-split protocol (the fold-rotation protocol over-shrinks
    # fold outcomes and is not used for this desk-scale check)
    t0 = time.time()
    series, _ = make_two_cluster_corpus(
        seed=20260810, config=TwoClusterConfig(n_experiments=40, source_noise=False)
    )
    config = SimilarityConfig()
    feats = [normalized_shape(s, config) for s in series]
    distances, _ = pairwise_distance_matrix(feats, config)
    models = [fit_nhpp(s) for s in series]
    methods = [
        RAW,
        CLASSICAL,
        MethodKey("process-only", q=10, rho=0.75),
        MethodKey("cfshn", q=10, rho=0.75, m0=30),
    ]
    store = run_bootstrap(
        models, methods, 200, 20260810,
        distance_matrices={0.75: distances},
        n_folds=5, mode="pilot-split", workers=2,
    )
    scores = {s.method: s for s in score_methods(store)}
    elapsed = time.time() - t0

    assert scores["cfshn"].mse < scores["process-only"].mse
    assert scores["process-only"].mse < scores["classical-eb"].mse
    assert scores["classical-eb"].mse < scores["raw"].mse
    gap = scores["cfshn"].reduction_pct - scores["classical-eb"].reduction_pct
    assert gap >= 10.0
    assert elapsed < 300.0
    print(
        "\nPASS criterion 6: MSE ranking cfshn < process-only < classical < raw "
        f"(reductions {scores['cfshn'].reduction_pct:.1f}% > "
        f"{scores['process-only'].reduction_pct:.1f}% > "
        f"{scores['classical-eb'].reduction_pct:.1f}% > 0; "
        f"hybrid beats classical by {gap:.1f} points; {elapsed:.0f}s)"
    )


def test_criterion_7_reproduce_determinism(tmp_path):
    corpus = tmp_path / "corpus.csv"
    assert main(["synth", "--out", str(corpus), "--n-experiments", "8", "--seed", "4"]) == 0
    fast = [
        "--grid-size", "40", "--replicates", "4", "--q-grid", "3",
        "--m0", "5", "--mode", "pilot-split", "--seed", "9",
    ]
    payloads = []
    for name, workers in (("a", "1"), ("b", "1"), ("c", "2")):
        out = tmp_path / name
        code = main([
            "reproduce", "--data", str(corpus), "--out-dir", str(out),
            "--workers", workers, *fast,
        ])
        assert code == 0
        payloads.append((out / "scores.csv").read_bytes())
    assert payloads[0] == payloads[1], "same seed must give identical bytes"
    assert payloads[0] == payloads[2], "worker count must not change bytes"
    print("\nPASS criterion 7: reproduce is byte-identical across reruns and worker counts")


def _random_series(rng):
    k = int(rng.integers(2, 9))
    cc = np.cumsum(rng.integers(0, 50, size=k)) + 1
    ct = np.cumsum(rng.integers(0, 50, size=k)) + 1
    times = np.cumsum(rng.uniform(0.25, 2.0, size=k))
    return series_from_grid(
        times, cc, ct,
        means_c=rng.normal(size=k), means_t=rng.normal(size=k),
        vars_c=rng.uniform(0.1, 2.0, size=k), vars_t=rng.uniform(0.1, 2.0, size=k),
    )


def test_criterion_8a_shape_normalization_1000_cases():
    rng = np.random.default_rng(108)
    for _ in range(1000):
        model = fit_nhpp(_random_series(rng))
        assert abs(float(model.shape @ model.widths) - 1.0) <= 1e-10
    print("\nPASS criterion 8a: shape normalization sum(f*h)=1 +/- 1e-10 on 1000 series")


def test_criterion_8b_shrinkage_convexity_1000_cases():
    rng = np.random.default_rng(109)
    for _ in range(1000):
        n = int(rng.integers(2, 8))
        y = rng.normal(0, 2, size=n)
        v = rng.uniform(0.1, 3.0, size=n)
        fit = fit_random_effects(y, v)
        target_y = float(rng.normal(0, 3))
        target_v = float(rng.uniform(0.1, 3.0))
        r = shrink(target_y, target_v, fit)
        assert min(target_y, fit.mu_hat) - 1e-9 <= r.theta_tilde
        assert r.theta_tilde <= max(target_y, fit.mu_hat) + 1e-9
        assert 0.0 <= r.B <= 1.0
    print("\nPASS criterion 8b: shrinkage convex-combination bounds on 1000 cases")


def test_criterion_8c_equivariance_1000_cases():
    rng = np.random.default_rng(110)
    for _ in range(1000):
        n = int(rng.integers(2, 7))
        y = rng.normal(0, 1.5, size=n)
        v = rng.uniform(0.2, 2.0, size=n)
        base = fit_random_effects(y, v)
        if rng.random() < 0.5:
            c = float(rng.uniform(-20, 20))
            moved = fit_random_effects(y + c, v)
            assert moved.mu_hat == pytest.approx(base.mu_hat + c, abs=1e-6)
            assert moved.tau2_hat == pytest.approx(base.tau2_hat, rel=1e-6, abs=1e-6)
        else:
            s = float(rng.uniform(0.2, 5.0))
            scaled = fit_random_effects(y * s, v * s * s)
            assert scaled.mu_hat == pytest.approx(base.mu_hat * s, abs=1e-5 * max(s, 1))
            assert scaled.tau2_hat == pytest.approx(
                base.tau2_hat * s * s, abs=max(1e-5 * s * s, 2e-10)
            )
    print("\nPASS criterion 8c: translation/scale equivariance on 1000 cases")


def test_criterion_8d_pilot_fold_exclusion_1000_cases():
    rng = np.random.default_rng(111)
    for _ in range(1000):
        k = int(rng.integers(2, 7))
        rep = FoldedOutcomes(
            experiment_id="e",
            counts_t=rng.integers(2, 50, size=k),
            means_t=rng.normal(1, 0.5, size=k),
            ss_t=rng.uniform(0.1, 5.0, size=k),
            counts_c=rng.integers(2, 50, size=k),
            means_c=rng.normal(0, 0.5, size=k),
            ss_c=rng.uniform(0.1, 5.0, size=k),
        )
        f = int(rng.integers(0, k))
        before = rep.pilot(f)
        rep.means_t[f] += float(rng.uniform(1, 100))
        rep.means_c[f] -= float(rng.uniform(1, 100))
        rep.counts_t[f] += int(rng.integers(1, 10))
        assert rep.pilot(f) == before
    print("\nPASS criterion 8d: pilot estimates ignore the excluded fold on 1000 cases")
