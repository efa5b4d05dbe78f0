"""Cross-fitted neighborhood selection and local EB estimation.

The hybrid selector works in three stages for each target experiment:
process-based candidate filtering on the composite distance, outcome-based
refinement on cross-fitted pilot estimates, and a local random-effects fit
over the refined neighborhood.  Outcome-only and process-only selectors
(each skipping one stage) are provided as baselines.

Cross-fitting folds live *within* each experiment's observations.  For fold
f, pilots use only the complement of f, so the selected neighborhood is
independent of the fold-f noise that is subsequently shrunk.  The final
estimate averages the K fold-wise shrunken estimates with inverse-variance
weights.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InsufficientDataError, ValidationError
from .shrinkage import RandomEffectsFit, ShrinkageResult, fit_random_effects, shrink

STRATEGIES = ("cfshn", "outcome-only", "process-only")
MODES = ("rotate", "pilot-split")


# ---------------------------------------------------------------------------
# fold assignment


@dataclass(frozen=True)
class FoldAssignment:
    """Deterministic balanced dealing of each experiment's units into folds.

    Units are dealt round-robin starting from a seeded per-experiment offset,
    so within an experiment the fold sizes differ by at most one.  Offsets
    are drawn in experiment-size order, stratifying the dealing across the
    corpus.  Cells (contiguous unit blocks, e.g. one segment of one arm) can
    be split without materializing unit labels.
    """

    n_folds: int
    seed: int
    offsets: dict[str, int]

    def unit_labels(self, experiment_id: str, n_units: int) -> np.ndarray:
        off = self.offsets[experiment_id]
        return (off + np.arange(n_units)) % self.n_folds

    def fold_sizes(self, experiment_id: str, n_units: int) -> np.ndarray:
        counts = np.bincount(self.unit_labels(experiment_id, n_units), minlength=self.n_folds)
        return counts

    def cell_fold_counts(self, experiment_id: str, cell_sizes: np.ndarray) -> np.ndarray:
        """Fold counts per cell, cells occupying consecutive unit positions.

        Returns an (n_cells, n_folds) integer array whose rows sum to
        ``cell_sizes`` and whose column sums match ``fold_sizes`` of the
        total.
        """
        k = self.n_folds
        cell_sizes = np.asarray(cell_sizes, dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(cell_sizes)[:-1]])
        out = np.empty((cell_sizes.size, k), dtype=np.int64)
        off = self.offsets[experiment_id]
        for c, (start, size) in enumerate(zip(starts, cell_sizes)):
            base, rem = divmod(int(size), k)
            row = np.full(k, base, dtype=np.int64)
            first = (off + start) % k
            for t in range(rem):
                row[(first + t) % k] += 1
            out[c] = row
        return out


def assign_folds(unit_counts: Mapping[str, int], n_folds: int, seed: int) -> FoldAssignment:
    """Build a deterministic fold assignment for a corpus.

    ``unit_counts`` maps experiment id to its number of units.  Experiments
    are processed in ascending size order (stratification by experiment
    size); each gets a dealing offset from a seeded stream.
    """
    if n_folds < 2:
        raise ValueError(f"need at least 2 folds, got {n_folds}")
    for exp_id, count in unit_counts.items():
        if count < n_folds:
            raise ValidationError(
                f"experiment {exp_id} has {count} units, fewer than {n_folds} folds"
            )
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x466F6C64])))
    offsets = {}
    for exp_id in sorted(unit_counts, key=lambda e: (unit_counts[e], e)):
        offsets[exp_id] = int(rng.integers(0, n_folds))
    return FoldAssignment(n_folds=n_folds, seed=seed, offsets=offsets)


# ---------------------------------------------------------------------------
# folded replicate outcomes


def pool_moments(
    counts: np.ndarray, means: np.ndarray, ss: np.ndarray
) -> tuple[int, float, float]:
    """Exactly pool per-group (count, mean, sum-of-squared-deviations)."""
    n = int(counts.sum())
    if n == 0:
        return 0, float("nan"), 0.0
    mask = counts > 0
    mean = float((counts[mask] * means[mask]).sum() / n)
    dev = means[mask] - mean
    total_ss = float(ss[mask].sum() + (counts[mask] * dev * dev).sum())
    return n, mean, total_ss


@dataclass
class FoldedOutcomes:
    """One experiment's simulated outcomes, held fold-wise per arm.

    Arrays are (n_folds,): arrival counts, sample means and within-fold sums
    of squared deviations.  ``y``/``v`` are the full-data difference-in-means
    and its sampling variance obtained by exact pooling of the folds.
    """

    experiment_id: str
    counts_t: np.ndarray
    means_t: np.ndarray
    ss_t: np.ndarray
    counts_c: np.ndarray
    means_c: np.ndarray
    ss_c: np.ndarray
    y: float = field(init=False)
    v: float = field(init=False)
    n_t: int = field(init=False)
    n_c: int = field(init=False)
    v_fallback: bool = False
    fallback_v: float | None = None  # model-based v used when an arm has < 2 units

    def __post_init__(self):
        self.n_t, mean_t, ss_t = pool_moments(self.counts_t, self.means_t, self.ss_t)
        self.n_c, mean_c, ss_c = pool_moments(self.counts_c, self.means_c, self.ss_c)
        if self.n_t == 0 or self.n_c == 0:
            raise InsufficientDataError(
                f"experiment {self.experiment_id}: an arm has zero arrivals"
            )
        self.y = mean_t - mean_c
        if self.n_t >= 2 and self.n_c >= 2:
            self.v = ss_t / (self.n_t - 1) / self.n_t + ss_c / (self.n_c - 1) / self.n_c
        else:
            if self.fallback_v is None:
                raise InsufficientDataError(
                    f"experiment {self.experiment_id}: arm too small for a sample "
                    "variance and no fallback provided"
                )
            self.v = self.fallback_v
            self.v_fallback = True

    @property
    def n_folds(self) -> int:
        return self.counts_t.size

    def pilot(self, exclude_fold: int) -> float:
        """Difference-in-means on the complement of one fold."""
        keep = np.arange(self.n_folds) != exclude_fold
        n_t, mean_t, _ = pool_moments(self.counts_t[keep], self.means_t[keep], self.ss_t[keep])
        n_c, mean_c, _ = pool_moments(self.counts_c[keep], self.means_c[keep], self.ss_c[keep])
        if n_t == 0 or n_c == 0:
            raise InsufficientDataError(
                f"experiment {self.experiment_id}: empty arm outside fold {exclude_fold}"
            )
        return mean_t - mean_c

    def fold_outcome(self, fold: int) -> tuple[float, float]:
        """(y, v) from fold ``fold`` only.

        Falls back to scaling the full-data variance when the fold has too
        few units in an arm for a sample variance.
        """
        n_t = int(self.counts_t[fold])
        n_c = int(self.counts_c[fold])
        if n_t == 0 or n_c == 0:
            raise InsufficientDataError(
                f"experiment {self.experiment_id}: empty arm in fold {fold}"
            )
        y = float(self.means_t[fold] - self.means_c[fold])
        if n_t >= 2 and n_c >= 2:
            v = float(self.ss_t[fold]) / (n_t - 1) / n_t + float(self.ss_c[fold]) / (n_c - 1) / n_c
        else:
            v = self.v * (self.n_t / n_t + self.n_c / n_c) / 2.0
        return y, v


def pilot_estimates(replicates: Mapping[str, FoldedOutcomes]) -> dict[str, np.ndarray]:
    """Out-of-fold pilots: for each experiment, the per-fold complement estimate."""
    out = {}
    for exp_id, rep in replicates.items():
        out[exp_id] = np.array([rep.pilot(f) for f in range(rep.n_folds)])
    return out


# ---------------------------------------------------------------------------
# neighborhood selection


@dataclass(frozen=True)
class NeighborhoodResult:
    target: str
    strategy: str
    candidates: tuple[str, ...]
    neighbors: tuple[str, ...]
    deltas: dict[str, float]


def select_candidates(
    target: str, ids: Sequence[str], distances: np.ndarray, m0: int
) -> list[str]:
    """The m0 experiments nearest to ``target`` in composite distance.

    Ties break by ascending experiment id; if fewer than m0 others exist,
    all of them are returned.
    """
    t = ids.index(target)
    others = [(float(distances[t, j]), ids[j]) for j in range(len(ids)) if j != t]
    others.sort()
    return [exp_id for _, exp_id in others[:m0]]


def refine_neighbors(
    target: str, candidates: Sequence[str], pilots: Mapping[str, float], q: int
) -> tuple[list[str], dict[str, float]]:
    """Keep the min(q, |candidates|) candidates with pilots closest to the target's.

    Returns the selection and the pilot gaps; ties break by ascending id.
    """
    if not candidates:
        raise ValueError(f"empty candidate set for target {target}")
    ref = pilots[target]
    deltas = {c: abs(pilots[c] - ref) for c in candidates}
    ranked = sorted(candidates, key=lambda c: (deltas[c], c))
    return ranked[: min(q, len(ranked))], deltas


@dataclass(frozen=True)
class LocalEstimate:
    shrinkage: ShrinkageResult
    fit: RandomEffectsFit | None
    neighbors: tuple[str, ...]
    fallback: bool


def local_eb_estimate(
    y: float,
    v: float,
    neighbor_pairs: Sequence[tuple[float, float]],
    neighbor_ids: Sequence[str] = (),
) -> LocalEstimate:
    """Fit the neighborhood and shrink the target toward its center.

    With fewer than two neighbors there is nothing to fit; the estimate
    falls back to no shrinkage (theta_tilde = y) with the fallback flag set.
    """
    if len(neighbor_pairs) < 2:
        result = ShrinkageResult(theta_tilde=y, B=1.0, center=y, y=y, v=v)
        return LocalEstimate(
            shrinkage=result, fit=None, neighbors=tuple(neighbor_ids), fallback=True
        )
    fit = fit_random_effects([p[0] for p in neighbor_pairs], [p[1] for p in neighbor_pairs])
    return LocalEstimate(
        shrinkage=shrink(y, v, fit),
        fit=fit,
        neighbors=tuple(neighbor_ids),
        fallback=False,
    )


def baseline_neighbors(
    strategy: str,
    target: str,
    ids: Sequence[str],
    pilots: Mapping[str, float] | None,
    distances: np.ndarray | None,
    q: int,
    m0: int | None = None,
) -> NeighborhoodResult:
    """Neighborhood for one target under any of the three strategies.

    outcome-only ranks all other experiments by pilot gap (no process
    filtering); process-only ranks them by composite distance (no outcome
    refinement); the hybrid filters to m0 process candidates first and
    refines those by pilot gap.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy != "outcome-only" and distances is None:
        raise ValueError(f"strategy {strategy!r} needs a distance matrix")
    if strategy != "process-only" and pilots is None:
        raise ValueError(f"strategy {strategy!r} needs pilot estimates")
    others = [e for e in ids if e != target]
    if strategy == "process-only":
        t = list(ids).index(target)
        dist = {ids[j]: float(distances[t, j]) for j in range(len(ids)) if ids[j] != target}
        ranked = sorted(others, key=lambda e: (dist[e], e))
        neighbors = ranked[: min(q, len(ranked))]
        return NeighborhoodResult(
            target=target,
            strategy=strategy,
            candidates=tuple(others),
            neighbors=tuple(neighbors),
            deltas=dist,
        )
    if strategy == "outcome-only":
        neighbors, deltas = refine_neighbors(target, others, pilots, q)
        return NeighborhoodResult(
            target=target,
            strategy=strategy,
            candidates=tuple(others),
            neighbors=tuple(neighbors),
            deltas=deltas,
        )
    candidates = select_candidates(target, ids, distances, m0)
    neighbors, deltas = refine_neighbors(target, candidates, pilots, q)
    return NeighborhoodResult(
        target=target,
        strategy=strategy,
        candidates=tuple(candidates),
        neighbors=tuple(neighbors),
        deltas=deltas,
    )


# ---------------------------------------------------------------------------
# batch drivers


@dataclass(frozen=True)
class LocalMethodConfig:
    strategy: str = "cfshn"
    q: int = 10
    m0: int = 30
    mode: str = "rotate"
    include_target: bool = False  # ablation: add the target to the stage-3 fit

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.q < 1 or self.m0 < 1:
            raise ValueError("q and m0 must be positive")


@dataclass(frozen=True)
class FoldDetail:
    fold: int
    neighbors: tuple[str, ...]
    mu_hat: float
    tau2_hat: float
    B: float
    theta: float
    fallback: bool


@dataclass(frozen=True)
class TargetResult:
    target: str
    strategy: str
    theta_tilde: float
    per_fold: tuple[FoldDetail, ...]

    @property
    def any_fallback(self) -> bool:
        return any(d.fallback for d in self.per_fold)


def _fold_detail(fold: int, est: LocalEstimate) -> FoldDetail:
    s = est.shrinkage
    return FoldDetail(
        fold=fold,
        neighbors=est.neighbors,
        mu_hat=est.fit.mu_hat if est.fit else float("nan"),
        tau2_hat=est.fit.tau2_hat if est.fit else float("nan"),
        B=s.B,
        theta=s.theta_tilde,
        fallback=est.fallback,
    )


def _estimate_one_fold(
    target: str,
    fold: int,
    selection: NeighborhoodResult,
    replicates: Mapping[str, FoldedOutcomes],
    config: LocalMethodConfig,
    fold_outcomes: Mapping[str, tuple[float, float]],
) -> tuple[float, float, FoldDetail]:
    y_k, v_k = fold_outcomes[target]
    neighbor_ids = list(selection.neighbors)
    pairs = [fold_outcomes[j] for j in neighbor_ids]
    if config.include_target:
        pairs = pairs + [(y_k, v_k)]
    est = local_eb_estimate(y_k, v_k, pairs, neighbor_ids)
    return est.shrinkage.theta_tilde, v_k, _fold_detail(fold, est)


def run_local_method(
    replicates: Mapping[str, FoldedOutcomes],
    ids: Sequence[str],
    distances: np.ndarray | None,
    config: LocalMethodConfig,
) -> dict[str, TargetResult]:
    """Run one local strategy over every experiment of a replicate.

    In the default rotated mode, each fold f is an evaluation fold: pilots
    from the complement drive selection, the fold-f outcome is shrunk toward
    a fit of the neighbors' fold-f outcomes, and the K fold estimates are
    combined with inverse-variance weights.  In pilot-split mode selection
    happens once (pilots excluding fold 0) and full-data outcomes are shrunk
    directly; faster, but the full-data noise overlaps the pilot data.
    """
    ids = [e for e in ids if e in replicates]
    if len(ids) < 2:
        raise InsufficientDataError("need at least 2 experiments with outcomes")
    needs_pilots = config.strategy != "process-only"
    pilots = pilot_estimates({e: replicates[e] for e in ids}) if needs_pilots else None
    n_folds = replicates[ids[0]].n_folds

    results = {}
    if config.mode == "pilot-split":
        pilot0 = {e: pilots[e][0] for e in ids} if pilots else None
        full = {e: (replicates[e].y, replicates[e].v) for e in ids}
        for target in ids:
            selection = baseline_neighbors(
                config.strategy, target, ids, pilot0, distances, config.q, config.m0
            )
            theta, _, detail = _estimate_one_fold(
                target, 0, selection, replicates, config, full
            )
            results[target] = TargetResult(
                target=target,
                strategy=config.strategy,
                theta_tilde=theta,
                per_fold=(detail,),
            )
        return results

    fold_outcomes_by_fold = [
        {e: replicates[e].fold_outcome(f) for e in ids} for f in range(n_folds)
    ]
    for target in ids:
        details = []
        thetas = np.empty(n_folds)
        weights = np.empty(n_folds)
        for f in range(n_folds):
            pilots_f = {e: pilots[e][f] for e in ids} if pilots else None
            selection = baseline_neighbors(
                config.strategy, target, ids, pilots_f, distances, config.q, config.m0
            )
            theta, v_f, detail = _estimate_one_fold(
                target, f, selection, replicates, config, fold_outcomes_by_fold[f]
            )
            thetas[f] = theta
            weights[f] = 1.0 / v_f
            details.append(detail)
        combined = float((weights * thetas).sum() / weights.sum())
        results[target] = TargetResult(
            target=target,
            strategy=config.strategy,
            theta_tilde=combined,
            per_fold=tuple(details),
        )
    return results


def run_cfshn(
    replicates: Mapping[str, FoldedOutcomes],
    ids: Sequence[str],
    distances: np.ndarray,
    config: LocalMethodConfig | None = None,
) -> dict[str, TargetResult]:
    """End-to-end hybrid selector (process filter, outcome refinement, local fit)."""
    config = config or LocalMethodConfig()
    if config.strategy != "cfshn":
        raise ValueError("run_cfshn requires the cfshn strategy")
    return run_local_method(replicates, ids, distances, config)


def run_classical(replicates: Mapping[str, FoldedOutcomes], ids: Sequence[str]) -> dict[str, ShrinkageResult]:
    """Global EB on the full-data outcomes, pooled over all experiments."""
    ids = [e for e in ids if e in replicates]
    pairs = [(replicates[e].y, replicates[e].v) for e in ids]
    from .shrinkage import classical_eb

    results = classical_eb(pairs)
    return dict(zip(ids, results))


def write_diagnostics_csv(
    results: Mapping[str, Mapping[str, TargetResult]], path: str | Path
) -> None:
    """Per-target diagnostics, one row per (strategy, experiment, fold)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        [
            "experiment_id",
            "fold",
            "strategy",
            "neighbors",
            "mu_hat",
            "tau2_hat",
            "B",
            "theta_tilde",
            "fallback_flag",
        ]
    )
    for strategy in sorted(results):
        per_target = results[strategy]
        for target in sorted(per_target):
            res = per_target[target]
            for detail in res.per_fold:
                writer.writerow(
                    [
                        target,
                        detail.fold,
                        strategy,
                        ";".join(detail.neighbors),
                        repr(detail.mu_hat),
                        repr(detail.tau2_hat),
                        repr(detail.B),
                        repr(detail.theta),
                        int(detail.fallback),
                    ]
                )
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
