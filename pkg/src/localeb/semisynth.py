"""Semi-synthetic replication: NHPP traffic fits and bootstrap simulation.

Each source series is fitted with a piecewise-constant-intensity Poisson
model (scale n times a unit-integral shape) plus per-segment Gaussian
outcome moments per arm.  Replicates resample arrivals per segment and arm
(1:1 split), draw fold-level sample means and within-cell sums of squares
from their exact sampling distributions, and aggregate to the observation
pair (y, v) used by every estimator.  Working at the aggregate level is
distributionally identical to simulating individual Gaussian outcomes.

Random streams are counter-based (Philox keyed by master seed, replicate
index and a stable hash of the experiment id), so parallel execution over
replicates is reproducible and schedule-independent.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import ExperimentSeries, compute_increments, reference_effect
from .errors import DegenerateSeriesError, ValidationError
from .neighborhoods import (
    FoldAssignment,
    FoldedOutcomes,
    LocalMethodConfig,
    assign_folds,
    run_classical,
    run_local_method,
)

SHARD_SIZE = 200
MANIFEST_NAME = "manifest.json"


def stable_id_hash(experiment_id: str) -> int:
    """64-bit stable hash of an experiment id (seed-stream component)."""
    digest = hashlib.sha256(experiment_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def replicate_rng(master_seed: int, replicate_index: int, experiment_id: str) -> np.random.Generator:
    """Independent stream fully determined by (seed, replicate, experiment)."""
    ss = np.random.SeedSequence(
        [master_seed, replicate_index, stable_id_hash(experiment_id)]
    )
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class NhppModel:
    """Fitted piecewise-constant arrival process with outcome moments.

    ``rates`` holds the combined-arm intensity per segment; the shape is
    ``rates / n`` so that sum(shape * widths) == 1.  Outcome means and
    variances are per segment and arm, reconstructed by moment differencing
    with cumulative statistics as the fallback for segments too thin to
    difference.  ``reference`` is the long-horizon effect of the source
    series, the evaluation target for every simulated replicate.
    """

    experiment_id: str
    metric_id: str
    widths: np.ndarray = field(repr=False)
    rates: np.ndarray = field(repr=False)
    mean_t: np.ndarray = field(repr=False)
    var_t: np.ndarray = field(repr=False)
    mean_c: np.ndarray = field(repr=False)
    var_c: np.ndarray = field(repr=False)
    reference: float = 0.0
    noise_scale: float = 1.0
    fallback_segments: int = 0

    @property
    def n(self) -> float:
        return float(self.rates @ self.widths)

    @property
    def shape(self) -> np.ndarray:
        return self.rates / self.n

    @property
    def n_segments(self) -> int:
        return self.widths.size


def fit_nhpp(series: ExperimentSeries, noise_scale: float = 1.0) -> NhppModel:
    """Fit the shape-scale arrival model and per-segment outcome moments."""
    if noise_scale <= 0:
        raise ValueError("noise_scale must be positive")
    tally: dict = {}
    intervals = compute_increments(series, tally)
    widths = np.array([iv.width for iv in intervals])
    rates = np.array([iv.arrivals_total / iv.width for iv in intervals])
    if rates @ widths <= 0:
        raise DegenerateSeriesError(f"series {series.label()} has zero total arrivals")

    fallback = 0
    snaps = series.snapshots
    # cumulative stats indexed by interval end; first snapshot may open the grid
    offset = len(snaps) - len(intervals)

    def arm_moments(arm: str) -> tuple[np.ndarray, np.ndarray]:
        nonlocal fallback
        means = np.empty(len(intervals))
        variances = np.empty(len(intervals))
        for i, iv in enumerate(intervals):
            m = iv.mean_treatment if arm == "t" else iv.mean_control
            var = iv.variance_treatment if arm == "t" else iv.variance_control
            snap = snaps[i + offset]
            cum = snap.treatment if arm == "t" else snap.control
            if math.isnan(m):
                m = cum.mean
                fallback += 1
            if math.isnan(var):
                var = cum.variance
                fallback += 1
            means[i] = m
            variances[i] = var
        return means, variances

    mean_t, var_t = arm_moments("t")
    mean_c, var_c = arm_moments("c")
    return NhppModel(
        experiment_id=series.experiment_id,
        metric_id=series.metric_id,
        widths=widths,
        rates=rates,
        mean_t=mean_t,
        var_t=var_t,
        mean_c=mean_c,
        var_c=var_c,
        reference=reference_effect(series),
        noise_scale=noise_scale,
        fallback_segments=fallback,
    )


def simulate_replicate(
    model: NhppModel, folds: FoldAssignment, rng: np.random.Generator
) -> FoldedOutcomes | None:
    """Draw one replicate of an experiment, or None when it must be excluded.

    Arrivals per segment and arm are Poisson(rate * width / 2); realized
    units are dealt into folds by the shared assignment; each (fold, segment,
    arm) cell draws its sample mean from N(mu, sigma^2/n) and its sum of
    squared deviations from sigma^2 * chi^2(n-1).  Exclusion happens when an
    arm is empty overall or within any fold (the rotated protocol needs every
    fold populated on both arms).
    """
    k = folds.n_folds
    m = model.n_segments
    lam_half = model.rates * model.widths / 2.0

    counts_t = rng.poisson(lam_half)
    counts_c = rng.poisson(lam_half)
    if counts_t.sum() == 0 or counts_c.sum() == 0:
        return None

    # cells: treatment segments then control segments, contiguous unit blocks
    cell_sizes = np.concatenate([counts_t, counts_c])
    cell_folds = folds.cell_fold_counts(model.experiment_id, cell_sizes)  # (2m, k)
    n_t = cell_folds[:m]  # (m, k)
    n_c = cell_folds[m:]

    fold_t = n_t.sum(axis=0)
    fold_c = n_c.sum(axis=0)
    if (fold_t == 0).any() or (fold_c == 0).any():
        return None

    sig2_t = model.var_t * model.noise_scale
    sig2_c = model.var_c * model.noise_scale

    # fixed-shape draws (masked afterwards) keep stream consumption simple
    z = rng.standard_normal(size=(2, m, k))
    chi_df = np.stack([n_t, n_c]) - 1.0
    chi = rng.chisquare(np.maximum(chi_df, 1.0))

    def cell_stats(arm_counts, mu, sig2, z_arm, chi_arm):
        with np.errstate(divide="ignore", invalid="ignore"):
            means = mu[:, None] + z_arm * np.sqrt(sig2[:, None] / arm_counts)
        ss = sig2[:, None] * chi_arm
        ss = np.where(arm_counts >= 2, ss, 0.0)
        means = np.where(arm_counts >= 1, means, np.nan)
        return means, ss

    means_t, ss_t = cell_stats(n_t, model.mean_t, sig2_t, z[0], chi[0])
    means_c, ss_c = cell_stats(n_c, model.mean_c, sig2_c, z[1], chi[1])

    def fold_pool(counts, means, ss):
        n_fold = counts.sum(axis=0)
        safe = np.where(counts > 0, means, 0.0)
        mean_fold = (counts * safe).sum(axis=0) / n_fold
        dev = np.where(counts > 0, means - mean_fold[None, :], 0.0)
        ss_fold = ss.sum(axis=0) + (counts * dev * dev).sum(axis=0)
        return n_fold, mean_fold, ss_fold

    nf_t, mf_t, sf_t = fold_pool(n_t, means_t, ss_t)
    nf_c, mf_c, sf_c = fold_pool(n_c, means_c, ss_c)

    return FoldedOutcomes(
        experiment_id=model.experiment_id,
        counts_t=nf_t,
        means_t=mf_t,
        ss_t=sf_t,
        counts_c=nf_c,
        means_c=mf_c,
        ss_c=sf_c,
    )


@dataclass
class ReplicateOutput:
    replicate_index: int
    master_seed: int
    experiments: dict[str, FoldedOutcomes]
    excluded: tuple[str, ...]


def simulate_corpus_replicate(
    models: Sequence[NhppModel],
    folds: FoldAssignment,
    master_seed: int,
    replicate_index: int,
) -> ReplicateOutput:
    experiments = {}
    excluded = []
    for model in models:
        rng = replicate_rng(master_seed, replicate_index, model.experiment_id)
        rep = simulate_replicate(model, folds, rng)
        if rep is None:
            excluded.append(model.experiment_id)
        else:
            experiments[model.experiment_id] = rep
    return ReplicateOutput(
        replicate_index=replicate_index,
        master_seed=master_seed,
        experiments=experiments,
        excluded=tuple(excluded),
    )


# ---------------------------------------------------------------------------
# result store


@dataclass(frozen=True)
class MethodKey:
    """One estimator configuration; unused hyperparameters stay None."""

    method: str
    q: int | None = None
    rho: float | None = None
    m0: int | None = None

    def label(self) -> str:
        parts = []
        if self.q is not None:
            parts.append(f"q={self.q}")
        if self.rho is not None:
            parts.append(f"rho={self.rho:g}")
        if self.m0 is not None:
            parts.append(f"m0={self.m0}")
        return self.method if not parts else f"{self.method}[{','.join(parts)}]"


RAW = MethodKey("raw")
CLASSICAL = MethodKey("classical-eb")


class ResultStore:
    """Per-(replicate, method, experiment) estimates plus the run manifest."""

    def __init__(
        self,
        ids: Sequence[str],
        methods: Sequence[MethodKey],
        estimates: np.ndarray,
        manifest: dict,
    ):
        if estimates.shape[1:] != (len(methods), len(ids)):
            raise ValueError("estimates shape does not match methods/ids")
        self.ids = list(ids)
        self.methods = list(methods)
        self.estimates = estimates
        self.manifest = manifest

    @property
    def n_replicates(self) -> int:
        return self.estimates.shape[0]

    def estimates_for(self, key: MethodKey) -> np.ndarray:
        """(n_replicates, n_experiments) estimates; NaN marks exclusions."""
        try:
            idx = self.methods.index(key)
        except ValueError:
            raise KeyError(f"method {key.label()} not in store")
        return self.estimates[:, idx, :]

    def has_method(self, key: MethodKey) -> bool:
        return key in self.methods

    def to_dir(self, path: str | Path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        manifest = dict(self.manifest)
        manifest["ids"] = self.ids
        manifest["methods"] = [
            {"method": k.method, "q": k.q, "rho": k.rho, "m0": k.m0} for k in self.methods
        ]
        manifest["n_replicates"] = self.n_replicates
        manifest["shard_size"] = SHARD_SIZE
        (path / MANIFEST_NAME).write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        for shard_start in range(0, self.n_replicates, SHARD_SIZE):
            shard_end = min(shard_start + SHARD_SIZE, self.n_replicates)
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(["replicate", "experiment_id", "method", "q", "rho", "m0", "estimate"])
            for b in range(shard_start, shard_end):
                for mi, key in enumerate(self.methods):
                    for ei, exp_id in enumerate(self.ids):
                        est = self.estimates[b, mi, ei]
                        writer.writerow(
                            [
                                b,
                                exp_id,
                                key.method,
                                "" if key.q is None else key.q,
                                "" if key.rho is None else repr(float(key.rho)),
                                "" if key.m0 is None else key.m0,
                                "" if math.isnan(est) else repr(float(est)),
                            ]
                        )
            shard_name = f"shard-{shard_start // SHARD_SIZE:05d}.csv"
            (path / shard_name).write_text(buf.getvalue(), encoding="utf-8")

    @classmethod
    def from_dir(cls, path: str | Path) -> "ResultStore":
        path = Path(path)
        manifest_path = path / MANIFEST_NAME
        if not manifest_path.exists():
            raise FileNotFoundError(f"no result store at {path} (missing {MANIFEST_NAME})")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        ids = manifest["ids"]
        methods = [
            MethodKey(m["method"], m["q"], m["rho"], m["m0"]) for m in manifest["methods"]
        ]
        n_b = manifest["n_replicates"]
        estimates = np.full((n_b, len(methods), len(ids)), np.nan)
        id_index = {e: i for i, e in enumerate(ids)}
        key_index = {k: i for i, k in enumerate(methods)}
        for shard in sorted(path.glob("shard-*.csv")):
            with shard.open(encoding="utf-8") as fh:
                reader = csv.reader(fh)
                next(reader)
                for row in reader:
                    b, exp_id, method, q, rho, m0, est = row
                    if est == "":
                        continue
                    key = MethodKey(
                        method,
                        int(q) if q else None,
                        float(rho) if rho else None,
                        int(m0) if m0 else None,
                    )
                    estimates[int(b), key_index[key], id_index[exp_id]] = float(est)
        return cls(ids=ids, methods=methods, estimates=estimates, manifest=manifest)


# ---------------------------------------------------------------------------
# bootstrap engine


def _local_config(key: MethodKey, mode: str, include_target: bool) -> LocalMethodConfig:
    return LocalMethodConfig(
        strategy=key.method,
        q=key.q,
        m0=key.m0 if key.m0 is not None else 10**9,
        mode=mode,
        include_target=include_target,
    )


def _replicate_estimates(
    models: Sequence[NhppModel],
    folds: FoldAssignment,
    methods: Sequence[MethodKey],
    distance_matrices: Mapping[float, np.ndarray],
    mode: str,
    include_target: bool,
    master_seed: int,
    b: int,
) -> np.ndarray:
    ids = [m.experiment_id for m in models]
    rep = simulate_corpus_replicate(models, folds, master_seed, b)
    out = np.full((len(methods), len(ids)), np.nan)
    valid = [e for e in ids if e in rep.experiments]
    if len(valid) < 2:
        return out
    col = {e: i for i, e in enumerate(ids)}

    classical = None
    for mi, key in enumerate(methods):
        if key.method == "raw":
            for e in valid:
                out[mi, col[e]] = rep.experiments[e].y
        elif key.method == "classical-eb":
            if classical is None:
                classical = run_classical(rep.experiments, valid)
            for e, res in classical.items():
                out[mi, col[e]] = res.theta_tilde
        else:
            dist = None
            if key.method in ("cfshn", "process-only"):
                full = distance_matrices[key.rho]
                keep = [ids.index(e) for e in valid]
                dist = full[np.ix_(keep, keep)]
            results = run_local_method(
                rep.experiments, valid, dist, _local_config(key, mode, include_target)
            )
            for e, res in results.items():
                out[mi, col[e]] = res.theta_tilde
    return out


def _chunk_worker(args) -> tuple[int, np.ndarray]:
    (models, folds, methods, distance_matrices, mode, include_target,
     master_seed, b_start, b_end) = args
    chunk = np.stack(
        [
            _replicate_estimates(
                models, folds, methods, distance_matrices, mode, include_target,
                master_seed, b,
            )
            for b in range(b_start, b_end)
        ]
    )
    return b_start, chunk


def run_bootstrap(
    models: Sequence[NhppModel],
    methods: Sequence[MethodKey],
    b_replicates: int,
    master_seed: int,
    distance_matrices: Mapping[float, np.ndarray] | None = None,
    n_folds: int = 5,
    mode: str = "rotate",
    include_target: bool = False,
    workers: int = 1,
    dataset_hash: str = "",
) -> ResultStore:
    """Simulate B replicates and estimate every method on each.

    ``distance_matrices`` maps each rho used by a process-aware method to the
    composite matrix over ``models`` (in order).  Results are independent of
    ``workers``: every replicate's draws are keyed by (master seed, replicate
    index, experiment id) and rows are placed by replicate index.
    """
    if b_replicates < 1:
        raise ValueError("need at least 1 replicate")
    ids = [m.experiment_id for m in models]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate experiment ids in model list")
    distance_matrices = distance_matrices or {}
    for key in methods:
        if key.method in ("cfshn", "process-only") and key.rho not in distance_matrices:
            raise ValueError(f"method {key.label()} needs a distance matrix for rho={key.rho}")

    folds = assign_folds(
        {m.experiment_id: max(int(round(m.n)), n_folds) for m in models},
        n_folds,
        master_seed,
    )

    estimates = np.full((b_replicates, len(methods), len(ids)), np.nan)
    chunk_size = max(1, math.ceil(b_replicates / max(workers * 4, 1)))
    tasks = [
        (
            list(models),
            folds,
            list(methods),
            dict(distance_matrices),
            mode,
            include_target,
            master_seed,
            b0,
            min(b0 + chunk_size, b_replicates),
        )
        for b0 in range(0, b_replicates, chunk_size)
    ]
    if workers <= 1 or len(tasks) == 1:
        results = map(_chunk_worker, tasks)
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(_chunk_worker, tasks)
    for b_start, chunk in results:
        estimates[b_start : b_start + chunk.shape[0]] = chunk
    if workers > 1 and len(tasks) > 1:
        pool.shutdown()

    manifest = {
        "master_seed": master_seed,
        "n_folds": n_folds,
        "mode": mode,
        "include_target": include_target,
        "dataset_hash": dataset_hash,
        "references": {m.experiment_id: m.reference for m in models},
    }
    return ResultStore(ids=ids, methods=list(methods), estimates=estimates, manifest=manifest)
