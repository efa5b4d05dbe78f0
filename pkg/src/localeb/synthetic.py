"""Fully synthetic snapshot corpora with known cluster structure.

The two-cluster generator produces experiments whose arrival shapes and true
effects both depend on a latent cluster: one cluster ramps traffic up over
the horizon while the other ramps down, and their effect distributions are
centered apart.  Within each cluster the effects split further into two
tight sub-levels that the arrival shape does *not* reveal, so outcome
refinement has signal left to exploit after process filtering.  Snapshot
files are emitted in the canonical schema, so the whole pipeline can run end
to end without external data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ArmStats, ExperimentSeries, Snapshot


@dataclass(frozen=True)
class TwoClusterConfig:
    n_experiments: int = 40
    horizon_days: float = 14.0
    snapshots_per_day: int = 1
    cluster_effect_gap: float = 0.5  # distance between the two cluster centers
    sublevel_gap: float = 0.2  # distance between sub-levels inside a cluster
    within_sublevel_sd: float = 0.01  # spread of true effects at one sub-level
    outcome_sd: float = 1.0
    arrivals_low: float = 1800.0
    arrivals_high: float = 3200.0
    baseline_mean: float = 1.0
    weekly_amplitude: float = 0.1
    source_noise: bool = True  # False: snapshot moments are exact (noise-free source)


@dataclass(frozen=True)
class SyntheticTruth:
    experiment_id: str
    cluster: str
    sublevel: int
    theta: float
    n_expected: float


def _pool_forward(counts, means, ss):
    """Cumulative (count, mean, sample variance) along segments."""
    cum_n = 0
    cum_mean = 0.0
    cum_ss = 0.0
    out = []
    for n, m, s in zip(counts, means, ss):
        if n > 0:
            new_n = cum_n + n
            new_mean = cum_mean + (m - cum_mean) * n / new_n if cum_n > 0 else m
            cum_ss = cum_ss + s + (
                cum_n * (cum_mean - new_mean) ** 2 + n * (m - new_mean) ** 2
                if cum_n > 0
                else 0.0
            )
            cum_n, cum_mean = new_n, new_mean
        var = cum_ss / (cum_n - 1) if cum_n >= 2 else 0.0
        out.append((cum_n, cum_mean, var))
    return out


def _pool_forward_exact(counts, means, variance):
    """Cumulative moments when segment means are exact and variance is known."""
    out = []
    cum_n = 0
    cum_mean = 0.0
    for n, m in zip(counts, means):
        if n > 0:
            cum_mean = (cum_n * cum_mean + n * m) / (cum_n + n)
            cum_n += n
        out.append((cum_n, cum_mean, variance if cum_n >= 2 else 0.0))
    return out


def make_two_cluster_corpus(
    seed: int, config: TwoClusterConfig | None = None
) -> tuple[list[ExperimentSeries], list[SyntheticTruth]]:
    """Simulate snapshot series for a two-cluster corpus.

    Experiments alternate between the ramp-up cluster (positive effect
    center) and the ramp-down cluster (negative center); inside each cluster
    they alternate between the two effect sub-levels.  Traffic volumes
    overlap across clusters so that shape, not scale, separates them.  With
    ``source_noise=False`` the snapshot moments equal the generative ones,
    making the long-horizon reference coincide with the true effect.
    """
    config = config or TwoClusterConfig()
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x573D])))
    n_segments = int(round(config.horizon_days * config.snapshots_per_day))
    widths = np.full(n_segments, 1.0 / config.snapshots_per_day)
    times = np.cumsum(widths)
    mids = times - widths / 2.0

    series_list = []
    truths = []
    half_gap = config.cluster_effect_gap / 2.0
    half_sub = config.sublevel_gap / 2.0
    for i in range(config.n_experiments):
        cluster = "ramp-up" if i % 2 == 0 else "ramp-down"
        sublevel = (i // 2) % 2
        frac = mids / config.horizon_days
        profile = 0.5 + frac if cluster == "ramp-up" else 1.5 - frac
        shape = profile / (profile @ widths)

        n_total = float(rng.uniform(config.arrivals_low, config.arrivals_high))
        rates = n_total * shape
        center = half_gap if cluster == "ramp-up" else -half_gap
        center += half_sub if sublevel == 0 else -half_sub
        theta = float(rng.normal(center, config.within_sublevel_sd))
        mu_c = config.baseline_mean + config.weekly_amplitude * np.sin(2 * np.pi * mids / 7.0)
        mu_t = mu_c + theta
        sig2 = config.outcome_sd**2

        lam_half = rates * widths / 2.0
        counts = {"t": rng.poisson(lam_half), "c": rng.poisson(lam_half)}
        arm_cum = {}
        for arm, mu in (("t", mu_t), ("c", mu_c)):
            n_seg = counts[arm]
            if config.source_noise:
                z = rng.standard_normal(n_segments)
                with np.errstate(divide="ignore", invalid="ignore"):
                    means = np.where(
                        n_seg > 0, mu + z * np.sqrt(sig2 / np.maximum(n_seg, 1)), 0.0
                    )
                chi = rng.chisquare(np.maximum(n_seg - 1.0, 1.0))
                ss = np.where(n_seg >= 2, sig2 * chi, 0.0)
                arm_cum[arm] = _pool_forward(n_seg, means, ss)
            else:
                arm_cum[arm] = _pool_forward_exact(n_seg, mu, sig2)

        snaps = []
        for j, t in enumerate(times):
            n_c, m_c, v_c = arm_cum["c"][j]
            n_t, m_t, v_t = arm_cum["t"][j]
            snaps.append(
                Snapshot(
                    time_days=float(t),
                    control=ArmStats(count=int(n_c), mean=float(m_c), variance=float(v_c)),
                    treatment=ArmStats(count=int(n_t), mean=float(m_t), variance=float(v_t)),
                )
            )
        exp_id = f"synth-{i:03d}"
        series_list.append(
            ExperimentSeries(experiment_id=exp_id, metric_id="kpi", snapshots=tuple(snaps))
        )
        truths.append(
            SyntheticTruth(
                experiment_id=exp_id,
                cluster=cluster,
                sublevel=sublevel,
                theta=theta,
                n_expected=n_total,
            )
        )
    return series_list, truths
