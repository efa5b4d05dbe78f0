import io

import numpy as np
import pytest

from localeb.data import ArmStats, ExperimentSeries, Snapshot, parse_snapshot_file

CANONICAL_TEXT = """\
experiment_id,metric_id,time_days,arm,count_cum,mean_cum,variance_cum
exp1,m1,0.5,c,10,1.0,0.5
exp1,m1,0.5,t,12,1.1,0.55
exp1,m1,1.0,c,30,1.5,0.6
exp1,m1,1.0,t,28,1.4,0.5
"""


@pytest.fixture
def canonical_series():
    return parse_snapshot_file(io.StringIO(CANONICAL_TEXT))


def series_from_grid(times, counts_c, counts_t, means_c=None, means_t=None,
                     vars_c=None, vars_t=None, experiment_id="exp", metric_id="m"):
    """Build a series from parallel per-snapshot cumulative arrays."""
    n = len(times)
    means_c = means_c if means_c is not None else [1.0] * n
    means_t = means_t if means_t is not None else [1.0] * n
    vars_c = vars_c if vars_c is not None else [1.0] * n
    vars_t = vars_t if vars_t is not None else [1.0] * n
    snaps = tuple(
        Snapshot(
            time_days=float(times[i]),
            control=ArmStats(int(counts_c[i]), float(means_c[i]), float(vars_c[i])),
            treatment=ArmStats(int(counts_t[i]), float(means_t[i]), float(vars_t[i])),
        )
        for i in range(n)
    )
    return ExperimentSeries(experiment_id=experiment_id, metric_id=metric_id, snapshots=snaps)


def series_from_units(unit_values_c, unit_values_t, times=None,
                      experiment_id="exp", metric_id="m"):
    """Series whose cumulative stats come from explicit unit-level outcomes.

    ``unit_values_*`` is a list of per-interval arrays; the cumulative
    snapshot statistics are exact sample moments of the pooled units, which
    makes unit-level recomputation an independent oracle for moment
    differencing.
    """
    n = len(unit_values_c)
    times = times if times is not None else list(range(1, n + 1))
    snaps = []
    pool_c: list[float] = []
    pool_t: list[float] = []
    for i in range(n):
        pool_c.extend(unit_values_c[i])
        pool_t.extend(unit_values_t[i])
        arr_c = np.asarray(pool_c, dtype=float)
        arr_t = np.asarray(pool_t, dtype=float)
        snaps.append(
            Snapshot(
                time_days=float(times[i]),
                control=ArmStats(
                    len(arr_c),
                    float(arr_c.mean()) if arr_c.size else 0.0,
                    float(arr_c.var(ddof=1)) if arr_c.size >= 2 else 0.0,
                ),
                treatment=ArmStats(
                    len(arr_t),
                    float(arr_t.mean()) if arr_t.size else 0.0,
                    float(arr_t.var(ddof=1)) if arr_t.size >= 2 else 0.0,
                ),
            )
        )
    return ExperimentSeries(
        experiment_id=experiment_id, metric_id=metric_id, snapshots=tuple(snaps)
    )
