"""Snapshot-level experiment data: parsing, increments, effect estimates.

An experiment series is a sequence of snapshots, each reporting *cumulative*
per-arm counts, means and variances at a point in time.  Everything downstream
(arrival shapes, NHPP fits, effect estimates) is derived from these series.

Conventions
-----------
* ``time_days`` is days since experiment start.  The experiment origin is
  t = 0; a series whose first snapshot is at t > 0 implicitly accumulated its
  first snapshot's mass over [0, t].  A snapshot at t = 0 acts as an explicit
  origin and normally carries zero counts.
* ``variance_cum`` is the sample variance (ddof=1) of all outcomes observed
  up to the snapshot.
* Canonical CSV schema (header required, '.' decimal):
  ``experiment_id,metric_id,time_days,arm,count_cum,mean_cum,variance_cum``
  with ``arm`` in {'t', 'c'}; one row per (experiment, metric, snapshot, arm).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

from .errors import InsufficientDataError, ParseError, ValidationError

CANONICAL_HEADER = (
    "experiment_id",
    "metric_id",
    "time_days",
    "arm",
    "count_cum",
    "mean_cum",
    "variance_cum",
)

# Column mapping for the public ASOS digital-experiments export (wide format,
# one row per snapshot with both arms).  The dataset's column headers are not
# standardized anywhere authoritative, so the mapping is pinned and versioned
# here.
ASOS_ADAPTER_VERSION = "asos-adapter-1"
ASOS_COLUMNS = {
    "experiment_id": "experiment_id",
    "metric_id": "metric_id",
    "time": "time_since_start",
    "count_c": "count_c",
    "mean_c": "mean_c",
    "variance_c": "variance_c",
    "count_t": "count_t",
    "mean_t": "mean_t",
    "variance_t": "variance_t",
}


@dataclass(frozen=True)
class ArmStats:
    """Cumulative statistics for one arm at one snapshot."""

    count: int
    mean: float
    variance: float


@dataclass(frozen=True)
class Snapshot:
    time_days: float
    control: ArmStats
    treatment: ArmStats

    @property
    def total_count(self) -> int:
        return self.control.count + self.treatment.count


@dataclass(frozen=True)
class ExperimentSeries:
    """Ordered snapshots for one (experiment, metric) pair.

    Snapshots are strictly increasing in time with non-decreasing cumulative
    counts; the horizon T equals the last snapshot time.
    """

    experiment_id: str
    metric_id: str
    snapshots: tuple[Snapshot, ...]

    def __post_init__(self):
        validate_series(self)

    @property
    def horizon_days(self) -> float:
        return self.snapshots[-1].time_days

    @property
    def n_snapshots(self) -> int:
        return len(self.snapshots)

    def label(self) -> str:
        return f"{self.experiment_id}/{self.metric_id}"


@dataclass(frozen=True)
class IntervalStats:
    """Reconstructed per-interval statistics.

    Means/variances are per arm, recovered from consecutive cumulative
    moments; they are NaN when an interval carries no arrivals for that arm.
    """

    start: float
    end: float
    arrivals_control: int
    arrivals_treatment: int
    mean_control: float
    mean_treatment: float
    variance_control: float
    variance_treatment: float

    @property
    def width(self) -> float:
        return self.end - self.start

    @property
    def arrivals_total(self) -> int:
        return self.arrivals_control + self.arrivals_treatment


@dataclass(frozen=True)
class EffectEstimate:
    """Difference-in-means y with sampling variance v = s_T^2/n_T + s_C^2/n_C."""

    y: float
    v: float
    n_t: int
    n_c: int


def validate_series(series: ExperimentSeries) -> None:
    snaps = series.snapshots
    if len(snaps) < 2:
        raise ValidationError(
            f"series {series.label()} needs at least 2 snapshots, got {len(snaps)}"
        )
    prev = None
    for idx, snap in enumerate(snaps):
        if snap.time_days < 0 or not math.isfinite(snap.time_days):
            raise ValidationError(
                f"series {series.label()} snapshot {idx}: bad time {snap.time_days}"
            )
        for arm_name, arm in (("c", snap.control), ("t", snap.treatment)):
            if arm.count < 0:
                raise ValidationError(
                    f"series {series.label()} snapshot {idx} arm {arm_name}: negative count"
                )
            if arm.variance < 0 or not math.isfinite(arm.variance):
                raise ValidationError(
                    f"series {series.label()} snapshot {idx} arm {arm_name}: bad variance"
                )
            if not math.isfinite(arm.mean):
                raise ValidationError(
                    f"series {series.label()} snapshot {idx} arm {arm_name}: non-finite mean"
                )
        if prev is not None:
            if snap.time_days <= prev.time_days:
                raise ValidationError(
                    f"series {series.label()} snapshot {idx}: time not strictly increasing"
                )
            if (
                snap.control.count < prev.control.count
                or snap.treatment.count < prev.treatment.count
            ):
                raise ValidationError(
                    f"series {series.label()} snapshot {idx}: cumulative count decreased"
                )
        prev = snap


def _open_source(source) -> Iterable[str]:
    if isinstance(source, (str, Path)):
        return Path(source).read_text(encoding="utf-8").splitlines()
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return data.splitlines()


def parse_snapshot_file(source: str | Path | IO) -> list[ExperimentSeries]:
    """Parse a canonical snapshot CSV into a sorted list of series.

    Parameters
    ----------
    source : path or file-like
        UTF-8 CSV with the canonical header.

    Returns
    -------
    list of ExperimentSeries, sorted by (experiment_id, metric_id).

    Raises
    ------
    ParseError
        Malformed header or row (with the offending line number).
    ValidationError
        A parsed series violates a type invariant (e.g. decreasing counts,
        missing arm at a snapshot time).
    """
    lines = _open_source(source)
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file, expected canonical header", line=1)
    if tuple(h.strip() for h in header) != CANONICAL_HEADER:
        raise ParseError(
            f"unexpected header {header!r}, expected {','.join(CANONICAL_HEADER)}", line=1
        )

    # rows[(exp, metric)][time] = {arm: ArmStats}
    rows: dict[tuple[str, str], dict[float, dict[str, ArmStats]]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(CANONICAL_HEADER):
            raise ParseError(
                f"expected {len(CANONICAL_HEADER)} fields, got {len(row)}", line=lineno
            )
        exp_id, metric_id, t_raw, arm, count_raw, mean_raw, var_raw = (
            field.strip() for field in row
        )
        if arm not in ("t", "c"):
            raise ParseError(f"arm must be 't' or 'c', got {arm!r}", line=lineno)
        try:
            t = float(t_raw)
            count = int(count_raw)
            mean = float(mean_raw)
            var = float(var_raw)
        except ValueError as exc:
            raise ParseError(f"bad numeric field ({exc})", line=lineno)
        per_time = rows.setdefault((exp_id, metric_id), {}).setdefault(t, {})
        if arm in per_time:
            raise ParseError(
                f"duplicate row for {exp_id}/{metric_id} t={t} arm={arm}", line=lineno
            )
        per_time[arm] = ArmStats(count=count, mean=mean, variance=var)

    out = []
    for (exp_id, metric_id), per_time in sorted(rows.items()):
        snaps = []
        for t in sorted(per_time):
            arms = per_time[t]
            missing = {"t", "c"} - set(arms)
            if missing:
                raise ValidationError(
                    f"series {exp_id}/{metric_id} t={t}: missing arm {sorted(missing)}"
                )
            snaps.append(Snapshot(time_days=t, control=arms["c"], treatment=arms["t"]))
        out.append(
            ExperimentSeries(
                experiment_id=exp_id, metric_id=metric_id, snapshots=tuple(snaps)
            )
        )
    return out


def write_snapshot_csv(series_list: Sequence[ExperimentSeries], path: str | Path) -> None:
    """Write series back out in the canonical schema (sorted, deterministic)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CANONICAL_HEADER)
    for series in sorted(series_list, key=lambda s: (s.experiment_id, s.metric_id)):
        for snap in series.snapshots:
            for arm_code, arm in (("c", snap.control), ("t", snap.treatment)):
                writer.writerow(
                    [
                        series.experiment_id,
                        series.metric_id,
                        repr(float(snap.time_days)),
                        arm_code,
                        arm.count,
                        repr(float(arm.mean)),
                        repr(float(arm.variance)),
                    ]
                )
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def adapt_asos_file(source: str | Path | IO, time_unit: str = "days") -> list[ExperimentSeries]:
    """Convert an ASOS-format wide CSV to canonical series.

    One input row per (experiment, metric, snapshot) holding both arms; see
    ``ASOS_COLUMNS`` for the expected header names.  ``time_unit`` rescales
    ``time_since_start`` to days ('days' or 'hours').
    """
    if time_unit not in ("days", "hours"):
        raise ValueError(f"time_unit must be 'days' or 'hours', got {time_unit!r}")
    scale = 1.0 if time_unit == "days" else 1.0 / 24.0

    lines = _open_source(source)
    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError("empty ASOS file", line=1)
    try:
        col = {key: header.index(name) for key, name in ASOS_COLUMNS.items()}
    except ValueError as exc:
        raise ParseError(f"missing ASOS column ({exc})", line=1)

    rows: dict[tuple[str, str], dict[float, dict[str, ArmStats]]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        try:
            exp_id = row[col["experiment_id"]].strip()
            metric_id = row[col["metric_id"]].strip()
            t = float(row[col["time"]]) * scale
            arms = {
                "c": ArmStats(
                    count=int(float(row[col["count_c"]])),
                    mean=float(row[col["mean_c"]]),
                    variance=float(row[col["variance_c"]]),
                ),
                "t": ArmStats(
                    count=int(float(row[col["count_t"]])),
                    mean=float(row[col["mean_t"]]),
                    variance=float(row[col["variance_t"]]),
                ),
            }
        except (ValueError, IndexError) as exc:
            raise ParseError(f"bad ASOS row ({exc})", line=lineno)
        rows.setdefault((exp_id, metric_id), {})[t] = arms

    out = []
    for (exp_id, metric_id), per_time in sorted(rows.items()):
        snaps = tuple(
            Snapshot(time_days=t, control=per_time[t]["c"], treatment=per_time[t]["t"])
            for t in sorted(per_time)
        )
        out.append(
            ExperimentSeries(experiment_id=exp_id, metric_id=metric_id, snapshots=snaps)
        )
    return out


def _interval_moments(
    n0: int, m0: float, v0: float, n1: int, m1: float, v1: float, tally: dict | None
) -> tuple[float, float]:
    """Invert pooled moments between consecutive snapshots of one arm.

    Returns (mean, variance) of the outcomes that arrived in the interval,
    NaN mean when the interval is empty, NaN variance when fewer than two
    arrivals.  Negative reconstructed variances clamp to 0 and are tallied.
    """
    d = n1 - n0
    if d == 0:
        return math.nan, math.nan
    mean = (n1 * m1 - n0 * m0) / d
    if d < 2:
        return mean, math.nan
    # sum of squares via sample variances: ss = (n-1) v + n m^2
    ss1 = (n1 - 1) * v1 + n1 * m1 * m1
    ss0 = (n0 - 1) * v0 + n0 * m0 * m0 if n0 > 0 else 0.0
    var = ((ss1 - ss0) - d * mean * mean) / (d - 1)
    if var < 0.0:
        if tally is not None:
            tally["clamped_negative_variance"] = tally.get("clamped_negative_variance", 0) + 1
        var = 0.0
    return mean, var


def compute_increments(
    series: ExperimentSeries, tally: dict | None = None
) -> list[IntervalStats]:
    """Reconstruct per-interval arrivals and outcome moments.

    The interval grid starts at the origin t=0: a first snapshot at t > 0
    closes the interval [0, t] whose arrivals equal that snapshot's
    cumulative counts.  ``tally`` (optional dict) accumulates diagnostics,
    currently the count of negative reconstructed variances clamped to 0.
    """
    snaps = series.snapshots
    if snaps[0].time_days > 0:
        boundary = [
            Snapshot(
                time_days=0.0,
                control=ArmStats(0, 0.0, 0.0),
                treatment=ArmStats(0, 0.0, 0.0),
            )
        ] + list(snaps)
    else:
        boundary = list(snaps)

    out = []
    for prev, cur in zip(boundary[:-1], boundary[1:]):
        width = cur.time_days - prev.time_days
        if width <= 0:
            raise ValidationError(
                f"series {series.label()}: zero-width interval at t={cur.time_days}"
            )
        mc, vc = _interval_moments(
            prev.control.count, prev.control.mean, prev.control.variance,
            cur.control.count, cur.control.mean, cur.control.variance, tally,
        )
        mt, vt = _interval_moments(
            prev.treatment.count, prev.treatment.mean, prev.treatment.variance,
            cur.treatment.count, cur.treatment.mean, cur.treatment.variance, tally,
        )
        out.append(
            IntervalStats(
                start=prev.time_days,
                end=cur.time_days,
                arrivals_control=cur.control.count - prev.control.count,
                arrivals_treatment=cur.treatment.count - prev.treatment.count,
                mean_control=mc,
                mean_treatment=mt,
                variance_control=vc,
                variance_treatment=vt,
            )
        )
    return out


def effect_estimate(series: ExperimentSeries, at_snapshot: int) -> EffectEstimate:
    """Difference-in-means and its sampling variance at one snapshot.

    Both arms need cumulative counts >= 2 so the sample variances are defined.
    """
    snap = series.snapshots[at_snapshot]
    if snap.treatment.count < 2 or snap.control.count < 2:
        raise InsufficientDataError(
            f"series {series.label()} snapshot {at_snapshot}: "
            f"needs >= 2 observations per arm "
            f"(t={snap.treatment.count}, c={snap.control.count})"
        )
    y = snap.treatment.mean - snap.control.mean
    v = snap.treatment.variance / snap.treatment.count + snap.control.variance / snap.control.count
    return EffectEstimate(y=y, v=v, n_t=snap.treatment.count, n_c=snap.control.count)


def reference_effect(series: ExperimentSeries) -> float:
    """Long-horizon reference effect: difference-in-means at the final snapshot."""
    return effect_estimate(series, len(series.snapshots) - 1).y
