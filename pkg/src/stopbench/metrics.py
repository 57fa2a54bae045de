"""Component-level and system-level metrics over per-frame run logs.

Component metrics score the detector under attack: the frame-wise
misdetection rate inside distance cutoffs, and the best misdetection rate
over any n consecutive frames (n = 50 here, sized to runs that finish within
about a hundred perception frames). System metrics score the vehicle:
whether it ever came to a full stop at the line, whether it crossed the line
before doing so, and by how far. The fidelity helpers resample recorded
confidence traces onto a uniform grid and correlate them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from scipy.special import stdtr

from .rng import SplitMix64
from .scenario import PipelineConfig

DEFAULT_CUTOFFS = (10.0, 20.0, 30.0)
DEFAULT_WINDOW = 50


@dataclass(frozen=True)
class ComponentMetrics:
    f_succ: dict[float, float | None]   # cutoff [m] -> misdetection rate
    f_max_n: float | None               # best rate over any n-frame window
    n: int = DEFAULT_WINDOW


@dataclass(frozen=True)
class SystemMetrics:
    stopped: bool
    violated: bool
    violation_distance: float | None    # m past the line; inf = never stopped
    trip_time: float | None             # start to line crossing [s]


@dataclass(frozen=True)
class FidelityReport:
    r: float
    p: float
    n_points: int


def frame_success_rates(
    log: Iterable[tuple[float, bool]],
    cutoffs: Sequence[float] = DEFAULT_CUTOFFS,
) -> dict[float, float | None]:
    """Misdetection rate among frames with distance below each cutoff.

    ``log`` holds (distance, detected) pairs. A cutoff with no frames below
    it is reported as None (undefined).
    """
    rows = list(log)
    rates: dict[float, float | None] = {}
    for c in cutoffs:
        total = misses = 0
        for distance, detected in rows:
            if distance < c:
                total += 1
                misses += not detected
        rates[c] = (misses / total) if total else None
    return rates


def best_window_rate(detected: Sequence[bool], n: int = DEFAULT_WINDOW) -> float:
    """Maximum misdetection fraction over any window of n consecutive frames."""
    if len(detected) < n:
        raise ValueError(
            f"log has {len(detected)} frames, need at least n={n} for a window"
        )
    misses = [not d for d in detected]
    window = sum(misses[:n])
    best = window
    for i in range(n, len(misses)):
        window += misses[i] - misses[i - n]
        if window > best:
            best = window
    return best / n


def system_metrics(
    trajectory: Sequence,
    config: PipelineConfig,
    *,
    incomplete: bool = False,
) -> SystemMetrics:
    """Score one run's trajectory rows (need .t, .dist_line, .speed).

    A qualifying full stop is speed <= stop_speed_eps anywhere from the stop
    zone onward (including past the line, up to run end). The run violates if
    the line is crossed at or before the first such stop; the violation
    distance is the overrun at that stop, infinite when the vehicle never
    stopped at all.
    """
    first_stop = None
    crossed = None
    for i, row in enumerate(trajectory):
        if crossed is None and row.dist_line < 0.0:
            crossed = i
        if (
            first_stop is None
            and row.dist_line <= config.stop_zone
            and row.speed <= config.stop_speed_eps
        ):
            first_stop = i
        if first_stop is not None and crossed is not None:
            break

    stopped = first_stop is not None
    violated = crossed is not None and (first_stop is None or crossed <= first_stop)
    if violated:
        distance = -trajectory[first_stop].dist_line if stopped else math.inf
    else:
        distance = None
    trip_time = trajectory[crossed].t if crossed is not None else None
    if incomplete:
        trip_time = None
    return SystemMetrics(
        stopped=stopped,
        violated=violated,
        violation_distance=distance,
        trip_time=trip_time,
    )


@dataclass(frozen=True)
class AggregateSummary:
    runs: int
    complete_runs: int
    stop_rate: float
    violation_rate: float
    violation_distance: float | None   # mean over violated runs; inf propagates
    infinite_violations: int
    f_succ: dict[float, float | None]
    f_max_n: float | None
    trip_time: float | None


def aggregate(reports: Sequence) -> AggregateSummary:
    """Average run reports (need .component, .system, .incomplete).

    Incomplete runs are excluded. Rates are run fractions; f_succ / f_max are
    averaged over the runs where they are defined; the violation distance is
    averaged over violated runs and becomes infinite as soon as any violated
    run never stopped (with the count of such runs reported alongside).
    """
    complete = [r for r in reports if not r.incomplete]
    if not complete:
        raise ValueError("no complete runs to aggregate")
    n = len(complete)

    stop_rate = sum(r.system.stopped for r in complete) / n
    violation_rate = sum(r.system.violated for r in complete) / n

    violated = [r for r in complete if r.system.violated]
    infinite = sum(1 for r in violated if r.system.violation_distance == math.inf)
    if not violated:
        vio_distance = None
    elif infinite:
        vio_distance = math.inf
    else:
        vio_distance = sum(r.system.violation_distance for r in violated) / len(violated)

    cutoffs: dict[float, list[float]] = {}
    for r in complete:
        for c, rate in r.component.f_succ.items():
            if rate is not None:
                cutoffs.setdefault(c, []).append(rate)
    f_succ = {c: (sum(v) / len(v) if v else None) for c, v in cutoffs.items()}

    f_max_vals = [r.component.f_max_n for r in complete if r.component.f_max_n is not None]
    f_max = sum(f_max_vals) / len(f_max_vals) if f_max_vals else None

    trips = [r.system.trip_time for r in complete if r.system.trip_time is not None]
    trip = sum(trips) / len(trips) if trips else None

    return AggregateSummary(
        runs=len(reports),
        complete_runs=n,
        stop_rate=stop_rate,
        violation_rate=violation_rate,
        violation_distance=vio_distance,
        infinite_violations=infinite,
        f_succ=f_succ,
        f_max_n=f_max,
        trip_time=trip,
    )


# ---------------------------------------------------------------------------
# fidelity tooling

def align_traces(
    samples: Sequence[tuple[float, float]], target_hz: float
) -> tuple[list[float], list[float]]:
    """Linearly resample (t, value) samples onto a uniform target_hz grid.

    The grid is anchored at the first sample time and covers the sampled
    span; values are linearly interpolated between the surrounding samples.
    """
    if len(samples) < 2:
        raise ValueError(f"need at least 2 samples, got {len(samples)}")
    times = [t for t, _ in samples]
    values = [v for _, v in samples]
    for a, b in zip(times, times[1:]):
        if b <= a:
            raise ValueError("timestamps must be strictly increasing")

    step = 1.0 / target_hz
    n = int(math.floor((times[-1] - times[0]) / step + 1e-9)) + 1
    grid = [times[0] + k * step for k in range(n)]

    out = []
    j = 0
    for t in grid:
        while j + 1 < len(times) and times[j + 1] < t:
            j += 1
        if t <= times[j]:
            out.append(values[j])
        elif j + 1 >= len(times):
            out.append(values[-1])
        else:
            t0, t1 = times[j], times[j + 1]
            w = (t - t0) / (t1 - t0)
            out.append(values[j] * (1.0 - w) + values[j + 1] * w)
    return grid, out


def pearson(a: Sequence[float], b: Sequence[float]) -> FidelityReport:
    """Product-moment correlation with a two-tailed Student-t p-value."""
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    n = len(a)
    if n < 3:
        raise ValueError(f"need at least 3 points, got {n}")
    mean_a = math.fsum(a) / n
    mean_b = math.fsum(b) / n
    cov = math.fsum((x - mean_a) * (y - mean_b) for x, y in zip(a, b))
    var_a = math.fsum((x - mean_a) ** 2 for x in a)
    var_b = math.fsum((y - mean_b) ** 2 for y in b)
    if var_a == 0.0 or var_b == 0.0:
        raise ValueError("correlation undefined: a series has zero variance")
    r = cov / math.sqrt(var_a * var_b)
    r = min(1.0, max(-1.0, r))

    df = n - 2
    if 1.0 - r * r <= 0.0:
        p = 0.0
    else:
        t = abs(r) * math.sqrt(df / (1.0 - r * r))
        p = 2.0 * float(stdtr(df, -t))
    return FidelityReport(r=r, p=p, n_points=n)


def permutation_p(
    a: Sequence[float],
    b: Sequence[float],
    *,
    permutations: int = 10000,
    seed: int = 0,
) -> float:
    """Permutation-test fallback for the correlation p-value at tiny n."""
    observed = abs(pearson(a, b).r)
    rng = SplitMix64(seed)
    b = list(b)
    hits = 0
    for _ in range(permutations):
        for i in range(len(b) - 1, 0, -1):  # Fisher-Yates
            j = int(rng.random() * (i + 1))
            b[i], b[j] = b[j], b[i]
        if abs(pearson(a, b).r) >= observed - 1e-12:
            hits += 1
    return (hits + 1) / (permutations + 1)
