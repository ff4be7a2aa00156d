"""Pairwise meta-evaluation of latency metrics against true latency.

Two runs of the same test set and language pair form a comparison. A metric agrees
with true latency on a comparison when both differences have the same sign.
"""

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Any, NamedTuple

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import kendalltau, norm, pearsonr, rankdata, tiecorrect

from .errors import SchemaError, UndefinedInputError, ValidationError

logger = logging.getLogger(__name__)

# Below this sample size the Mann-Whitney p-value is computed exactly.
EXACT_LIMIT = 8

# Bootstrap resamples drawn per generator; every chunk has its own seed.
BOOTSTRAP_CHUNK = 1000

DEFAULT_ANOMALY_THRESHOLD = 0.15

REGIME_BIN_MS = 1000.0


class SampleMode(str, Enum):
    segment = "segment"
    token = "token"


class Bucket(str, Enum):
    all = "all"
    p05 = "p<0.05"
    p001 = "p<0.001"
    between = "0.001<=p<0.05"

    def contains(self, p_value: float) -> bool:
        match self:
            case Bucket.all:
                return True
            case Bucket.p05:
                return p_value < 0.05
            case Bucket.p001:
                return p_value < 0.001
            case Bucket.between:
                return 0.001 <= p_value < 0.05


@dataclass(frozen=True)
class SystemRun:
    system_id: str
    testset_id: str
    language_pair: str
    scores: dict[str, float]
    true_latency: float | None = None
    tl_segments: tuple[float | None, ...] = ()
    tl_gaps: tuple[float, ...] = ()
    n_tokens: tuple[int, ...] = ()
    n_tail: tuple[int, ...] = ()
    source_durations_ms: tuple[float, ...] = ()

    @property
    def key(self) -> tuple[str, str]:
        return self.testset_id, self.language_pair

    def tl_samples(self, mode: SampleMode = SampleMode.segment) -> list[float]:
        if mode == SampleMode.token:
            return list(self.tl_gaps)
        return [value for value in self.tl_segments if value is not None]

    @classmethod
    def from_report(cls, report: dict[str, Any]) -> "SystemRun":
        """Read a run report written by ``eval`` or ``longeval``."""
        for key in ("system_id", "testset_id", "language_pair", "corpus", "segments"):
            if key not in report:
                raise SchemaError(f"Run report is missing '{key}'")

        scores = {
            name: float(entry["value"])
            for name, entry in report["corpus"].items()
            if isinstance(entry, dict) and entry.get("value") is not None
        }
        segments = report["segments"]
        try:
            tl_segments = tuple(segment.get("true_latency") for segment in segments)
            tl_gaps = tuple(float(gap) for segment in segments for gap in segment.get("tl_gaps") or ())
            n_tokens = tuple(int(segment["n_tokens"]) for segment in segments)
            n_tail = tuple(int(segment["n_tail"]) for segment in segments)
            durations = tuple(float(segment["source_duration_ms"]) for segment in segments)
        except (KeyError, TypeError, AttributeError) as e:
            raise SchemaError(f"Malformed segment entry in run report of '{report['system_id']}': {e}") from e

        tl = report.get("true_latency")
        true_latency = float(tl["value"]) if isinstance(tl, dict) and tl.get("value") is not None else None
        if true_latency is not None:
            scores["TL"] = true_latency
        return cls(
            system_id=str(report["system_id"]),
            testset_id=str(report["testset_id"]),
            language_pair=str(report["language_pair"]),
            scores=scores,
            true_latency=true_latency,
            tl_segments=tl_segments,
            tl_gaps=tl_gaps,
            n_tokens=n_tokens,
            n_tail=n_tail,
            source_durations_ms=durations,
        )


@dataclass(frozen=True)
class ComparisonOutcome:
    system_a: str
    system_b: str
    delta_tl: float
    delta_metric: dict[str, float]
    p_value: float
    testset_id: str = ""
    language_pair: str = ""

    def agree(self, metric: str) -> bool:
        """Sign agreement; a metric difference of zero never agrees with a non-zero true latency difference."""
        return bool(np.sign(self.delta_tl) == np.sign(self.delta_metric[metric]))


class MannWhitney(NamedTuple):
    u_a: float
    u_b: float
    p_value: float
    exact: bool


def _exact_p(doubled: np.ndarray, n_small: int, observed: int) -> float:
    """Two-sided p-value of the rank sum of ``n_small`` items drawn from ``doubled`` (twice the pooled ranks).

    Counts every subset of size ``n_small`` by its rank sum, so ties are handled conditionally.
    """
    n_total = len(doubled)
    highest = int(np.sort(doubled)[-n_small:].sum())
    counts = np.zeros((n_small + 1, highest + 1))
    counts[0, 0] = 1.0
    for rank in doubled:
        rank = int(rank)
        if rank > highest:
            continue
        for k in range(n_small, 0, -1):
            counts[k, rank:] += counts[k - 1, : highest + 1 - rank]

    distribution = counts[n_small]
    centre = n_small * (n_total + 1)
    extreme = np.abs(np.arange(highest + 1) - centre) >= abs(observed - centre)
    return min(1.0, float(distribution[extreme].sum() / distribution.sum()))


def mann_whitney_u(samples_a: Sequence[float], samples_b: Sequence[float]) -> MannWhitney:
    """Two-sided Mann-Whitney U test.

    Exact when the smaller sample has fewer than ``EXACT_LIMIT`` values, otherwise the
    normal approximation with tie and continuity correction.
    """
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise UndefinedInputError("The Mann-Whitney U test needs two non-empty samples")

    n_a, n_b = a.size, b.size
    ranks = rankdata(np.concatenate([a, b]))
    u_a = float(ranks[:n_a].sum()) - n_a * (n_a + 1) / 2
    u_b = n_a * n_b - u_a

    if min(n_a, n_b) < EXACT_LIMIT:
        doubled = np.rint(2 * ranks).astype(int)
        if n_a <= n_b:
            p_value = _exact_p(doubled, n_a, int(doubled[:n_a].sum()))
        else:
            p_value = _exact_p(doubled, n_b, int(doubled[n_a:].sum()))
        return MannWhitney(u_a, u_b, p_value, True)

    mean = n_a * n_b / 2
    sigma = math.sqrt(tiecorrect(ranks) * n_a * n_b * (n_a + n_b + 1) / 12)
    if sigma == 0:
        return MannWhitney(u_a, u_b, 1.0, False)
    z = (max(u_a, u_b) - mean - 0.5) / sigma
    return MannWhitney(u_a, u_b, min(1.0, 2 * float(norm.sf(z))), False)


def compare_runs(
    runs: Sequence[SystemRun],
    metrics: Sequence[str],
    sample_mode: SampleMode = SampleMode.segment,
) -> tuple[list[ComparisonOutcome], int]:
    """Build every comparison between runs sharing test set and language pair.

    Returns the outcomes in input order and the number of pairs skipped because the test
    sets or language pairs differ.
    """
    outcomes = []
    skipped = 0
    for run_a, run_b in combinations(runs, 2):
        if run_a.key != run_b.key:
            skipped += 1
            continue
        if run_a.true_latency is None or run_b.true_latency is None:
            raise ValidationError(f"Runs '{run_a.system_id}' and '{run_b.system_id}' need true latency to be compared")

        deltas = {}
        for metric in metrics:
            if metric not in run_a.scores or metric not in run_b.scores:
                raise ValidationError(f"Metric {metric} is missing from '{run_a.system_id}' or '{run_b.system_id}'")
            deltas[metric] = run_a.scores[metric] - run_b.scores[metric]

        outcomes.append(
            ComparisonOutcome(
                system_a=run_a.system_id,
                system_b=run_b.system_id,
                delta_tl=run_a.true_latency - run_b.true_latency,
                delta_metric=deltas,
                p_value=mann_whitney_u(run_a.tl_samples(sample_mode), run_b.tl_samples(sample_mode)).p_value,
                testset_id=run_a.testset_id,
                language_pair=run_a.language_pair,
            )
        )

    if skipped:
        logger.warning("%d pair(s) with different test sets or language pairs skipped", skipped)
    return outcomes, skipped


def _agreements(outcomes: Sequence[ComparisonOutcome], metric: str) -> np.ndarray:
    # Pairs the gold cannot order carry no sign to agree with.
    eligible = [outcome for outcome in outcomes if outcome.delta_tl != 0]
    if not eligible:
        raise UndefinedInputError(f"No comparison with a true latency difference to score {metric} on")
    return np.array([outcome.agree(metric) for outcome in eligible], dtype=bool)


def sign_accuracy(outcomes: Sequence[ComparisonOutcome], metric: str) -> float:
    """Share of comparisons in which the metric orders the two runs like true latency."""
    if not outcomes:
        raise UndefinedInputError("Accuracy needs at least one comparison")
    return float(_agreements(outcomes, metric).mean())


def _bootstrap_chunk(agreements: np.ndarray, seed: int, chunk: int, size: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, chunk])))
    picks = rng.integers(0, len(agreements), size=(size, len(agreements)))
    return agreements[picks].mean(axis=1)


class Interval(NamedTuple):
    low: float
    high: float


def bootstrap_accuracy_ci(
    outcomes: Sequence[ComparisonOutcome],
    metric: str,
    n_resamples: int,
    seed: int,
    n_jobs: int = 1,
) -> Interval:
    """95 % percentile interval of the accuracy over comparisons resampled with replacement.

    Resamples are drawn in chunks of ``BOOTSTRAP_CHUNK`` from PCG64 generators seeded with
    ``(seed, chunk index)``, so the interval does not depend on ``n_jobs``.
    """
    if n_resamples < 1:
        raise ValidationError(f"The bootstrap needs at least one resample, got {n_resamples}")
    if not outcomes:
        raise UndefinedInputError("The bootstrap needs at least one comparison")

    agreements = _agreements(outcomes, metric)
    sizes = [min(BOOTSTRAP_CHUNK, n_resamples - start) for start in range(0, n_resamples, BOOTSTRAP_CHUNK)]
    chunks = Parallel(n_jobs=n_jobs)(
        delayed(_bootstrap_chunk)(agreements, seed, chunk, size) for chunk, size in enumerate(sizes)
    )
    low, high = np.percentile(np.concatenate(chunks), [2.5, 97.5])
    return Interval(float(low), float(high))


def observed_online_fraction(run: SystemRun) -> float:
    """Share of all tokens emitted strictly before the end of their segment."""
    total = sum(run.n_tokens)
    if total == 0:
        raise UndefinedInputError(f"Run '{run.system_id}' has no hypothesis token")
    return 1.0 - sum(run.n_tail) / total


class ExpectedOnline(NamedTuple):
    value: float
    raw: float


def expected_online_fraction(latency: float, avg_segment_len: float) -> ExpectedOnline:
    """Online share expected from an average latency on segments of the given mean length, clamped to [0, 1]."""
    if not avg_segment_len > 0:
        raise ValidationError(f"Average segment length must be positive, got {avg_segment_len}")
    raw = (avg_segment_len - latency) / avg_segment_len
    return ExpectedOnline(min(1.0, max(0.0, raw)), raw)


@dataclass(frozen=True)
class AnomalyCheck:
    system_id: str
    metric: str
    observed: float
    expected: float
    expected_raw: float
    flagged: bool

    def as_json(self) -> dict:
        return {
            "system_id": self.system_id,
            "metric": self.metric,
            "O": self.observed,
            "O_e": self.expected,
            "O_e_raw": self.expected_raw,
            "flag": self.flagged,
        }


def is_anomalous(observed: float, expected: float, threshold: float = DEFAULT_ANOMALY_THRESHOLD) -> bool:
    return expected - observed > threshold


def detect_anomalous(run: SystemRun, metric: str, threshold: float = DEFAULT_ANOMALY_THRESHOLD) -> AnomalyCheck:
    """Flag a run whose metric promises far more online translation than it actually did."""
    if metric not in run.scores:
        raise ValidationError(f"Run '{run.system_id}' has no {metric} score")
    if not run.source_durations_ms:
        raise UndefinedInputError(f"Run '{run.system_id}' has no segment")

    observed = observed_online_fraction(run)
    average = sum(run.source_durations_ms) / len(run.source_durations_ms)
    expected = expected_online_fraction(run.scores[metric], average)
    flagged = is_anomalous(observed, expected.value, threshold)
    if flagged:
        logger.info(
            "'%s' looks anomalous: O=%.3f, O_e(%s)=%.3f", run.system_id, observed, metric, expected.value
        )
    return AnomalyCheck(run.system_id, metric, observed, expected.value, expected.raw, flagged)


def _correlation(function: Callable, x: np.ndarray, y: np.ndarray) -> float:
    if len(x) < 2 or np.all(x == x[0]) or np.all(y == y[0]):
        return math.nan
    return float(function(x, y).statistic)


@dataclass
class AccuracyRow:
    metric: str
    bucket: Bucket
    subset: str
    accuracy: float
    ci: Interval
    n_pairs: int
    status: str = "-"
    correlations: dict[str, float] = field(default_factory=dict)

    def as_json(self) -> dict:
        return {
            "metric": self.metric,
            "bucket": self.bucket.value,
            "subset": self.subset,
            "accuracy": self.accuracy,
            "ci_low": self.ci.low,
            "ci_high": self.ci.high,
            "n_pairs": self.n_pairs,
            "status": self.status,
            **{name: None if math.isnan(value) else value for name, value in self.correlations.items()},
        }


def _mark_ties(rows: list[AccuracyRow]):
    if not rows:
        return
    best = max(rows, key=lambda row: row.accuracy)
    for row in rows:
        if row.accuracy == best.accuracy:
            row.status = "best"
        elif best.ci.low <= row.accuracy <= best.ci.high:
            row.status = "tied"


def accuracy_table(
    outcomes: Sequence[ComparisonOutcome],
    metrics: Sequence[str],
    n_resamples: int,
    seed: int,
    *,
    subset: str = "all",
    n_jobs: int = 1,
    correlations: bool = False,
    on_cell: Callable[[str, Bucket], None] | None = None,
) -> list[AccuracyRow]:
    """Accuracy with bootstrap interval for every metric and significance bucket.

    Within a bucket the most accurate metric is ``best`` and every metric whose accuracy
    falls inside its interval is ``tied``.
    """
    rows = []
    for bucket in Bucket:
        selected = [outcome for outcome in outcomes if bucket.contains(outcome.p_value) and outcome.delta_tl != 0]
        if not selected:
            logger.info("No comparison in bucket %s of subset %s", bucket.value, subset)
            continue

        bucket_rows = []
        for metric in metrics:
            if on_cell is not None:
                on_cell(metric, bucket)
            row = AccuracyRow(
                metric=metric,
                bucket=bucket,
                subset=subset,
                accuracy=sign_accuracy(selected, metric),
                ci=bootstrap_accuracy_ci(selected, metric, n_resamples, seed, n_jobs),
                n_pairs=len(selected),
            )
            if correlations:
                x = np.array([outcome.delta_tl for outcome in selected])
                y = np.array([outcome.delta_metric[metric] for outcome in selected])
                row.correlations = {"pearson": _correlation(pearsonr, x, y), "kendall": _correlation(kendalltau, x, y)}
            bucket_rows.append(row)

        _mark_ties(bucket_rows)
        rows.extend(bucket_rows)
    return rows


def without_anomalous(outcomes: Sequence[ComparisonOutcome], flagged: set[str]) -> list[ComparisonOutcome]:
    return [outcome for outcome in outcomes if outcome.system_a not in flagged and outcome.system_b not in flagged]


@dataclass(frozen=True)
class RegimeBin:
    low_ms: float
    high_ms: float
    tail_fraction: float
    n_systems: int

    def as_json(self) -> dict:
        return {
            "low_ms": self.low_ms,
            "high_ms": self.high_ms,
            "tail_fraction": self.tail_fraction,
            "n_systems": self.n_systems,
        }


def tail_fraction_by_regime(
    runs: Sequence[SystemRun], metric: str, bin_ms: float = REGIME_BIN_MS
) -> list[RegimeBin]:
    """Mean tail fraction of the runs grouped by latency bins of ``bin_ms`` on ``metric``."""
    groups: dict[int, list[float]] = {}
    for run in runs:
        if metric not in run.scores:
            logger.warning("Run '%s' has no %s score and is left out", run.system_id, metric)
            continue
        groups.setdefault(math.floor(run.scores[metric] / bin_ms), []).append(1.0 - observed_online_fraction(run))

    if not groups:
        raise UndefinedInputError(f"No run has a {metric} score")
    return [
        RegimeBin(index * bin_ms, (index + 1) * bin_ms, sum(values) / len(values), len(values))
        for index, values in sorted(groups.items())
    ]
